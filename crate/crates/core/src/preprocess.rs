//! Log transform, z-scoring, and design-matrix assembly.
//!
//! Every regressor goes through `ln(x + 1)` and is then standardized with the
//! sample (n − 1) standard deviation. The target is log-transformed only, so
//! predictions stay in `ln(price + 1)` units.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, TimeSeries};

/// What happens to a raw column before z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnTransform {
    Log1p,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    pub transform: ColumnTransform,
}

impl ScaleParams {
    /// Raw value to design-matrix value.
    pub fn forward(&self, raw: f64) -> f64 {
        let v = match self.transform {
            ColumnTransform::Log1p => raw.ln_1p(),
            ColumnTransform::Identity => raw,
        };
        (v - self.mean) / self.std
    }

    /// Design-matrix value back to raw units.
    pub fn inverse(&self, z: f64) -> f64 {
        let v = z * self.std + self.mean;
        match self.transform {
            ColumnTransform::Log1p => v.exp_m1(),
            ColumnTransform::Identity => v,
        }
    }
}

/// `ln(v + 1)` for every value. Negative inputs are rejected unless `allow_negative`
/// is set, and values ≤ −1 are always rejected.
pub fn log1p_transform(series: &TimeSeries, allow_negative: bool) -> Result<TimeSeries> {
    let values = log1p_values(series.name(), series.dates(), series.values(), allow_negative)?;
    TimeSeries::new(series.name(), series.dates().to_vec(), values)
}

fn log1p_values(
    name: &str,
    dates: &[NaiveDate],
    values: &[f64],
    allow_negative: bool,
) -> Result<Vec<f64>> {
    values
        .iter()
        .zip(dates)
        .map(|(&v, date)| {
            if v <= -1.0 || (v < 0.0 && !allow_negative) {
                Err(Error::Domain(format!(
                    "`{name}` has value {v} on {date}; log transform needs {}",
                    if allow_negative { "v > -1" } else { "v >= 0" }
                )))
            } else {
                Ok(v.ln_1p())
            }
        })
        .collect()
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Z-scores `values` with the n − 1 standard deviation.
pub fn standardize(column: &str, values: &[f64]) -> Result<(Vec<f64>, ScaleParams)> {
    if values.len() < 2 {
        return Err(Error::Size(format!(
            "`{column}` needs at least 2 values to standardize, got {}",
            values.len()
        )));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Err(Error::DegenerateColumn(column.to_string()));
    }
    let (mean, std) = mean_std(values);
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::DegenerateColumn(column.to_string()));
    }
    let params = ScaleParams {
        column: column.to_string(),
        mean,
        std,
        transform: ColumnTransform::Identity,
    };
    Ok((values.iter().map(|v| (v - mean) / std).collect(), params))
}

/// Regressors (standardized, column-major) plus the log-space target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    /// One vector of length n per feature.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub scales: Vec<ScaleParams>,
}

impl DesignMatrix {
    /// Assembles a design from already-transformed parts, checking shapes and finiteness.
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
        scales: Vec<ScaleParams>,
    ) -> Result<Self> {
        let n = dates.len();
        if y.len() != n {
            return Err(Error::Size(format!("target has {} rows, expected {n}", y.len())));
        }
        if feature_names.len() != columns.len() || scales.len() != columns.len() {
            return Err(Error::Size(format!(
                "{} names, {} columns, {} scales",
                feature_names.len(),
                columns.len(),
                scales.len()
            )));
        }
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Size(format!(
                    "column `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("column `{name}` has non-finite entries")));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("target has non-finite entries".into()));
        }
        Ok(Self {
            dates,
            feature_names,
            columns,
            y,
            scales,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Rows `range`, keeping the stored scales.
    pub fn select_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            feature_names: self.feature_names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
            y: self.y[range].to_vec(),
            scales: self.scales.clone(),
        }
    }
}

/// Builds the design for `feature_order`, fitting fresh scale parameters on `dataset`.
pub fn build_design(dataset: &Dataset, feature_order: &[String]) -> Result<DesignMatrix> {
    let y = target_log(dataset)?;
    let mut columns = Vec::with_capacity(feature_order.len());
    let mut scales = Vec::with_capacity(feature_order.len());
    for name in feature_order {
        let raw = dataset.column(name)?;
        let logged = log1p_values(name, dataset.dates(), raw, false)?;
        let (z, mut params) = standardize(name, &logged)?;
        params.transform = ColumnTransform::Log1p;
        columns.push(z);
        scales.push(params);
    }
    DesignMatrix::from_parts(
        dataset.dates().to_vec(),
        feature_order.to_vec(),
        columns,
        y,
        scales,
    )
}

/// Builds a design on `dataset` reusing previously fitted `scales` (e.g. from a training window).
pub fn design_with_scales(dataset: &Dataset, scales: &[ScaleParams]) -> Result<DesignMatrix> {
    let y = target_log(dataset)?;
    let mut columns = Vec::with_capacity(scales.len());
    for params in scales {
        let raw = dataset.column(&params.column)?;
        if params.transform == ColumnTransform::Log1p {
            log1p_values(&params.column, dataset.dates(), raw, false)?;
        }
        columns.push(raw.iter().map(|&v| params.forward(v)).collect());
    }
    DesignMatrix::from_parts(
        dataset.dates().to_vec(),
        scales.iter().map(|s| s.column.clone()).collect(),
        columns,
        y,
        scales.to_vec(),
    )
}

fn target_log(dataset: &Dataset) -> Result<Vec<f64>> {
    log1p_values(dataset.target_name(), dataset.dates(), dataset.target(), false)
}
