//! Expert correction of systematic model deviation.
//!
//! The deviation series is `ln(price + 1)` actual minus predicted. An expert
//! places pivot points on it; the correction term is the polyline through
//! those pivots (held constant outside their span) and enters the regression
//! as one more standardized column named [`EXPERT_COLUMN`].

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TimeSeries;
use crate::preprocess::{standardize, ColumnTransform, DesignMatrix, ScaleParams};

pub const EXPERT_COLUMN: &str = "expert";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotPoint {
    pub date: NaiveDate,
    pub value: f64,
}

/// One rule violation inside a submitted pivot list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotFieldError {
    pub index: usize,
    pub field: String,
    pub message: String,
}

/// Pivots with strictly increasing dates and finite values.
///
/// Serializes as a JSON array of `{"date": "YYYY-MM-DD", "value": number}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "Vec<PivotPoint>", into = "Vec<PivotPoint>")]
pub struct PivotSet(Vec<PivotPoint>);

impl PivotSet {
    pub fn new(points: Vec<PivotPoint>) -> Result<Self> {
        Self::validate(points).map_err(|errs| {
            Error::Validation(
                errs.iter()
                    .map(|e| format!("pivot {} {}: {}", e.index, e.field, e.message))
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })
    }

    /// Checks every rule and reports all violations at once.
    pub fn validate(points: Vec<PivotPoint>) -> Result<Self, Vec<PivotFieldError>> {
        let mut errors = Vec::new();
        for (i, p) in points.iter().enumerate() {
            if !p.value.is_finite() {
                errors.push(PivotFieldError {
                    index: i,
                    field: "value".into(),
                    message: "must be finite".into(),
                });
            }
            if i > 0 && p.date <= points[i - 1].date {
                errors.push(PivotFieldError {
                    index: i,
                    field: "date".into(),
                    message: format!(
                        "dates must be strictly increasing: {} follows {}",
                        p.date,
                        points[i - 1].date
                    ),
                });
            }
        }
        if errors.is_empty() {
            Ok(Self(points))
        } else {
            Err(errors)
        }
    }

    /// Violations of the `first..=last` date window, one per offending pivot.
    pub fn check_within(&self, first: NaiveDate, last: NaiveDate) -> Vec<PivotFieldError> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| p.date < first || p.date > last)
            .map(|(i, p)| PivotFieldError {
                index: i,
                field: "date".into(),
                message: format!("{} lies outside the data range {first}..{last}", p.date),
            })
            .collect()
    }

    pub fn points(&self) -> &[PivotPoint] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Value of the correction polyline on `date`.
    pub fn evaluate(&self, date: NaiveDate) -> Option<f64> {
        let pts = &self.0;
        let first = pts.first()?;
        let last = pts.last()?;
        if date <= first.date {
            return Some(first.value);
        }
        if date >= last.date {
            return Some(last.value);
        }
        let k = pts.partition_point(|p| p.date <= date);
        let (a, b) = (pts[k - 1], pts[k]);
        if a.date == date {
            return Some(a.value);
        }
        let span = (b.date - a.date).num_days() as f64;
        let t = (date - a.date).num_days() as f64 / span;
        Some(a.value + t * (b.value - a.value))
    }
}

impl TryFrom<Vec<PivotPoint>> for PivotSet {
    type Error = String;

    fn try_from(points: Vec<PivotPoint>) -> std::result::Result<Self, String> {
        PivotSet::new(points).map_err(|e| e.to_string())
    }
}

impl From<PivotSet> for Vec<PivotPoint> {
    fn from(set: PivotSet) -> Self {
        set.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerm {
    pub series: TimeSeries,
    pub source: PivotSet,
}

/// `actual − predicted` in log space, i.e. the log of the `(price + 1)` ratio.
pub fn deviation_series(
    actual_log: &[f64],
    predicted_log: &[f64],
    dates: &[NaiveDate],
) -> Result<TimeSeries> {
    if actual_log.len() != predicted_log.len() || actual_log.len() != dates.len() {
        return Err(Error::Size(format!(
            "deviation needs equal lengths: {} actual, {} predicted, {} dates",
            actual_log.len(),
            predicted_log.len(),
            dates.len()
        )));
    }
    let values = actual_log.iter().zip(predicted_log).map(|(a, p)| a - p).collect();
    TimeSeries::new("deviation", dates.to_vec(), values)
}

/// Candidate pivots: both endpoints plus every point that is a strict maximum
/// or minimum of the `window` points on either side of it.
pub fn suggest_pivots(deviation: &TimeSeries, window: usize) -> Result<PivotSet> {
    if window == 0 {
        return Err(Error::Usage("window must be >= 1".into()));
    }
    let n = deviation.len();
    if n < 2 * window + 1 {
        return Err(Error::Size(format!(
            "series of {n} points is shorter than the {}-point neighborhood",
            2 * window + 1
        )));
    }
    let v = deviation.values();
    let mut points = vec![PivotPoint {
        date: deviation.dates()[0],
        value: v[0],
    }];
    for i in 1..n - 1 {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        let others = (lo..=hi).filter(|&k| k != i);
        let is_max = others.clone().all(|k| v[i] > v[k]);
        let is_min = others.into_iter().all(|k| v[i] < v[k]);
        if is_max || is_min {
            points.push(PivotPoint {
                date: deviation.dates()[i],
                value: v[i],
            });
        }
    }
    points.push(PivotPoint {
        date: deviation.dates()[n - 1],
        value: v[n - 1],
    });
    PivotSet::new(points)
}

/// Evaluates the pivot polyline on `dates`.
pub fn interpolate_correction(pivots: &PivotSet, dates: &[NaiveDate]) -> Result<CorrectionTerm> {
    if pivots.is_empty() {
        return Err(Error::Usage("cannot interpolate an empty pivot set".into()));
    }
    if dates.is_empty() {
        return Err(Error::Size("no dates to evaluate the correction on".into()));
    }
    let values = dates.iter().map(|d| pivots.evaluate(*d).unwrap()).collect();
    Ok(CorrectionTerm {
        series: TimeSeries::new(EXPERT_COLUMN, dates.to_vec(), values)?,
        source: pivots.clone(),
    })
}

/// Appends the standardized correction as an `expert` column, fitting its scale on this design.
pub fn augment_design(design: &DesignMatrix, correction: &CorrectionTerm) -> Result<DesignMatrix> {
    check_dates(design, correction)?;
    let (z, mut params) = standardize(EXPERT_COLUMN, correction.series.values())?;
    params.transform = ColumnTransform::Identity;
    push_column(design, z, params)
}

/// Appends the correction using a scale fitted elsewhere (the training window).
pub fn augment_design_with_scale(
    design: &DesignMatrix,
    correction: &CorrectionTerm,
    params: &ScaleParams,
) -> Result<DesignMatrix> {
    check_dates(design, correction)?;
    let z = correction.series.values().iter().map(|v| params.forward(*v)).collect();
    push_column(design, z, params.clone())
}

fn check_dates(design: &DesignMatrix, correction: &CorrectionTerm) -> Result<()> {
    if correction.series.dates() != design.dates.as_slice() {
        let first_diff = design
            .dates
            .iter()
            .zip(correction.series.dates())
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!(" (design {a} vs correction {b})"))
            .unwrap_or_default();
        return Err(Error::Alignment(format!(
            "correction dates do not match design dates{first_diff}"
        )));
    }
    if design.feature_names.iter().any(|n| n == EXPERT_COLUMN) {
        return Err(Error::Schema("design already has an expert column".into()));
    }
    Ok(())
}

fn push_column(design: &DesignMatrix, z: Vec<f64>, params: ScaleParams) -> Result<DesignMatrix> {
    let mut out = design.clone();
    out.feature_names.push(EXPERT_COLUMN.to_string());
    out.columns.push(z);
    out.scales.push(params);
    DesignMatrix::from_parts(out.dates, out.feature_names, out.columns, out.y, out.scales)
}
