//! Synthetic datasets with known generating parameters.
//!
//! Used by the test harnesses, the fixture generator and the browser demo.
//! Prices follow the model's own form in log space: a linear combination of
//! standardized log-features, plus a piecewise-linear deviation through known
//! pivots, plus Student-t noise.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::correction::{PivotPoint, PivotSet};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::preprocess::{mean_std, ColumnTransform, DesignMatrix, ScaleParams};
use crate::{DEFAULT_FEATURES, DEFAULT_TARGET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub start: NaiveDate,
    pub alpha: f64,
    /// One coefficient per default feature, in standardized units.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub nu: f64,
    pub n_pivots: usize,
    /// Pivot values alternate between `+amplitude` and `−amplitude`.
    pub amplitude: f64,
    /// Lag-one autocorrelation of the log-feature processes.
    pub feature_persistence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 500,
            start: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            alpha: 8.0,
            beta: vec![0.45, 0.3, 0.2, -0.15, 0.25, 0.1],
            sigma: 0.1,
            nu: 4.0,
            n_pivots: 6,
            amplitude: 0.3,
            feature_persistence: 0.8,
            seed: 0,
        }
    }
}

/// Generating parameters expressed for the model fitted on the full sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub nu: f64,
    /// Intercept once the standardized expert column absorbs the deviation mean.
    pub alpha_with_expert: f64,
    /// Coefficient on the standardized expert column (the deviation's sample std).
    pub expert_coef: f64,
}

impl Truth {
    /// `[α, β..., β_expert, σ, ν]` for the augmented model.
    pub fn augmented_params(&self) -> Vec<f64> {
        let mut v = vec![self.alpha_with_expert];
        v.extend(&self.beta);
        v.extend([self.expert_coef, self.sigma, self.nu]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub pivots: PivotSet,
    pub deviation: Vec<f64>,
    pub truth: Truth,
}

// log-scale level and spread of each raw feature
const FEATURE_LEVELS: [(f64, f64); 6] = [
    (3.5, 0.5),  // gtrend
    (8.0, 0.6),  // wiki_cryptocurrency
    (27.0, 0.8), // difficulty
    (12.5, 0.3), // n_unique_addresses
    (16.5, 0.05), // total_bitcoins
    (19.0, 0.7), // volume
];

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.beta.len() != DEFAULT_FEATURES.len() {
        return Err(Error::Usage(format!(
            "need {} coefficients, got {}",
            DEFAULT_FEATURES.len(),
            spec.beta.len()
        )));
    }
    if spec.n_pivots < 2 || spec.n < spec.n_pivots * 2 {
        return Err(Error::Usage("need at least 2 pivots and 2n_pivots rows".into()));
    }
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dates: Vec<NaiveDate> =
        (0..n).map(|i| spec.start + chrono::Duration::days(i as i64)).collect();

    let phi = spec.feature_persistence;
    let innovation = (1.0 - phi * phi).sqrt();
    let mut columns = BTreeMap::new();
    let mut standardized = Vec::new();
    for (name, (level, spread)) in DEFAULT_FEATURES.iter().zip(FEATURE_LEVELS) {
        let mut u: f64 = rng.sample(StandardNormal);
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                u = phi * u + innovation * rng.sample::<f64, _>(StandardNormal);
                (level + spread * u).exp_m1()
            })
            .collect();
        let logged: Vec<f64> = raw.iter().map(|v| v.ln_1p()).collect();
        let (m, s) = mean_std(&logged);
        standardized.push(logged.iter().map(|v| (v - m) / s).collect::<Vec<f64>>());
        columns.insert(name.to_string(), raw);
    }

    let pivots = PivotSet::new(
        (0..spec.n_pivots)
            .map(|k| {
                let idx = k * (n - 1) / (spec.n_pivots - 1);
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                PivotPoint {
                    date: dates[idx],
                    value: sign * spec.amplitude,
                }
            })
            .collect(),
    )?;
    let deviation: Vec<f64> = dates.iter().map(|d| pivots.evaluate(*d).unwrap()).collect();

    let noise = StudentT::new(spec.nu).map_err(|e| Error::Usage(e.to_string()))?;
    let y: Vec<f64> = (0..n)
        .map(|i| {
            spec.alpha
                + spec.beta.iter().zip(&standardized).map(|(b, x)| b * x[i]).sum::<f64>()
                + deviation[i]
                + spec.sigma * noise.sample(&mut rng)
        })
        .collect();
    columns.insert(DEFAULT_TARGET.to_string(), y.iter().map(|v| v.exp_m1()).collect());

    let (dev_mean, dev_std) = mean_std(&deviation);
    Ok(SyntheticData {
        dataset: Dataset::new(dates, columns, DEFAULT_TARGET)?,
        pivots,
        deviation,
        truth: Truth {
            alpha: spec.alpha,
            beta: spec.beta.clone(),
            sigma: spec.sigma,
            nu: spec.nu,
            alpha_with_expert: spec.alpha + dev_mean,
            expert_coef: dev_std,
        },
    })
}

/// Plain regression design `y = α + x·β + σ·t_ν` with i.i.d. standard normal
/// features. `outlier_rows` rows with the largest `Σ x` get `outlier_shift`
/// added to `y`, so every coefficient's least-squares estimate is pulled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub n: usize,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub nu: f64,
    pub outlier_rows: usize,
    pub outlier_shift: f64,
    pub seed: u64,
}

impl Default for LinearSpec {
    fn default() -> Self {
        Self {
            n: 200,
            alpha: 1.0,
            beta: vec![2.0, -1.0],
            sigma: 0.3,
            nu: 5.0,
            outlier_rows: 0,
            outlier_shift: 10.0,
            seed: 0,
        }
    }
}

pub fn linear_design(spec: &LinearSpec) -> Result<DesignMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = StudentT::new(spec.nu).map_err(|e| Error::Usage(e.to_string()))?;
    let columns: Vec<Vec<f64>> = spec
        .beta
        .iter()
        .map(|_| (0..spec.n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut y: Vec<f64> = (0..spec.n)
        .map(|i| {
            spec.alpha
                + spec.beta.iter().zip(&columns).map(|(b, c)| b * c[i]).sum::<f64>()
                + spec.sigma * noise.sample(&mut rng)
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.n).collect();
    let score = |i: usize| columns.iter().map(|c| c[i]).sum::<f64>();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));
    for &i in order.iter().take(spec.outlier_rows) {
        y[i] += spec.outlier_shift;
    }
    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let names: Vec<String> = (0..spec.beta.len()).map(|j| format!("x{j}")).collect();
    let scales = names
        .iter()
        .map(|c| ScaleParams {
            column: c.clone(),
            mean: 0.0,
            std: 1.0,
            transform: ColumnTransform::Identity,
        })
        .collect();
    DesignMatrix::from_parts(
        (0..spec.n).map(|i| start + chrono::Duration::days(i as i64)).collect(),
        names,
        columns,
        y,
        scales,
    )
}
