//! L1-penalized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/(2n))·‖y − α − Xβ‖² + λ·‖β‖₁` with an unpenalized intercept.
//! Columns are centered internally, so the solver does not rely on the design
//! being standardized; sweeps visit features in design order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iter: 10_000,
            tol: 1e-7,
        }
    }
}

impl LassoConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Usage(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Usage(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Usage("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
    pub lambda: f64,
    pub n_iter: usize,
    pub converged: bool,
}

impl LassoFit {
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.value).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.coefficients.iter().map(|c| c.name.as_str())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.value)
    }
}

/// `sign(z)·max(|z| − gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest λ for which every coefficient is zero: `max_j |x̃ⱼᵀ(y − ȳ)|/n` over centered columns.
pub fn null_threshold(design: &DesignMatrix) -> f64 {
    let n = design.n() as f64;
    let ybar = mean(&design.y);
    design
        .columns
        .iter()
        .map(|col| {
            let xbar = mean(col);
            let dot: f64 = col.iter().zip(&design.y).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
            (dot / n).abs()
        })
        .fold(0.0, f64::max)
}

/// Penalized objective at `(intercept, beta)`.
pub fn objective(design: &DesignMatrix, intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let n = design.n() as f64;
    let rss: f64 = residuals(design, intercept, beta).iter().map(|r| r * r).sum();
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn residuals(design: &DesignMatrix, intercept: f64, beta: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = design.y.iter().map(|y| y - intercept).collect();
    for (col, b) in design.columns.iter().zip(beta) {
        for (ri, x) in r.iter_mut().zip(col) {
            *ri -= b * x;
        }
    }
    r
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn fit_lasso(design: &DesignMatrix, config: &LassoConfig) -> Result<LassoFit> {
    fit_lasso_traced(design, config, |_| {})
}

/// Like [`fit_lasso`], calling `on_sweep` with the objective value after every sweep.
pub fn fit_lasso_traced(
    design: &DesignMatrix,
    config: &LassoConfig,
    mut on_sweep: impl FnMut(f64),
) -> Result<LassoFit> {
    config.validate()?;
    let n = design.n();
    let p = design.p();
    if n == 0 {
        return Err(Error::Size("cannot fit on an empty design".into()));
    }
    if n < p && config.lambda == 0.0 {
        return Err(Error::Size(format!(
            "{n} rows < {p} features needs lambda > 0"
        )));
    }
    if design.y.iter().chain(design.columns.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("design has non-finite entries".into()));
    }

    let nf = n as f64;
    let lambda = config.lambda;
    let ybar = mean(&design.y);
    let xbar: Vec<f64> = design.columns.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = design
        .columns
        .iter()
        .zip(&xbar)
        .map(|(c, m)| c.iter().map(|x| x - m).collect())
        .collect();
    let curvature: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>() / nf)
        .collect();

    let mut beta = vec![0.0; p];
    let mut resid: Vec<f64> = design.y.iter().map(|y| y - ybar).collect();
    let mut converged = false;
    let mut n_iter = 0;

    while n_iter < config.max_iter {
        n_iter += 1;
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if curvature[j] == 0.0 {
                continue;
            }
            let col = &centered[j];
            let grad: f64 = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / nf;
            let updated = soft_threshold(grad + curvature[j] * beta[j], lambda) / curvature[j];
            let delta = updated - beta[j];
            if delta != 0.0 {
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                beta[j] = updated;
            }
            max_delta = max_delta.max(delta.abs());
        }
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        on_sweep(rss / (2.0 * nf) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>());
        if max_delta < config.tol {
            converged = true;
            break;
        }
    }

    let intercept = ybar - xbar.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    Ok(LassoFit {
        intercept,
        coefficients: design
            .feature_names
            .iter()
            .zip(beta)
            .map(|(name, value)| Coefficient {
                name: name.clone(),
                value,
            })
            .collect(),
        lambda,
        n_iter,
        converged,
    })
}

fn check_schema(fit: &LassoFit, design: &DesignMatrix) -> Result<()> {
    if !fit.names().eq(design.feature_names.iter().map(String::as_str)) {
        return Err(Error::Schema(format!(
            "fit features [{}] do not match design features [{}]",
            fit.names().collect::<Vec<_>>().join(","),
            design.feature_names.join(",")
        )));
    }
    Ok(())
}

/// `α + Σ βⱼ·xᵢⱼ` for every row, in log space.
pub fn predict(fit: &LassoFit, design: &DesignMatrix) -> Result<Vec<f64>> {
    check_schema(fit, design)?;
    let mut out = vec![fit.intercept; design.n()];
    for (col, c) in design.columns.iter().zip(&fit.coefficients) {
        for (o, x) in out.iter_mut().zip(col) {
            *o += c.value * x;
        }
    }
    Ok(out)
}

/// Largest violation of the Lasso stationarity conditions at `fit`:
/// `|x̄ⱼᵀr/n − λ·sign(βⱼ)|` for active features and `max(|xⱼᵀr/n| − λ, 0)` for zero ones.
pub fn kkt_violation(fit: &LassoFit, design: &DesignMatrix) -> Result<f64> {
    check_schema(fit, design)?;
    let n = design.n() as f64;
    let r = residuals(design, fit.intercept, &fit.beta());
    let mut worst = 0.0f64;
    for (col, c) in design.columns.iter().zip(&fit.coefficients) {
        let g = col.iter().zip(&r).map(|(x, r)| x * r).sum::<f64>() / n;
        let v = if c.value != 0.0 {
            (g - fit.lambda * c.value.signum()).abs()
        } else {
            (g.abs() - fit.lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Picks the grid value with the lowest mean out-of-fold squared error under
/// forward-chaining splits: the rows are cut into `n_folds + 1` contiguous
/// blocks and fold k trains on blocks `0..k` and validates on block k.
/// Exact ties go to the larger λ.
pub fn select_lambda(
    design: &DesignMatrix,
    grid: &[f64],
    n_folds: usize,
    base: &LassoConfig,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Usage("lambda grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Usage(format!("lambda grid value {bad} must be >= 0")));
    }
    if n_folds < 2 {
        return Err(Error::Usage(format!("need at least 2 folds, got {n_folds}")));
    }
    let n = design.n();
    let blocks = n_folds + 1;
    if n < 2 * blocks {
        return Err(Error::Size(format!(
            "{n} rows is too few for {n_folds} forward-chaining folds"
        )));
    }
    let bound = |k: usize| k * n / blocks;

    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    order.dedup();

    let mut best: Option<(f64, f64)> = None;
    for lambda in order {
        let config = LassoConfig { lambda, ..*base };
        let mut total = 0.0;
        for k in 1..=n_folds {
            let train = design.select_rows(0..bound(k));
            let valid = design.select_rows(bound(k)..bound(k + 1));
            let fit = fit_lasso(&train, &config)?;
            let pred = predict(&fit, &valid)?;
            let mse = pred.iter().zip(&valid.y).map(|(p, y)| (p - y).powi(2)).sum::<f64>()
                / valid.n() as f64;
            total += mse;
        }
        let score = total / n_folds as f64;
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((lambda, score));
        }
    }
    Ok(best.unwrap().0)
}
