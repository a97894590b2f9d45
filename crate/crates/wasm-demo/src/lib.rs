//! Browser bindings for three interactive operations on synthetic data:
//! previewing a pivot polyline, refitting with edited pivots, and exploring
//! Student-t value at risk. Every export takes and returns JSON strings.

use chrono::{Duration, NaiveDate};
use pivotfit_core::bayes::{posterior_predictive, value_at_risk, PosteriorChains};
use pivotfit_core::correction::{suggest_pivots, PivotSet};
use pivotfit_core::eval::{run_experiment, run_experiment_full, ExperimentOptions};
use pivotfit_core::ingest::TimeSeries;
use pivotfit_core::synthetic::{generate, SyntheticData, SyntheticSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn lasso_only() -> ExperimentOptions {
    ExperimentOptions { bayes: None, ..Default::default() }
}

fn synthetic(seed: u32, amplitude: f64) -> Result<SyntheticData, String> {
    generate(&SyntheticSpec { seed: u64::from(seed), amplitude, ..Default::default() })
        .map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct DeviationView {
    pub dates: Vec<NaiveDate>,
    pub deviation: Vec<f64>,
    pub suggested: PivotSet,
    pub oracle: PivotSet,
}

/// Base-model deviation of the synthetic dataset plus suggested and true pivots.
pub fn deviation_view(seed: u32, amplitude: f64, window: usize) -> Result<String, String> {
    let data = synthetic(seed, amplitude)?;
    let out = run_experiment_full(&data.dataset, None, &lasso_only()).map_err(|e| e.to_string())?;
    let dates: Vec<NaiveDate> = out.series.iter().map(|r| r.date).collect();
    let deviation: Vec<f64> = out.series.iter().map(|r| r.deviation).collect();
    let series = TimeSeries::new("deviation", dates.clone(), deviation.clone()).map_err(|e| e.to_string())?;
    let suggested = suggest_pivots(&series, window.max(1)).map_err(|e| e.to_string())?;
    to_json(&DeviationView { dates, deviation, suggested, oracle: data.pivots })
}

/// Piecewise-linear correction through `pivots_json` on `days` consecutive days from `start`.
pub fn preview(pivots_json: &str, start: &str, days: usize) -> Result<String, String> {
    let pivots: PivotSet = serde_json::from_str(pivots_json).map_err(|e| e.to_string())?;
    let start: NaiveDate = start.parse().map_err(|e: chrono::ParseError| e.to_string())?;
    let values: Vec<f64> = (0..days)
        .map(|i| pivots.evaluate(start + Duration::days(i as i64)).unwrap_or(0.0))
        .collect();
    to_json(&values)
}

#[derive(Debug, Serialize)]
pub struct RefitView {
    pub lambda: f64,
    pub rmse_base: f64,
    pub rmse_corrected: Option<f64>,
    pub expert_coef: Option<f64>,
}

/// In-sample Lasso refit of the synthetic dataset with the given pivots.
pub fn refit(seed: u32, amplitude: f64, pivots_json: &str) -> Result<String, String> {
    let data = synthetic(seed, amplitude)?;
    let pivots: PivotSet = serde_json::from_str(pivots_json).map_err(|e| e.to_string())?;
    let report = run_experiment(&data.dataset, Some(&pivots), &lasso_only()).map_err(|e| e.to_string())?;
    to_json(&RefitView {
        lambda: report.lambda,
        rmse_base: report.rmse_base,
        rmse_corrected: report.rmse_corrected,
        expert_coef: report
            .corrected
            .as_ref()
            .and_then(|c| c.fit.coefficient(pivotfit_core::correction::EXPERT_COLUMN)),
    })
}

#[derive(Debug, Serialize)]
pub struct VarView {
    pub level: f64,
    pub log_quantile: f64,
    pub price_quantile: f64,
    /// Sorted draws thinned to at most 200 points, for plotting the empirical CDF.
    pub cdf: Vec<f64>,
}

/// Lower `level` quantile of `draws` samples from `σ·t_ν` around zero log-price.
pub fn student_t_var(sigma: f64, nu: f64, level: f64, draws: usize, seed: u32) -> Result<String, String> {
    let names = ["alpha", "sigma", "nu"].map(String::from).to_vec();
    let chains = PosteriorChains::from_draws(names, vec![vec![vec![0.0, sigma, nu]]; 2], 0)
        .map_err(|e| e.to_string())?;
    let mut sample =
        posterior_predictive(&chains, &[], draws.max(1), u64::from(seed)).map_err(|e| e.to_string())?;
    let day = NaiveDate::from_ymd_opt(2017, 12, 31).unwrap();
    let var = value_at_risk(&sample, level, day).map_err(|e| e.to_string())?;
    sample.sort_by(f64::total_cmp);
    let step = (sample.len() / 200).max(1);
    to_json(&VarView {
        level,
        log_quantile: var.log_quantile,
        price_quantile: var.price_quantile,
        cdf: sample.into_iter().step_by(step).collect(),
    })
}

#[wasm_bindgen(js_name = deviationView)]
pub fn deviation_view_js(seed: u32, amplitude: f64, window: usize) -> Result<String, JsError> {
    deviation_view(seed, amplitude, window).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = previewCorrection)]
pub fn preview_js(pivots_json: &str, start: &str, days: usize) -> Result<String, JsError> {
    preview(pivots_json, start, days).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = refitRmse)]
pub fn refit_js(seed: u32, amplitude: f64, pivots_json: &str) -> Result<String, JsError> {
    refit(seed, amplitude, pivots_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = studentTVar)]
pub fn student_t_var_js(sigma: f64, nu: f64, level: f64, draws: usize, seed: u32) -> Result<String, JsError> {
    student_t_var(sigma, nu, level, draws, seed).map_err(|e| JsError::new(&e))
}
