//! Price-space error, chronological splits, and the base-vs-corrected experiment.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    diagnostics, posterior_predictive, sample_posterior, summarize, value_at_risk, McmcConfig,
    ParamDiagnostics, ParamSummary, PosteriorChains, PriorSpec, VarEstimate,
};
use crate::correction::{
    augment_design, augment_design_with_scale, deviation_series, interpolate_correction, PivotSet,
};
use crate::error::{Error, Result, StageExt};
use crate::ingest::Dataset;
use crate::lasso::{fit_lasso, predict, select_lambda, LassoConfig, LassoFit};
use crate::preprocess::{build_design, design_with_scales, DesignMatrix, ScaleParams};

/// `sqrt(mean((expm1(pred) − expm1(actual))²))`.
pub fn rmse_price(predicted_log: &[f64], actual_log: &[f64]) -> Result<f64> {
    if predicted_log.len() != actual_log.len() {
        return Err(Error::Size(format!(
            "rmse needs equal lengths, got {} and {}",
            predicted_log.len(),
            actual_log.len()
        )));
    }
    if predicted_log.is_empty() {
        return Err(Error::Size("rmse of an empty series".into()));
    }
    let sse: f64 = predicted_log
        .iter()
        .zip(actual_log)
        .map(|(p, a)| (p.exp_m1() - a.exp_m1()).powi(2))
        .sum();
    Ok((sse / predicted_log.len() as f64).sqrt())
}

/// Rows before `boundary` and rows on or after it.
pub fn time_split(dataset: &Dataset, boundary: NaiveDate) -> Result<(Dataset, Dataset)> {
    let train = dataset.filter_dates(|d| d < boundary);
    let test = dataset.filter_dates(|d| d >= boundary);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "boundary {boundary} leaves the {} window empty",
            if train.is_empty() { "training" } else { "evaluation" }
        )));
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    /// Chosen by forward-chaining cross-validation on the training window.
    Grid { values: Vec<f64>, folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOptions {
    pub priors: PriorSpec,
    pub mcmc: McmcConfig,
    pub var_levels: Vec<f64>,
    pub predictive_draws: usize,
}

impl Default for BayesOptions {
    fn default() -> Self {
        Self {
            priors: PriorSpec::default(),
            mcmc: McmcConfig::default(),
            var_levels: vec![0.01, 0.05, 0.1],
            predictive_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub features: Vec<String>,
    pub lambda: LambdaChoice,
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
    /// First evaluation date; `None` evaluates in-sample on the whole dataset.
    pub split: Option<NaiveDate>,
    /// `None` skips the Bayesian stage.
    pub bayes: Option<BayesOptions>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            features: crate::DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            lambda: LambdaChoice::Fixed(LassoConfig::default().lambda),
            lasso_tol: LassoConfig::default().tol,
            lasso_max_iter: LassoConfig::default().max_iter,
            split: None,
            bayes: Some(BayesOptions::default()),
        }
    }
}

/// Flat run settings shared by the command line and the HTTP API.
///
/// Every field has a default, so `{}` is a valid document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub features: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub folds: usize,
    pub split: Option<NaiveDate>,
    pub seed: u64,
    pub chains: usize,
    pub samples: usize,
    pub warmup: usize,
    /// Skip the Bayesian stage.
    pub fast: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        let mcmc = McmcConfig::default();
        Self {
            features: None,
            lambda: None,
            lambda_grid: None,
            folds: 5,
            split: None,
            seed: mcmc.seed,
            chains: mcmc.n_chains,
            samples: mcmc.n_samples,
            warmup: mcmc.n_warmup,
            fast: false,
        }
    }
}

impl RunSettings {
    pub fn to_options(&self) -> Result<ExperimentOptions> {
        let defaults = ExperimentOptions::default();
        let lambda = match (self.lambda, &self.lambda_grid) {
            (Some(_), Some(_)) => {
                return Err(Error::Usage("lambda and lambda_grid are mutually exclusive".into()))
            }
            (Some(l), None) => LambdaChoice::Fixed(l),
            (None, Some(grid)) => LambdaChoice::Grid {
                values: grid.clone(),
                folds: self.folds,
            },
            (None, None) => defaults.lambda.clone(),
        };
        let bayes = (!self.fast).then(|| BayesOptions {
            mcmc: McmcConfig {
                n_chains: self.chains,
                n_warmup: self.warmup,
                n_samples: self.samples,
                seed: self.seed,
                ..McmcConfig::default()
            },
            ..BayesOptions::default()
        });
        if let Some(b) = &bayes {
            b.mcmc.validate()?;
        }
        let options = ExperimentOptions {
            features: self.features.clone().unwrap_or(defaults.features),
            lambda,
            split: self.split,
            bayes,
            ..defaults
        };
        validate_lambda(&options.lambda)?;
        Ok(options)
    }
}

fn validate_lambda(choice: &LambdaChoice) -> Result<()> {
    let values = match choice {
        LambdaChoice::Fixed(l) => std::slice::from_ref(l),
        LambdaChoice::Grid { values, folds } => {
            if values.is_empty() || *folds == 0 {
                return Err(Error::Usage("lambda grid needs values and at least one fold".into()));
            }
            values.as_slice()
        }
    };
    match values.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        Some(bad) => Err(Error::Usage(format!("lambda must be finite and >= 0, got {bad}"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    InSample,
    OutOfSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub summaries: Vec<ParamSummary>,
    pub diagnostics: Vec<ParamDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub fit: LassoFit,
    pub scales: Vec<ScaleParams>,
    /// RMSE (price units) on the evaluation window.
    pub rmse: f64,
    /// RMSE (price units) on the training window.
    pub rmse_in_sample: f64,
    pub posterior: Option<PosteriorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub evaluation: Evaluation,
    pub split: Option<NaiveDate>,
    pub n_train: usize,
    pub n_eval: usize,
    pub lambda: f64,
    pub rmse_base: f64,
    pub rmse_corrected: Option<f64>,
    pub sigma_base_median: Option<f64>,
    pub sigma_corrected_median: Option<f64>,
    pub base: ModelReport,
    pub corrected: Option<ModelReport>,
    pub pivots: Option<PivotSet>,
    /// Value at risk of the final model at the last evaluation date.
    pub value_at_risk: Vec<VarEstimate>,
    /// True when the Bayesian stage was skipped.
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Train,
    Test,
}

impl Window {
    pub fn as_str(self) -> &'static str {
        match self {
            Window::Train => "train",
            Window::Test => "test",
        }
    }
}

/// One row of the per-date export (prices in price units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub date: NaiveDate,
    pub window: Window,
    pub actual: f64,
    pub predicted_base: f64,
    pub predicted_corrected: Option<f64>,
    /// Log-space deviation of the base model.
    pub deviation: f64,
    pub correction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub series: Vec<SeriesRow>,
    pub base_chains: Option<PosteriorChains>,
    pub corrected_chains: Option<PosteriorChains>,
}

pub fn run_experiment(
    dataset: &Dataset,
    pivots: Option<&PivotSet>,
    options: &ExperimentOptions,
) -> Result<ExperimentReport> {
    run_experiment_full(dataset, pivots, options).map(|o| o.report)
}

struct Windows {
    train: DesignMatrix,
    eval: Option<DesignMatrix>,
}

impl Windows {
    fn eval(&self) -> &DesignMatrix {
        self.eval.as_ref().unwrap_or(&self.train)
    }
}

struct FittedModel {
    fit: LassoFit,
    train_pred: Vec<f64>,
    eval_pred: Vec<f64>,
}

fn fit_windows(windows: &Windows, config: &LassoConfig) -> Result<FittedModel> {
    let fit = fit_lasso(&windows.train, config)?;
    let train_pred = predict(&fit, &windows.train)?;
    let eval_pred = match &windows.eval {
        Some(eval) => predict(&fit, eval)?,
        None => train_pred.clone(),
    };
    Ok(FittedModel {
        fit,
        train_pred,
        eval_pred,
    })
}

/// Runs the full pipeline and also returns the per-date series and raw chains.
pub fn run_experiment_full(
    dataset: &Dataset,
    pivots: Option<&PivotSet>,
    options: &ExperimentOptions,
) -> Result<ExperimentOutcome> {
    let (train_ds, eval_ds) = match options.split {
        Some(boundary) => {
            let (train, test) = time_split(dataset, boundary).stage("split")?;
            (train, Some(test))
        }
        None => (dataset.clone(), None),
    };
    if let Some(pivots) = pivots {
        check_pivots(pivots, dataset, options.split).stage("correction")?;
    }

    let train = build_design(&train_ds, &options.features).stage("preprocess")?;
    let eval = eval_ds
        .as_ref()
        .map(|ds| design_with_scales(ds, &train.scales))
        .transpose()
        .stage("preprocess")?;
    let base_windows = Windows { train, eval };

    let base_config = LassoConfig {
        lambda: 0.0,
        max_iter: options.lasso_max_iter,
        tol: options.lasso_tol,
    };
    let lambda = match &options.lambda {
        LambdaChoice::Fixed(l) => *l,
        LambdaChoice::Grid { values, folds } => {
            select_lambda(&base_windows.train, values, *folds, &base_config).stage("lasso")?
        }
    };
    let lasso_config = LassoConfig { lambda, ..base_config };
    let base = fit_windows(&base_windows, &lasso_config).stage("lasso")?;

    let train_y = &base_windows.train.y;
    let eval_y = &base_windows.eval().y;
    let rmse_base = rmse_price(&base.eval_pred, eval_y).stage("eval")?;
    let rmse_base_train = rmse_price(&base.train_pred, train_y).stage("eval")?;

    let corrected = match pivots {
        Some(pivots) => {
            let windows = corrected_windows(&base_windows, pivots).stage("correction")?;
            let model = fit_windows(&windows, &lasso_config).stage("lasso")?;
            Some((windows, model))
        }
        None => None,
    };

    let (base_chains, corrected_chains) = match &options.bayes {
        Some(b) => {
            let base_chains =
                sample_posterior(&base_windows.train, &b.priors, &b.mcmc).stage("bayes")?;
            let corrected_chains = corrected
                .as_ref()
                .map(|(w, _)| sample_posterior(&w.train, &b.priors, &b.mcmc))
                .transpose()
                .stage("bayes")?;
            (Some(base_chains), corrected_chains)
        }
        None => (None, None),
    };

    let value_at_risk = match (&options.bayes, &base_chains) {
        (Some(b), Some(base_chains)) => {
            let (design, chains) = match (&corrected, &corrected_chains) {
                (Some((w, _)), Some(c)) => (w.eval(), c),
                _ => (base_windows.eval(), base_chains),
            };
            let last = design.n() - 1;
            let draws = posterior_predictive(
                chains,
                &design.row(last),
                b.predictive_draws,
                b.mcmc.seed.wrapping_add(1),
            )
            .stage("bayes")?;
            b.var_levels
                .iter()
                .map(|&level| value_at_risk(&draws, level, design.dates[last]))
                .collect::<Result<Vec<_>>>()
                .stage("bayes")?
        }
        _ => Vec::new(),
    };

    let base_report = ModelReport {
        fit: base.fit.clone(),
        scales: base_windows.train.scales.clone(),
        rmse: rmse_base,
        rmse_in_sample: rmse_base_train,
        posterior: base_chains.as_ref().map(posterior_report).transpose().stage("bayes")?,
    };
    let corrected_report = match &corrected {
        Some((windows, model)) => Some(ModelReport {
            fit: model.fit.clone(),
            scales: windows.train.scales.clone(),
            rmse: rmse_price(&model.eval_pred, eval_y).stage("eval")?,
            rmse_in_sample: rmse_price(&model.train_pred, train_y).stage("eval")?,
            posterior: corrected_chains
                .as_ref()
                .map(posterior_report)
                .transpose()
                .stage("bayes")?,
        }),
        None => None,
    };

    let series = series_rows(&base_windows, &base, corrected.as_ref())?;
    let report = ExperimentReport {
        evaluation: if options.split.is_some() {
            Evaluation::OutOfSample
        } else {
            Evaluation::InSample
        },
        split: options.split,
        n_train: base_windows.train.n(),
        n_eval: base_windows.eval().n(),
        lambda,
        rmse_base,
        rmse_corrected: corrected_report.as_ref().map(|r| r.rmse),
        sigma_base_median: base_chains.as_ref().map(sigma_median),
        sigma_corrected_median: corrected_chains.as_ref().map(sigma_median),
        base: base_report,
        corrected: corrected_report,
        pivots: pivots.cloned(),
        value_at_risk,
        partial: options.bayes.is_none(),
    };
    Ok(ExperimentOutcome {
        report,
        series,
        base_chains,
        corrected_chains,
    })
}

fn check_pivots(pivots: &PivotSet, dataset: &Dataset, split: Option<NaiveDate>) -> Result<()> {
    if pivots.is_empty() {
        return Err(Error::Validation("pivot set is empty".into()));
    }
    let (first, last) = match (dataset.dates().first(), dataset.dates().last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::Size("empty dataset".into())),
    };
    let outside = pivots.check_within(first, last);
    if let Some(e) = outside.first() {
        return Err(Error::Validation(format!("pivot {}: {}", e.index, e.message)));
    }
    if let Some(boundary) = split {
        if let Some((i, p)) = pivots.points().iter().enumerate().find(|(_, p)| p.date >= boundary) {
            return Err(Error::Validation(format!(
                "pivot {i} on {} is not before the split boundary {boundary}",
                p.date
            )));
        }
    }
    Ok(())
}

fn corrected_windows(base: &Windows, pivots: &PivotSet) -> Result<Windows> {
    let train_term = interpolate_correction(pivots, &base.train.dates)?;
    let train = augment_design(&base.train, &train_term)?;
    let eval = match &base.eval {
        Some(eval) => {
            let term = interpolate_correction(pivots, &eval.dates)?;
            let params = train.scales.last().expect("expert scale");
            Some(augment_design_with_scale(eval, &term, params)?)
        }
        None => None,
    };
    Ok(Windows { train, eval })
}

fn posterior_report(chains: &PosteriorChains) -> Result<PosteriorReport> {
    Ok(PosteriorReport {
        summaries: summarize(chains)?,
        diagnostics: diagnostics(chains)?,
    })
}

fn sigma_median(chains: &PosteriorChains) -> f64 {
    let k = chains.index_of("sigma").expect("sigma parameter");
    let mut draws = chains.pooled(k);
    draws.sort_by(f64::total_cmp);
    crate::bayes::quantile_sorted(&draws, 0.5)
}

fn series_rows(
    base_windows: &Windows,
    base: &FittedModel,
    corrected: Option<&(Windows, FittedModel)>,
) -> Result<Vec<SeriesRow>> {
    let mut rows = Vec::new();
    let mut push_window = |label: Window,
                           design: &DesignMatrix,
                           base_pred: &[f64],
                           corr: Option<(&DesignMatrix, &[f64])>|
     -> Result<()> {
        let deviation = deviation_series(&design.y, base_pred, &design.dates)?;
        for i in 0..design.n() {
            rows.push(SeriesRow {
                date: design.dates[i],
                window: label,
                actual: design.y[i].exp_m1(),
                predicted_base: base_pred[i].exp_m1(),
                predicted_corrected: corr.map(|(_, p)| p[i].exp_m1()),
                deviation: deviation.values()[i],
                correction: corr.map(|(d, _)| {
                    let params = d.scales.last().expect("expert scale");
                    params.inverse(*d.columns.last().unwrap().get(i).unwrap())
                }),
            });
        }
        Ok(())
    };
    push_window(
        Window::Train,
        &base_windows.train,
        &base.train_pred,
        corrected.map(|(w, m)| (&w.train, m.train_pred.as_slice())),
    )?;
    if let Some(eval) = &base_windows.eval {
        push_window(
            Window::Test,
            eval,
            &base.eval_pred,
            corrected.map(|(w, m)| (w.eval(), m.eval_pred.as_slice())),
        )?;
    }
    Ok(rows)
}

/// CSV of per-date actual and predicted prices for plotting.
pub fn write_series_csv<W: Write>(rows: &[SeriesRow], writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "date",
        "window",
        "actual",
        "predicted_base",
        "predicted_corrected",
        "deviation",
        "correction",
    ])
    .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        wtr.write_record([
            r.date.format(crate::ingest::DATE_FORMAT).to_string(),
            r.window.as_str().to_string(),
            r.actual.to_string(),
            r.predicted_base.to_string(),
            opt(r.predicted_corrected),
            r.deviation.to_string(),
            opt(r.correction),
        ])
        .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}
