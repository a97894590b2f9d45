//! `pivotfit` command line.
//!
//! Exit codes: 0 success, 1 validation or data error, 2 usage error.
//! `--config file.json` supplies any flag by its long name (`"lambda_grid"`
//! or `"lambda-grid"`); flags given on the command line win.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use pivotfit_core::bayes::{PosteriorChains, VarEstimate};
use pivotfit_core::correction::{suggest_pivots, PivotSet};
use pivotfit_core::eval::{
    run_experiment_full, write_series_csv, Evaluation, ExperimentOutcome, ModelReport,
    PosteriorReport, RunSettings, Window,
};
use pivotfit_core::ingest::{
    align, fetch_chain_stat, load_series, AlignPolicy, ChainMetric, Dataset, DateRange,
    StatClientConfig, TimeSeries,
};
use pivotfit_core::{Error, Result};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "pivotfit", version, about = "Lasso price model with expert pivot correction")]
struct Cli {
    /// JSON object of flag values; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fetch chain statistics and CSV imports, align them, write a dataset directory.
    Ingest(IngestArgs),
    /// Fit the base Lasso model.
    Fit(FitArgs),
    /// Fit with a correction from a pivot file, or suggest pivots when none is given.
    Correct(CorrectArgs),
    /// Bayesian refit with posterior summaries and value at risk.
    Bayes(BayesCmdArgs),
    /// Full pipeline report.
    Report(ReportArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct IngestArgs {
    /// Directory of `<metric>.csv` files used instead of the network.
    #[arg(long, value_name = "DIR")]
    chain_fixtures: Option<PathBuf>,
    /// Base URL of the chart API.
    #[arg(long)]
    base_url: Option<String>,
    /// JSON `StatClientConfig` file.
    #[arg(long, value_name = "FILE")]
    client_config: Option<PathBuf>,
    /// Directory with `gtrend.csv` and `wiki_cryptocurrency.csv`.
    #[arg(long, value_name = "DIR")]
    imports: Option<PathBuf>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    /// Longest gap, in days, bridged by carrying the last value forward.
    #[arg(long, default_value_t = 3)]
    max_gap_days: u32,
    /// Keep only dates present in every series.
    #[arg(long)]
    intersect: bool,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory with one `<column>.csv` per series.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, default_value = pivotfit_core::DEFAULT_TARGET)]
    target: String,
    /// Ordered comma-separated regressors.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value_t = 3)]
    max_gap_days: u32,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, allow_negative_numbers = true, value_parser = non_negative, conflicts_with = "lambda_grid")]
    lambda: Option<f64>,
    /// Comma-separated candidates chosen by forward-chaining cross-validation.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_parser = non_negative)]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// First out-of-sample date; omitted means in-sample evaluation.
    #[arg(long)]
    split: Option<NaiveDate>,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct CorrectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// JSON array of `{"date", "value"}` pivots.
    #[arg(long, value_name = "FILE")]
    pivots: Option<PathBuf>,
    /// Half-width in days of the extremum search when suggesting pivots.
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Per-date CSV of actual, predicted and correction values.
    #[arg(long, value_name = "FILE")]
    series_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct BayesCmdArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, value_name = "FILE")]
    pivots: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// CSV of the final model's draws.
    #[arg(long, value_name = "FILE")]
    draws_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, value_name = "FILE")]
    pivots: Option<PathBuf>,
    /// Skip the Bayesian stage; the report is marked partial.
    #[arg(long)]
    fast: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    series_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct ServeArgs {
    /// Directory whose subdirectories are datasets.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, env = "PIVOTFIT_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long, env = "PIVOTFIT_CORS_ORIGIN")]
    cors_origin: Option<String>,
    /// Sessions are restored from and saved to this JSON file.
    #[arg(long, value_name = "FILE")]
    snapshot: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    time_budget_secs: u64,
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite number >= 0, got {s}"))
    }
}

const SUBCOMMANDS: [&str; 6] = ["ingest", "fit", "correct", "bayes", "report", "serve"];

/// Runs the command line and returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match splice_config(argv) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_usage() {
        2
    } else {
        1
    }
}

/// Inserts flags from `--config` right after the subcommand, ahead of the
/// explicit ones, so later occurrences override them.
fn splice_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy().into_owned();
        if arg == "--config" && i + 1 < argv.len() {
            path = Some(PathBuf::from(argv.remove(i + 1)));
            argv.remove(i);
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            argv.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let Some(at) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Usage(format!("--config {}: {e}", path.display())))?;
    let tokens = config_tokens(&text).map_err(|m| Error::Usage(format!("--config {}: {m}", path.display())))?;
    argv.splice(at + 1..at + 1, tokens.into_iter().map(OsString::from));
    Ok(argv)
}

fn config_tokens(text: &str) -> std::result::Result<Vec<String>, String> {
    use serde_json::Value;
    let map = match serde_json::from_str::<Value>(text).map_err(|e| e.to_string())? {
        Value::Object(m) => m,
        _ => return Err("expected a JSON object".into()),
    };
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("unsupported value {other}")),
    };
    let mut tokens = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match &value {
            Value::Bool(true) => tokens.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<std::result::Result<Vec<_>, _>>()?;
                tokens.push(format!("{flag}={}", parts.join(",")));
            }
            other => tokens.push(format!("{flag}={}", scalar(other)?)),
        }
    }
    Ok(tokens)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Fit(a) => fit(a),
        Command::Correct(a) => correct(a),
        Command::Bayes(a) => bayes(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut client = match &a.client_config {
        Some(path) => StatClientConfig::from_json_file(path)?,
        None => StatClientConfig::default(),
    }
    .with_env(|k| std::env::var(k).ok())?;
    if let Some(url) = a.base_url {
        client.base_url = Some(url);
        client.fixture_dir = None;
    }
    if let Some(dir) = a.chain_fixtures {
        client.fixture_dir = Some(dir);
    }
    let range = DateRange::new(
        a.start.unwrap_or(NaiveDate::MIN),
        a.end.unwrap_or(NaiveDate::MAX),
    )?;
    let mut series: Vec<TimeSeries> = ChainMetric::ALL
        .iter()
        .map(|m| Ok(fetch_chain_stat(m.as_str(), range, &client)?.with_name(m.column_name())))
        .collect::<Result<_>>()?;
    if let Some(dir) = &a.imports {
        for name in ["gtrend", "wiki_cryptocurrency"] {
            series.push(load_series(dir.join(format!("{name}.csv")), name)?);
        }
    }
    let policy = if a.intersect {
        AlignPolicy::Intersect
    } else {
        AlignPolicy::ForwardFill { max_gap_days: a.max_gap_days }
    };
    let dataset = align(&series, policy, pivotfit_core::DEFAULT_TARGET)?
        .filter_dates(|d| d >= range.start && d <= range.end);
    if dataset.is_empty() {
        return Err(Error::Validation("no dates left after alignment".into()));
    }
    dataset.write_dir(&a.out)?;
    eprintln!(
        "wrote {} rows x {} columns to {}",
        dataset.len(),
        dataset.column_names().count(),
        a.out.display()
    );
    Ok(())
}

fn load(data: &DataArgs, features: &[String]) -> Result<Dataset> {
    if !data.data.is_dir() {
        return Err(Error::NotFound(format!("dataset directory {}", data.data.display())));
    }
    Dataset::load_dir(
        &data.data,
        &data.target,
        features,
        AlignPolicy::ForwardFill { max_gap_days: data.max_gap_days },
    )
}

fn settings(data: &DataArgs, model: &ModelArgs, sampler: Option<&SamplerArgs>) -> RunSettings {
    let mut s = RunSettings {
        features: data.features.clone(),
        lambda: model.lambda,
        lambda_grid: model.lambda_grid.clone(),
        folds: model.folds,
        split: model.split,
        fast: true,
        ..RunSettings::default()
    };
    if let Some(p) = sampler {
        s.seed = p.seed;
        s.chains = p.chains;
        s.samples = p.samples;
        s.warmup = p.warmup;
        s.fast = false;
    }
    s
}

fn run(
    data: &DataArgs,
    settings: &RunSettings,
    pivots: Option<&Path>,
) -> Result<ExperimentOutcome> {
    let options = settings.to_options()?;
    let dataset = load(data, &options.features)?;
    let pivots = pivots.map(read_pivots).transpose()?;
    run_experiment_full(&dataset, pivots.as_ref(), &options)
}

fn read_pivots(path: &Path) -> Result<PivotSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::NotFound(format!("pivot file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_series_file(outcome: &ExperimentOutcome, path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        write_series_csv(&outcome.series, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitDocument {
    evaluation: Evaluation,
    split: Option<NaiveDate>,
    n_train: usize,
    n_eval: usize,
    lambda: f64,
    model: ModelReport,
}

fn fit(a: FitArgs) -> Result<()> {
    let outcome = run(&a.data, &settings(&a.data, &a.model, None), None)?;
    let r = outcome.report;
    let doc = FitDocument {
        evaluation: r.evaluation,
        split: r.split,
        n_train: r.n_train,
        n_eval: r.n_eval,
        lambda: r.lambda,
        model: r.base,
    };
    write_json(&doc, a.out.as_deref())
}

fn correct(a: CorrectArgs) -> Result<()> {
    let s = settings(&a.data, &a.model, None);
    let outcome = run(&a.data, &s, a.pivots.as_deref())?;
    write_series_file(&outcome, a.series_out.as_deref())?;
    if a.pivots.is_some() {
        return write_json(&outcome.report, a.out.as_deref());
    }
    let train: Vec<_> = outcome.series.iter().filter(|r| r.window == Window::Train).collect();
    let deviation = TimeSeries::new(
        "deviation",
        train.iter().map(|r| r.date).collect(),
        train.iter().map(|r| r.deviation).collect(),
    )?;
    write_json(&suggest_pivots(&deviation, a.window)?, a.out.as_deref())
}

#[derive(Serialize)]
struct BayesDocument {
    lambda: f64,
    base: Option<PosteriorReport>,
    corrected: Option<PosteriorReport>,
    value_at_risk: Vec<VarEstimate>,
}

fn bayes(a: BayesCmdArgs) -> Result<()> {
    let s = settings(&a.data, &a.model, Some(&a.sampler));
    let outcome = run(&a.data, &s, a.pivots.as_deref())?;
    if let Some(path) = &a.draws_out {
        let chains: Option<&PosteriorChains> =
            outcome.corrected_chains.as_ref().or(outcome.base_chains.as_ref());
        if let Some(chains) = chains {
            chains.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        }
    }
    let r = outcome.report;
    let doc = BayesDocument {
        lambda: r.lambda,
        base: r.base.posterior,
        corrected: r.corrected.and_then(|c| c.posterior),
        value_at_risk: r.value_at_risk,
    };
    write_json(&doc, a.out.as_deref())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut s = settings(&a.data, &a.model, Some(&a.sampler));
    s.fast = a.fast;
    let outcome = run(&a.data, &s, a.pivots.as_deref())?;
    write_series_file(&outcome, a.series_out.as_deref())?;
    write_json(&outcome.report, a.out.as_deref())
}

fn serve(a: ServeArgs) -> Result<()> {
    if !a.data.is_dir() {
        return Err(Error::NotFound(format!("data root {}", a.data.display())));
    }
    let config = pivotfit_service::ServiceConfig {
        data_root: a.data,
        time_budget: Duration::from_secs(a.time_budget_secs),
        cors_origin: a.cors_origin,
        snapshot: a.snapshot,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(pivotfit_service::serve(config, a.bind))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_tokens_cover_value_kinds() {
        let t = config_tokens(
            r#"{"lambda_grid":[0.1,0.01],"seed":3,"fast":true,"split":"2016-06-01","series-out":null}"#,
        )
        .unwrap();
        assert_eq!(t, ["--fast", "--lambda-grid=0.1,0.01", "--seed=3", "--split=2016-06-01"]);
        assert!(config_tokens("[1]").is_err());
        assert!(config_tokens(r#"{"a":{"b":1}}"#).is_err());
    }

    #[test]
    fn negative_lambda_is_rejected_by_name() {
        let err = Cli::try_parse_from(["pivotfit", "fit", "--data", "d", "--lambda", "-1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--lambda"), "{err}");
    }

    #[test]
    fn later_flags_override_earlier() {
        let cli = Cli::try_parse_from([
            "pivotfit", "report", "--seed=1", "--data", "d", "--seed", "7",
        ])
        .unwrap();
        let Command::Report(r) = cli.command else { panic!() };
        assert_eq!(r.sampler.seed, 7);
    }
}
