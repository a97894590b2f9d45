//! One line per acceptance criterion. Runs as a plain binary so every line is
//! printed; the process fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request};
use chrono::NaiveDate;
use http_body_util::BodyExt;
use pivotfit_core::bayes::{
    diagnostics, posterior_predictive, sample_posterior, summarize, value_at_risk, McmcConfig,
    PosteriorChains, PriorSpec,
};
use pivotfit_core::eval::{run_experiment, run_experiment_full, ExperimentOptions};
use pivotfit_core::lasso::{fit_lasso, LassoConfig, LassoFit};
use pivotfit_core::preprocess::{ColumnTransform, DesignMatrix, ScaleParams};
use pivotfit_core::synthetic::{generate, linear_design, LinearSpec, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("lasso matches closed-form least squares and the null threshold", lasso_closed_form),
        ("lasso matches exhaustive grid minimization", lasso_brute_force),
        ("every converged fit satisfies the KKT conditions", kkt_certificate),
        ("oracle pivots cut price RMSE by at least 20%", expert_harness),
        ("Bayesian recovery of all generating parameters", bayes_recovery),
        ("Student-t posterior beats least squares under outliers", robustness),
        ("correction column narrows posterior sigma", sigma_narrowing),
        ("VaR of normal-limit point mass", var_sanity),
        ("CLI report is byte-identical across runs", cli_determinism),
        ("service refit equals CLI report", service_equivalence),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| verdict(false, format!("panicked: {}", panic_message(&e))));
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

// ---------- lasso ----------

fn raw_design(x: Vec<Vec<f64>>, y: Vec<f64>) -> DesignMatrix {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let names: Vec<String> = (0..x.len()).map(|j| format!("x{j}")).collect();
    let scales = names
        .iter()
        .map(|c| ScaleParams { column: c.clone(), mean: 0.0, std: 1.0, transform: ColumnTransform::Identity })
        .collect();
    let dates = (0..y.len()).map(|i| start + chrono::Duration::days(i as i64)).collect();
    DesignMatrix::from_parts(dates, names, x, y, scales).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> DesignMatrix {
    let b = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
    let x: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = (0..n)
        .map(|i| 0.5 + b[0] * x[0][i] + b[1] * x[1][i] + rng.random_range(-0.5..0.5))
        .collect();
    raw_design(x, y)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Centered cross-products `(Sxx, Sxy)` of a two-column design.
fn centered_moments(d: &DesignMatrix) -> ([[f64; 2]; 2], [f64; 2]) {
    let ybar = mean(&d.y);
    let xbar = [mean(&d.columns[0]), mean(&d.columns[1])];
    let mut sxx = [[0.0; 2]; 2];
    let mut sxy = [0.0; 2];
    for i in 0..d.n() {
        let xc = [d.columns[0][i] - xbar[0], d.columns[1][i] - xbar[1]];
        for a in 0..2 {
            sxy[a] += xc[a] * (d.y[i] - ybar);
            for b in 0..2 {
                sxx[a][b] += xc[a] * xc[b];
            }
        }
    }
    (sxx, sxy)
}

fn ols(d: &DesignMatrix) -> (f64, [f64; 2]) {
    let (s, v) = centered_moments(d);
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let b = [
        (v[0] * s[1][1] - s[0][1] * v[1]) / det,
        (s[0][0] * v[1] - s[1][0] * v[0]) / det,
    ];
    let alpha = mean(&d.y) - b[0] * mean(&d.columns[0]) - b[1] * mean(&d.columns[1]);
    (alpha, b)
}

fn lasso_closed_form() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let exact = LassoConfig { lambda: 0.0, tol: 1e-14, max_iter: 1_000_000 };
    let (mut worst, mut nonzero_above) = (0.0f64, 0usize);
    for _ in 0..20 {
        let d = random_problem(&mut rng, 10);
        let fit = fit_lasso(&d, &exact).unwrap();
        let (alpha, b) = ols(&d);
        worst = worst
            .max((fit.intercept - alpha).abs())
            .max((fit.coefficients[0].value - b[0]).abs())
            .max((fit.coefficients[1].value - b[1]).abs());
        let (_, sxy) = centered_moments(&d);
        let threshold = sxy.iter().map(|v| v.abs()).fold(0.0, f64::max) / d.n() as f64;
        let above = fit_lasso(&d, &LassoConfig::with_lambda(threshold * (1.0 + 1e-9))).unwrap();
        nonzero_above += above.coefficients.iter().filter(|c| c.value != 0.0).count();
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-8 && nonzero_above == 0 && elapsed < Duration::from_secs(1),
        format!(
            "max |beta - ols| = {worst:.2e} (tol 1e-8), nonzero above threshold = {nonzero_above}, {:.3}s (< 1s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn lasso_brute_force() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lambda = 0.1;
    let mut worst = 0.0f64;
    let mut on_edge = false;
    for _ in 0..5 {
        let d = random_problem(&mut rng, 5);
        let fit = fit_lasso(&d, &LassoConfig { lambda, tol: 1e-12, max_iter: 1_000_000 }).unwrap();
        let (s, v) = centered_moments(&d);
        let n = d.n() as f64;
        // intercept profiled out: f(b) = (bᵀSb − 2bᵀv)/2n + λ|b|₁ + const
        let objective = |b0: f64, b1: f64| {
            (s[0][0] * b0 * b0 + 2.0 * s[0][1] * b0 * b1 + s[1][1] * b1 * b1 - 2.0 * (b0 * v[0] + b1 * v[1]))
                / (2.0 * n)
                + lambda * (b0.abs() + b1.abs())
        };
        let (mut best, mut arg) = (f64::INFINITY, (0i32, 0i32));
        for i in -3000..=3000 {
            for j in -3000..=3000 {
                let f = objective(i as f64 * 1e-3, j as f64 * 1e-3);
                if f < best {
                    best = f;
                    arg = (i, j);
                }
            }
        }
        on_edge |= arg.0.abs() == 3000 || arg.1.abs() == 3000;
        worst = worst
            .max((fit.coefficients[0].value - arg.0 as f64 * 1e-3).abs())
            .max((fit.coefficients[1].value - arg.1 as f64 * 1e-3).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 2e-3 && !on_edge && elapsed < Duration::from_secs(30),
        format!("max |beta - grid argmin| = {worst:.2e} (tol 2e-3), {:.1}s (< 30s)", elapsed.as_secs_f64()),
    )
}

/// Largest stationarity violation with `r = y − α − Xβ`:
/// `|xⱼᵀr/n − λ·sign βⱼ|` when active, `max(|xⱼᵀr/n| − λ, 0)` when zero.
fn kkt_oracle(fit: &LassoFit, d: &DesignMatrix) -> f64 {
    let n = d.n() as f64;
    let r: Vec<f64> = (0..d.n())
        .map(|i| {
            d.y[i] - fit.intercept
                - fit.coefficients.iter().zip(&d.columns).map(|(c, x)| c.value * x[i]).sum::<f64>()
        })
        .collect();
    fit.coefficients
        .iter()
        .zip(&d.columns)
        .map(|(c, x)| {
            let g = x.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n;
            if c.value != 0.0 {
                (g - fit.lambda * c.value.signum()).abs()
            } else {
                (g.abs() - fit.lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn kkt_certificate() -> Verdict {
    let mut fits: Vec<(DesignMatrix, LassoConfig)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let d = random_problem(&mut rng, 10);
        for lambda in [0.0, 0.05, 0.3] {
            fits.push((d.clone(), LassoConfig::with_lambda(lambda)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        fits.push((random_problem(&mut rng, 5), LassoConfig::with_lambda(0.1)));
    }
    let data = generate(&SyntheticSpec::default()).unwrap();
    let features: Vec<String> = pivotfit_core::DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect();
    let design = pivotfit_core::preprocess::build_design(&data.dataset, &features).unwrap();
    let term = pivotfit_core::correction::interpolate_correction(&data.pivots, &design.dates).unwrap();
    let augmented = pivotfit_core::correction::augment_design(&design, &term).unwrap();
    for lambda in [0.0, 0.001, 0.01, 0.1] {
        fits.push((design.clone(), LassoConfig::with_lambda(lambda)));
        fits.push((augmented.clone(), LassoConfig::with_lambda(lambda)));
    }
    let (mut checked, mut bad, mut worst_ratio) = (0, 0, 0.0f64);
    for (d, cfg) in &fits {
        let fit = fit_lasso(d, cfg).unwrap();
        if !fit.converged {
            continue;
        }
        checked += 1;
        let v = kkt_oracle(&fit, d);
        worst_ratio = worst_ratio.max(v / cfg.tol);
        if v >= 10.0 * cfg.tol {
            bad += 1;
        }
    }
    verdict(
        bad == 0 && checked == fits.len(),
        format!("{checked}/{} fits converged, {bad} violate, worst violation = {worst_ratio:.2}·tol (< 10·tol)", fits.len()),
    )
}

// ---------- correction harness ----------

fn lasso_only() -> ExperimentOptions {
    ExperimentOptions { bayes: None, ..Default::default() }
}

fn expert_harness() -> Verdict {
    let start = Instant::now();
    let data = generate(&SyntheticSpec::default()).unwrap();
    let with = run_experiment(&data.dataset, Some(&data.pivots), &lasso_only()).unwrap();
    let without = run_experiment(&data.dataset, None, &lasso_only()).unwrap();
    let elapsed = start.elapsed();
    let ratio = with.rmse_corrected.unwrap() / with.rmse_base;
    let omitted = without.rmse_corrected.is_none() && without.corrected.is_none();
    verdict(
        ratio <= 0.8 && omitted && elapsed < Duration::from_secs(10),
        format!(
            "rmse_corrected/rmse_base = {:.1}/{:.1} = {ratio:.3} (<= 0.8), corrected branch omitted without pivots: {omitted}, {:.2}s (< 10s)",
            with.rmse_corrected.unwrap(),
            with.rmse_base,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------- Bayesian harness, shared by recovery and sigma narrowing ----------

struct Replication {
    covered: Vec<bool>,
    max_rhat: f64,
    sigma_base: f64,
    sigma_corrected: f64,
}

struct BayesHarness {
    names: Vec<String>,
    reps: Vec<Replication>,
    elapsed: Duration,
}

fn bayes_harness() -> &'static BayesHarness {
    static CELL: std::sync::OnceLock<BayesHarness> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut names = Vec::new();
        let reps = (0..10u64)
            .map(|seed| {
                let data = generate(&SyntheticSpec { seed, ..Default::default() }).unwrap();
                let mut options = ExperimentOptions::default();
                options.bayes.as_mut().unwrap().mcmc.seed = seed;
                let out = run_experiment_full(&data.dataset, Some(&data.pivots), &options).unwrap();
                let chains = out.corrected_chains.as_ref().unwrap();
                names = chains.parameter_names.clone();
                let truth = data.truth.augmented_params();
                let covered = summarize(chains)
                    .unwrap()
                    .iter()
                    .zip(&truth)
                    .map(|(s, t)| s.q05 <= *t && *t <= s.q95)
                    .collect();
                let max_rhat = diagnostics(chains)
                    .unwrap()
                    .iter()
                    .map(|d| d.rhat.unwrap_or(f64::INFINITY))
                    .fold(0.0, f64::max);
                Replication {
                    covered,
                    max_rhat,
                    sigma_base: out.report.sigma_base_median.unwrap(),
                    sigma_corrected: out.report.sigma_corrected_median.unwrap(),
                }
            })
            .collect();
        BayesHarness { names, reps, elapsed: start.elapsed() }
    })
}

fn bayes_recovery() -> Verdict {
    let h = bayes_harness();
    let all_covered = h.reps.iter().filter(|r| r.covered.iter().all(|c| *c)).count();
    let max_rhat = h.reps.iter().map(|r| r.max_rhat).fold(0.0, f64::max);
    let per_param: Vec<String> = (0..h.names.len())
        .map(|j| format!("{}={}", h.names[j], h.reps.iter().filter(|r| r.covered[j]).count()))
        .collect();
    verdict(
        all_covered >= 8 && max_rhat < 1.05 && h.elapsed < Duration::from_secs(300),
        format!(
            "all parameters inside 90% intervals in {all_covered}/10 replications (>= 8), max split-Rhat = {max_rhat:.4} (< 1.05), {:.0}s (< 300s); per-parameter coverage: {}",
            h.elapsed.as_secs_f64(),
            per_param.join(" ")
        ),
    )
}

fn sigma_narrowing() -> Verdict {
    let h = bayes_harness();
    let narrower = h.reps.iter().filter(|r| r.sigma_corrected < r.sigma_base).count();
    let ratios: Vec<String> =
        h.reps.iter().map(|r| format!("{:.3}/{:.3}", r.sigma_corrected, r.sigma_base)).collect();
    verdict(
        narrower == 10,
        format!("sigma_corrected < sigma_base in {narrower}/10 (= 10): {}", ratios.join(" ")),
    )
}

fn robustness() -> Verdict {
    let mut wins = 0;
    for seed in 0..10u64 {
        let spec = LinearSpec { outlier_rows: 10, seed, ..Default::default() };
        let d = linear_design(&spec).unwrap();
        let ls = fit_lasso(&d, &LassoConfig { lambda: 0.0, tol: 1e-12, max_iter: 1_000_000 }).unwrap();
        let chains = sample_posterior(&d, &PriorSpec::default(), &McmcConfig { seed, ..Default::default() }).unwrap();
        let s = summarize(&chains).unwrap();
        let better = (0..spec.beta.len()).all(|j| {
            (s[j + 1].median - spec.beta[j]).abs() < (ls.coefficients[j].value - spec.beta[j]).abs()
        });
        wins += usize::from(better);
    }
    verdict(wins >= 9, format!("posterior median closer than least squares on every coefficient in {wins}/10 (>= 9), 5% outliers shifted +10"))
}

fn var_sanity() -> Verdict {
    let names = ["alpha", "sigma", "nu"].map(String::from).to_vec();
    let point = vec![vec![vec![0.0, 1.0, 1e6]]; 2];
    let chains = PosteriorChains::from_draws(names, point, 0).unwrap();
    let draws = posterior_predictive(&chains, &[], 100_000, 0).unwrap();
    let day = NaiveDate::from_ymd_opt(2017, 12, 31).unwrap();
    let levels = [0.01, 0.05, 0.1, 0.5];
    let q: Vec<f64> = levels.iter().map(|l| value_at_risk(&draws, *l, day).unwrap().log_quantile).collect();
    let monotone = q.windows(2).all(|w| w[0] <= w[1]);
    verdict(
        (-1.70..=-1.60).contains(&q[1]) && monotone,
        format!("5% log-quantile = {:.4} (in [-1.70, -1.60]), quantiles at {levels:?} = {q:.3?} monotone: {monotone}", q[1]),
    )
}

// ---------- CLI and service ----------

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn cli_report(out: &std::path::Path, series: &std::path::Path) {
    let f = fixtures();
    let status = Command::new(env!("CARGO_BIN_EXE_pivotfit"))
        .args(["report", "--data"])
        .arg(f.join("datasets/synthetic"))
        .arg("--pivots")
        .arg(f.join("pivots/synthetic.json"))
        .args(["--seed", "0", "--out"])
        .arg(out)
        .arg("--series-out")
        .arg(series)
        .status()
        .unwrap();
    assert!(status.success(), "pivotfit report failed");
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    cli_report(&p("a.json"), &p("a.csv"));
    cli_report(&p("b.json"), &p("b.csv"));
    let same_json = std::fs::read(p("a.json")).unwrap() == std::fs::read(p("b.json")).unwrap();
    let same_csv = std::fs::read(p("a.csv")).unwrap() == std::fs::read(p("b.csv")).unwrap();
    verdict(
        same_json && same_csv,
        format!("report JSON identical: {same_json}, series CSV identical: {same_csv}"),
    )
}

fn service_equivalence() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    cli_report(&dir.path().join("r.json"), &dir.path().join("r.csv"));
    let cli: Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();

    let pivots: Value =
        serde_json::from_slice(&std::fs::read(fixtures().join("pivots/synthetic.json")).unwrap()).unwrap();
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let service: Value = runtime.block_on(async {
        let app = pivotfit_service::router(pivotfit_service::AppState::new(
            pivotfit_service::ServiceConfig::new(fixtures().join("datasets")),
        ));
        let call = |method: Method, uri: String, body: Value| {
            let app = app.clone();
            async move {
                let req = Request::builder()
                    .method(method)
                    .uri(uri)
                    .header("content-type", "application/json")
                    .body(Body::from(body.to_string()))
                    .unwrap();
                let resp = app.oneshot(req).await.unwrap();
                assert!(resp.status().is_success(), "{}", resp.status());
                let bytes = resp.into_body().collect().await.unwrap().to_bytes();
                serde_json::from_slice::<Value>(&bytes).unwrap()
            }
        };
        let session = call(Method::POST, "/sessions".into(), json!({"dataset": "synthetic"})).await;
        let id = session["id"].as_str().unwrap().to_string();
        call(Method::PUT, format!("/sessions/{id}/pivots"), json!({"pivots": pivots, "expected_revision": 0})).await;
        call(Method::POST, format!("/sessions/{id}/refit"), json!({"seed": 0})).await
    });
    let mut diffs = Vec::new();
    diff_values("", &cli, &service, &mut diffs);
    verdict(
        diffs.is_empty(),
        if diffs.is_empty() {
            format!("{} top-level fields equal", cli.as_object().map_or(0, |o| o.len()))
        } else {
            format!("differing fields: {}", diffs.join(", "))
        },
    )
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for key in x.keys().chain(y.keys().filter(|k| !x.contains_key(*k))) {
                let sub = format!("{path}/{key}");
                match (x.get(key), y.get(key)) {
                    (Some(p), Some(q)) => diff_values(&sub, p, q, out),
                    _ => out.push(sub),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                diff_values(&format!("{path}/{i}"), p, q, out);
            }
        }
        _ if a == b => {}
        _ => out.push(path.to_string()),
    }
}
