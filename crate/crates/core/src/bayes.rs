//! Robust Bayesian regression with a Student-t likelihood.
//!
//! Model: `y ~ StudentT(ν, α + x·β, σ)` with priors `α, β ~ N(0, beta_scale)`,
//! `σ ~ HalfCauchy(sigma_scale)` and `ν − 1 ~ Gamma(nu_shape, nu_rate)`.
//! The posterior is explored by componentwise random-walk Metropolis on
//! `(α, β, ln σ, ln(ν − 1))`; proposal scales adapt during warmup toward a
//! target acceptance rate and are frozen afterwards. Every chain draws from
//! its own ChaCha stream of the master seed, so runs are reproducible
//! whether or not chains execute in parallel.

use std::f64::consts::PI;
use std::io::Write;

use chrono::NaiveDate;
use libm::lgamma;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::{fit_lasso, LassoConfig};
use crate::preprocess::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Normal prior scale for the intercept and every coefficient.
    pub beta_scale: f64,
    /// Half-Cauchy scale for σ.
    pub sigma_scale: f64,
    /// Gamma shape and rate for ν − 1.
    pub nu_shape: f64,
    pub nu_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta_scale: 10.0,
            sigma_scale: 1.0,
            nu_shape: 2.0,
            nu_rate: 0.1,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_scale, self.sigma_scale, self.nu_shape, self.nu_rate];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Usage(format!("prior parameters must be positive: {self:?}")))
        }
    }

    fn log_prior(&self, alpha: f64, beta: &[f64], sigma: f64, nu: f64) -> f64 {
        let s2 = self.beta_scale * self.beta_scale;
        let norm_const = -0.5 * (2.0 * PI * s2).ln();
        let locations: f64 = std::iter::once(alpha)
            .chain(beta.iter().copied())
            .map(|b| norm_const - b * b / (2.0 * s2))
            .sum();
        let ratio = sigma / self.sigma_scale;
        let half_cauchy = 2f64.ln() - (PI * self.sigma_scale).ln() - ratio.mul_add(ratio, 1.0).ln();
        let excess = nu - 1.0;
        let gamma = self.nu_shape * self.nu_rate.ln() - lgamma(self.nu_shape)
            + (self.nu_shape - 1.0) * excess.ln()
            - self.nu_rate * excess;
        locations + half_cauchy + gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Acceptance rate the per-component proposal scales are tuned toward.
    pub step_adapt_target: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_samples: 2000,
            seed: 0,
            step_adapt_target: 0.44,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::Usage(format!("need at least 2 chains, got {}", self.n_chains)));
        }
        if self.n_samples < 100 {
            return Err(Error::Usage(format!(
                "need at least 100 samples per chain, got {}",
                self.n_samples
            )));
        }
        if !(self.step_adapt_target > 0.0 && self.step_adapt_target < 1.0) {
            return Err(Error::Usage(format!(
                "step_adapt_target must lie in (0,1), got {}",
                self.step_adapt_target
            )));
        }
        Ok(())
    }
}

/// Posterior draws, `draws[chain][sample][parameter]`, in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChains {
    pub parameter_names: Vec<String>,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    /// Post-warmup acceptance rate per chain and parameter.
    pub acceptance: Vec<Vec<f64>>,
}

impl PosteriorChains {
    /// Wraps externally produced draws. The last two parameters must be σ and ν.
    pub fn from_draws(
        parameter_names: Vec<String>,
        draws: Vec<Vec<Vec<f64>>>,
        seed: u64,
    ) -> Result<Self> {
        let dim = parameter_names.len();
        if dim < 3 || parameter_names[dim - 2] != "sigma" || parameter_names[dim - 1] != "nu" {
            return Err(Error::Schema(
                "parameters must be alpha, beta_*, sigma, nu".into(),
            ));
        }
        for draw in draws.iter().flatten() {
            if draw.len() != dim {
                return Err(Error::Schema(format!("draw has {} values, expected {dim}", draw.len())));
            }
            if !(draw[dim - 2] > 0.0) || !(draw[dim - 1] > 1.0) {
                return Err(Error::Validation(format!(
                    "draw outside support: sigma={}, nu={}",
                    draw[dim - 2],
                    draw[dim - 1]
                )));
            }
        }
        let acceptance = draws.iter().map(|_| vec![f64::NAN; dim]).collect();
        Ok(Self {
            parameter_names,
            draws,
            seed,
            acceptance,
        })
    }

    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_samples(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    /// All chains' draws of one parameter, chain after chain.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.draws.iter().flatten().map(|d| d[param]).collect()
    }

    fn chain(&self, chain: usize, param: usize) -> Vec<f64> {
        self.draws[chain].iter().map(|d| d[param]).collect()
    }

    /// CSV with columns `chain,iteration,<parameters...>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.parameter_names.iter().cloned());
        wtr.write_record(&header).map_err(io)?;
        for (c, chain) in self.draws.iter().enumerate() {
            for (i, draw) in chain.iter().enumerate() {
                let mut row = vec![c.to_string(), i.to_string()];
                row.extend(draw.iter().map(f64::to_string));
                wtr.write_record(&row).map_err(io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Parameter names for a design: `alpha`, `beta_<feature>`..., `sigma`, `nu`.
pub fn parameter_names(design: &DesignMatrix) -> Vec<String> {
    std::iter::once("alpha".to_string())
        .chain(design.feature_names.iter().map(|f| format!("beta_{f}")))
        .chain(["sigma".to_string(), "nu".to_string()])
        .collect()
}

fn student_t_loglik(resid: &[f64], sigma: f64, nu: f64) -> f64 {
    let n = resid.len() as f64;
    let norm = lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * (nu * PI).ln() - sigma.ln();
    let inv = 1.0 / (nu * sigma * sigma);
    let kernel: f64 = resid.iter().map(|r| (r * r * inv).ln_1p()).sum();
    n * norm - 0.5 * (nu + 1.0) * kernel
}

/// Log posterior density (up to a constant) at `params = [α, β..., σ, ν]`.
///
/// Returns `−∞` outside the support (σ ≤ 0 or ν ≤ 1).
pub fn log_density(params: &[f64], design: &DesignMatrix, priors: &PriorSpec) -> Result<f64> {
    let p = design.p();
    if params.len() != p + 3 {
        return Err(Error::Schema(format!(
            "expected {} parameters, got {}",
            p + 3,
            params.len()
        )));
    }
    if design.y.iter().chain(design.columns.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("design has non-finite entries".into()));
    }
    let (alpha, beta) = (params[0], &params[1..=p]);
    let (sigma, nu) = (params[p + 1], params[p + 2]);
    if !(sigma > 0.0) || !(nu > 1.0) || params.iter().any(|v| v.is_nan()) {
        return Ok(f64::NEG_INFINITY);
    }
    let resid = residuals(design, alpha, beta);
    Ok(student_t_loglik(&resid, sigma, nu) + priors.log_prior(alpha, beta, sigma, nu))
}

fn residuals(design: &DesignMatrix, alpha: f64, beta: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = design.y.iter().map(|y| y - alpha).collect();
    for (col, b) in design.columns.iter().zip(beta) {
        for (ri, x) in r.iter_mut().zip(col) {
            *ri -= b * x;
        }
    }
    r
}

/// Unconstrained sampler state `[α, β..., ln σ, ln(ν − 1)]` with its residuals.
struct State {
    theta: Vec<f64>,
    resid: Vec<f64>,
    log_target: f64,
}

struct Target<'a> {
    design: &'a DesignMatrix,
    priors: &'a PriorSpec,
}

impl Target<'_> {
    fn p(&self) -> usize {
        self.design.p()
    }

    // log posterior on the unconstrained scale, Jacobian included
    fn eval(&self, theta: &[f64], resid: &[f64]) -> f64 {
        let p = self.p();
        let (log_sigma, log_excess) = (theta[p + 1], theta[p + 2]);
        let sigma = log_sigma.exp();
        let nu = 1.0 + log_excess.exp();
        if !(sigma > 0.0 && sigma.is_finite() && nu.is_finite() && nu > 1.0) {
            return f64::NEG_INFINITY;
        }
        let value = student_t_loglik(resid, sigma, nu)
            + self.priors.log_prior(theta[0], &theta[1..=p], sigma, nu)
            + log_sigma
            + log_excess;
        if value.is_nan() {
            f64::NEG_INFINITY
        } else {
            value
        }
    }

    fn natural(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.p();
        let mut out = theta.to_vec();
        out[p + 1] = theta[p + 1].exp();
        out[p + 2] = 1.0 + theta[p + 2].exp();
        out
    }
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    acceptance: Vec<f64>,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

fn run_chain(
    target: &Target<'_>,
    start: &[f64],
    base_steps: &[f64],
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let design = target.design;
    let p = target.p();
    let dim = p + 3;
    let mut rng = chain_rng(config.seed, chain);

    let mut theta = start.to_vec();
    for (t, s) in theta.iter_mut().zip(base_steps) {
        *t += 2.0 * s * rng.sample::<f64, _>(StandardNormal);
    }
    let resid = residuals(design, theta[0], &theta[1..=p]);
    let log_target = target.eval(&theta, &resid);
    let mut state = State {
        theta,
        resid,
        log_target,
    };
    if !state.log_target.is_finite() {
        return Err(Error::SamplerStuck(format!(
            "chain {chain}: initial point has zero posterior density"
        )));
    }

    let mut log_step: Vec<f64> = base_steps.iter().map(|s| s.ln()).collect();
    let mut warm_accepts = vec![0usize; dim];
    let mut accepts = vec![0usize; dim];
    let mut proposal = vec![0.0; design.n()];
    let mut draws = Vec::with_capacity(config.n_samples);

    for iter in 0..config.n_warmup + config.n_samples {
        let warming = iter < config.n_warmup;
        let gain = (iter as f64 + 1.0).powf(-0.6);
        for j in 0..dim {
            let delta = log_step[j].exp() * rng.sample::<f64, _>(StandardNormal);
            let old = state.theta[j];
            state.theta[j] = old + delta;
            let candidate = if j <= p {
                proposal.copy_from_slice(&state.resid);
                if j == 0 {
                    proposal.iter_mut().for_each(|r| *r -= delta);
                } else {
                    for (r, x) in proposal.iter_mut().zip(&design.columns[j - 1]) {
                        *r -= delta * x;
                    }
                }
                target.eval(&state.theta, &proposal)
            } else {
                target.eval(&state.theta, &state.resid)
            };
            let accepted = candidate.is_finite()
                && rng.random::<f64>().ln() < candidate - state.log_target;
            if accepted {
                state.log_target = candidate;
                if j <= p {
                    std::mem::swap(&mut state.resid, &mut proposal);
                }
            } else {
                state.theta[j] = old;
            }
            if warming {
                warm_accepts[j] += usize::from(accepted);
                let hit = if accepted { 1.0 } else { 0.0 };
                log_step[j] += gain * (hit - config.step_adapt_target);
            } else {
                accepts[j] += usize::from(accepted);
            }
        }
        if iter + 1 == config.n_warmup {
            if let Some(j) = warm_accepts.iter().position(|&a| a == 0) {
                return Err(Error::SamplerStuck(format!(
                    "chain {chain}: no proposal for parameter {j} accepted during warmup"
                )));
            }
        }
        if !warming {
            draws.push(target.natural(&state.theta));
        }
    }

    Ok(ChainOutput {
        draws,
        acceptance: accepts
            .iter()
            .map(|&a| a as f64 / config.n_samples as f64)
            .collect(),
    })
}

/// Starting point and proposal scales from a least-squares pass.
fn initial_point(design: &DesignMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = design.n();
    let p = design.p();
    let lambda = if n > p + 1 { 0.0 } else { 1e-3 };
    let fit = fit_lasso(design, &LassoConfig { lambda, max_iter: 10_000, tol: 1e-9 })?;
    let beta = fit.beta();
    let resid = residuals(design, fit.intercept, &beta);
    let rms = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt().max(1e-6);
    let sigma0 = 0.8 * rms;
    let nf = n as f64;

    let mut theta = vec![fit.intercept];
    theta.extend(beta);
    theta.push(sigma0.ln());
    theta.push(4f64.ln());

    let mut steps = vec![2.4 * rms / nf.sqrt()];
    for col in &design.columns {
        let (_, sd) = crate::preprocess::mean_std(col);
        let scale = if sd > 0.0 { sd } else { 1.0 };
        steps.push(2.4 * rms / (nf.sqrt() * scale));
    }
    steps.push(2.4 / (2.0 * nf).sqrt());
    steps.push(0.5);
    Ok((theta, steps))
}

/// Draws from the posterior of the Student-t regression on `design`.
pub fn sample_posterior(
    design: &DesignMatrix,
    priors: &PriorSpec,
    config: &McmcConfig,
) -> Result<PosteriorChains> {
    config.validate()?;
    priors.validate()?;
    if design.n() == 0 {
        return Err(Error::Size("cannot sample on an empty design".into()));
    }
    if design.y.iter().chain(design.columns.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("design has non-finite entries".into()));
    }
    let (start, steps) = initial_point(design)?;
    let target = Target { design, priors };

    let outputs: Vec<Result<ChainOutput>> = run_chains(config.n_chains, |c| {
        run_chain(&target, &start, &steps, config, c)
    });
    let mut draws = Vec::with_capacity(config.n_chains);
    let mut acceptance = Vec::with_capacity(config.n_chains);
    for out in outputs {
        let out = out?;
        draws.push(out.draws);
        acceptance.push(out.acceptance);
    }
    Ok(PosteriorChains {
        parameter_names: parameter_names(design),
        draws,
        seed: config.seed,
        acceptance,
    })
}

#[cfg(all(feature = "parallel", not(target_arch = "wasm32")))]
fn run_chains<T: Send>(n: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n).map(|c| { let job = &job; scope.spawn(move || job(c)) }).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

#[cfg(not(all(feature = "parallel", not(target_arch = "wasm32"))))]
fn run_chains<T: Send>(n: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    (0..n).map(job).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// Split-R̂; `None` when every draw of the parameter is identical, `+∞` when
    /// chains are individually constant but disagree.
    pub rhat: Option<f64>,
    pub ess: f64,
}

/// Split-R̂ and effective sample size per parameter.
pub fn diagnostics(chains: &PosteriorChains) -> Result<Vec<ParamDiagnostics>> {
    if chains.n_chains() < 2 {
        return Err(Error::Usage(format!(
            "diagnostics need at least 2 chains, got {}",
            chains.n_chains()
        )));
    }
    if chains.n_samples() < 4 {
        return Err(Error::Size("diagnostics need at least 4 draws per chain".into()));
    }
    Ok(chains
        .parameter_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let per_chain: Vec<Vec<f64>> =
                (0..chains.n_chains()).map(|c| chains.chain(c, k)).collect();
            ParamDiagnostics {
                name: name.clone(),
                rhat: split_rhat(&per_chain),
                ess: effective_sample_size(&per_chain),
            }
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let half = chains[0].len() / 2;
    let parts: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[c.len() - half..]])
        .collect();
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let between = n * variance(&means);
    let within = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    if within == 0.0 {
        return if between == 0.0 { None } else { Some(f64::INFINITY) };
    }
    let pooled = (n - 1.0) / n * within + between / n;
    Some((pooled / within).sqrt())
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial positive sequence: autocorrelations
/// are summed in pairs until the first negative pair sum.
fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let chain_var: Vec<f64> = chains.iter().map(|c| variance(c)).collect();
    let within = mean(&chain_var);
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let between_over_n = variance(&means);
    let var_plus = (nf - 1.0) / nf * within + between_over_n;
    if !(var_plus > 0.0) {
        return 0.0;
    }
    let rho = |lag: usize| {
        let acov = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m;
        1.0 - (within - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    m * nf / tau.max(1.0 / (m * nf).log10().max(1.0))
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Most extreme draws within 1.5·IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub mean: f64,
    pub sd: f64,
    /// Central 90% interval.
    pub q05: f64,
    pub q95: f64,
}

impl ParamSummary {
    pub fn from_draws(name: &str, draws: &[f64]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Size(format!("no draws for `{name}`")));
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(&sorted, p);
        let (q25, q75) = (q(0.25), q(0.75));
        let iqr = q75 - q25;
        let whisker_low = *sorted.iter().find(|v| **v >= q25 - 1.5 * iqr).unwrap();
        let whisker_high = *sorted.iter().rev().find(|v| **v <= q75 + 1.5 * iqr).unwrap();
        let m = mean(draws);
        Ok(Self {
            name: name.to_string(),
            median: q(0.5),
            q25,
            q75,
            whisker_low,
            whisker_high,
            mean: m,
            sd: if draws.len() > 1 { variance(draws).sqrt() } else { 0.0 },
            q05: q(0.05),
            q95: q(0.95),
        })
    }
}

/// Box-plot statistics of every parameter over the pooled chains.
pub fn summarize(chains: &PosteriorChains) -> Result<Vec<ParamSummary>> {
    chains
        .parameter_names
        .iter()
        .enumerate()
        .map(|(k, name)| ParamSummary::from_draws(name, &chains.pooled(k)))
        .collect()
}

/// Log-price predictive draws at one design row: for each draw a posterior
/// sample is picked uniformly and `α + x·β + σ·t_ν` is returned.
pub fn posterior_predictive(
    chains: &PosteriorChains,
    design_row: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let dim = chains.parameter_names.len();
    if design_row.len() + 3 != dim {
        return Err(Error::Schema(format!(
            "design row has {} features, posterior has {}",
            design_row.len(),
            dim - 3
        )));
    }
    let pool: Vec<&Vec<f64>> = chains.draws.iter().flatten().collect();
    if pool.is_empty() {
        return Err(Error::Size("posterior has no draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_draws)
        .map(|_| {
            let d = pool[rng.random_range(0..pool.len())];
            let loc = d[0] + design_row.iter().zip(&d[1..dim - 2]).map(|(x, b)| x * b).sum::<f64>();
            let t = StudentT::new(d[dim - 1])
                .map_err(|e| Error::Numeric(format!("student-t with nu={}: {e}", d[dim - 1])))?
                .sample(&mut rng);
            Ok(loc + d[dim - 2] * t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEstimate {
    pub level: f64,
    pub horizon_date: NaiveDate,
    /// `expm1(log_quantile)`, in price units.
    pub price_quantile: f64,
    pub log_quantile: f64,
}

/// Lower `level` quantile of log-price predictive draws.
pub fn value_at_risk(
    predictive_log_draws: &[f64],
    level: f64,
    horizon_date: NaiveDate,
) -> Result<VarEstimate> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage(format!("VaR level must lie in (0,1), got {level}")));
    }
    if predictive_log_draws.is_empty() {
        return Err(Error::Size("no predictive draws".into()));
    }
    let mut sorted = predictive_log_draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let log_quantile = quantile_sorted(&sorted, level);
    Ok(VarEstimate {
        level,
        horizon_date,
        price_quantile: log_quantile.exp_m1(),
        log_quantile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 1, 1).unwrap()
    }

    fn point_mass(alpha: f64, beta: &[f64], sigma: f64, nu: f64) -> PosteriorChains {
        let mut names = vec!["alpha".to_string()];
        names.extend((0..beta.len()).map(|j| format!("beta_x{j}")));
        names.extend(["sigma".into(), "nu".into()]);
        let mut draw = vec![alpha];
        draw.extend_from_slice(beta);
        draw.extend([sigma, nu]);
        PosteriorChains::from_draws(names, vec![vec![draw; 10]; 2], 0).unwrap()
    }

    #[test]
    fn quantiles_type7() {
        let s = ParamSummary::from_draws("x", &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.q25, s.median, s.q75), (2.0, 3.0, 4.0));
        assert_eq!((s.whisker_low, s.whisker_high), (1.0, 5.0));

        let c = ParamSummary::from_draws("c", &[2.5; 7]).unwrap();
        assert!([c.median, c.q25, c.q75, c.whisker_low, c.whisker_high].iter().all(|v| *v == 2.5));
    }

    #[test]
    fn whiskers_exclude_outliers() {
        let mut draws: Vec<f64> = (0..=100).map(f64::from).collect();
        draws.push(1000.0);
        let s = ParamSummary::from_draws("x", &draws).unwrap();
        assert_eq!(s.whisker_high, 100.0);
        assert_eq!(s.whisker_low, 0.0);
    }

    #[test]
    fn var_on_integer_grid() {
        let draws: Vec<f64> = (0..=100).map(f64::from).collect();
        let v = value_at_risk(&draws, 0.05, date()).unwrap();
        assert_eq!(v.log_quantile, 5.0);
        assert_eq!(v.price_quantile, 5f64.exp_m1());
        let c = value_at_risk(&[1.5; 9], 0.3, date()).unwrap();
        assert_eq!(c.log_quantile, 1.5);
        assert!(value_at_risk(&[], 0.05, date()).is_err());
        assert!(value_at_risk(&draws, 1.0, date()).unwrap_err().is_usage());
    }

    #[test]
    fn predictive_point_mass_is_location() {
        let chains = point_mass(1.0, &[2.0, -1.0], 1e-12, 5.0);
        let draws = posterior_predictive(&chains, &[0.5, 0.25], 1000, 3).unwrap();
        for d in draws {
            assert!((d - 1.75).abs() < 1e-6);
        }
        assert!(matches!(
            posterior_predictive(&chains, &[0.5], 10, 3),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn predictive_is_deterministic() {
        let chains = point_mass(0.0, &[1.0], 1.0, 4.0);
        let a = posterior_predictive(&chains, &[1.0], 500, 9).unwrap();
        let b = posterior_predictive(&chains, &[1.0], 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictive_normal_limit_variance() {
        let chains = point_mass(0.0, &[0.0], 1.0, 1e6);
        let draws = posterior_predictive(&chains, &[0.0], 100_000, 1).unwrap();
        let sd = variance(&draws).sqrt();
        assert!((0.98..=1.02).contains(&sd), "{sd}");
    }

    fn kurtosis(v: &[f64]) -> f64 {
        let m = mean(v);
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / v.len() as f64;
        m4 / (m2 * m2)
    }

    #[test]
    fn predictive_heavy_tails() {
        let heavy = posterior_predictive(&point_mass(0.0, &[0.0], 1.0, 3.0), &[0.0], 100_000, 2)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal: Vec<f64> =
            (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (kt, kn) = (kurtosis(&heavy), kurtosis(&normal));
        assert!((kn - 3.0).abs() < 0.1, "{kn}");
        assert!(kt > kn + 1.0, "{kt} vs {kn}");
    }

    #[test]
    fn rhat_ess_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|_| {
                (0..1000)
                    .map(|_| vec![rng.sample::<f64, _>(StandardNormal), 1.0, 2.0])
                    .collect()
            })
            .collect();
        let names = vec!["alpha".into(), "sigma".into(), "nu".into()];
        let chains = PosteriorChains::from_draws(names, draws, 0).unwrap();
        let diag = diagnostics(&chains).unwrap();
        let rhat = diag[0].rhat.unwrap();
        assert!((0.99..=1.01).contains(&rhat), "{rhat}");
        assert!(diag[0].ess >= 2000.0, "{}", diag[0].ess);
        // constant parameters: degenerate sentinel
        assert_eq!(diag[1].rhat, None);
        assert_eq!(diag[1].ess, 0.0);
    }

    #[test]
    fn rhat_detects_disjoint_chains() {
        let names = vec!["alpha".into(), "sigma".into(), "nu".into()];
        let draws = vec![vec![vec![0.0, 1.0, 2.0]; 100], vec![vec![1.0, 1.0, 2.0]; 100]];
        let chains = PosteriorChains::from_draws(names.clone(), draws, 0).unwrap();
        let rhat = diagnostics(&chains).unwrap()[0].rhat.unwrap();
        assert!(rhat > 1.2);
        // slightly noisy but separated chains
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = (0..2)
            .map(|c| {
                (0..200)
                    .map(|_| vec![c as f64 + 0.1 * rng.sample::<f64, _>(StandardNormal), 1.0, 2.0])
                    .collect()
            })
            .collect();
        let chains = PosteriorChains::from_draws(names.clone(), draws, 0).unwrap();
        assert!(diagnostics(&chains).unwrap()[0].rhat.unwrap() > 1.2);

        let single = PosteriorChains::from_draws(names, vec![vec![vec![0.0, 1.0, 2.0]; 10]], 0)
            .unwrap();
        assert!(diagnostics(&single).unwrap_err().is_usage());
    }

    #[test]
    fn from_draws_enforces_support() {
        let names = vec!["alpha".into(), "sigma".into(), "nu".into()];
        assert!(PosteriorChains::from_draws(names.clone(), vec![vec![vec![0.0, -1.0, 2.0]]], 0)
            .is_err());
        assert!(PosteriorChains::from_draws(names, vec![vec![vec![0.0, 1.0, 1.0]]], 0).is_err());
    }

    #[test]
    fn chains_csv_layout() {
        let chains = point_mass(1.0, &[2.0], 0.5, 3.0);
        let mut buf = Vec::new();
        chains.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("chain,iteration,alpha,beta_x0,sigma,nu"));
        assert_eq!(lines.next(), Some("0,0,1,2,0.5,3"));
        assert_eq!(text.lines().count(), 21);
    }
}
