//! Synthetic logistic experiments: data generation, Monte-Carlo estimates of
//! the true tolerance `τ₀`, and size/power tables.
//!
//! The true model is `η(x) = σ(xᵀθ₀)` with `x ~ N(0, I_d)` and the model under
//! test is `η̂(x) = σ(xᵀθ₁)`, where `θ₁` is `θ₀`, `-θ₀` or `-c θ₀`. Every
//! statistic depends on `x` only through `(xᵀθ₀, xᵀθ₁)`, which is jointly
//! Gaussian, so the table harness draws these two projections exactly from
//! their bivariate law instead of materializing `d`-dimensional features.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::divergence::{bernoulli_divergence, BernoulliPair, FDivergence};
use crate::error::{GraspError, Result};
use crate::inference::{chi2_sf, decide};
use crate::rng::RngStream;
use crate::sampling::{grasp_counts_df, grasp_counts_modelx, grasp_counts_simple, BinCounts, EvalSample, FeatureSampler};
use crate::scores::{dot, sigmoid, ProbModel, ScoreFn};
use crate::solver::{u_stat, SolverConfig, StatVariant};

/// Seed of the fixed `θ₀` draw from `N(0, 0.25² I_200)` used by the default
/// experiment suite.
pub const THETA0_SEED: u64 = 2246;
/// Stream id reserved for `θ₀` draws.
pub const THETA0_STREAM: u64 = 0x7e7a_0000;

/// `σ · N(0, I_d)` drawn from `(seed, THETA0_STREAM)`.
pub fn draw_theta0(d: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut r = RngStream::with_stream(seed, THETA0_STREAM).rng();
    (0..d).map(|_| sigma * r.sample::<f64, _>(StandardNormal)).collect()
}

/// How the model under test is derived from `θ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Theta1Rule {
    Same,
    Negated,
    /// `θ₁ = -c θ₀`.
    NegatedScaled(f64),
}

impl Theta1Rule {
    pub fn factor(self) -> f64 {
        match self {
            Theta1Rule::Same => 1.0,
            Theta1Rule::Negated => -1.0,
            Theta1Rule::NegatedScaled(c) => -c,
        }
    }

    pub fn apply(self, theta0: &[f64]) -> Vec<f64> {
        let c = self.factor();
        theta0.iter().map(|t| c * t).collect()
    }
}

impl fmt::Display for Theta1Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta1Rule::Same => f.write_str("same"),
            Theta1Rule::Negated => f.write_str("negated"),
            Theta1Rule::NegatedScaled(c) => write!(f, "negated_scaled({c})"),
        }
    }
}

impl FromStr for Theta1Rule {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "same" => return Ok(Theta1Rule::Same),
            "negated" => return Ok(Theta1Rule::Negated),
            _ => {}
        }
        s.strip_prefix("negated_scaled(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|c| c.trim().parse::<f64>().ok())
            .filter(|c| c.is_finite() && *c > 0.0)
            .map(Theta1Rule::NegatedScaled)
            .ok_or_else(|| {
                GraspError::Config(format!("unknown theta1_rule '{s}' (expected same, negated or negated_scaled(c))"))
            })
    }
}

impl From<Theta1Rule> for String {
    fn from(r: Theta1Rule) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for Theta1Rule {
    type Error = GraspError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Distribution-free: counterfeits share the original covariate.
    Df,
    /// Model-X: counterfeits draw fresh covariates.
    Modelx,
}

/// Score used by the table harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Identity,
    Agnostic,
    /// The optimal score built from the true `η`.
    Oracle,
}

fn default_d() -> usize {
    200
}
fn default_sigma() -> f64 {
    0.25
}
fn default_rule() -> Theta1Rule {
    Theta1Rule::Same
}
fn default_div() -> String {
    "kl".into()
}
fn default_taus() -> Vec<f64> {
    vec![0.0]
}
fn default_alpha() -> f64 {
    0.1
}
fn default_variants() -> Vec<StatVariant> {
    StatVariant::ALL.to_vec()
}
fn default_mode() -> Mode {
    Mode::Df
}
fn default_score() -> ScoreKind {
    ScoreKind::Identity
}
fn default_theta_seed() -> u64 {
    THETA0_SEED
}

/// One table cell. Deserializes from a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_sigma")]
    pub sigma_theta: f64,
    #[serde(default = "default_rule")]
    pub theta1_rule: Theta1Rule,
    #[serde(rename = "L", alias = "l")]
    pub l: usize,
    /// Randomizations per label; when absent the distribution-free mode with
    /// the identity score bins `w` directly.
    #[serde(rename = "K", alias = "k", default)]
    pub k: Option<usize>,
    #[serde(default = "default_div")]
    pub divergence: String,
    #[serde(default = "default_taus")]
    pub tau_grid: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub trials: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<StatVariant>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_score")]
    pub score: ScoreKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_theta_seed")]
    pub theta_seed: u64,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| GraspError::Config(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GraspError::Config(m.to_string()));
        if self.n == 0 || self.d == 0 || self.l == 0 || self.trials == 0 {
            return bad("n, d, L and trials must be at least 1");
        }
        if self.l < 2 {
            return bad("L must be at least 2");
        }
        if self.k == Some(0) {
            return bad("K must be at least 1");
        }
        if !(self.sigma_theta > 0.0) {
            return bad("sigma_theta must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| !(*t >= 0.0)) {
            return bad("tau_grid must be a nonempty list of nonnegative numbers");
        }
        if self.variants.is_empty() {
            return bad("variants must not be empty");
        }
        self.divergence()?;
        Ok(())
    }

    pub fn divergence(&self) -> Result<FDivergence> {
        self.divergence.parse()
    }

    pub fn theta0(&self) -> Vec<f64> {
        draw_theta0(self.d, self.sigma_theta, self.theta_seed)
    }

    /// Randomizations per label actually used, `None` for direct binning.
    pub fn effective_k(&self) -> Option<usize> {
        match (self.mode, self.k) {
            (Mode::Modelx, None) => Some(1),
            (Mode::Df, None) if self.score != ScoreKind::Identity => Some(1),
            (_, k) => k,
        }
    }
}

/// A simulated evaluation sample with its true conditional probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedSample {
    pub sample: EvalSample,
    pub eta: f64,
}

/// `x ~ N(0, I_d)`, `y ~ Bern(σ(xᵀθ₀))`, `η̂ = σ(xᵀθ₁)`.
pub fn gen_logistic_data(theta0: &[f64], theta1: &[f64], n: usize, rng: &RngStream) -> Result<Vec<SimulatedSample>> {
    if theta0.len() != theta1.len() {
        return Err(GraspError::Dimension { expected: theta0.len(), got: theta1.len() });
    }
    if n == 0 {
        return Err(GraspError::domain("n must be at least 1"));
    }
    let mut r = rng.rng();
    Ok((0..n)
        .map(|_| {
            let x: Vec<f64> = (0..theta0.len()).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let eta = sigmoid(dot(&x, theta0));
            let eta_hat = sigmoid(dot(&x, theta1));
            let y = u8::from(r.random::<f64>() < eta);
            SimulatedSample { sample: EvalSample { x, y, eta_hat }, eta }
        })
        .collect())
}

/// Law of `(xᵀθ₀, xᵀθ₁)` for `x ~ N(0, I)`, written as `(a g₁, b g₁ + c g₂)`
/// with independent standard normals `g₁, g₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ProjectedLaw {
    pub fn new(theta0: &[f64], theta1: &[f64]) -> Result<Self> {
        if theta0.len() != theta1.len() {
            return Err(GraspError::Dimension { expected: theta0.len(), got: theta1.len() });
        }
        let a = dot(theta0, theta0).sqrt();
        let b = if a > 0.0 { dot(theta0, theta1) / a } else { 0.0 };
        let c = (dot(theta1, theta1) - b * b).max(0.0).sqrt();
        Ok(ProjectedLaw { a, b, c })
    }

    /// Two-dimensional samples `x = (g₁, g₂)` with `η = σ(a x₀)` and
    /// `η̂ = σ(b x₀ + c x₁)`.
    pub fn samples(&self, n: usize, rng: &RngStream) -> Vec<SimulatedSample> {
        let mut r = rng.rng();
        (0..n)
            .map(|_| {
                let g1: f64 = r.sample(StandardNormal);
                let g2: f64 = r.sample(StandardNormal);
                let eta = sigmoid(self.a * g1);
                let eta_hat = sigmoid(self.b * g1 + self.c * g2);
                let y = u8::from(r.random::<f64>() < eta);
                SimulatedSample { sample: EvalSample { x: vec![g1, g2], y, eta_hat }, eta }
            })
            .collect()
    }

    pub fn model(&self) -> ProbModel {
        ProbModel::LogisticLinear(vec![self.b, self.c])
    }

    pub fn oracle_score(&self) -> ScoreFn {
        let a = self.a;
        ScoreFn::OptimalOracle(Arc::new(move |x: &[f64]| sigmoid(a * x[0])))
    }
}

/// Monte-Carlo estimate of `E[D_f(Bern(η(X)) ‖ Bern(η̂(X)))]` and its
/// standard error.
pub fn tau0_monte_carlo(
    theta0: &[f64],
    theta1: &[f64],
    div: &FDivergence,
    samples: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(GraspError::domain("samples must be at least 1"));
    }
    let law = ProjectedLaw::new(theta0, theta1)?;
    if theta0 == theta1 {
        return Ok((0.0, 0.0));
    }
    let mut r = rng.rng();
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..samples {
        let g1: f64 = r.sample(StandardNormal);
        let g2: f64 = r.sample(StandardNormal);
        let pair = BernoulliPair { a: sigmoid(law.a * g1), b: sigmoid(law.b * g1 + law.c * g2) };
        let v = bernoulli_divergence(div, pair);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let se = if samples > 1 { (m2 / (samples - 1) as f64 / samples as f64).sqrt() } else { f64::INFINITY };
    Ok((mean, se))
}

/// Pearson statistic of `V` against the uniform multinomial and its
/// asymptotic p-value.
pub fn label_uniformity_check(counts: &BinCounts) -> Result<(f64, f64)> {
    let l = counts.bins();
    if l < 2 {
        return Err(GraspError::domain("need at least two bins"));
    }
    if counts.n < 5 * l as u64 {
        return Err(GraspError::domain(format!("need n >= 5L = {} for the chi-square approximation", 5 * l)));
    }
    let e = counts.n as f64 / l as f64;
    let stat = counts.counts.iter().map(|&c| (c as f64 - e).powi(2)).sum::<f64>() / e;
    Ok((stat, chi2_sf(stat, l - 1)))
}

/// Bin counts of one simulated trial.
pub fn simulate_counts(spec: &ExperimentSpec, law: &ProjectedLaw, trial: usize) -> Result<BinCounts> {
    let stream = RngStream::new(spec.seed).substream(trial as u64);
    let sim = law.samples(spec.n, &stream.substream(0));
    let samples: Vec<EvalSample> = sim.into_iter().map(|s| s.sample).collect();
    let cf = stream.substream(1);
    let score = match spec.score {
        ScoreKind::Identity => ScoreFn::Identity,
        ScoreKind::Agnostic => ScoreFn::AgnosticModelX,
        ScoreKind::Oracle => law.oracle_score(),
    };
    match (spec.mode, spec.effective_k()) {
        (Mode::Df, None) => grasp_counts_simple(&samples, spec.l, &cf),
        (Mode::Df, Some(k)) => grasp_counts_df(&samples, &score, spec.l, k, &cf),
        (Mode::Modelx, k) => {
            let px = FeatureSampler::standard_gaussian(2);
            grasp_counts_modelx(&samples, &score, &law.model(), &px, spec.l, k.unwrap_or(1), &cf)
        }
    }
}

/// Runs `f(0..count)` on a pool of scoped threads and returns the results in
/// index order.
pub fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w..count).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    for (i, v) in parts.iter_mut().flat_map(|p| p.drain(..)) {
        slots[i] = Some(v);
    }
    slots.into_iter().map(|v| v.expect("missing result")).collect()
}

/// One table cell's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: Mode,
    pub score: ScoreKind,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub divergence: String,
    pub theta1_rule: Theta1Rule,
    pub tau: f64,
    pub alpha: f64,
    pub trials: usize,
    pub rejection_rate_asym: Option<f64>,
    pub rejection_rate_finite: Option<f64>,
}

fn run_table(spec: &ExperimentSpec, cfg: &SolverConfig) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    cfg.validate()?;
    let div = spec.divergence()?;
    let theta0 = spec.theta0();
    let law = ProjectedLaw::new(&theta0, &spec.theta1_rule.apply(&theta0))?;
    let has = |v| spec.variants.contains(&v);
    // one set of counts per trial, shared by every τ in the grid
    let per_trial: Vec<Result<Vec<[bool; 2]>>> = parallel_map(spec.trials, |t| {
        let counts = simulate_counts(spec, &law, t)?;
        spec.tau_grid
            .iter()
            .map(|&tau| {
                let mut r = [false; 2];
                for (i, variant) in [StatVariant::Asym, StatVariant::Finite].into_iter().enumerate() {
                    if has(variant) {
                        let u = u_stat(variant, &counts, tau, &div, cfg)?;
                        r[i] = decide(variant, u, spec.l, spec.alpha)?.reject;
                    }
                }
                Ok(r)
            })
            .collect()
    });
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
    let trials = spec.trials as f64;
    Ok(spec
        .tau_grid
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let rate = |i: usize| per_trial.iter().filter(|r| r[j][i]).count() as f64 / trials;
            ResultRow {
                mode: spec.mode,
                score: spec.score,
                n: spec.n,
                d: spec.d,
                l: spec.l,
                k: spec.effective_k(),
                divergence: div.token().to_string(),
                theta1_rule: spec.theta1_rule,
                tau,
                alpha: spec.alpha,
                trials: spec.trials,
                rejection_rate_asym: has(StatVariant::Asym).then(|| rate(0)),
                rejection_rate_finite: has(StatVariant::Finite).then(|| rate(1)),
            }
        })
        .collect())
}

/// Rejection rates under a perfectly fitted model (`θ₁ = θ₀`, `τ = 0`).
pub fn run_size_table(spec: &ExperimentSpec, cfg: &SolverConfig) -> Result<Vec<ResultRow>> {
    if spec.theta1_rule != Theta1Rule::Same || spec.tau_grid.iter().any(|&t| t != 0.0) {
        return Err(GraspError::Config("a size table needs theta1_rule = same and tau_grid = [0]".into()));
    }
    run_table(spec, cfg)
}

/// Rejection rates against a misfitted model, one row per `τ`.
pub fn run_power_table(spec: &ExperimentSpec, cfg: &SolverConfig) -> Result<Vec<ResultRow>> {
    if spec.theta1_rule == Theta1Rule::Same {
        return Err(GraspError::Config("a power table needs theta1_rule = negated or negated_scaled(c)".into()));
    }
    run_table(spec, cfg)
}

/// Size table for `same`, power table otherwise.
pub fn run_experiment(spec: &ExperimentSpec, cfg: &SolverConfig) -> Result<Vec<ResultRow>> {
    if spec.theta1_rule == Theta1Rule::Same {
        run_size_table(spec, cfg)
    } else {
        run_power_table(spec, cfg)
    }
}

/// Grid values above `tau0`, for which power is expected to be trivial.
pub fn taus_above(spec: &ExperimentSpec, tau0: f64) -> Vec<f64> {
    spec.tau_grid.iter().copied().filter(|&t| t > tau0).collect()
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for row in rows {
        wr.serialize(row).map_err(|e| GraspError::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| GraspError::Io(e.to_string()))
}

/// `(τ, power)` points for one rule and divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub divergence: String,
    pub rule: StatVariant,
    pub mode: Mode,
    pub tau: Vec<f64>,
    pub power: Vec<f64>,
}

pub fn power_series(rows: &[ResultRow]) -> Vec<PowerSeries> {
    let mut out: Vec<PowerSeries> = Vec::new();
    for row in rows {
        for (rule, rate) in [(StatVariant::Asym, row.rejection_rate_asym), (StatVariant::Finite, row.rejection_rate_finite)] {
            let Some(rate) = rate else { continue };
            let pos = out.iter().position(|s| s.divergence == row.divergence && s.rule == rule && s.mode == row.mode);
            let s = match pos {
                Some(i) => &mut out[i],
                None => {
                    out.push(PowerSeries {
                        divergence: row.divergence.clone(),
                        rule,
                        mode: row.mode,
                        tau: vec![],
                        power: vec![],
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            s.tau.push(row.tau);
            s.power.push(rate);
        }
    }
    out
}
