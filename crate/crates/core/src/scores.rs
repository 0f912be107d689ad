//! Score functions `T(x, w)` for the counterfeit ranking step, probability
//! models that supply `η̂` at counterfeit covariates, and dataset-level scores
//! for the perfect-fit randomization test.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{GraspError, Result};

/// Clamp applied to `η̂` inside score formulas only.
pub const ETA_CLAMP: f64 = 1e-12;

/// Everything a score may look at for one candidate.
#[derive(Debug, Clone, Copy)]
pub struct ScorePoint<'a> {
    /// Index of the evaluation sample.
    pub sample: usize,
    /// 0 for the original, `1..=M` for counterfeits.
    pub counterfeit: usize,
    pub x: &'a [f64],
    /// Model score at `x` (at the counterfeit covariate in the model-X setting).
    pub eta_hat: f64,
    pub w: f64,
}

/// A sample-level score. Only the ranking of scores matters downstream.
pub trait ScoreFunction: Send + Sync {
    fn score(&self, pt: &ScorePoint<'_>) -> f64;
}

impl<F> ScoreFunction for F
where
    F: Fn(&ScorePoint<'_>) -> f64 + Send + Sync,
{
    fn score(&self, pt: &ScorePoint<'_>) -> f64 {
        self(pt)
    }
}

pub type EtaFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Precomputed scores keyed by `(sample_index, counterfeit_index)`.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    table: HashMap<(usize, usize), f64>,
}

impl ExternalScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample: usize, counterfeit: usize, value: f64) {
        self.table.insert((sample, counterfeit), value);
    }

    pub fn get(&self, sample: usize, counterfeit: usize) -> Option<f64> {
        self.table.get(&(sample, counterfeit)).copied()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Checks that every original and each of its `m` counterfeits has a score.
    pub fn check_coverage(&self, n: usize, m: usize) -> Result<()> {
        for j in 0..n {
            for i in 0..=m {
                if !self.table.contains_key(&(j, i)) {
                    return Err(GraspError::Config(format!(
                        "external score table has no entry for sample {j}, counterfeit {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Built-in score functions.
#[derive(Clone)]
pub enum ScoreFn {
    /// `T(x, w) = w`.
    Identity,
    /// `T^opt` with the unknown `η` replaced by 1/2.
    AgnosticModelX,
    /// `T^opt` with access to the true `η`; only usable in simulations.
    OptimalOracle(EtaFn),
    /// `|w - xᵀθ|`.
    LinearResidual(Vec<f64>),
    External(Arc<ExternalScores>),
}

impl fmt::Debug for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreFn::Identity => f.write_str("Identity"),
            ScoreFn::AgnosticModelX => f.write_str("AgnosticModelX"),
            ScoreFn::OptimalOracle(_) => f.write_str("OptimalOracle"),
            ScoreFn::LinearResidual(t) => write!(f, "LinearResidual(d={})", t.len()),
            ScoreFn::External(t) => write!(f, "External({} entries)", t.len()),
        }
    }
}

impl ScoreFn {
    pub fn token(&self) -> &'static str {
        match self {
            ScoreFn::Identity => "identity",
            ScoreFn::AgnosticModelX => "agnostic",
            ScoreFn::OptimalOracle(_) => "oracle",
            ScoreFn::LinearResidual(_) => "residual",
            ScoreFn::External(_) => "external",
        }
    }

    /// Validates the score against the run shape: feature dimension `d`,
    /// `n` samples and `m` counterfeits each.
    pub fn validate(&self, d: usize, n: usize, m: usize) -> Result<()> {
        match self {
            ScoreFn::LinearResidual(theta) if theta.len() != d => {
                Err(GraspError::Dimension { expected: d, got: theta.len() })
            }
            ScoreFn::External(table) => table.check_coverage(n, m),
            _ => Ok(()),
        }
    }
}

impl ScoreFunction for ScoreFn {
    fn score(&self, pt: &ScorePoint<'_>) -> f64 {
        match self {
            ScoreFn::Identity => score_identity(pt.x, pt.w),
            ScoreFn::AgnosticModelX => score_agnostic_modelx(pt.eta_hat, pt.w),
            ScoreFn::OptimalOracle(eta) => score_optimal_oracle(eta(pt.x), pt.eta_hat, pt.w),
            ScoreFn::LinearResidual(theta) => (pt.w - dot(pt.x, theta)).abs(),
            ScoreFn::External(table) => table.get(pt.sample, pt.counterfeit).unwrap_or(f64::NAN),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn clamp_eta(eta_hat: f64) -> f64 {
    eta_hat.clamp(ETA_CLAMP, 1.0 - ETA_CLAMP)
}

pub fn score_identity(_x: &[f64], w: f64) -> f64 {
    w
}

/// `1/(2η̂)` for `w < η̂`, else `1/(2(1-η̂))`; the tie `w = η̂` takes the
/// second branch.
pub fn score_agnostic_modelx(eta_hat: f64, w: f64) -> f64 {
    score_optimal_oracle(0.5, eta_hat, w)
}

/// `T^opt(x, w) = (η/η̂) I(w <= η̂) + ((1-η)/(1-η̂)) I(η̂ <= w)`. At the tie
/// `w = η̂` the second indicator wins so the score is single-valued.
pub fn score_optimal_oracle(eta: f64, eta_hat: f64, w: f64) -> f64 {
    let e = clamp_eta(eta_hat);
    if e <= w {
        (1.0 - eta) / (1.0 - e)
    } else {
        eta / e
    }
}

pub fn score_linear_residual(theta: &[f64], x: &[f64], w: f64) -> Result<f64> {
    if theta.len() != x.len() {
        return Err(GraspError::Dimension { expected: theta.len(), got: x.len() });
    }
    Ok((w - dot(x, theta)).abs())
}

/// Probability model `η̂` evaluated at counterfeit covariates.
#[derive(Debug, Clone)]
pub enum ProbModel {
    /// `η̂(x) = 1 / (1 + exp(-θᵀx))`.
    LogisticLinear(Vec<f64>),
    /// Precomputed `η̂` values aligned with the rows of an empirical pool.
    ScoreColumn(Vec<f64>),
}

impl ProbModel {
    /// `η̂` at `x`; `pool_index` is the row drawn from an empirical pool, if any.
    pub fn eval(&self, x: &[f64], pool_index: Option<usize>) -> Result<f64> {
        match self {
            ProbModel::LogisticLinear(theta) => {
                if theta.len() != x.len() {
                    return Err(GraspError::Dimension { expected: theta.len(), got: x.len() });
                }
                Ok(sigmoid(dot(theta, x)))
            }
            ProbModel::ScoreColumn(values) => pool_index
                .and_then(|i| values.get(i).copied())
                .ok_or_else(|| GraspError::Config("score column needs an empirical pool with matching rows".into())),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dataset-level score for the perfect-fit randomization test. Smaller values
/// mean the responses are better explained by the covariates.
pub trait DatasetScore: Send + Sync {
    fn score(&self, x: &[Vec<f64>], w: &[f64]) -> Result<f64>;
}

#[derive(Clone)]
pub enum DatasetScoreFn {
    /// In-sample mean squared residual of a ridge regression of `w` on `x`.
    LinearRegressionMse { ridge: f64 },
    External(Arc<dyn DatasetScore>),
}

impl fmt::Debug for DatasetScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetScoreFn::LinearRegressionMse { ridge } => write!(f, "LinearRegressionMse(ridge={ridge})"),
            DatasetScoreFn::External(_) => f.write_str("External"),
        }
    }
}

impl DatasetScore for DatasetScoreFn {
    fn score(&self, x: &[Vec<f64>], w: &[f64]) -> Result<f64> {
        match self {
            DatasetScoreFn::LinearRegressionMse { .. } => {
                let pairs: Vec<(&[f64], f64)> = x.iter().map(|r| r.as_slice()).zip(w.iter().copied()).collect();
                dataset_score_mse(&pairs, &pairs, self)
            }
            DatasetScoreFn::External(s) => s.score(x, w),
        }
    }
}

/// Least-squares solver with a fixed design, factored once and reused for many
/// response vectors.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    d: usize,
    chol: Vec<f64>,
}

impl RidgeSolver {
    pub fn new<R: AsRef<[f64]>>(x: &[R], ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) {
            return Err(GraspError::domain(format!("ridge must be nonnegative, got {ridge}")));
        }
        let d = x.first().map(|r| r.as_ref().len()).ok_or_else(|| GraspError::domain("empty design"))?;
        let mut gram = vec![0.0; d * d];
        for row in x {
            let row = row.as_ref();
            if row.len() != d {
                return Err(GraspError::Dimension { expected: d, got: row.len() });
            }
            for i in 0..d {
                for j in 0..=i {
                    gram[i * d + j] += row[i] * row[j];
                }
            }
        }
        let scale = (0..d).map(|i| gram[i * d + i]).fold(0.0f64, f64::max).max(1.0);
        for i in 0..d {
            gram[i * d + i] += ridge;
        }
        // in-place lower Cholesky
        for j in 0..d {
            let mut diag = gram[j * d + j];
            for k in 0..j {
                diag -= gram[j * d + k] * gram[j * d + k];
            }
            if !(diag > 1e-12 * scale) {
                return Err(GraspError::Singular);
            }
            let diag = diag.sqrt();
            gram[j * d + j] = diag;
            for i in (j + 1)..d {
                let mut v = gram[i * d + j];
                for k in 0..j {
                    v -= gram[i * d + k] * gram[j * d + k];
                }
                gram[i * d + j] = v / diag;
            }
        }
        Ok(RidgeSolver { d, chol: gram })
    }

    /// θ solving `(XᵀX + ridge I) θ = Xᵀw`.
    #[allow(clippy::needless_range_loop)]
    pub fn solve<R: AsRef<[f64]>>(&self, x: &[R], w: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut b = vec![0.0; d];
        for (row, &wi) in x.iter().zip(w) {
            for (bk, &xk) in b.iter_mut().zip(row.as_ref()) {
                *bk += xk * wi;
            }
        }
        for i in 0..d {
            let mut v = b[i];
            for k in 0..i {
                v -= self.chol[i * d + k] * b[k];
            }
            b[i] = v / self.chol[i * d + i];
        }
        for i in (0..d).rev() {
            let mut v = b[i];
            for k in (i + 1)..d {
                v -= self.chol[k * d + i] * b[k];
            }
            b[i] = v / self.chol[i * d + i];
        }
        b
    }

    /// Mean squared residual of the fit on the same data.
    pub fn in_sample_mse<R: AsRef<[f64]>>(&self, x: &[R], w: &[f64]) -> f64 {
        let theta = self.solve(x, w);
        mean_squared_residual(&theta, x.iter().map(|r| r.as_ref()).zip(w.iter().copied()))
    }
}

fn mean_squared_residual<'a>(theta: &[f64], rows: impl Iterator<Item = (&'a [f64], f64)>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, w) in rows {
        let r = w - dot(x, theta);
        sum += r * r;
        count += 1;
    }
    sum / count as f64
}

/// `argmin Σ (wᵢ - xᵢᵀθ)² + ridge ‖θ‖²` via normal equations. No intercept is
/// added; append a constant column to `x` for one.
pub fn fit_linear_score(aux: &[(Vec<f64>, f64)], ridge: f64) -> Result<Vec<f64>> {
    let x: Vec<&[f64]> = aux.iter().map(|(x, _)| x.as_slice()).collect();
    let w: Vec<f64> = aux.iter().map(|(_, w)| *w).collect();
    let solver = RidgeSolver::new(&x, ridge)?;
    Ok(solver.solve(&x, &w))
}

/// Fits on `train` and returns the mean squared residual on `eval`.
pub fn dataset_score_mse(train: &[(&[f64], f64)], eval: &[(&[f64], f64)], cfg: &DatasetScoreFn) -> Result<f64> {
    let DatasetScoreFn::LinearRegressionMse { ridge } = cfg else {
        return Err(GraspError::Config("dataset_score_mse needs a linear-regression score".into()));
    };
    if eval.is_empty() {
        return Err(GraspError::domain("evaluation set is empty"));
    }
    let x: Vec<&[f64]> = train.iter().map(|(x, _)| *x).collect();
    let w: Vec<f64> = train.iter().map(|(_, w)| *w).collect();
    let theta = RidgeSolver::new(&x, *ridge)?.solve(&x, &w);
    if let Some((x0, _)) = eval.iter().find(|(x, _)| x.len() != theta.len()) {
        return Err(GraspError::Dimension { expected: theta.len(), got: x0.len() });
    }
    Ok(mean_squared_residual(&theta, eval.iter().copied()))
}
