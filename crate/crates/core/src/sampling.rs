//! Counterfeit sampling, scoring, ranking and binning.
//!
//! Every sample `j` draws from its own sub-stream `rng.substream(j)` in a
//! fixed order: the uniform behind `w`, then the `M` counterfeit `w̃`, then
//! (model-X only) the `M` counterfeit covariates `x̃`. The pipelines are
//! therefore pure functions of their inputs and the stream address.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::rng::RngStream;
use crate::scores::{ProbModel, ScoreFunction, ScorePoint};

/// One held-out observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub x: Vec<f64>,
    pub y: u8,
    pub eta_hat: f64,
}

impl EvalSample {
    pub fn new(x: Vec<f64>, y: u8, eta_hat: f64) -> Result<Self> {
        if y > 1 {
            return Err(GraspError::domain(format!("label must be 0 or 1, got {y}")));
        }
        if !(0.0..=1.0).contains(&eta_hat) {
            return Err(GraspError::domain(format!("probability out of range: {eta_hat}")));
        }
        Ok(EvalSample { x, y, eta_hat })
    }
}

/// Label counts `V = (V_1, .., V_L)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub counts: Vec<u64>,
    pub n: u64,
    /// Randomizations per label; `None` for direct binning of `w`, which has
    /// no finite counterfeit count.
    pub k: Option<usize>,
}

impl BinCounts {
    pub fn new(counts: Vec<u64>, k: Option<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(GraspError::domain("need at least one bin"));
        }
        if k == Some(0) {
            return Err(GraspError::domain("K must be at least 1"));
        }
        let n = counts.iter().sum();
        Ok(BinCounts { counts, n, k })
    }

    /// Number of bins `L`.
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Counterfeits per sample, `M = K L - 1`.
    pub fn m(&self) -> Option<usize> {
        self.k.map(|k| k * self.bins() - 1)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Distribution of counterfeit covariates.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSampler {
    /// `mean + sigma * N(0, I)`.
    GaussianIso { mean: Vec<f64>, sigma: f64 },
    /// Uniform draws, with replacement, from unlabeled rows.
    EmpiricalPool(Vec<Vec<f64>>),
}

impl FeatureSampler {
    pub fn standard_gaussian(d: usize) -> Self {
        FeatureSampler::GaussianIso { mean: vec![0.0; d], sigma: 1.0 }
    }

    pub fn pool(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(GraspError::domain("feature pool is empty"));
        }
        Ok(FeatureSampler::EmpiricalPool(rows))
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureSampler::GaussianIso { mean, .. } => mean.len(),
            FeatureSampler::EmpiricalPool(rows) => rows[0].len(),
        }
    }

    /// Writes a draw into `out`; returns the pool row index for pools.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) -> Option<usize> {
        out.clear();
        match self {
            FeatureSampler::GaussianIso { mean, sigma } => {
                out.extend(mean.iter().map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal)));
                None
            }
            FeatureSampler::EmpiricalPool(rows) => {
                let i = rng.random_range(0..rows.len());
                out.extend_from_slice(&rows[i]);
                Some(i)
            }
        }
    }
}

/// `w ~ Unif[0, η̂]` if `y = 1`, `w ~ Unif[η̂, 1]` if `y = 0`. Always consumes
/// exactly one uniform; a degenerate interval yields its endpoint.
pub fn draw_w<R: Rng + ?Sized>(sample: &EvalSample, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let e = sample.eta_hat;
    if sample.y == 1 {
        e * u
    } else {
        e + (1.0 - e) * u
    }
}

/// `1 + #{i : t_orig >= t_counterfeits[i]}`.
pub fn rank(t_orig: f64, t_counterfeits: &[f64]) -> usize {
    1 + t_counterfeits.iter().filter(|&&t| t_orig >= t).count()
}

/// `⌈r / K⌉`, the label of rank `r` among `K L` candidates.
pub fn assign_label(r: usize, k: usize, l: usize) -> Result<usize> {
    if k == 0 || l == 0 || r == 0 || r > k * l {
        return Err(GraspError::Solver(format!("rank {r} outside [1, {}]", k * l)));
    }
    Ok(r.div_ceil(k))
}

fn check_shape(samples: &[EvalSample], l: usize, k: usize) -> Result<usize> {
    if samples.is_empty() {
        return Err(GraspError::domain("no samples"));
    }
    if l == 0 || k == 0 {
        return Err(GraspError::domain("L and K must be at least 1"));
    }
    Ok(k * l - 1)
}

/// Distribution-free statistic with a general score: counterfeits share the
/// original covariate and replace `w` by `w̃ ~ Unif[0, 1]`.
pub fn grasp_counts_df<S: ScoreFunction + ?Sized>(
    samples: &[EvalSample],
    score: &S,
    l: usize,
    k: usize,
    rng: &RngStream,
) -> Result<BinCounts> {
    let m = check_shape(samples, l, k)?;
    let mut counts = vec![0u64; l];
    for (j, s) in samples.iter().enumerate() {
        let mut r = rng.substream(j as u64).rng();
        let w = draw_w(s, &mut r);
        let t = score.score(&ScorePoint { sample: j, counterfeit: 0, x: &s.x, eta_hat: s.eta_hat, w });
        let mut rk = 1;
        for i in 1..=m {
            let wt: f64 = r.random();
            let ti = score.score(&ScorePoint { sample: j, counterfeit: i, x: &s.x, eta_hat: s.eta_hat, w: wt });
            if t >= ti {
                rk += 1;
            }
        }
        counts[assign_label(rk, k, l)? - 1] += 1;
    }
    BinCounts::new(counts, Some(k))
}

/// Label of `w` under direct binning: `ℓ` with `(ℓ-1)/L <= w <= ℓ/L`, the
/// lower bin taking the shared edge.
pub fn simple_label(w: f64, l: usize) -> usize {
    ((w * l as f64).ceil() as usize).clamp(1, l)
}

/// Distribution-free statistic with `T(x, w) = w`: bins `w` directly on the
/// regular grid of `[0, 1]`.
pub fn grasp_counts_simple(samples: &[EvalSample], l: usize, rng: &RngStream) -> Result<BinCounts> {
    check_shape(samples, l, 1)?;
    let mut counts = vec![0u64; l];
    for (j, s) in samples.iter().enumerate() {
        let w = draw_w(s, &mut rng.substream(j as u64).rng());
        counts[simple_label(w, l) - 1] += 1;
    }
    BinCounts::new(counts, None)
}

/// Model-X statistic: each counterfeit is a fresh pair `(x̃ ~ P_X, w̃)`, scored
/// with `η̂(x̃)` from `model`.
pub fn grasp_counts_modelx<S: ScoreFunction + ?Sized>(
    samples: &[EvalSample],
    score: &S,
    model: &ProbModel,
    px: &FeatureSampler,
    l: usize,
    k: usize,
    rng: &RngStream,
) -> Result<BinCounts> {
    let m = check_shape(samples, l, k)?;
    let mut counts = vec![0u64; l];
    let mut w_tilde = vec![0.0; m];
    let mut x_tilde = Vec::with_capacity(px.dim());
    for (j, s) in samples.iter().enumerate() {
        let mut r = rng.substream(j as u64).rng();
        let w = draw_w(s, &mut r);
        let t = score.score(&ScorePoint { sample: j, counterfeit: 0, x: &s.x, eta_hat: s.eta_hat, w });
        for wt in w_tilde.iter_mut() {
            *wt = r.random();
        }
        let mut rk = 1;
        for (i, &wt) in w_tilde.iter().enumerate() {
            let pool_index = px.draw_into(&mut r, &mut x_tilde);
            let eta_hat = model.eval(&x_tilde, pool_index)?;
            let ti = score.score(&ScorePoint { sample: j, counterfeit: i + 1, x: &x_tilde, eta_hat, w: wt });
            if t >= ti {
                rk += 1;
            }
        }
        counts[assign_label(rk, k, l)? - 1] += 1;
    }
    BinCounts::new(counts, Some(k))
}
