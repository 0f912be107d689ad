//! f-divergences restricted to the nonnegative half-line.
//!
//! Each divergence bundles the generator `f` (convex, `f(1) = 0`), its convex
//! conjugate `f*(s) = sup_{t >= 0} (s t - f(t))` together with the effective
//! domain of `f*`, and an inverse of the subdifferential `v -> q` with
//! `v ∈ ∂f(q)`. The three built-in kinds are
//!
//! | token       | f(t)          | f*(s)                         | dom f*   |
//! |-------------|---------------|-------------------------------|----------|
//! | `kl`        | t log t       | exp(s - 1)                    | ℝ        |
//! | `tv`        | \|t - 1\| / 2 | max(s, -1/2)                  | s <= 1/2 |
//! | `hellinger` | (√t - 1)²     | s / (1 - s)                   | s < 1    |

use std::fmt;
use std::sync::Arc;

use crate::error::{GraspError, Result};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Upper end of the effective domain of a conjugate. The lower end is always
/// `-∞` for generators defined on `[0, ∞)` with finite `f(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateDomain {
    pub upper: f64,
    /// Whether `upper` itself belongs to the domain.
    pub closed: bool,
}

impl ConjugateDomain {
    pub const ALL: ConjugateDomain = ConjugateDomain { upper: f64::INFINITY, closed: false };

    pub fn contains(&self, s: f64) -> bool {
        if self.closed {
            s <= self.upper
        } else {
            s < self.upper
        }
    }
}

/// A user-supplied divergence. All three callables are mandatory; nothing is
/// differentiated numerically.
pub struct CustomDivergence {
    name: String,
    f: RealFn,
    conjugate: RealFn,
    domain: ConjugateDomain,
    subgrad_inverse: RealFn,
}

impl CustomDivergence {
    /// Builds a custom divergence after checking `f(1) = 0` exactly and midpoint
    /// convexity of `f` on a grid over `[0, 20]`.
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        conjugate: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: ConjugateDomain,
        subgrad_inverse: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let name = name.into();
        if f(1.0) != 0.0 {
            return Err(GraspError::domain(format!("custom divergence `{name}`: f(1) must be 0")));
        }
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        for (i, &a) in grid.iter().enumerate() {
            for &b in grid.iter().skip(i + 1).step_by(7) {
                let mid = f(0.5 * (a + b));
                let chord = 0.5 * (f(a) + f(b));
                if !(mid <= chord + 1e-12 * (1.0 + chord.abs())) {
                    return Err(GraspError::domain(format!(
                        "custom divergence `{name}`: f is not convex between {a} and {b}"
                    )));
                }
            }
        }
        Ok(CustomDivergence {
            name,
            f: Arc::new(f),
            conjugate: Arc::new(conjugate),
            domain,
            subgrad_inverse: Arc::new(subgrad_inverse),
        })
    }
}

/// An f-divergence kind.
#[derive(Clone)]
pub enum FDivergence {
    Kl,
    Tv,
    Hellinger,
    Custom(Arc<CustomDivergence>),
}

impl fmt::Debug for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FDivergence({})", self.token())
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl PartialEq for FDivergence {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (FDivergence::Custom(a), FDivergence::Custom(b)) => Arc::ptr_eq(a, b),
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

pub const DIVERGENCE_TOKENS: [&str; 3] = ["kl", "tv", "hellinger"];

impl std::str::FromStr for FDivergence {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kl" => Ok(FDivergence::Kl),
            "tv" => Ok(FDivergence::Tv),
            "hellinger" => Ok(FDivergence::Hellinger),
            other => Err(GraspError::Config(format!(
                "unknown divergence `{other}`; valid tokens: {}",
                DIVERGENCE_TOKENS.join(", ")
            ))),
        }
    }
}

impl FDivergence {
    pub fn custom(c: CustomDivergence) -> Self {
        FDivergence::Custom(Arc::new(c))
    }

    pub fn token(&self) -> &str {
        match self {
            FDivergence::Kl => "kl",
            FDivergence::Tv => "tv",
            FDivergence::Hellinger => "hellinger",
            FDivergence::Custom(c) => &c.name,
        }
    }

    /// `f(t)` for `t >= 0`, without the domain check. Returns the continuous
    /// extension at `t = 0`.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            FDivergence::Kl => {
                if t == 0.0 {
                    0.0
                } else if t.is_infinite() {
                    f64::INFINITY
                } else {
                    t * t.ln()
                }
            }
            FDivergence::Tv => 0.5 * (t - 1.0).abs(),
            FDivergence::Hellinger => {
                let r = t.sqrt() - 1.0;
                r * r
            }
            FDivergence::Custom(c) => (c.f)(t),
        }
    }

    /// `f*(s) = sup_{t >= 0} (s t - f(t))`; `+∞` outside the effective domain.
    pub fn conjugate(&self, s: f64) -> f64 {
        if !self.conjugate_domain().contains(s) {
            return f64::INFINITY;
        }
        match self {
            FDivergence::Kl => (s - 1.0).exp(),
            FDivergence::Tv => s.max(-0.5),
            FDivergence::Hellinger => s / (1.0 - s),
            FDivergence::Custom(c) => (c.conjugate)(s),
        }
    }

    pub fn conjugate_domain(&self) -> ConjugateDomain {
        match self {
            FDivergence::Kl => ConjugateDomain::ALL,
            FDivergence::Tv => ConjugateDomain { upper: 0.5, closed: true },
            FDivergence::Hellinger => ConjugateDomain { upper: 1.0, closed: false },
            FDivergence::Custom(c) => c.domain,
        }
    }

    /// Returns `q >= 0` with `v ∈ ∂f(q)`. Subgradients beyond the attainable
    /// range are clamped: values above it map to `+∞` (the right end of the
    /// half-line), values below it map to `0`. At a kink the kink point is
    /// returned, so for TV every `v ∈ [-1/2, 1/2]` maps to `1`.
    pub fn subgrad_inverse(&self, v: f64) -> f64 {
        match self {
            FDivergence::Kl => (v - 1.0).exp(),
            FDivergence::Tv => {
                if v < -0.5 {
                    0.0
                } else if v <= 0.5 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            FDivergence::Hellinger => {
                if v >= 1.0 {
                    f64::INFINITY
                } else {
                    let r = 1.0 - v;
                    1.0 / (r * r)
                }
            }
            FDivergence::Custom(c) => (c.subgrad_inverse)(v).max(0.0),
        }
    }

    /// `lim_{t→∞} f(t) / t`, the slope that governs `b f(a / b)` as `b → 0`.
    pub fn recession_slope(&self) -> f64 {
        match self {
            FDivergence::Kl => f64::INFINITY,
            FDivergence::Tv => 0.5,
            FDivergence::Hellinger => 1.0,
            FDivergence::Custom(c) => {
                let big = 1e8;
                ((c.f)(2.0 * big) - (c.f)(big)) / big
            }
        }
    }

    /// Whether `f` is strictly convex, so that the subgradient inverse is
    /// single-valued on the interior of the conjugate domain.
    pub fn is_strictly_convex(&self) -> bool {
        !matches!(self, FDivergence::Tv)
    }

    /// Divergence from uniform of the probability vector that spreads its mass
    /// evenly over `k` of `l` coordinates: `(k f(l/k) + (l-k) f(0)) / l`.
    pub fn face_divergence(&self, k: usize, l: usize) -> f64 {
        let (kf, lf) = (k as f64, l as f64);
        (kf * self.eval(lf / kf) + (lf - kf) * self.eval(0.0)) / lf
    }
}

/// `f(t)` with a domain check on `t`.
pub fn f_eval(div: &FDivergence, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(GraspError::domain(format!("f is defined on t >= 0, got {t}")));
    }
    Ok(div.eval(t))
}

pub fn f_conjugate(div: &FDivergence, s: f64) -> f64 {
    div.conjugate(s)
}

pub fn f_subgrad_inverse(div: &FDivergence, v: f64) -> f64 {
    div.subgrad_inverse(v)
}

/// A pair of Bernoulli success probabilities: `a` for the true law, `b` for
/// the estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliPair {
    pub a: f64,
    pub b: f64,
}

impl BernoulliPair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(GraspError::domain(format!(
                "Bernoulli parameters must lie in [0, 1], got ({a}, {b})"
            )));
        }
        Ok(BernoulliPair { a, b })
    }
}

// b f(a / b) with its continuous extension at b = 0.
fn perspective(div: &FDivergence, a: f64, b: f64) -> f64 {
    if b > 0.0 {
        b * div.eval(a / b)
    } else if a == 0.0 {
        0.0
    } else {
        a * div.recession_slope()
    }
}

/// `D_f(Bern(a) ‖ Bern(b)) = b f(a/b) + (1-b) f((1-a)/(1-b))`.
pub fn bernoulli_divergence(div: &FDivergence, pair: BernoulliPair) -> f64 {
    let BernoulliPair { a, b } = pair;
    let d = perspective(div, a, b) + perspective(div, 1.0 - a, 1.0 - b);
    // exact zero on the diagonal, and no negative rounding noise
    if a == b {
        0.0
    } else {
        d.max(0.0)
    }
}

/// `(1/L) Σ f(L p_ℓ)`, the divergence of `p` from the uniform law on `L` cells.
pub fn discrete_divergence_to_uniform(div: &FDivergence, p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(GraspError::domain("empty probability vector"));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(GraspError::domain("probability vector must be nonnegative and sum to 1"));
    }
    Ok(divergence_to_uniform_unchecked(div, p))
}

pub(crate) fn divergence_to_uniform_unchecked(div: &FDivergence, p: &[f64]) -> f64 {
    let l = p.len() as f64;
    p.iter().map(|&v| div.eval(l * v)).sum::<f64>() / l
}
