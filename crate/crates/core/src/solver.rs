//! Minimization of chi-square-type statistics over an f-divergence ball.
//!
//! `U_τ(V) = min { g(p) : p ∈ Δ_L, (1/L) Σ f(L p_ℓ) <= τ }` where
//! `g(p) = (1/n) Σ (V_ℓ - n p_ℓ)² / p_ℓ` (asymptotic variant) or
//! `g(p) = (1/n) Σ (V_ℓ - n p_ℓ)² / (p_ℓ + 1/L)` (finite-sample variant).
//! The minimum is computed by Frank-Wolfe, whose linear subproblem over the
//! ball is solved through its two-variable Lagrangian dual.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_to_uniform_unchecked, FDivergence};
use crate::error::{GraspError, Result};
use crate::sampling::BinCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatVariant {
    Finite,
    Asym,
}

impl StatVariant {
    pub const ALL: [StatVariant; 2] = [StatVariant::Finite, StatVariant::Asym];

    pub fn token(self) -> &'static str {
        match self {
            StatVariant::Finite => "finite",
            StatVariant::Asym => "asym",
        }
    }
}

impl fmt::Display for StatVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for StatVariant {
    type Err = GraspError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "finite" => Ok(StatVariant::Finite),
            "asym" | "asymptotic" => Ok(StatVariant::Asym),
            other => Err(GraspError::Config(format!("unknown variant '{other}' (expected finite or asym)"))),
        }
    }
}

/// A probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    p: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(GraspError::domain("empty probability vector"));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(GraspError::domain(format!("not a probability vector (sum {sum})")));
        }
        Ok(SimplexPoint { p })
    }

    pub fn uniform(l: usize) -> Self {
        SimplexPoint { p: vec![1.0 / l as f64; l] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `γ_t = 1 / (t + 2)`.
    Harmonic,
    /// Exact minimization of the objective along the Frank-Wolfe direction.
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub gap_tol: f64,
    pub dual_tol: f64,
    pub step_rule: StepRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iters: 500, gap_tol: 1e-6, dual_tol: 1e-9, step_rule: StepRule::LineSearch }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(GraspError::Config("max_iters must be at least 1".into()));
        }
        if !(self.gap_tol > 0.0) || !(self.dual_tol > 0.0) {
            return Err(GraspError::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a Frank-Wolfe solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Objective at the best iterate.
    pub value: f64,
    /// Largest certified lower bound `g(p) - gap` seen along the run.
    pub lower_bound: f64,
    pub point: SimplexPoint,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
}

struct Objective<'a> {
    variant: StatVariant,
    v: &'a [f64],
    n: f64,
    inv_l: f64,
}

impl<'a> Objective<'a> {
    fn new(variant: StatVariant, v: &'a [f64]) -> Self {
        let n = v.iter().sum();
        Objective { variant, v, n, inv_l: 1.0 / v.len() as f64 }
    }

    fn value(&self, p: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for (&v, &p) in self.v.iter().zip(p) {
            let r = v - n * p;
            match self.variant {
                StatVariant::Finite => s += r * r / (p + self.inv_l),
                StatVariant::Asym => {
                    if p > 0.0 {
                        s += r * r / p;
                    } else if v > 0.0 {
                        return f64::INFINITY;
                    }
                }
            }
        }
        s / n
    }

    fn gradient_into(&self, p: &[f64], out: &mut [f64]) {
        let n = self.n;
        for ((o, &v), &p) in out.iter_mut().zip(self.v).zip(p) {
            *o = match self.variant {
                StatVariant::Asym if v == 0.0 => n,
                StatVariant::Asym => n - v * v / (n * p * p),
                StatVariant::Finite => {
                    let d = p + self.inv_l;
                    (n * p - v) * (n * p + v + 2.0 * n * self.inv_l) / (n * d * d)
                }
            };
        }
    }

    // derivative of γ ↦ g(p + γ d)
    fn directional(&self, p: &[f64], d: &[f64], gamma: f64) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for ((&v, &p), &d) in self.v.iter().zip(p).zip(d) {
            let x = p + gamma * d;
            let g = match self.variant {
                StatVariant::Asym if v == 0.0 => n,
                StatVariant::Asym => n - v * v / (n * x * x),
                StatVariant::Finite => {
                    let den = x + self.inv_l;
                    (n * x - v) * (n * x + v + 2.0 * n * self.inv_l) / (n * den * den)
                }
            };
            s += g * d;
        }
        s
    }
}

fn check_counts(v: &BinCounts) -> Result<()> {
    if v.n == 0 {
        return Err(GraspError::domain("bin counts are all zero"));
    }
    Ok(())
}

fn check_dims(v: &BinCounts, p: &SimplexPoint) -> Result<()> {
    if v.bins() != p.len() {
        return Err(GraspError::Dimension { expected: v.bins(), got: p.len() });
    }
    Ok(())
}

/// The statistic's objective at `p`; `+∞` for the asymptotic variant when a
/// nonempty bin has `p_ℓ = 0`.
pub fn objective(variant: StatVariant, v: &BinCounts, p: &SimplexPoint) -> Result<f64> {
    check_counts(v)?;
    check_dims(v, p)?;
    let vf = v.as_f64();
    Ok(Objective::new(variant, &vf).value(p.as_slice()))
}

/// Gradient of the objective in `p`. The asymptotic variant requires `p > 0`.
pub fn gradient(variant: StatVariant, v: &BinCounts, p: &SimplexPoint) -> Result<Vec<f64>> {
    check_counts(v)?;
    check_dims(v, p)?;
    if variant == StatVariant::Asym && p.as_slice().iter().any(|&x| x <= 0.0) {
        return Err(GraspError::domain("asymptotic gradient needs a strictly positive p"));
    }
    let vf = v.as_f64();
    let mut out = vec![0.0; vf.len()];
    Objective::new(variant, &vf).gradient_into(p.as_slice(), &mut out);
    Ok(out)
}

/// `argmin { qᵀx : q ∈ Δ_L, (1/L) Σ f(L q_ℓ) <= τ }`.
pub fn lmo_fdiv_ball(x: &[f64], tau: f64, div: &FDivergence, cfg: &SolverConfig) -> Result<SimplexPoint> {
    if x.is_empty() {
        return Err(GraspError::domain("empty direction vector"));
    }
    if !(tau >= 0.0) {
        return Err(GraspError::domain(format!("tau must be nonnegative, got {tau}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GraspError::domain("direction vector has non-finite entries"));
    }
    let mut q = vec![0.0; x.len()];
    let mut scratch = vec![0.0; x.len()];
    lmo_into(x, tau, div, cfg, &mut scratch, &mut q)?;
    Ok(SimplexPoint { p: q })
}

// Writes the minimizer into `q`. `xs` is scratch space of the same length.
fn lmo_into(x: &[f64], tau: f64, div: &FDivergence, cfg: &SolverConfig, xs: &mut [f64], q: &mut [f64]) -> Result<()> {
    let l = x.len();
    let lf = l as f64;
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if tau == 0.0 || !(hi > lo) {
        q.fill(1.0 / lf);
        return Ok(());
    }
    // qᵀx on the simplex is invariant to affine maps of x, so work on [0, 1]
    let range = hi - lo;
    for (s, &v) in xs.iter_mut().zip(x) {
        *s = (v - lo) / range;
    }
    let k = xs.iter().filter(|&&v| v == 0.0).count();
    if tau >= div.face_divergence(k, l) {
        for (qi, &s) in q.iter_mut().zip(xs.iter()) {
            *qi = if s == 0.0 { 1.0 / k as f64 } else { 0.0 };
        }
        return Ok(());
    }
    match div {
        FDivergence::Tv => tv_greedy(xs, tau, q),
        FDivergence::Kl => {
            let fam = |beta: f64, q: &mut [f64]| {
                for (qi, &s) in q.iter_mut().zip(xs.iter()) {
                    *qi = (-beta * s).exp();
                }
            };
            family_root(fam, tau, div, cfg, q)?;
        }
        FDivergence::Hellinger => {
            let fam = |u: f64, q: &mut [f64]| {
                for (qi, &s) in q.iter_mut().zip(xs.iter()) {
                    let r = 1.0 + u * s;
                    *qi = 1.0 / (r * r);
                }
            };
            family_root(fam, tau, div, cfg, q)?;
        }
        FDivergence::Custom(_) => {
            let fam = |beta: f64, q: &mut [f64]| dual_recover(xs, beta, div, q);
            family_root(fam, tau, div, cfg, q)?;
        }
    }
    repair(q, tau, div);
    Ok(())
}

// Moves up to τ of mass from the largest coordinates of x onto its argmin.
fn tv_greedy(xs: &[f64], tau: f64, q: &mut [f64]) {
    let l = xs.len();
    let u = 1.0 / l as f64;
    q.fill(u);
    let target = xs.iter().position(|&s| s == 0.0).unwrap_or(0);
    let mut order: Vec<usize> = (0..l).filter(|&i| xs[i] > 0.0).collect();
    order.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]));
    let mut budget = tau;
    for i in order {
        if budget <= 0.0 {
            break;
        }
        let m = budget.min(u);
        q[i] -= m;
        q[target] += m;
        budget -= m;
    }
}

// Recovers t_ℓ = (f*)'(β (s - x_ℓ)) with the multiplier s chosen so that
// Σ t_ℓ = L, then writes t into `q` (unnormalized).
fn dual_recover(xs: &[f64], beta: f64, div: &FDivergence, q: &mut [f64]) {
    let lf = xs.len() as f64;
    let total = |s: f64| -> f64 { xs.iter().map(|&x| div.subgrad_inverse(beta * (s - x))).sum() };
    let (mut a, mut b) = (0.0f64, 0.0f64);
    let mut step = 1.0;
    if total(0.0) >= lf {
        while total(a) >= lf && step < 1e300 {
            b = a;
            a -= step;
            step *= 2.0;
        }
    } else {
        while !(total(b) >= lf) && step < 1e300 {
            a = b;
            b += step;
            step *= 2.0;
        }
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if total(m) >= lf {
            b = m;
        } else {
            a = m;
        }
    }
    for (qi, &x) in q.iter_mut().zip(xs) {
        *qi = div.subgrad_inverse(beta * (a - x));
    }
}

fn normalize(q: &mut [f64]) -> bool {
    let s: f64 = q.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return false;
    }
    for v in q.iter_mut() {
        *v /= s;
    }
    true
}

// One-parameter family θ ↦ q(θ) running from uniform (θ = 0) toward the
// argmin face as θ → ∞, with divergence increasing in θ. Finds the largest
// θ whose normalized point is feasible, to within the dual tolerance.
fn family_root<F>(fam: F, tau: f64, div: &FDivergence, cfg: &SolverConfig, q: &mut [f64]) -> Result<()>
where
    F: Fn(f64, &mut [f64]),
{
    let h = |theta: f64, q: &mut [f64]| -> f64 {
        fam(theta, q);
        if normalize(q) {
            divergence_to_uniform_unchecked(div, q)
        } else {
            f64::INFINITY
        }
    };
    let tol = cfg.dual_tol * tau.max(1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut h_lo, mut h_hi) = (0.0f64, h(hi, q));
    while h_hi <= tau {
        lo = hi;
        h_lo = h_hi;
        if tau - h_lo <= tol || hi > 1e300 {
            fam(lo, q);
            normalize(q);
            return Ok(());
        }
        hi *= 2.0;
        h_hi = h(hi, q);
    }
    // Illinois regula falsi on (fa, fb), keeping `lo` on the feasible side;
    // `h_lo` stays the true value for the stopping test
    let (mut fa, mut fb) = (h_lo - tau, h_hi - tau);
    let mut side = 0i8;
    for _ in 0..300 {
        if tau - h_lo <= tol || hi - lo <= 1e-15 * hi {
            break;
        }
        let mut m = if fb.is_finite() { lo - fa * (hi - lo) / (fb - fa) } else { 0.5 * (lo + hi) };
        if !(m > lo && m < hi) {
            m = 0.5 * (lo + hi);
        }
        let hm = h(m, q);
        if hm <= tau {
            lo = m;
            h_lo = hm;
            fa = hm - tau;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            hi = m;
            fb = hm - tau;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    let final_div = h(lo, q);
    if !final_div.is_finite() || final_div > tau + 1e-6 {
        return Err(GraspError::Solver(format!(
            "dual search for the {} ball failed: divergence {final_div} at radius {tau}",
            div.token()
        )));
    }
    Ok(())
}

// Renormalizes and, if the ball constraint is violated by more than 1e-6,
// contracts toward uniform until it holds.
fn repair(q: &mut [f64], tau: f64, div: &FDivergence) {
    normalize(q);
    if divergence_to_uniform_unchecked(div, q) <= tau + 1e-6 {
        return;
    }
    let u = 1.0 / q.len() as f64;
    let orig = q.to_vec();
    let mix = |a: f64, q: &mut [f64]| {
        for (qi, &o) in q.iter_mut().zip(&orig) {
            *qi = u + a * (o - u);
        }
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        mix(m, q);
        if divergence_to_uniform_unchecked(div, q) <= tau {
            lo = m;
        } else {
            hi = m;
        }
    }
    mix(lo, q);
}

fn tau_zero_value(variant: StatVariant, v: &[f64]) -> f64 {
    let lf = v.len() as f64;
    let n: f64 = v.iter().sum();
    let ss: f64 = v.iter().map(|&c| (c - n / lf).powi(2)).sum();
    match variant {
        StatVariant::Asym => lf / n * ss,
        StatVariant::Finite => lf / (2.0 * n) * ss,
    }
}

/// Frank-Wolfe solve of `U_τ(V)` with diagnostics.
pub fn u_stat_report(
    variant: StatVariant,
    v: &BinCounts,
    tau: f64,
    div: &FDivergence,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    check_counts(v)?;
    cfg.validate()?;
    if !(tau >= 0.0) {
        return Err(GraspError::domain(format!("tau must be nonnegative, got {tau}")));
    }
    let vf = v.as_f64();
    let l = vf.len();
    let obj = Objective::new(variant, &vf);
    if tau == 0.0 {
        let value = tau_zero_value(variant, &vf);
        return Ok(SolveReport {
            value,
            lower_bound: value,
            point: SimplexPoint::uniform(l),
            iterations: 0,
            gap: 0.0,
            converged: true,
        });
    }
    let p_hat: Vec<f64> = vf.iter().map(|&c| c / obj.n).collect();
    if divergence_to_uniform_unchecked(div, &p_hat) <= tau {
        return Ok(SolveReport {
            value: 0.0,
            lower_bound: 0.0,
            point: SimplexPoint { p: p_hat },
            iterations: 0,
            gap: 0.0,
            converged: true,
        });
    }

    if matches!(div, FDivergence::Tv) {
        return tv_solve(&obj, tau, div, cfg);
    }

    let mut p = vec![1.0 / l as f64; l];
    let mut grad = vec![0.0; l];
    let mut q = vec![0.0; l];
    let mut dir = vec![0.0; l];
    let mut scratch = vec![0.0; l];
    let mut best_value = obj.value(&p);
    let mut best_point = p.clone();
    let mut lower = 0.0f64;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for t in 0..cfg.max_iters {
        iterations = t + 1;
        obj.gradient_into(&p, &mut grad);
        lmo_into(&grad, tau, div, cfg, &mut scratch, &mut q)?;
        gap = p.iter().zip(&q).zip(&grad).map(|((a, b), g)| (a - b) * g).sum();
        let current = obj.value(&p);
        lower = lower.max(current - gap);
        if gap <= cfg.gap_tol {
            converged = true;
            break;
        }
        for ((d, &a), &b) in dir.iter_mut().zip(&p).zip(&q) {
            *d = b - a;
        }
        let gamma = match cfg.step_rule {
            StepRule::Harmonic => 1.0 / (t as f64 + 2.0),
            StepRule::LineSearch => line_search(&obj, &p, &dir),
        };
        for (a, &d) in p.iter_mut().zip(&dir) {
            *a += gamma * d;
        }
        let value = obj.value(&p);
        if value < best_value {
            best_value = value;
            best_point.copy_from_slice(&p);
        }
    }
    Ok(SolveReport {
        value: best_value,
        lower_bound: lower.min(best_value).max(0.0),
        point: SimplexPoint { p: best_point },
        iterations,
        gap,
        converged,
    })
}

// Each objective term is `A²/(n s) - 2A + n s` with `s = p + o`, so the TV
// problem separates once the ball and simplex constraints are dualized with
// multipliers μ (ball) and ν (simplex). Both are found by bisection; the
// result is certified with one Frank-Wolfe gap.
fn tv_solve(obj: &Objective<'_>, tau: f64, div: &FDivergence, cfg: &SolverConfig) -> Result<SolveReport> {
    let l = obj.v.len();
    let n = obj.n;
    let u = obj.inv_l;
    let o = match obj.variant {
        StatVariant::Asym => 0.0,
        StatVariant::Finite => obj.inv_l,
    };
    let h = |a: f64, c: f64| {
        if c >= n {
            f64::INFINITY
        } else {
            (a / (n * (n - c)).sqrt() - o).max(0.0)
        }
    };
    let fill = |mu: f64, nu: f64, p: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        for (pi, &v) in p.iter_mut().zip(obj.v) {
            let a = v + n * o;
            let up = h(a, -nu - mu);
            *pi = if up > u {
                up
            } else {
                let down = h(a, mu - nu);
                if down < u { down } else { u }
            };
            sum += *pi;
        }
        sum
    };
    let tv = |p: &[f64]| 0.5 * p.iter().map(|&x| (x - u).abs()).sum::<f64>();
    let solve_nu = |mu: f64, p: &mut [f64]| {
        let mut lo = -n - mu;
        let mut hi = n + mu;
        while fill(mu, hi, p) > 1.0 {
            hi = hi * 2.0 + 1.0;
        }
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            if fill(mu, m, p) > 1.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        fill(mu, 0.5 * (lo + hi), p);
        normalize(p);
    };

    let mut p = vec![0.0; l];
    let (mut lo, mut hi) = (0.0, n);
    loop {
        solve_nu(hi, &mut p);
        if tv(&p) <= tau {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        solve_nu(m, &mut p);
        if tv(&p) <= tau {
            hi = m;
        } else {
            lo = m;
        }
    }
    solve_nu(hi, &mut p);
    repair(&mut p, tau, div);

    let mut grad = vec![0.0; l];
    let mut q = vec![0.0; l];
    let mut scratch = vec![0.0; l];
    obj.gradient_into(&p, &mut grad);
    lmo_into(&grad, tau, div, cfg, &mut scratch, &mut q)?;
    let gap: f64 = p.iter().zip(&q).zip(&grad).map(|((a, b), g)| (a - b) * g).sum::<f64>().max(0.0);
    let value = obj.value(&p);
    Ok(SolveReport {
        value,
        lower_bound: (value - gap).max(0.0),
        point: SimplexPoint { p },
        iterations: 1,
        gap,
        converged: gap <= cfg.gap_tol,
    })
}

// Bisection on the sign of the directional derivative over γ ∈ [0, 1].
fn line_search(obj: &Objective<'_>, p: &[f64], d: &[f64]) -> f64 {
    if obj.directional(p, d, 1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if obj.directional(p, d, m) > 0.0 {
            hi = m;
        } else {
            lo = m;
        }
    }
    lo
}

/// `U_τ(V)`, the minimum of the variant's objective over the divergence ball.
pub fn u_stat(variant: StatVariant, v: &BinCounts, tau: f64, div: &FDivergence, cfg: &SolverConfig) -> Result<f64> {
    u_stat_report(variant, v, tau, div, cfg).map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const DIVS: [FDivergence; 3] = [FDivergence::Kl, FDivergence::Tv, FDivergence::Hellinger];

    fn counts(v: &[u64]) -> BinCounts {
        BinCounts::new(v.to_vec(), None).unwrap()
    }

    // Grid search at `step` over the simplex (L = 2 or 3), then repeated local
    // refinement around the incumbent with a ten times finer grid.
    fn grid_min<F: Fn(&[f64]) -> f64>(l: usize, step: f64, feasible: impl Fn(&[f64]) -> bool, f: F) -> f64 {
        let point = |a: f64, b: f64| -> Vec<f64> {
            if l == 2 {
                vec![a, 1.0 - a]
            } else {
                vec![a, b, 1.0 - a - b]
            }
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let visit = |a: f64, b: f64, best: &mut (f64, f64, f64)| {
            let p = point(a, b);
            if p.iter().all(|&x| x >= 0.0) && feasible(&p) {
                let v = f(&p);
                if v < best.0 {
                    *best = (v, a, b);
                }
            }
        };
        let m = (1.0 / step).round() as i64;
        for i in 0..=m {
            for j in 0..=(if l == 2 { 0 } else { m - i }) {
                visit(i as f64 * step, j as f64 * step, &mut best);
            }
        }
        let mut h = step;
        for _ in 0..6 {
            h /= 10.0;
            let (_, a0, b0) = best;
            for i in -20i64..=20 {
                for j in if l == 2 { 0..=0 } else { -20i64..=20 } {
                    visit(a0 + i as f64 * h, b0 + j as f64 * h, &mut best);
                }
            }
        }
        best.0
    }

    #[test]
    fn objective_examples() {
        let v = counts(&[7, 3]);
        let half = SimplexPoint::uniform(2);
        assert_abs_diff_eq!(objective(StatVariant::Asym, &v, &half).unwrap(), 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(objective(StatVariant::Finite, &v, &half).unwrap(), 0.8, epsilon = 1e-12);
        let exact = SimplexPoint::new(vec![0.7, 0.3]).unwrap();
        assert_abs_diff_eq!(objective(StatVariant::Asym, &v, &exact).unwrap(), 0.0, epsilon = 1e-12);
        let edge = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        assert!(objective(StatVariant::Asym, &v, &edge).unwrap().is_infinite());
        let v0 = counts(&[10, 0]);
        assert_abs_diff_eq!(objective(StatVariant::Asym, &v0, &edge).unwrap(), 0.0);
    }

    #[test]
    fn gradient_zero_at_empirical_point() {
        let v = counts(&[7, 3]);
        let p = SimplexPoint::new(vec![0.7, 0.3]).unwrap();
        for variant in StatVariant::ALL {
            for g in gradient(variant, &v, &p).unwrap() {
                assert_abs_diff_eq!(g, 0.0, epsilon = 1e-12);
            }
        }
        let edge = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        assert!(gradient(StatVariant::Asym, &v, &edge).is_err());
        assert!(gradient(StatVariant::Finite, &v, &edge).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let l = rng.random_range(2..8);
            let v: Vec<u64> = (0..l).map(|_| rng.random_range(0..50)).collect();
            if v.iter().sum::<u64>() == 0 {
                continue;
            }
            let mut p: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            let vc = counts(&v);
            let vf = vc.as_f64();
            for variant in StatVariant::ALL {
                let obj = Objective::new(variant, &vf);
                let g = gradient(variant, &vc, &SimplexPoint::new(p.clone()).unwrap()).unwrap();
                for i in 0..l {
                    let h = 1e-6;
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (obj.value(&a) - obj.value(&b)) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-4 * g[i].abs().max(1.0), "{variant} {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn lmo_trivial_cases() {
        let cfg = SolverConfig::default();
        for div in &DIVS {
            let q = lmo_fdiv_ball(&[2.0, 2.0, 2.0], 0.3, div, &cfg).unwrap();
            for &v in q.as_slice() {
                assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
            }
            let q = lmo_fdiv_ball(&[1.0, 2.0, 3.0], 0.0, div, &cfg).unwrap();
            assert_eq!(q, SimplexPoint::uniform(3));
        }
        assert!(lmo_fdiv_ball(&[1.0], -0.1, &FDivergence::Kl, &cfg).is_err());
    }

    #[test]
    fn lmo_face_when_radius_covers_it() {
        let cfg = SolverConfig::default();
        let q = lmo_fdiv_ball(&[1.0, 2.0, 3.0], 5.0, &FDivergence::Kl, &cfg).unwrap();
        assert_eq!(q.as_slice(), &[1.0, 0.0, 0.0]);
        let q = lmo_fdiv_ball(&[1.0, 1.0, 3.0], 5.0, &FDivergence::Kl, &cfg).unwrap();
        assert_eq!(q.as_slice(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn lmo_matches_grid_oracle() {
        let cfg = SolverConfig::default();
        let x = [1.0, 2.0, 3.0];
        for div in &DIVS {
            for &tau in &[0.01, 0.05, 0.2, 0.5, 2.0] {
                let q = lmo_fdiv_ball(&x, tau, div, &cfg).unwrap();
                let val: f64 = q.as_slice().iter().zip(&x).map(|(a, b)| a * b).sum();
                let oracle = grid_min(
                    3,
                    0.002,
                    |p| divergence_to_uniform_unchecked(div, p) <= tau,
                    |p| p.iter().zip(&x).map(|(a, b)| a * b).sum(),
                );
                assert!(val <= oracle + 1e-9, "{div} τ={tau}: {val} vs {oracle}");
                assert!(oracle - val < 1e-2, "{div} τ={tau}: {val} vs {oracle}");
                assert!(divergence_to_uniform_unchecked(div, q.as_slice()) <= tau + 1e-6);
            }
        }
    }

    #[test]
    fn custom_divergence_lmo_agrees_with_builtin() {
        use crate::divergence::{ConjugateDomain, CustomDivergence};
        let custom = FDivergence::custom(
            CustomDivergence::new(
                "kl-custom",
                |t| if t == 0.0 { 0.0 } else { t * t.ln() },
                |s| (s - 1.0).exp(),
                ConjugateDomain::ALL,
                |v| (v - 1.0).exp(),
            )
            .unwrap(),
        );
        let cfg = SolverConfig::default();
        let x = [0.3, -1.0, 2.0, 0.7];
        for &tau in &[0.01, 0.1, 0.5] {
            let a = lmo_fdiv_ball(&x, tau, &custom, &cfg).unwrap();
            let b = lmo_fdiv_ball(&x, tau, &FDivergence::Kl, &cfg).unwrap();
            for (u, w) in a.as_slice().iter().zip(b.as_slice()) {
                assert_abs_diff_eq!(u, w, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn u_stat_tau_zero_closed_forms() {
        let cfg = SolverConfig::default();
        let v = counts(&[2, 2, 2, 2]);
        for variant in StatVariant::ALL {
            assert_eq!(u_stat(variant, &v, 0.0, &FDivergence::Kl, &cfg).unwrap(), 0.0);
        }
        let v = counts(&[7, 3]);
        assert_abs_diff_eq!(u_stat(StatVariant::Asym, &v, 0.0, &FDivergence::Kl, &cfg).unwrap(), 1.6, epsilon = 1e-12);
        // equals the objective at the uniform point, the only feasible one
        assert_abs_diff_eq!(u_stat(StatVariant::Finite, &v, 0.0, &FDivergence::Tv, &cfg).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn u_stat_matches_grid_oracle() {
        let cfg = SolverConfig::default();
        let v = counts(&[20, 5, 5]);
        let vf = v.as_f64();
        for variant in StatVariant::ALL {
            let obj = Objective::new(variant, &vf);
            let fw = u_stat(variant, &v, 0.05, &FDivergence::Kl, &cfg).unwrap();
            let oracle = grid_min(
                3,
                0.002,
                |p| divergence_to_uniform_unchecked(&FDivergence::Kl, p) <= 0.05,
                |p| obj.value(p),
            );
            assert!((fw - oracle).abs() <= 1e-3 * oracle.max(1.0), "{variant}: {fw} vs {oracle}");
        }
    }

    #[test]
    fn u_stat_zero_when_empirical_point_feasible() {
        let v = counts(&[12, 10, 8]);
        let u = u_stat(StatVariant::Asym, &v, 0.5, &FDivergence::Kl, &SolverConfig::default()).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn report_is_feasible_and_bounded() {
        let v = counts(&[40, 5, 30, 0, 25]);
        for div in &DIVS {
            for variant in StatVariant::ALL {
                let r = u_stat_report(variant, &v, 0.1, div, &SolverConfig::default()).unwrap();
                let p = r.point.as_slice();
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                assert!(p.iter().all(|&x| x >= 0.0));
                assert!(divergence_to_uniform_unchecked(div, p) <= 0.1 + 1e-6);
                assert!(r.lower_bound <= r.value);
            }
        }
    }

    #[test]
    fn harmonic_steps_bracket_the_line_search_value() {
        let v = counts(&[30, 12, 9, 4, 45]);
        let harmonic = SolverConfig { step_rule: StepRule::Harmonic, ..SolverConfig::default() };
        for div in &DIVS {
            for variant in StatVariant::ALL {
                let ls = u_stat(variant, &v, 0.1, div, &SolverConfig::default()).unwrap();
                let h = u_stat_report(variant, &v, 0.1, div, &harmonic).unwrap();
                assert!(h.value >= ls * (1.0 - 1e-6), "{div} {variant}: {} < {ls}", h.value);
                assert!(h.lower_bound <= ls * (1.0 + 1e-6), "{div} {variant}: {} > {ls}", h.lower_bound);
                assert!(h.value - ls <= 0.05 * ls, "{div} {variant}: {} vs {ls}", h.value);
            }
        }
    }

    #[test]
    fn variant_tokens() {
        for v in StatVariant::ALL {
            assert_eq!(v.token().parse::<StatVariant>().unwrap(), v);
        }
        assert!("both".parse::<StatVariant>().is_err());
        assert!(SolverConfig { max_iters: 0, ..SolverConfig::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn u_stat_monotone_and_dominated(v in proptest::collection::vec(0u64..60, 3..7), d in 0usize..3) {
            prop_assume!(v.iter().sum::<u64>() > 0);
            let div = &DIVS[d];
            let vc = counts(&v);
            let cfg = SolverConfig::default();
            let mut prev = [f64::INFINITY; 2];
            for &tau in &[0.0, 0.02, 0.05, 0.1, 0.2, 0.4] {
                let fin = u_stat(StatVariant::Finite, &vc, tau, div, &cfg).unwrap();
                let asy = u_stat(StatVariant::Asym, &vc, tau, div, &cfg).unwrap();
                prop_assert!(fin <= asy * (1.0 + 1e-9) + 1e-9);
                prop_assert!(fin <= prev[0] * (1.0 + 1e-3) + 1e-6);
                prop_assert!(asy <= prev[1] * (1.0 + 1e-3) + 1e-6);
                prev = [fin, asy];
            }
        }

        #[test]
        fn lmo_is_feasible_and_beats_uniform(x in proptest::collection::vec(-5.0f64..5.0, 2..10), tau in 0.0f64..1.5, d in 0usize..3) {
            let div = &DIVS[d];
            let q = lmo_fdiv_ball(&x, tau, div, &SolverConfig::default()).unwrap();
            let p = q.as_slice();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!(divergence_to_uniform_unchecked(div, p) <= tau + 1e-6);
            let val: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
            let uni: f64 = x.iter().sum::<f64>() / x.len() as f64;
            prop_assert!(val <= uni + 1e-12);
        }
    }
}
