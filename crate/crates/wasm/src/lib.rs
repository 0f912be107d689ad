//! Browser bindings for the demo page in `www/`.
//!
//! The computations live in plain functions returning `Result<_, String>` so
//! they can be tested natively; the `#[wasm_bindgen]` wrappers only convert
//! errors.

use grasp::experiments::ProjectedLaw;
use grasp::{
    ci_lower, grasp_counts_simple, grasp_test, lmo_fdiv_ball, threshold, u_stat, BinCounts, EvalSample, FDivergence,
    RngStream, SolverConfig, StatVariant,
};
use wasm_bindgen::prelude::*;

fn parse_div(token: &str) -> Result<FDivergence, String> {
    token.parse().map_err(|e: grasp::GraspError| e.to_string())
}

fn parse_variant(token: &str) -> Result<StatVariant, String> {
    token.parse().map_err(|e: grasp::GraspError| e.to_string())
}

fn to_counts(counts: &[u32]) -> Result<BinCounts, String> {
    BinCounts::new(counts.iter().map(|&c| c as u64).collect(), None).map_err(|e| e.to_string())
}

/// Bin counts for `n` samples of `x ~ N(0,1)`, `η = σ(a x)` and a model
/// `η̂ = σ(scale · a x)`; `scale = 1` is a perfect fit.
pub fn simulate_bins_impl(n: usize, l: usize, a: f64, scale: f64, seed: u64) -> Result<Vec<u32>, String> {
    if n == 0 || n > 1_000_000 {
        return Err("n must be between 1 and 1e6".into());
    }
    let law = ProjectedLaw::new(&[a], &[scale * a]).map_err(|e| e.to_string())?;
    let rng = RngStream::new(seed);
    let samples: Vec<EvalSample> = law.samples(n, &rng.substream(0)).into_iter().map(|s| s.sample).collect();
    let counts = grasp_counts_simple(&samples, l, &rng.substream(1)).map_err(|e| e.to_string())?;
    Ok(counts.counts.iter().map(|&c| c as u32).collect())
}

/// `[statistic, threshold, p_value, reject]` for one rule.
pub fn test_counts_impl(counts: &[u32], div: &str, tau: f64, alpha: f64, variant: &str) -> Result<Vec<f64>, String> {
    let c = to_counts(counts)?;
    let o = grasp_test(&c, &parse_div(div)?, tau, alpha, parse_variant(variant)?, &SolverConfig::default())
        .map_err(|e| e.to_string())?;
    Ok(vec![o.statistic, o.threshold, o.p_value, if o.reject { 1.0 } else { 0.0 }])
}

/// `U_τ` at each `τ` of `taus`, followed by the rejection threshold and the
/// lower confidence bound on `τ`.
pub fn u_curve_impl(counts: &[u32], div: &str, variant: &str, alpha: f64, taus: &[f64]) -> Result<Vec<f64>, String> {
    let c = to_counts(counts)?;
    let d = parse_div(div)?;
    let v = parse_variant(variant)?;
    let cfg = SolverConfig::default();
    let mut out = taus.iter().map(|&t| u_stat(v, &c, t, &d, &cfg)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    out.push(threshold(v, c.bins(), alpha).map_err(|e| e.to_string())?);
    out.push(ci_lower(v, &c, alpha, &d, &cfg).map_err(|e| e.to_string())?.tau_lower);
    Ok(out)
}

/// Boundary of the radius-`τ` ball on the 3-simplex, traced as the LMO output
/// over `points` directions; flattened `(q₁, q₂, q₃)` triples.
pub fn ball_boundary_impl(div: &str, tau: f64, points: usize) -> Result<Vec<f64>, String> {
    let d = parse_div(div)?;
    let cfg = SolverConfig::default();
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let t = std::f64::consts::TAU * i as f64 / points as f64;
        // orthonormal basis of the sum-zero plane
        let e1 = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
        let e2 = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
        let x: Vec<f64> = (0..3).map(|k| t.cos() * e1[k] + t.sin() * e2[k]).collect();
        let q = lmo_fdiv_ball(&x, tau, &d, &cfg).map_err(|e| e.to_string())?;
        out.extend_from_slice(q.as_slice());
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn simulate_bins(n: usize, l: usize, a: f64, scale: f64, seed: u32) -> Result<Vec<u32>, JsError> {
    simulate_bins_impl(n, l, a, scale, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn test_counts(counts: &[u32], div: &str, tau: f64, alpha: f64, variant: &str) -> Result<Vec<f64>, JsError> {
    test_counts_impl(counts, div, tau, alpha, variant).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn u_curve(counts: &[u32], div: &str, variant: &str, alpha: f64, taus: &[f64]) -> Result<Vec<f64>, JsError> {
    u_curve_impl(counts, div, variant, alpha, taus).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ball_boundary(div: &str, tau: f64, points: usize) -> Result<Vec<f64>, JsError> {
    ball_boundary_impl(div, tau, points).map_err(|e| JsError::new(&e))
}
