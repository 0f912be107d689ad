//! Decision rules, p-values, confidence bounds and the perfect-fit
//! randomization test.

use serde::{Deserialize, Serialize};

use crate::divergence::FDivergence;
use crate::error::{GraspError, Result};
use crate::rng::RngStream;
use crate::sampling::{draw_w, BinCounts, EvalSample};
use crate::scores::{DatasetScore, DatasetScoreFn, RidgeSolver};
use crate::solver::{u_stat, SolverConfig, StatVariant};
use rand::Rng;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

// P(a, x) by its power series; accurate for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

// Q(a, x) by Lentz's continued fraction; accurate for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (h.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// CDF of the chi-square law with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: usize) -> f64 {
    gamma_p(0.5 * k as f64, 0.5 * x).clamp(0.0, 1.0)
}

/// Survival function `1 - chi2_cdf(x, k)`, computed without cancellation.
pub fn chi2_sf(x: f64, k: usize) -> f64 {
    gamma_q(0.5 * k as f64, 0.5 * x).clamp(0.0, 1.0)
}

/// The `beta` quantile of the chi-square law with `k` degrees of freedom.
pub fn chi2_quantile(beta: f64, k: usize) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(GraspError::domain(format!("quantile level must lie in (0, 1), got {beta}")));
    }
    if k == 0 {
        return Err(GraspError::domain("chi-square needs at least one degree of freedom"));
    }
    let kf = k as f64;
    let (mut lo, mut hi) = (0.0, kf.max(1.0));
    while chi2_cdf(hi, k) < beta {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if chi2_cdf(m, k) < beta {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GraspError::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Rejection threshold: `L + √(2L/α)` (finite) or `χ²_{L-1}(1-α)` (asym).
pub fn threshold(variant: StatVariant, l: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if l < 2 {
        return Err(GraspError::domain("need at least two bins"));
    }
    let lf = l as f64;
    match variant {
        StatVariant::Finite => Ok(lf + (2.0 * lf / alpha).sqrt()),
        StatVariant::Asym => chi2_quantile(1.0 - alpha, l - 1),
    }
}

/// Outcome of comparing a statistic with its rejection threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

pub fn decide(variant: StatVariant, u: f64, l: usize, alpha: f64) -> Result<Decision> {
    let t = threshold(variant, l, alpha)?;
    Ok(Decision { statistic: u, threshold: t, reject: u >= t })
}

/// `1` for `u <= L`, else `min(1, 2L / (u - L)²)`.
pub fn pvalue_finite(u: f64, l: usize) -> f64 {
    let lf = l as f64;
    if u <= lf {
        1.0
    } else {
        (2.0 * lf / ((u - lf) * (u - lf))).min(1.0)
    }
}

/// `1 - F_{L-1}(u)`.
pub fn pvalue_asym(u: f64, l: usize) -> f64 {
    chi2_sf(u.max(0.0), l.saturating_sub(1).max(1))
}

pub fn pvalue(variant: StatVariant, u: f64, l: usize) -> f64 {
    match variant {
        StatVariant::Finite => pvalue_finite(u, l),
        StatVariant::Asym => pvalue_asym(u, l),
    }
}

/// Which test produced a [`TestOutcome`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Finite,
    Asym,
    /// Perfect-fit randomization test on a dataset-level score.
    Crt,
}

impl From<StatVariant> for TestKind {
    fn from(v: StatVariant) -> Self {
        match v {
            StatVariant::Finite => TestKind::Finite,
            StatVariant::Asym => TestKind::Asym,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub p_value: f64,
    pub variant: TestKind,
    pub tau: f64,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub n: u64,
    pub divergence: Option<String>,
    pub seed: Option<u64>,
}

/// Tests `H0: E[D_f(Bern(η) ‖ Bern(η̂))] <= τ` from bin counts.
pub fn grasp_test(
    counts: &BinCounts,
    div: &FDivergence,
    tau: f64,
    alpha: f64,
    variant: StatVariant,
    cfg: &SolverConfig,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let l = counts.bins();
    let u = u_stat(variant, counts, tau, div, cfg)?;
    let d = decide(variant, u, l, alpha)?;
    Ok(TestOutcome {
        statistic: u,
        threshold: d.threshold,
        reject: d.reject,
        p_value: pvalue(variant, u, l),
        variant: variant.into(),
        tau,
        alpha,
        l: Some(l),
        k: counts.k,
        n: counts.n,
        divergence: Some(div.token().to_string()),
        seed: None,
    })
}

/// One-sided lower confidence bound on the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBound {
    pub tau_lower: f64,
    pub alpha: f64,
    pub variant: StatVariant,
}

/// `sup { τ >= 0 : U_τ(V) >= threshold }`, located by bisection to within
/// `1e-4`; the returned value is the lower end of the final bracket.
pub fn ci_lower(
    variant: StatVariant,
    v: &BinCounts,
    alpha: f64,
    div: &FDivergence,
    cfg: &SolverConfig,
) -> Result<ConfidenceBound> {
    let l = v.bins();
    let thr = threshold(variant, l, alpha)?;
    let out = |tau_lower| ConfidenceBound { tau_lower, alpha, variant };
    if u_stat(variant, v, 0.0, div, cfg)? < thr {
        return Ok(out(0.0));
    }
    let lf = l as f64;
    let n = v.n as f64;
    let tau_max = v.counts.iter().map(|&c| div.eval(lf * c as f64 / n)).sum::<f64>() / lf;
    let (mut lo, mut hi) = (0.0, tau_max);
    for _ in 0..60 {
        if hi - lo <= 1e-4 {
            break;
        }
        let m = 0.5 * (lo + hi);
        if u_stat(variant, v, m, div, cfg)? >= thr {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(out(lo))
}

/// `(1 + #{j : orig >= counterfeit_j}) / (M + 1)`.
pub fn crt_pvalue(orig_score: f64, counterfeit_scores: &[f64]) -> Result<f64> {
    if counterfeit_scores.is_empty() {
        return Err(GraspError::domain("need at least one counterfeit score"));
    }
    let wins = counterfeit_scores.iter().filter(|&&t| orig_score >= t).count();
    Ok((1 + wins) as f64 / (counterfeit_scores.len() + 1) as f64)
}

/// Randomization test of perfect fit `η = η̂` with a dataset-level score.
///
/// The original vector draws `w_i` from the sample's label and `η̂`; each of
/// the `m` counterfeit vectors is i.i.d. `Unif[0, 1]ⁿ`. Scores are oriented
/// so that a small value signals structure in `w`, such as a low regression
/// error, and a small p-value follows when the original scores below most of
/// its counterfeits. The reported statistic is the number of counterfeits that
/// score strictly above the original; the test rejects when it reaches the
/// integer threshold, which coincides with `p_value <= alpha`.
pub fn perfect_fit_test(
    samples: &[EvalSample],
    m: usize,
    dscore: &DatasetScoreFn,
    alpha: f64,
    rng: &RngStream,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(GraspError::domain("M must be at least 1"));
    }
    if samples.is_empty() {
        return Err(GraspError::domain("no samples"));
    }
    let n = samples.len();
    let mut r = rng.rng();
    let w: Vec<f64> = samples.iter().map(|s| draw_w(s, &mut r)).collect();
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();

    let mut wt = vec![0.0; n];
    let mut scores = Vec::with_capacity(m);
    let orig = match dscore {
        DatasetScoreFn::LinearRegressionMse { ridge } => {
            // the design is shared by every vector, so factor it once
            let solver = RidgeSolver::new(&x, *ridge)?;
            for _ in 0..m {
                wt.iter_mut().for_each(|v| *v = r.random());
                scores.push(solver.in_sample_mse(&x, &wt));
            }
            solver.in_sample_mse(&x, &w)
        }
        DatasetScoreFn::External(_) => {
            for _ in 0..m {
                wt.iter_mut().for_each(|v| *v = r.random());
                scores.push(dscore.score(&x, &wt)?);
            }
            dscore.score(&x, &w)?
        }
    };
    let p = crt_pvalue(orig, &scores)?;
    let above = scores.iter().filter(|&&t| orig < t).count();
    let mf = (m + 1) as f64;
    // smallest count s whose p-value (m + 1 - s) / (m + 1) is <= alpha
    let thr = (0..=m + 1).find(|&s| ((m + 1 - s.min(m + 1)) as f64) / mf <= alpha).unwrap_or(m + 1);
    Ok(TestOutcome {
        statistic: above as f64,
        threshold: thr as f64,
        reject: p <= alpha,
        p_value: p,
        variant: TestKind::Crt,
        tau: 0.0,
        alpha,
        l: None,
        k: None,
        n: n as u64,
        divergence: None,
        seed: Some(rng.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn chi2_cdf_examples() {
        assert_eq!(chi2_cdf(0.0, 3), 0.0);
        assert_abs_diff_eq!(chi2_cdf(2.0 * 2f64.ln(), 2), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(chi2_cdf(62.04, 49), 0.90, epsilon = 1e-3);
        for &x in &[0.1, 1.0, 3.0, 10.0, 40.0] {
            assert_abs_diff_eq!(chi2_cdf(x, 2), 1.0 - (-x / 2.0).exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn chi2_matches_statrs() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for &k in &[1usize, 2, 5, 19, 49, 99] {
            let d = ChiSquared::new(k as f64).unwrap();
            for &x in &[0.01, 0.5, 1.0, 4.0, 20.0, 60.0, 150.0] {
                let ours = chi2_cdf(x, k);
                let theirs = d.cdf(x);
                assert!((ours - theirs).abs() <= 1e-10 * theirs.max(1e-300) + 1e-14, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn ln_gamma_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(10.0), 362_880f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn chi2_quantile_examples() {
        assert_abs_diff_eq!(chi2_quantile(0.95, 1).unwrap(), 3.84146, epsilon = 1e-4);
        assert_abs_diff_eq!(chi2_quantile(0.9, 49).unwrap(), 62.04, epsilon = 0.01);
        for &k in &[1usize, 4, 49] {
            for &b in &[0.01, 0.5, 0.9, 0.999] {
                let q = chi2_quantile(b, k).unwrap();
                assert_abs_diff_eq!(chi2_cdf(q, k), b, epsilon = 1e-8);
            }
        }
        assert!(chi2_quantile(1.0, 3).is_err());
        assert!(chi2_quantile(0.0, 3).is_err());
    }

    #[test]
    fn decision_examples() {
        let d = decide(StatVariant::Finite, 82.0, 50, 0.1).unwrap();
        assert!(d.reject);
        assert_abs_diff_eq!(d.threshold, 81.6228, epsilon = 1e-4);
        assert!(!decide(StatVariant::Finite, 50.0, 50, 0.1).unwrap().reject);
        assert!(!decide(StatVariant::Asym, 0.0, 50, 0.1).unwrap().reject);
        assert!(decide(StatVariant::Asym, 1.0, 50, 1.5).is_err());
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(pvalue_finite(30.0, 50), 1.0);
        assert_abs_diff_eq!(pvalue_finite(50.0 + 1000f64.sqrt(), 50), 0.1, epsilon = 1e-12);
        assert_eq!(pvalue_finite(50.0 + 100f64.sqrt(), 50), 1.0);
        assert_eq!(pvalue_asym(0.0, 50), 1.0);
        let q = chi2_quantile(0.9, 49).unwrap();
        assert_abs_diff_eq!(pvalue_asym(q, 50), 0.1, epsilon = 1e-8);
        assert!(pvalue_asym(1e6, 50) < 1e-300);
    }

    #[test]
    fn crt_pvalue_examples() {
        assert_abs_diff_eq!(crt_pvalue(0.0, &[1.0, 2.0, 3.0]).unwrap(), 0.25);
        assert_eq!(crt_pvalue(5.0, &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(crt_pvalue(1.0, &[]).is_err());
    }

    #[test]
    fn crt_pvalue_super_uniform_under_exchangeability() {
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let m = 19;
        let trials = 2000;
        let ps: Vec<f64> = (0..trials)
            .map(|_| {
                let v: Vec<f64> = (0..=m).map(|_| r.random()).collect();
                crt_pvalue(v[0], &v[1..]).unwrap()
            })
            .collect();
        for i in 1..=m + 1 {
            let t = i as f64 / (m + 1) as f64;
            let frac = ps.iter().filter(|&&p| p <= t).count() as f64 / trials as f64;
            assert!(frac <= t + 0.02 + 1e-12, "t={t} frac={frac}");
        }
    }

    #[test]
    fn ci_lower_zero_on_uniform_counts() {
        let v = BinCounts::new(vec![20; 10], None).unwrap();
        for variant in StatVariant::ALL {
            let ci = ci_lower(variant, &v, 0.1, &FDivergence::Kl, &SolverConfig::default()).unwrap();
            assert_eq!(ci.tau_lower, 0.0);
        }
    }

    #[test]
    fn ci_lower_monotone_in_alpha() {
        let v = BinCounts::new(vec![120, 40, 15, 10, 5, 60, 80, 30, 20, 20], None).unwrap();
        let cfg = SolverConfig::default();
        for variant in StatVariant::ALL {
            let a = ci_lower(variant, &v, 0.05, &FDivergence::Kl, &cfg).unwrap().tau_lower;
            let b = ci_lower(variant, &v, 0.2, &FDivergence::Kl, &cfg).unwrap().tau_lower;
            assert!(a > 0.0);
            assert!(a <= b + 1e-4, "{variant}: {a} > {b}");
            // the bound rejects just below and not far above
            assert!(u_stat(variant, &v, a, &FDivergence::Kl, &cfg).unwrap() >= threshold(variant, 10, 0.05).unwrap());
        }
    }

    #[test]
    fn grasp_test_packs_outcome() {
        let v = BinCounts::new(vec![7, 3], Some(1)).unwrap();
        let o = grasp_test(&v, &FDivergence::Kl, 0.0, 0.1, StatVariant::Asym, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(o.statistic, 1.6, epsilon = 1e-12);
        assert_eq!(o.reject, o.statistic >= o.threshold);
        assert_eq!((o.l, o.k, o.n), (Some(2), Some(1), 10));
        let json = serde_json::to_value(&o).unwrap();
        for key in ["statistic", "threshold", "reject", "p_value", "variant", "tau", "alpha", "L", "K", "n", "divergence", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["variant"], "asym");
    }

    fn null_data(n: usize, seed: u64) -> Vec<EvalSample> {
        use rand::SeedableRng;
        use rand_distr::StandardNormal;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = vec![1.0, r.sample::<f64, _>(StandardNormal), r.sample::<f64, _>(StandardNormal)];
                let eta = crate::scores::sigmoid(x[1] - 2.0 * x[2]);
                EvalSample { y: u8::from(r.random::<f64>() < eta), x, eta_hat: eta }
            })
            .collect()
    }

    #[test]
    fn perfect_fit_single_counterfeit() {
        let s = null_data(50, 1);
        let d = DatasetScoreFn::LinearRegressionMse { ridge: 0.0 };
        for seed in 0..20 {
            let o = perfect_fit_test(&s, 1, &d, 0.5, &RngStream::new(seed)).unwrap();
            assert!(o.p_value == 0.5 || o.p_value == 1.0);
            assert_eq!(o.reject, o.statistic >= o.threshold);
        }
    }

    #[test]
    fn perfect_fit_is_deterministic() {
        let s = null_data(64, 2);
        let d = DatasetScoreFn::LinearRegressionMse { ridge: 0.0 };
        let a = perfect_fit_test(&s, 30, &d, 0.1, &RngStream::new(9)).unwrap();
        let b = perfect_fit_test(&s, 30, &d, 0.1, &RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.variant, TestKind::Crt);
    }

    #[test]
    fn perfect_fit_threshold_matches_pvalue() {
        let s = null_data(40, 3);
        let d = DatasetScoreFn::LinearRegressionMse { ridge: 0.0 };
        for seed in 0..40 {
            for &alpha in &[0.05, 0.1, 0.3] {
                let o = perfect_fit_test(&s, 19, &d, alpha, &RngStream::new(seed)).unwrap();
                assert_eq!(o.reject, o.statistic >= o.threshold, "seed {seed} α {alpha}");
            }
        }
    }

    proptest! {
        #[test]
        fn pvalues_nonincreasing(u in 0.0f64..500.0, du in 0.0f64..50.0, l in 2usize..120) {
            prop_assert!(pvalue_finite(u + du, l) <= pvalue_finite(u, l));
            prop_assert!(pvalue_asym(u + du, l) <= pvalue_asym(u, l) + 1e-15);
        }

        #[test]
        fn finite_threshold_pvalue_coherent(u in 0.0f64..500.0, l in 2usize..120, alpha in 0.01f64..0.5) {
            let d = decide(StatVariant::Finite, u, l, alpha).unwrap();
            let lf = l as f64;
            if u > lf {
                let r = 2.0 * lf / ((u - lf) * (u - lf));
                if (r - alpha).abs() > 1e-9 * alpha {
                    prop_assert_eq!(d.reject, r <= alpha);
                }
            } else {
                prop_assert!(!d.reject);
            }
        }

        #[test]
        fn asym_threshold_pvalue_coherent(u in 0.0f64..200.0, l in 2usize..80, alpha in 0.01f64..0.5) {
            let d = decide(StatVariant::Asym, u, l, alpha).unwrap();
            let p = pvalue_asym(u, l);
            if (p - alpha).abs() > 1e-8 {
                prop_assert_eq!(d.reject, p <= alpha);
            }
        }
    }
}
