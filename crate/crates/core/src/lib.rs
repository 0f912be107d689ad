//! Goodness-of-fit testing for binary classifiers.
//!
//! A fitted probability model `η̂` is checked against held-out labels by
//! randomizing each label into a continuous variable `w`, ranking a score of
//! `w` against counterfeit draws and binning the ranks. Under a perfect fit the
//! bins are uniform; deviation from uniformity is measured with an
//! f-divergence ball of radius `τ` around the uniform law.
//!
//! ```
//! use grasp::{grasp_counts_simple, grasp_test, EvalSample, FDivergence, RngStream, SolverConfig, StatVariant};
//!
//! let samples: Vec<EvalSample> = (0..400)
//!     .map(|i| EvalSample::new(vec![], (i % 2) as u8, 0.5).unwrap())
//!     .collect();
//! let counts = grasp_counts_simple(&samples, 5, &RngStream::new(1)).unwrap();
//! let cfg = SolverConfig::default();
//! let out = grasp_test(&counts, &FDivergence::Kl, 0.1, 0.05, StatVariant::Asym, &cfg).unwrap();
//! assert_eq!(out.reject, out.statistic >= out.threshold);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod io;
pub mod rng;
pub mod sampling;
pub mod scores;
pub mod solver;

pub use divergence::{
    bernoulli_divergence, discrete_divergence_to_uniform, f_conjugate, f_eval, f_subgrad_inverse, BernoulliPair,
    CustomDivergence, FDivergence,
};
pub use error::{GraspError, Result};
pub use inference::{
    chi2_cdf, chi2_quantile, chi2_sf, ci_lower, crt_pvalue, decide, grasp_test, perfect_fit_test, pvalue_asym,
    pvalue_finite, threshold, ConfidenceBound, Decision, TestKind, TestOutcome,
};
pub use rng::RngStream;
pub use sampling::{
    assign_label, draw_w, grasp_counts_df, grasp_counts_modelx, grasp_counts_simple, rank, BinCounts, EvalSample,
    FeatureSampler,
};
pub use scores::{
    dataset_score_mse, fit_linear_score, score_agnostic_modelx, score_identity, score_linear_residual,
    score_optimal_oracle, DatasetScoreFn, ProbModel, ScoreFn, ScoreFunction, ScorePoint,
};
pub use solver::{gradient, lmo_fdiv_ball, objective, u_stat, u_stat_report, SimplexPoint, SolveReport, SolverConfig, StatVariant, StepRule};
