//! Command-line front end for the `grasp` library.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grasp::experiments::{
    power_series, run_experiment, tau0_monte_carlo, write_rows_csv, ExperimentSpec, Theta1Rule, THETA0_SEED,
};
use grasp::io::{read_eval_csv, read_external_scores_csv, read_pool_csv, read_theta};
use grasp::scores::DatasetScoreFn;
use grasp::{
    ci_lower, grasp_counts_df, grasp_counts_modelx, grasp_counts_simple, grasp_test, perfect_fit_test, BinCounts,
    EvalSample, FDivergence, FeatureSampler, GraspError, ProbModel, RngStream, ScoreFn, SolverConfig, StatVariant,
    TestOutcome,
};
use serde::Serialize;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug, Serialize)]
#[command(name = "grasp", version, about = "Goodness-of-fit tests for binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Distribution-free tolerance test on held-out data.
    Test(TestArgs),
    /// Model-X tolerance test; counterfeit covariates come from a feature pool.
    ModelxTest(ModelxArgs),
    /// Randomization test of perfect fit with a regression-error score.
    PerfectFit(PerfectFitArgs),
    /// One-sided lower confidence bound on the tolerance.
    Ci(TestArgs),
    /// Size or power table from an experiment config.
    Simulate(SimulateArgs),
    /// Monte-Carlo estimate of the true tolerance in the logistic simulation.
    Tau0(Tau0Args),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum VariantArg {
    Finite,
    Asym,
    Both,
}

impl VariantArg {
    fn variants(self) -> Vec<StatVariant> {
        match self {
            VariantArg::Finite => vec![StatVariant::Finite],
            VariantArg::Asym => vec![StatVariant::Asym],
            VariantArg::Both => StatVariant::ALL.to_vec(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScoreArg {
    Identity,
    Agnostic,
    Residual,
    External,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug, Serialize)]
struct TestArgs {
    /// CSV with columns y, eta_hat and optional feature columns.
    #[arg(long)]
    input: PathBuf,
    /// kl, tv or hellinger.
    #[arg(long, default_value = "kl")]
    divergence: String,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Number of bins.
    #[arg(long = "L", default_value_t = 10)]
    #[serde(rename = "L")]
    l: usize,
    /// Randomizations per label. Without it the identity score bins w directly.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "identity")]
    score: ScoreArg,
    /// Coefficients of the linear predictor for the residual score.
    #[arg(long)]
    score_theta: Option<PathBuf>,
    /// CSV with columns sample, counterfeit, score for the external score.
    #[arg(long)]
    scores_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug, Serialize)]
struct ModelxArgs {
    #[command(flatten)]
    test: TestArgs,
    /// Unlabeled feature rows to draw counterfeit covariates from; an eta_hat
    /// column supplies the model at those rows.
    #[arg(long)]
    pool: PathBuf,
    /// Logistic model coefficients used for eta_hat at counterfeit covariates.
    #[arg(long)]
    theta: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PerfectFitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Number of counterfeit vectors.
    #[arg(long = "M", default_value_t = 200)]
    #[serde(rename = "M")]
    m: usize,
    /// Ridge penalty of the regression score.
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Experiment config (flat TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write (tau, power) series as JSON to this file.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug, Serialize)]
struct Tau0Args {
    /// Experiment config supplying d, sigma_theta, theta_seed and theta1_rule.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One divergence; all three when omitted.
    #[arg(long)]
    divergence: Option<String>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Solver(String),
}

impl From<GraspError> for CliError {
    fn from(e: GraspError) -> Self {
        match e {
            GraspError::Solver(_) | GraspError::Singular => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(input_err(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    arguments: &'a Command,
    result: T,
}

fn emit(bytes: &[u8], out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| input_err(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(bytes).map_err(|e| input_err(e.to_string())),
    }
}

fn json_report<T: Serialize>(cmd: &Command, name: &str, result: T) -> CliResult<Vec<u8>> {
    let report = Report { command: name, version: VERSION, arguments: cmd, result };
    let mut buf = serde_json::to_vec_pretty(&report).map_err(|e| input_err(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wr.serialize(r).map_err(|e| input_err(e.to_string()))?;
    }
    wr.into_inner().map_err(|e| input_err(e.to_string()))
}

fn write_result<T: Serialize>(cmd: &Command, name: &str, rows: &[T], output: &Output) -> CliResult<()> {
    let bytes = match output.format {
        Format::Json => json_report(cmd, name, rows)?,
        Format::Csv => csv_bytes(rows)?,
    };
    emit(&bytes, output.out.as_deref())
}

fn score_fn(a: &TestArgs, n: usize, m: usize, d: usize) -> CliResult<ScoreFn> {
    let score = match a.score {
        ScoreArg::Identity => ScoreFn::Identity,
        ScoreArg::Agnostic => ScoreFn::AgnosticModelX,
        ScoreArg::Residual => {
            let p = a.score_theta.as_ref().ok_or_else(|| input_err("--score residual needs --score-theta"))?;
            ScoreFn::LinearResidual(read_theta(p)?)
        }
        ScoreArg::External => {
            let p = a.scores_file.as_ref().ok_or_else(|| input_err("--score external needs --scores-file"))?;
            ScoreFn::External(Arc::new(read_external_scores_csv(p)?))
        }
    };
    score.validate(d, n, m)?;
    Ok(score)
}

fn check_shape(a: &TestArgs) -> CliResult<FDivergence> {
    check_alpha(a.alpha)?;
    if a.l < 2 {
        return Err(input_err("--L must be at least 2"));
    }
    if a.k == Some(0) {
        return Err(input_err("--K must be at least 1"));
    }
    if a.tau.is_nan() || a.tau < 0.0 {
        return Err(input_err("--tau must be nonnegative"));
    }
    Ok(a.divergence.parse()?)
}

fn load_samples(path: &Path) -> CliResult<Vec<EvalSample>> {
    let s = read_eval_csv(path)?;
    let d = s[0].x.len();
    if let Some(i) = s.iter().position(|r| r.x.len() != d) {
        return Err(input_err(format!("row {} has a different number of features", i + 2)));
    }
    Ok(s)
}

fn df_counts(a: &TestArgs, samples: &[EvalSample]) -> CliResult<BinCounts> {
    let rng = RngStream::new(a.seed);
    if a.score == ScoreArg::Identity && a.k.is_none() {
        return Ok(grasp_counts_simple(samples, a.l, &rng)?);
    }
    let k = a.k.unwrap_or(1);
    let score = score_fn(a, samples.len(), k * a.l - 1, samples[0].x.len())?;
    Ok(grasp_counts_df(samples, &score, a.l, k, &rng)?)
}

fn modelx_counts(a: &ModelxArgs, samples: &[EvalSample]) -> CliResult<BinCounts> {
    let t = &a.test;
    let (rows, eta_col) = read_pool_csv(&a.pool)?;
    let d = samples[0].x.len();
    if rows[0].len() != d {
        return Err(input_err(format!("pool has {} feature columns, input has {d}", rows[0].len())));
    }
    let n_pool = rows.len();
    let model = match (&a.theta, eta_col) {
        (Some(p), _) => ProbModel::LogisticLinear(read_theta(p)?),
        (None, Some(eta)) => ProbModel::ScoreColumn(eta),
        // the identity score never looks at eta_hat
        (None, None) if t.score == ScoreArg::Identity => ProbModel::ScoreColumn(vec![0.5; n_pool]),
        (None, None) => return Err(input_err("model-X needs --theta or an eta_hat column in the pool")),
    };
    if let ProbModel::LogisticLinear(theta) = &model {
        if theta.len() != d {
            return Err(GraspError::Dimension { expected: d, got: theta.len() }.into());
        }
    }
    let k = t.k.unwrap_or(1);
    let score = score_fn(t, samples.len(), k * t.l - 1, d)?;
    let px = FeatureSampler::pool(rows)?;
    Ok(grasp_counts_modelx(samples, &score, &model, &px, t.l, k, &RngStream::new(t.seed))?)
}

fn run_tests(a: &TestArgs, counts: &BinCounts, div: &FDivergence) -> CliResult<Vec<TestOutcome>> {
    let cfg = SolverConfig::default();
    a.variant
        .variants()
        .into_iter()
        .map(|v| {
            let mut o = grasp_test(counts, div, a.tau, a.alpha, v, &cfg)?;
            o.seed = Some(a.seed);
            Ok(o)
        })
        .collect()
}

#[derive(Serialize)]
struct CiRow {
    tau_lower: f64,
    alpha: f64,
    variant: StatVariant,
    divergence: String,
    #[serde(rename = "L")]
    l: usize,
    n: u64,
    seed: u64,
}

#[derive(Serialize)]
struct Tau0Row {
    divergence: String,
    tau0: f64,
    std_error: f64,
    samples: usize,
    theta0_norm: f64,
    theta1_rule: Theta1Rule,
}

fn run(cli: &Cli) -> CliResult<()> {
    let cmd = &cli.command;
    match cmd {
        Command::Test(a) => {
            let div = check_shape(a)?;
            let samples = load_samples(&a.input)?;
            let counts = df_counts(a, &samples)?;
            write_result(cmd, "test", &run_tests(a, &counts, &div)?, &a.output)
        }
        Command::ModelxTest(a) => {
            let div = check_shape(&a.test)?;
            let samples = load_samples(&a.test.input)?;
            let counts = modelx_counts(a, &samples)?;
            write_result(cmd, "modelx-test", &run_tests(&a.test, &counts, &div)?, &a.test.output)
        }
        Command::Ci(a) => {
            let div = check_shape(a)?;
            let samples = load_samples(&a.input)?;
            let counts = df_counts(a, &samples)?;
            let cfg = SolverConfig::default();
            let rows = a
                .variant
                .variants()
                .into_iter()
                .map(|v| {
                    let cb = ci_lower(v, &counts, a.alpha, &div, &cfg)?;
                    Ok(CiRow {
                        tau_lower: cb.tau_lower,
                        alpha: cb.alpha,
                        variant: cb.variant,
                        divergence: div.token().to_string(),
                        l: a.l,
                        n: counts.n,
                        seed: a.seed,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            write_result(cmd, "ci", &rows, &a.output)
        }
        Command::PerfectFit(a) => {
            check_alpha(a.alpha)?;
            if a.ridge.is_nan() || a.ridge < 0.0 {
                return Err(input_err("--ridge must be nonnegative"));
            }
            let samples = load_samples(&a.input)?;
            let dscore = DatasetScoreFn::LinearRegressionMse { ridge: a.ridge };
            let mut o = perfect_fit_test(&samples, a.m, &dscore, a.alpha, &RngStream::new(a.seed))?;
            o.seed = Some(a.seed);
            write_result(cmd, "perfect-fit", &[o], &a.output)
        }
        Command::Simulate(a) => {
            let text = fs::read_to_string(&a.config).map_err(|e| input_err(format!("{}: {e}", a.config.display())))?;
            let mut spec = ExperimentSpec::from_toml(&text)?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let rows = run_experiment(&spec, &SolverConfig::default())?;
            if let Some(p) = &a.plot_data {
                let series = serde_json::to_vec_pretty(&power_series(&rows)).map_err(|e| input_err(e.to_string()))?;
                emit(&series, Some(p))?;
            }
            let bytes = match a.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_rows_csv(&rows, &mut buf)?;
                    buf
                }
                Format::Json => json_report(cmd, "simulate", serde_json::json!({ "spec": spec, "rows": rows }))?,
            };
            emit(&bytes, a.out.as_deref())
        }
        Command::Tau0(a) => {
            let spec = match &a.config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
                    Some(ExperimentSpec::from_toml(&text)?)
                }
                None => None,
            };
            let (d, sigma, theta_seed, rule) = match &spec {
                Some(s) => (s.d, s.sigma_theta, s.theta_seed, s.theta1_rule),
                None => (200, 0.25, THETA0_SEED, Theta1Rule::Negated),
            };
            let divs: Vec<FDivergence> = match &a.divergence {
                Some(t) => vec![t.parse()?],
                None => vec![FDivergence::Kl, FDivergence::Tv, FDivergence::Hellinger],
            };
            if a.samples == 0 {
                return Err(input_err("--samples must be at least 1"));
            }
            let theta0 = grasp::experiments::draw_theta0(d, sigma, theta_seed);
            let theta1 = rule.apply(&theta0);
            let norm = theta0.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rng = RngStream::new(a.seed);
            let rows = divs
                .iter()
                .map(|div| {
                    let (tau0, se) = tau0_monte_carlo(&theta0, &theta1, div, a.samples, &rng)?;
                    Ok(Tau0Row {
                        divergence: div.token().to_string(),
                        tau0,
                        std_error: se,
                        samples: a.samples,
                        theta0_norm: norm,
                        theta1_rule: rule,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            write_result(cmd, "tau0", &rows, &a.output)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
