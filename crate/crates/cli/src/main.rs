//! `ogp`: threshold scans, Gaussian box probabilities, solvers and
//! Monte-Carlo experiments for the binary perceptron.
//!
//! Exit codes: 0 success, 2 negative result (empty negativity set, no
//! solution found), 64 usage, 65 invalid parameter or domain, 66 exhaustive
//! cap exceeded, 1 anything else.

mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use ogp_core::disorder::{DisorderMatrix, Distribution, InterpolatedEnsemble};
use ogp_core::experiments::{self, CensusMode, TrajectorySolver};
use ogp_core::landscape::{self, is_solution, sup_norm, TupleCountRow, TupleQuery, Variant};
use ogp_core::mvn::{self, BoxBudget, CovarianceSpec};
use ogp_core::ogp::{self, Threshold};
use ogp_core::report::file_stem;
use ogp_core::solvers::{self, KimRocheConfig, KimRocheSchedule, OnlineStrategy};
use ogp_core::{Disorder, Error};
use serde::Serialize;
use serde_json::json;

use output::{Format, RunConfig, Sink};

const EXIT_NEGATIVE: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DOMAIN: u8 = 65;
const EXIT_CAP: u8 = 66;

#[derive(Debug, Parser)]
#[command(name = "ogp", version, about = "Overlap-gap tools for the symmetric binary perceptron")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, env = "OGP_OUT_DIR", default_value = "ogp-out")]
    out_dir: PathBuf,
    /// Format of per-row output files.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan f1, f2 or f3 over a grid and report where it is certifiably
    /// negative. CSV columns: abscissa, value, counting_part,
    /// probability_part, prob_error. Exits 2 when no grid point is negative.
    Thresholds(ThresholdArgs),
    /// Evaluate a Gaussian probability kernel and print it as JSON.
    Mvn(MvnArgs),
    /// Run a solver on a sampled (or loaded) instance; writes a JSON report.
    Solve(SolveArgs),
    /// Monte-Carlo experiments and tables.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Which {
    F1,
    F2,
    F3,
}

impl From<Which> for Threshold {
    fn from(w: Which) -> Self {
        match w {
            Which::F1 => Threshold::F1,
            Which::F2 => Threshold::F2,
            Which::F3 => Threshold::F3,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ThresholdArgs {
    #[arg(long, value_enum)]
    which: Which,
    #[arg(long)]
    alpha: f64,
    /// Grid start (default: 1e-5 for f1, 0.9 otherwise).
    #[arg(long)]
    lo: Option<f64>,
    /// Grid end (default: 0.1 for f1, 0.999 otherwise).
    #[arg(long)]
    hi: Option<f64>,
    /// Grid step (default: 1e-4 for f1, 1e-3 otherwise).
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[group(skip)]
#[command(group(ArgGroup::new("kernel").required(true).args(["quadrant", "box_", "conditional_mean", "cdf"])))]
struct MvnArgs {
    /// P(Z1 >= 0, Z2 >= 0) at correlation --rho.
    #[arg(long)]
    quadrant: bool,
    /// P(|Z_i| <= kappa for all i) for m unit-variance coordinates with
    /// pairwise correlation --beta (perturbed by --eta when given).
    #[arg(long = "box")]
    box_: bool,
    /// E[Z1 | Z2 >= 0] at correlation --rho.
    #[arg(long)]
    conditional_mean: bool,
    /// Standard normal CDF at --x.
    #[arg(long)]
    cdf: bool,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Shift every off-diagonal entry by +eta (general covariance path).
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    /// Use a Monte-Carlo estimate with this many samples.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Algo {
    KimRoche,
    Majority,
    Online,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Strategy {
    Greedy,
    Exp,
}

impl From<Strategy> for OnlineStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Greedy => OnlineStrategy::GreedyMinimax,
            Strategy::Exp => OnlineStrategy::ExpPotential,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Law {
    Gaussian,
    Rademacher,
}

impl From<Law> for Distribution {
    fn from(l: Law) -> Self {
        match l {
            Law::Gaussian => Distribution::Gaussian,
            Law::Rademacher => Distribution::Rademacher,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ProblemVariant {
    Symmetric,
    Asymmetric,
}

impl From<ProblemVariant> for Variant {
    fn from(v: ProblemVariant) -> Self {
        match v {
            ProblemVariant::Symmetric => Variant::Symmetric,
            ProblemVariant::Asymmetric => Variant::Asymmetric,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct KimRocheArgs {
    /// `C` in the round count `ceil(C log10 log10 n)`.
    #[arg(long, default_value_t = 4.0)]
    c_rounds: f64,
    /// `d1` in the first-round row count `2 floor(n / (2 d1)) + 1`.
    #[arg(long, default_value_t = 1e3)]
    d1: f64,
    /// Exponent of `f_s` in later row counts.
    #[arg(long, default_value_t = 3.0)]
    k_exponent: f64,
    /// Fix the nominal number of rounds.
    #[arg(long)]
    rounds: Option<usize>,
}

impl KimRocheArgs {
    fn config(&self) -> KimRocheConfig {
        KimRocheConfig { c_rounds: self.c_rounds, d1: self.d1, k_exponent: self.k_exponent, rounds: self.rounds }
    }
}

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = Strategy::Greedy)]
    strategy: Strategy,
    #[arg(long, value_enum, default_value_t = Law::Gaussian)]
    dist: Law,
    #[arg(long, value_enum, default_value_t = ProblemVariant::Symmetric)]
    variant: ProblemVariant,
    /// Load the disorder matrix from a binary file instead of sampling it.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Largest n the exhaustive solver accepts.
    #[arg(long, default_value_t = landscape::DEFAULT_SOLUTION_CAP)]
    n_cap: usize,
    #[command(flatten)]
    kim_roche: KimRocheArgs,
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Hamming distance between majority outputs on (M, M(tau)) against
    /// Bin(n, tau/pi). CSV columns: trial, d_h, fraction.
    MajorityStability(MajorityArgs),
    /// Round-by-round agreement of the multi-stage majority solver on
    /// (M, M(tau)). CSV columns: trial, round, k_j, disagreements,
    /// index_agreement.
    KimRocheStability(KimRocheStabilityArgs),
    /// Pairwise overlaps of solver outputs along interpolation paths. CSV
    /// columns: i, j, k, tau, overlap.
    OverlapTrajectory(TrajectoryArgs),
    /// Whether a close pair of solutions exists for (M, M_delta). CSV
    /// columns: trial, nonempty, prefix_agrees.
    OnlineCensus(CensusArgs),
    /// Gaussian-versus-alternative probability of a fixed sign-vector tuple
    /// staying in the box. CSV columns: n, p_reference, p_alternative, gap,
    /// std_error, ci_lo, ci_hi.
    Universality(UniversalityArgs),
    /// Exhaustive count of overlap-constrained feasible tuples. CSV columns:
    /// n, m, beta, eta, kappa, tau_set_id, count, seconds.
    TupleCount(TupleCountArgs),
    /// Smallest density with negative first-moment exponent across a C grid.
    /// CSV columns: c, delta, beta, entropy, entropy_kappa_term,
    /// entropy_c_term, alpha_floor, alpha_c_term, alpha_pi_term, floor_ratio.
    Necessity(NecessityArgs),
    /// Search (m, c) with a negative free-energy bound. JSON only.
    FreeEnergy(FreeEnergyArgs),
    /// Constants of the stable-algorithm hardness statement. JSON only.
    StableHardness(StableHardnessArgs),
}

#[derive(Debug, Args, Serialize)]
struct MajorityArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
}

#[derive(Debug, Args, Serialize)]
struct KimRocheStabilityArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Interpolation angle (default: n^-0.02).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Final d_H/n cut-off for the reported fraction.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[command(flatten)]
    kim_roche: KimRocheArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SolverTag {
    Majority,
    KimRoche,
    OnlineGreedy,
    OnlineExp,
}

impl From<SolverTag> for TrajectorySolver {
    fn from(s: SolverTag) -> Self {
        match s {
            SolverTag::Majority => TrajectorySolver::Majority,
            SolverTag::KimRoche => TrajectorySolver::KimRoche,
            SolverTag::OnlineGreedy => TrajectorySolver::OnlineGreedy,
            SolverTag::OnlineExp => TrajectorySolver::OnlineExp,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrajectoryArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = SolverTag::Majority)]
    solver: SolverTag,
    /// Number of replicas.
    #[arg(long = "T", default_value_t = 4)]
    t: usize,
    /// Number of interpolation steps.
    #[arg(long = "Q", default_value_t = 10)]
    q: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum CensusTag {
    Exhaustive,
    Greedy,
    Exp,
}

#[derive(Debug, Args, Serialize)]
struct CensusArgs {
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = CensusTag::Exhaustive)]
    mode: CensusTag,
    /// Largest n the exhaustive census accepts.
    #[arg(long, default_value_t = 14)]
    n_cap: usize,
}

#[derive(Debug, Args, Serialize)]
struct UniversalityArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 400, 1600])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 0.6745)]
    kappa: f64,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = Law::Rademacher)]
    alternative: Law,
}

#[derive(Debug, Args, Serialize)]
struct TupleCountArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 10, 12])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Interpolation angles whose solution sets are pooled.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0])]
    tau_set: Vec<f64>,
    /// Largest n accepted (default: 14 for m <= 3, 12 otherwise).
    #[arg(long)]
    n_cap: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct NecessityArgs {
    #[arg(long, default_value_t = 0.01)]
    kappa: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0])]
    c_grid: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
struct FreeEnergyArgs {
    #[arg(long, default_value_t = 0.01)]
    kappa: f64,
    /// Default: 1 - 4 kappa^2.
    #[arg(long)]
    beta: Option<f64>,
    /// Default: 10 kappa^2 log2(1/kappa).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1 << 40)]
    max_m: usize,
}

#[derive(Debug, Args, Serialize)]
struct StableHardnessArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    alpha: f64,
    /// Stability constant L.
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long)]
    m: usize,
}

/// Missing or inconsistent flags that clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn need<T>(v: Option<T>, flag: &str, kernel: &str) -> Result<T> {
    v.ok_or_else(|| Usage(format!("--{kernel} requires --{flag}")).into())
}

/// The outcome of a command that ran to completion.
enum Outcome {
    Done,
    Negative,
}

struct Ctx<'a> {
    seed: u64,
    out_dir: &'a Path,
    format: Format,
    threads: Option<usize>,
}

impl Ctx<'_> {
    fn sink<P: Serialize>(&self, command: &str, stem: String, params: &P) -> Result<Sink> {
        let sink = Sink { dir: self.out_dir.to_path_buf(), stem, format: self.format };
        sink.config(&RunConfig {
            command,
            params,
            seed: self.seed,
            out_dir: self.out_dir,
            format: self.format,
            threads: self.threads,
            version: env!("CARGO_PKG_VERSION"),
        })?;
        Ok(sink)
    }
}

/// Prints to stdout; a closed pipe (`ogp ... | head`) is not an error.
fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_thresholds(ctx: &Ctx, a: &ThresholdArgs) -> Result<Outcome> {
    let which = Threshold::from(a.which);
    let (glo, ghi, gstep) = which.default_grid();
    let (lo, hi, step) = (a.lo.unwrap_or(glo), a.hi.unwrap_or(ghi), a.step.unwrap_or(gstep));
    let scan = ogp::scan_negativity(which, a.alpha, lo, hi, step)?;
    let stem = format!("thresholds-{}_alpha{}_seed{}", which.name(), a.alpha, ctx.seed);
    let sink = ctx.sink("thresholds", stem, a)?;
    match ctx.format {
        Format::Csv => {
            let p = ogp_core::report::output_path(&sink.dir, &sink.stem, "csv")?;
            scan.write_csv(std::fs::File::create(&p)?)?;
        }
        Format::Json => {
            sink.rows(&scan.points)?;
        }
    }
    let at = scan.grid.iter().position(|&x| x == scan.argmin).expect("argmin is a grid point");
    let mut summary = scan.summary();
    summary["probability_at_argmin"] = json!(scan.points[at].probability);
    summary["prob_error_at_argmin"] = json!(scan.points[at].prob_error);
    summary["negative"] = json!(!scan.negative_set.is_empty());
    summary["grid"] = json!({ "lo": lo, "hi": hi, "step": step });
    sink.summary(&summary)?;
    print_json(&summary)?;
    Ok(if scan.negative_set.is_empty() { Outcome::Negative } else { Outcome::Done })
}

fn cmd_mvn(a: &MvnArgs) -> Result<Outcome> {
    let out = if a.quadrant {
        let rho = need(a.rho, "rho", "quadrant")?;
        json!({ "kernel": "quadrant", "rho": rho, "value": mvn::quadrant_probability(rho)?, "abs_error_estimate": 0.0 })
    } else if a.conditional_mean {
        let rho = need(a.rho, "rho", "conditional-mean")?;
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::OutOfRange { name: "rho", value: rho, range: "[-1, 1]" }.into());
        }
        json!({ "kernel": "conditional_mean", "rho": rho, "value": mvn::conditional_mean(rho), "abs_error_estimate": 0.0 })
    } else if a.cdf {
        let x = need(a.x, "x", "cdf")?;
        json!({ "kernel": "cdf", "x": x, "value": mvn::std_normal_cdf(x), "abs_error_estimate": 0.0 })
    } else {
        let m = need(a.m, "m", "box")?;
        let beta = need(a.beta, "beta", "box")?;
        let kappa = need(a.kappa, "kappa", "box")?;
        let r = match (a.eta, a.mc_samples) {
            (None, None) => mvn::box_probability_equicorrelated(m, beta, kappa)?,
            (eta, samples) => {
                let cov = CovarianceSpec::uniform_shift(m, beta, eta.unwrap_or(0.0))?;
                match samples {
                    Some(s) => mvn::box_probability_monte_carlo(&cov, kappa, s, 0)?,
                    None => mvn::box_probability_general(&cov, kappa, BoxBudget::default())?,
                }
            }
        };
        json!({ "kernel": "box", "m": m, "beta": beta, "kappa": kappa, "eta": a.eta,
                "value": r.value, "abs_error_estimate": r.abs_error_estimate, "method": r.method })
    };
    print_json(&out)?;
    Ok(Outcome::Done)
}

fn cmd_solve(ctx: &Ctx, a: &SolveArgs) -> Result<Outcome> {
    let m: Disorder = match &a.matrix {
        Some(p) => DisorderMatrix::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => DisorderMatrix::sample(a.n, a.alpha, a.dist.into(), ctx.seed)?,
    };
    if m.cols() != a.n {
        return Err(Error::ShapeMismatch { expected: format!("{} columns", a.n), got: format!("{} columns", m.cols()) }.into());
    }
    let variant = Variant::from(a.variant);
    let mut report = json!({ "algo": a.algo, "n": m.cols(), "rows": m.rows(), "kappa": a.kappa });
    let sigma = match a.algo {
        Algo::KimRoche => {
            let schedule = KimRocheSchedule::new(a.n, a.kim_roche.config())?;
            let run = solvers::kim_roche_solve(&m, &schedule)?;
            report["schedule"] = serde_json::to_value(&schedule)?;
            report["trace"] = run.trace_json();
            run.sigma
        }
        Algo::Majority => {
            let (sigma, ties) = solvers::majority_solve_counted(&m);
            report["ties"] = json!(ties);
            sigma
        }
        Algo::Online => {
            let run = solvers::online_solve(&m, a.kappa, a.strategy.into())?;
            report["strategy"] = json!(a.strategy);
            report["final_max_abs_partial"] = json!(run.max_abs_partial.last());
            run.sigma
        }
        Algo::Exhaustive => match solvers::exhaustive_solve(&m, a.kappa, variant, a.n_cap)? {
            Some(s) => s,
            None => {
                report["found"] = json!(false);
                let sink = ctx.sink("solve", file_stem("solve-exhaustive", a.n, a.alpha, a.kappa, ctx.seed), a)?;
                sink.summary(&report)?;
                print_json(&report)?;
                return Ok(Outcome::Negative);
            }
        },
    };
    let image = sigma.image(&m)?;
    let scale = (a.n as f64).sqrt();
    report["found"] = json!(true);
    report["sigma"] = json!(sigma.to_string());
    report["feasible"] = json!(is_solution(&m, &sigma, a.kappa, variant)?);
    report["sup_norm_over_sqrt_n"] = json!(sup_norm(&m, &sigma)? / scale);
    report["min_over_sqrt_n"] = json!(image.iter().copied().fold(f64::INFINITY, f64::min) / scale);
    report["negative_rows"] = json!(image.iter().filter(|&&y| y < 0.0).count());
    let name = format!("solve-{}", serde_json::to_value(a.algo)?.as_str().unwrap_or("algo"));
    let sink = ctx.sink("solve", file_stem(&name, a.n, a.alpha, a.kappa, ctx.seed), a)?;
    sink.summary(&report)?;
    print_json(&report)?;
    Ok(Outcome::Done)
}

fn cmd_experiment(ctx: &Ctx, e: &Experiment) -> Result<Outcome> {
    let seed = ctx.seed;
    match e {
        Experiment::MajorityStability(a) => {
            let r = experiments::majority_stability_trial(a.n, a.k, a.tau, a.trials, seed)?;
            let stem = format!("majority-stability_n{}_k{}_tau{}_seed{seed}", a.n, a.k, a.tau);
            let sink = ctx.sink("experiment majority-stability", stem, a)?;
            sink.rows(&r.rows())?;
            let summary = json!({
                "n": r.n, "k": r.k, "tau": r.tau, "p": r.p,
                "mean": r.summary.mean, "std_error": r.summary.std_error, "variance": r.summary.variance,
                "expected_mean": r.expected_mean, "expected_variance": r.expected_variance,
                "z_mean": r.z_mean, "variance_ratio": r.variance_ratio, "trials": r.summary.trials,
                "within_3_std_errors": r.z_mean.abs() <= 3.0,
            });
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
        Experiment::KimRocheStability(a) => {
            let tau = a.tau.unwrap_or_else(|| (a.n as f64).powf(-0.02));
            let r = experiments::kim_roche_stability_trial(a.n, a.alpha, tau, a.kim_roche.config(), a.trials, seed, a.threshold)?;
            let sink = ctx.sink("experiment kim-roche-stability", file_stem("kim-roche-stability", a.n, a.alpha, 0.0, seed), a)?;
            sink.rows(&r.rows)?;
            let summary = json!({
                "n": r.n, "alpha": r.alpha, "tau": r.tau, "threshold": r.threshold,
                "schedule": r.schedule, "rounds": r.rounds,
                "median_final": r.median_final, "fraction_below": r.fraction_below,
                "mean_final": r.final_fraction.mean, "std_error_final": r.final_fraction.std_error,
            });
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
        Experiment::OverlapTrajectory(a) => {
            let tr = experiments::overlap_trajectory(a.n, a.alpha, a.kappa, a.solver.into(), a.t, a.q, seed)?;
            let sink = ctx.sink("experiment overlap-trajectory", file_stem("overlap-trajectory", a.n, a.alpha, a.kappa, seed), a)?;
            sink.rows(&tr.rows())?;
            let summary = json!({
                "n": a.n, "T": tr.t, "Q": tr.q, "solver": tr.solver, "tau_grid": tr.tau_grid,
                "mean_off_diagonal": (0..=tr.q).map(|k| tr.mean_off_diagonal(k)).collect::<Vec<_>>(),
                "max_increment": (0..tr.q).map(|k| tr.max_increment(k)).collect::<Vec<_>>(),
                "feasible_fraction": tr.feasible_fraction(),
            });
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
        Experiment::OnlineCensus(a) => {
            let mode = match a.mode {
                CensusTag::Exhaustive => CensusMode::Exhaustive { n_cap: a.n_cap },
                CensusTag::Greedy => CensusMode::Solver(OnlineStrategy::GreedyMinimax),
                CensusTag::Exp => CensusMode::Solver(OnlineStrategy::ExpPotential),
            };
            let r = experiments::online_failure_census(a.n, a.alpha, a.kappa, a.delta, a.trials, seed, mode)?;
            let sink = ctx.sink("experiment online-census", file_stem("online-census", a.n, a.alpha, a.kappa, seed), a)?;
            sink.rows(&r.rows())?;
            let summary = json!({
                "n": r.n, "alpha": r.alpha, "kappa": r.kappa, "delta": r.delta, "mode": r.mode,
                "trials": r.summary.trials, "successes": r.successes, "wilson_95": r.wilson,
                "prefix_violations": r.prefix_violations,
            });
            sink.summary(&summary)?;
            print_json(&summary)?;
            if r.prefix_violations > 0 {
                return Err(anyhow!("{} trials broke prefix agreement", r.prefix_violations));
            }
        }
        Experiment::Universality(a) => {
            let r = experiments::universality_gap(&a.n_list, a.kappa, a.m, a.beta, a.trials, seed, Distribution::Gaussian, a.alternative.into())?;
            let ns: Vec<String> = a.n_list.iter().map(|n| n.to_string()).collect();
            let stem = format!("universality_n{}_kappa{}_m{}_beta{}_seed{seed}", ns.join("-"), a.kappa, a.m, a.beta);
            let sink = ctx.sink("experiment universality", stem, a)?;
            sink.rows(&r.rows)?;
            let summary = json!({
                "kappa": r.kappa, "m": r.m, "beta": r.beta, "trials": r.trials,
                "alternative": r.alternative, "rows": r.rows, "slope": r.slope, "monotone": r.monotone,
                "consistent_with_inverse_sqrt": r.consistent_with_rate(-0.8, -0.2),
            });
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
        Experiment::TupleCount(a) => {
            let cap = a.n_cap.unwrap_or_else(|| landscape::default_tuple_cap(a.m));
            let query = TupleQuery::new(a.kappa, a.alpha, a.m, a.beta, a.eta, a.tau_set.clone())?;
            let tau_id: Vec<String> = a.tau_set.iter().map(|t| t.to_string()).collect();
            let tau_id = tau_id.join(";");
            let mut rows = Vec::new();
            let mut exact = Vec::new();
            for &n in &a.n_list {
                if n > cap {
                    return Err(Error::CapExceeded { n, cap }.into());
                }
                let start = Instant::now();
                let ens = InterpolatedEnsemble::sample(n, a.alpha, a.m, a.tau_set.clone(), seed)?;
                let count = landscape::count_forbidden_tuples(&query, &ens, cap)?;
                rows.push(TupleCountRow {
                    n,
                    m: a.m,
                    beta: a.beta,
                    eta: a.eta,
                    kappa: a.kappa,
                    tau_set_id: tau_id.clone(),
                    count: count.to_string(),
                    seconds: start.elapsed().as_secs_f64(),
                });
                let unconstrained = match landscape::count_overlap_tuples_exact(&query.band(n)?, a.m) {
                    Ok(c) => Some(c.to_string()),
                    Err(Error::Unsupported(_)) => None,
                    Err(e) => return Err(e.into()),
                };
                exact.push(json!({ "n": n, "forbidden": count.to_string(), "overlap_only": unconstrained }));
            }
            let max_n = a.n_list.iter().copied().max().unwrap_or(0);
            let sink = ctx.sink("experiment tuple-count", file_stem("tuple-count", max_n, a.alpha, a.kappa, seed), a)?;
            sink.rows(&rows)?;
            let summary = json!({ "m": a.m, "beta": a.beta, "eta": a.eta, "tau_set": a.tau_set, "counts": exact });
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
        Experiment::Necessity(a) => {
            let rows = ogp::necessity_scan(a.kappa, &a.c_grid)?;
            let sink = ctx.sink("experiment necessity", format!("necessity_kappa{}", a.kappa), a)?;
            sink.rows(&rows)?;
            let floor = 3.0 * a.kappa * a.kappa * (1.0 / a.kappa).log2();
            let summary = json!({
                "kappa": a.kappa,
                "min_alpha_floor": rows.iter().map(|r| r.alpha_floor).fold(f64::INFINITY, f64::min),
                "reference_floor": floor,
                "all_above_reference": rows.iter().all(|r| r.alpha_floor >= floor),
            });
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
        Experiment::FreeEnergy(a) => {
            let beta = a.beta.unwrap_or(1.0 - 4.0 * a.kappa * a.kappa);
            let alpha = a.alpha.unwrap_or(10.0 * a.kappa * a.kappa * (1.0 / a.kappa).log2());
            let ups = ogp::upsilon(beta, alpha, a.kappa)?;
            let witness = ogp::negative_free_energy_witness(beta, alpha, a.kappa, a.max_m)?;
            let sink = ctx.sink("experiment free-energy", format!("free-energy_alpha{alpha}_kappa{}", a.kappa), a)?;
            let summary = json!({ "kappa": a.kappa, "beta": beta, "alpha": alpha, "upsilon": ups, "witness": witness });
            sink.summary(&summary)?;
            print_json(&summary)?;
            if witness.is_none() {
                return Ok(Outcome::Negative);
            }
        }
        Experiment::StableHardness(a) => {
            let h = experiments::stable_hardness_parameters(a.eta, a.alpha, a.l, a.m)?;
            let sink = ctx.sink("experiment stable-hardness", format!("stable-hardness_eta{}_alpha{}_m{}", a.eta, a.alpha, a.m), a)?;
            let summary = serde_json::to_value(&h)?;
            sink.summary(&summary)?;
            print_json(&summary)?;
        }
    }
    Ok(Outcome::Done)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_cap() => EXIT_CAP,
        Some(e) if e.is_domain() => EXIT_DOMAIN,
        Some(Error::Sizing(_) | Error::ShapeMismatch { .. } | Error::Format(_)) => EXIT_DOMAIN,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let ctx = Ctx { seed: cli.seed, out_dir: &cli.out_dir, format: cli.format, threads: cli.threads };
    match &cli.command {
        Command::Thresholds(a) => cmd_thresholds(&ctx, a),
        Command::Mvn(a) => cmd_mvn(a),
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Experiment(e) => cmd_experiment(&ctx, e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Negative) => ExitCode::from(EXIT_NEGATIVE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
