//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::algorithms::{
    run, AlgorithmSpec, ClientSchedule, CompressionPlan, Preset, RunConfig, StepPolicy, Trace,
};
use crate::error::{Error, Result};
use crate::harness::{
    bound_for_trace, check_lower_bound, dissimilarity_estimate, recipe, reference_minimum,
    run_experiment, verify_bound, ExperimentConfig, ProblemSource, RECIPE_NAMES,
};
use crate::objectives::{read_problem, write_problem, FederationProblem};
use crate::oracle::{surrogate_fednova, surrogate_fedprox, TheoremId};

const AFTER_HELP: &str = "\
exit status: 0 success, 1 check or verification failure, 2 usage or input error

problems: two-client-scalar, fedsplit, or a path written by `gen`";

#[derive(Debug, Parser)]
#[command(
    name = "fedlin",
    version,
    about = "Federated optimization runs, oracles and bound checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a problem and write it as JSON.
    Gen(GenArgs),
    /// Run one algorithm and write its trace.
    #[command(after_help = Preset::HELP)]
    Run(RunArgs),
    /// Run an experiment matrix from a JSON config.
    Compare(CompareArgs),
    /// Surrogate minimizer that FedProx or FedNova converges to.
    Surrogate(SurrogateArgs),
    /// Two-client lower-bound instance and its exp(-4T) check.
    Lowerbound(LowerboundArgs),
    /// Check a trace against a theorem's rate bound.
    #[command(after_help = Preset::HELP)]
    Verify(VerifyArgs),
    /// Run a pinned figure recipe.
    Repro(ReproArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenKind {
    LeastSquares,
    Logistic,
    RandomSpd,
    TwoClientScalar,
    Fedsplit,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 20)]
    pub clients: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Heterogeneity level.
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5f64.sqrt())]
    pub noise_std: f64,
    /// Strong convexity of random-spd (and of fedsplit's easy directions).
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Smoothness of random-spd and fedsplit.
    #[arg(long, default_value_t = 10.0)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Algo {
    Fedlin,
    Fedavg,
    Fedprox,
    Fednova,
    Fedsplit,
    CentralizedGd,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    /// Same number of local steps on every client.
    #[arg(long, conflicts_with_all = ["taus", "tau_range"])]
    pub h: Option<usize>,
    /// Comma-separated local steps per client.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<usize>>,
    /// Draw each client's local steps from LO,HI using --seed.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub tau_range: Option<Vec<usize>>,
    /// Constant step on every client.
    #[arg(long, conflicts_with_all = ["eta_bar", "preset"])]
    pub eta: Option<f64>,
    /// Client i steps with eta_bar / tau_i.
    #[arg(long, conflicts_with = "preset")]
    pub eta_bar: Option<f64>,
    /// Step-size preset, see below.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Server broadcast TOP-k (FedLin).
    #[arg(long)]
    pub server_k: Option<usize>,
    /// Client upload TOP-k (FedLin).
    #[arg(long)]
    pub client_k: Option<usize>,
    /// Send C(grad f) from the server without error feedback.
    #[arg(long)]
    pub no_server_ef: bool,
    /// FedSplit prox parameter; defaults to 1/sqrt(L mu).
    #[arg(long)]
    pub prox_s: Option<f64>,
    /// FedSplit inner gradient steps.
    #[arg(long, default_value_t = 1)]
    pub e_steps: usize,
    /// Report gaps against a centralized GD run when x* is unknown.
    #[arg(long)]
    pub reference: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV trace; a JSON sidecar is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SurrogateAlgo {
    Fedprox,
    Fednova,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    #[arg(long, default_value = "two-client-scalar")]
    pub problem: String,
    #[arg(long, value_enum)]
    pub algo: SurrogateAlgo,
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Local steps for FedProx.
    #[arg(long, default_value_t = 2)]
    pub h: usize,
    /// Comma-separated local steps for FedNova.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<usize>>,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct LowerboundArgs {
    #[arg(long = "smoothness", default_value_t = 14.0)]
    pub l: f64,
    #[arg(long)]
    pub h: usize,
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// T1, P3, T3, T4a, T4b, T5, T6, T7 or T8.
    #[arg(long)]
    pub theorem: String,
    /// Problem file; T8 needs it to estimate the dissimilarity constant D.
    #[arg(long)]
    pub problem: Option<String>,
    /// Write the per-round report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// One of fig1-left, fig1-right, fig2, fig3, appendix-h-server,
    /// appendix-h-client, fedsplit-appendix-g.
    pub figure: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Loads a named built-in problem or a problem file.
pub fn load_problem(spec: &str) -> Result<FederationProblem> {
    match spec {
        "two-client-scalar" => ProblemSource::TwoClientScalar.build(0),
        "fedsplit" => ProblemSource::FedsplitInstance { l: 1000.0, mu: 1.0 }.build(0),
        path => read_problem(Path::new(path)),
    }
}

fn gen(args: &GenArgs) -> Result<()> {
    let source = match args.kind {
        GenKind::LeastSquares => ProblemSource::LeastSquares {
            m: args.clients,
            n_i: args.samples,
            d: args.dim,
            alpha: args.alpha,
            noise_std: args.noise_std,
        },
        GenKind::Logistic => ProblemSource::Logistic {
            m: args.clients,
            n_i: args.samples,
            d: args.dim,
            alpha: args.alpha,
            noise_std: args.noise_std,
        },
        GenKind::RandomSpd => ProblemSource::RandomSpd {
            m: args.clients,
            d: args.dim,
            mu: args.mu,
            l: args.smoothness,
            center_std: 1.0,
        },
        GenKind::TwoClientScalar => ProblemSource::TwoClientScalar,
        GenKind::Fedsplit => ProblemSource::FedsplitInstance {
            l: args.smoothness,
            mu: args.mu,
        },
    };
    let problem = source.build(args.seed)?;
    write_problem(&problem, &args.out)?;
    println!(
        "wrote {} (m={}, d={}, L={}, mu={})",
        args.out.display(),
        problem.num_clients(),
        problem.dim(),
        problem.smoothness(),
        problem.strong_convexity()
    );
    Ok(())
}

fn run_config(args: &RunArgs, problem: &FederationProblem) -> Result<RunConfig> {
    let d = problem.dim();
    let schedule = match (&args.h, &args.taus, &args.tau_range) {
        (_, Some(taus), _) => ClientSchedule::PerClient { taus: taus.clone() },
        (_, _, Some(range)) => ClientSchedule::SeededUniformRange {
            lo: range[0],
            hi: range[1],
            seed: args.seed,
            per_round: false,
        },
        (Some(h), _, _) => ClientSchedule::Uniform { h: *h },
        _ => ClientSchedule::Uniform { h: 1 },
    };
    let steps = match (args.eta, args.eta_bar, &args.preset) {
        (Some(eta), _, _) => StepPolicy::Uniform { eta },
        (_, Some(eta_bar), _) => StepPolicy::InverseTau { eta_bar },
        (_, _, Some(name)) => StepPolicy::Preset {
            preset: Preset::parse(name)?,
        },
        _ => {
            return Err(Error::InvalidConfig(
                "give one of --eta, --eta-bar or --preset".into(),
            ))
        }
    };
    let compressed = args.server_k.is_some() || args.client_k.is_some() || args.no_server_ef;
    if compressed && !matches!(args.algo, Algo::Fedlin) {
        return Err(Error::InvalidConfig(
            "compression flags apply to fedlin only".into(),
        ));
    }
    let algorithm = match args.algo {
        Algo::Fedlin => AlgorithmSpec::FedLin {
            plan: CompressionPlan {
                server: crate::compression::SparsityLevel::new(args.server_k.unwrap_or(d), d)?,
                client: crate::compression::SparsityLevel::new(args.client_k.unwrap_or(d), d)?,
                server_error_feedback: !args.no_server_ef,
            },
        },
        Algo::Fedavg => AlgorithmSpec::FedAvg,
        Algo::Fedprox => AlgorithmSpec::FedProx { beta: args.beta },
        Algo::Fednova => AlgorithmSpec::FedNova,
        Algo::Fedsplit => {
            let (l, mu) = (problem.smoothness(), problem.strong_convexity());
            let s = match args.prox_s {
                Some(s) => s,
                None if mu > 0.0 => 1.0 / (l * mu).sqrt(),
                None => {
                    return Err(Error::InvalidConfig(
                        "--prox-s is required when mu = 0".into(),
                    ))
                }
            };
            let alpha = match &steps {
                StepPolicy::Uniform { eta } => *eta,
                _ => 2.0 / (l + mu + 2.0 / s),
            };
            AlgorithmSpec::FedSplit {
                s,
                alpha,
                e_steps: args.e_steps,
            }
        }
        Algo::CentralizedGd => AlgorithmSpec::CentralizedGd,
    };
    Ok(RunConfig {
        algorithm,
        schedule,
        steps,
        rounds: args.rounds,
        initial: None,
    })
}

fn run_one(args: &RunArgs) -> Result<()> {
    let problem = load_problem(&args.problem)?;
    let config = run_config(args, &problem)?;
    if let AlgorithmSpec::FedLin { plan } = &config.algorithm {
        println!(
            "delta_s = {}, delta_c = {}",
            plan.server.delta(),
            plan.client.delta()
        );
    }
    let mut trace = run(&config, &problem)?;
    if args.reference && problem.x_star().is_none() && problem.f_star().is_none() {
        trace.apply_reference(reference_minimum(&problem, 10 * args.rounds)?)?;
    }
    trace.write(&args.out)?;
    let last = trace.last();
    println!(
        "{} rounds, diverged={}, final f_gap={:e}, dist_sq={}",
        trace.rows.len() - 1,
        trace.diverged(),
        last.f_gap,
        last.dist_sq.map_or("n/a".to_string(), |d| format!("{d:e}"))
    );
    Ok(())
}

fn report_experiment(
    cfg: ExperimentConfig,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<bool> {
    let mut cfg = match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    if out.is_some() {
        cfg.output_dir = out;
    }
    let exp = run_experiment(&cfg)?;
    for e in &exp.summary.entries {
        println!(
            "{:<24} rounds={:<6} diverged={:<5} final_gap={}",
            e.label,
            e.rounds_run,
            e.diverged,
            e.final_f_gap
                .map_or("n/a".to_string(), |g| format!("{g:e}"))
        );
    }
    for c in &exp.summary.checks {
        let verdict = match (c.passed, c.advisory) {
            (true, _) => "PASS",
            (false, true) => "WARN",
            (false, false) => "FAIL",
        };
        println!("{verdict} {} ({})", c.description, c.detail);
    }
    if let Some(dir) = &cfg.output_dir {
        println!(
            "wrote {} traces and summary.json to {}",
            exp.traces.len(),
            dir.display()
        );
    }
    Ok(exp.summary.passed)
}

fn surrogate(args: &SurrogateArgs) -> Result<()> {
    let problem = load_problem(&args.problem)?;
    let (solution, name) = match args.algo {
        SurrogateAlgo::Fedprox => (
            surrogate_fedprox(&problem, args.eta, args.beta, args.h)?,
            "fedprox",
        ),
        SurrogateAlgo::Fednova => {
            let taus = args
                .taus
                .clone()
                .ok_or_else(|| Error::InvalidConfig("fednova needs --taus".into()))?;
            (surrogate_fednova(&problem, args.eta, &taus)?, "fednova")
        }
    };
    if args.json {
        let x_star = problem.x_star().ok_or(Error::MissingConstant("x*"))?;
        println!(
            "{}",
            serde_json::to_string_pretty(&solution.report(name, args.eta, x_star))?
        );
    } else {
        let x: Vec<String> = solution
            .surrogate_minimizer
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        println!("surrogate minimizer: [{}]", x.join(", "));
        println!("distortion: {:.6}", solution.distortion);
    }
    Ok(())
}

fn lowerbound(args: &LowerboundArgs) -> Result<bool> {
    let check = check_lower_bound(args.l, args.h, args.eta, args.rounds)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&check)?);
    } else {
        let inst = &check.instance;
        println!(
            "lambda1 = {:.9}, lambda2 = {:.9}, schur stable: {}",
            inst.lambda1, inst.lambda2, inst.schur_stable
        );
        for r in &check.rounds {
            println!(
                "T={:<3} dist ratio {:e}  gap ratio {:e}  exp(-4T) {:e}  {}",
                r.t,
                r.dist_ratio,
                r.gap_ratio,
                r.floor,
                if r.passed { "ok" } else { "BELOW" }
            );
        }
    }
    Ok(check.passed)
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let trace = Trace::read(&args.trace)?;
    let theorem = TheoremId::parse(&args.theorem)?;
    let dissimilarity = match trace.meta.config.steps.preset() {
        Some(Preset::Thm8 { c }) if theorem == TheoremId::T8 => {
            let spec = args
                .problem
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("T8 needs --problem to estimate D".into()))?;
            Some(dissimilarity_estimate(&load_problem(spec)?, c, args.seed)?)
        }
        _ => None,
    };
    let bound = bound_for_trace(&trace, theorem, dissimilarity)?;
    let report = verify_bound(&trace, &bound)?;
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!(
        "{} {}: {} of {} horizons violate the bound{}",
        if report.passed { "PASS" } else { "FAIL" },
        theorem.name(),
        report.failures,
        report.rounds.len(),
        report
            .first_failure
            .map_or(String::new(), |t| format!(" (first at T={t})"))
    );
    Ok(report.passed)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(args) => gen(&args).map(|_| true),
        Command::Run(args) => run_one(&args).map(|_| true),
        Command::Compare(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            report_experiment(ExperimentConfig::from_json(&text)?, args.out, args.seed)
        }
        Command::Surrogate(args) => surrogate(&args).map(|_| true),
        Command::Lowerbound(args) => lowerbound(&args),
        Command::Verify(args) => verify(&args),
        Command::Repro(args) => {
            let cfg = recipe(&args.figure).map_err(|_| {
                Error::InvalidConfig(format!(
                    "unknown figure {:?}; choose one of {}",
                    args.figure,
                    RECIPE_NAMES.join(", ")
                ))
            })?;
            report_experiment(cfg, Some(args.out), args.seed)
        }
    }
}

/// Parses `argv`, runs the subcommand and maps the outcome to an exit code.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let command = Cli::command().after_help(format!("{AFTER_HELP}\n\n{}", Preset::HELP));
    let parsed = command
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::NoConvergence(t)) => {
            eprintln!("error: no convergence within {t} rounds");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
