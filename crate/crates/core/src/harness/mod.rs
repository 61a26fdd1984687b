//! Experiment orchestration: problem construction, parallel runs, shape
//! checks on the resulting traces, and bound verification.

mod bounds;
mod recipes;

pub use bounds::{bound_for_trace, verify_bound, BoundReport, RoundCheck, BOUND_TOLERANCE};
pub use recipes::{recipe, recipe_text, RECIPE_NAMES};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    run, AlgorithmSpec, ClientSchedule, GapKind, Preset, ReferenceMinimum, RunConfig, Runner,
    StepPolicy, Trace,
};
use crate::error::{Error, Result};
use crate::floatfmt;
use crate::linalg::Vector;
use crate::objectives::{
    fedsplit_instance, read_problem, synth_least_squares, synth_logistic, two_client_scalar,
    FederationProblem, SynthConfig,
};
use crate::oracle::{estimate_dissimilarity, surrogate_fednova, surrogate_fedprox, TheoremId};

/// Distance-squared tolerance used for the round counts in summaries.
pub const SUMMARY_TOLERANCE: f64 = 1e-8;

/// How an experiment obtains its federation; seeds come from the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ProblemSource {
    TwoClientScalar,
    FedsplitInstance {
        l: f64,
        mu: f64,
    },
    LeastSquares {
        m: usize,
        n_i: usize,
        d: usize,
        alpha: f64,
        noise_std: f64,
    },
    Logistic {
        m: usize,
        n_i: usize,
        d: usize,
        alpha: f64,
        noise_std: f64,
    },
    RandomSpd {
        m: usize,
        d: usize,
        mu: f64,
        l: f64,
        center_std: f64,
    },
    File {
        path: PathBuf,
    },
}

impl ProblemSource {
    pub fn build(&self, seed: u64) -> Result<FederationProblem> {
        let synth = |m, n_i, d, alpha, noise_std| SynthConfig {
            m,
            n_i,
            d,
            alpha,
            noise_std,
            seed,
        };
        match *self {
            Self::TwoClientScalar => Ok(two_client_scalar()),
            Self::FedsplitInstance { l, mu } => fedsplit_instance(l, mu),
            Self::LeastSquares {
                m,
                n_i,
                d,
                alpha,
                noise_std,
            } => synth_least_squares(&synth(m, n_i, d, alpha, noise_std)),
            Self::Logistic {
                m,
                n_i,
                d,
                alpha,
                noise_std,
            } => synth_logistic(&synth(m, n_i, d, alpha, noise_std)),
            Self::RandomSpd {
                m,
                d,
                mu,
                l,
                center_std,
            } => crate::objectives::random_spd_quadratics(m, d, mu, l, center_std, seed),
            Self::File { ref path } => read_problem(path),
        }
    }

    fn key(&self) -> String {
        serde_json::to_string(self).expect("problem sources serialize")
    }
}

/// One algorithm run inside an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub label: String,
    #[serde(flatten)]
    pub algorithm: AlgorithmSpec,
    pub schedule: ClientSchedule,
    pub steps: StepPolicy,
    /// Overrides the experiment's problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSource>,
    /// Overrides the experiment's round count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    FinalGap,
    RoundsToDist { tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    /// Final `‖x̄ − x*‖²` at or below `tol`.
    Converges {
        label: String,
        tol: f64,
    },
    Diverges {
        label: String,
    },
    /// FedProx, FedAvg or FedNova ends within `tol` of its surrogate
    /// minimizer, and that minimizer is at least `tol` away from `x*`.
    Plateau {
        label: String,
        tol: f64,
    },
    FloorPositive {
        label: String,
    },
    Nondecreasing {
        labels: Vec<String>,
        #[serde(flatten)]
        metric: Metric,
    },
    /// `label` needs no more rounds than `reference` to reach `tol`.
    RoundsAtMost {
        label: String,
        reference: String,
        tol: f64,
    },
    Bound {
        label: String,
        theorem: TheoremId,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    #[serde(flatten)]
    pub check: Check,
    /// Reported but never fails the experiment.
    #[serde(default)]
    pub advisory: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub problem: ProblemSource,
    pub rounds: usize,
    pub seed: u64,
    pub entries: Vec<Entry>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_version() -> u32 {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidConfig(
                "an experiment needs at least one entry".into(),
            ));
        }
        if self.rounds == 0 || self.entries.iter().any(|e| e.rounds == Some(0)) {
            return Err(Error::InvalidConfig(
                "round counts must be at least 1".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.label.is_empty() || e.label.contains(['/', '\\']) {
                return Err(Error::InvalidConfig(format!(
                    "invalid entry label {:?}",
                    e.label
                )));
            }
            if !seen.insert(e.label.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate entry label {:?}",
                    e.label
                )));
            }
        }
        for spec in &self.checks {
            for label in spec.check.labels() {
                if !seen.contains(label) {
                    return Err(Error::InvalidConfig(format!(
                        "check refers to unknown entry {label:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Replaces the experiment seed and every seeded schedule's seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        for e in &mut self.entries {
            if let ClientSchedule::SeededUniformRange { seed: s, .. } = &mut e.schedule {
                *s = seed;
            }
        }
        self
    }

    fn entry_source<'a>(&'a self, entry: &'a Entry) -> &'a ProblemSource {
        entry.problem.as_ref().unwrap_or(&self.problem)
    }

    fn run_config(&self, entry: &Entry) -> RunConfig {
        RunConfig {
            algorithm: entry.algorithm.clone(),
            schedule: entry.schedule.clone(),
            steps: entry.steps.clone(),
            rounds: entry.rounds.unwrap_or(self.rounds),
            initial: entry.initial.clone(),
        }
    }
}

impl Check {
    fn labels(&self) -> Vec<&str> {
        match self {
            Self::Converges { label, .. }
            | Self::Diverges { label }
            | Self::Plateau { label, .. }
            | Self::FloorPositive { label }
            | Self::Bound { label, .. } => vec![label],
            Self::Nondecreasing { labels, .. } => labels.iter().map(String::as_str).collect(),
            Self::RoundsAtMost {
                label, reference, ..
            } => vec![label, reference],
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::Converges { label, tol } => format!("{label} converges to dist_sq <= {tol:e}"),
            Self::Diverges { label } => format!("{label} diverges"),
            Self::Plateau { label, tol } => {
                format!("{label} plateaus at its surrogate minimizer (tol {tol:e})")
            }
            Self::FloorPositive { label } => format!("{label} keeps a positive final gap"),
            Self::Nondecreasing { labels, metric } => {
                let what = match metric {
                    Metric::FinalGap => "final gap".to_string(),
                    Metric::RoundsToDist { tol } => format!("rounds to dist_sq <= {tol:e}"),
                };
                format!("{what} nondecreasing over {}", labels.join(", "))
            }
            Self::RoundsAtMost {
                label,
                reference,
                tol,
            } => {
                format!("{label} reaches dist_sq <= {tol:e} no later than {reference}")
            }
            Self::Bound { label, theorem } => {
                format!("{label} satisfies the {} bound", theorem.name())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub description: String,
    pub advisory: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntrySummary {
    pub label: String,
    pub algorithm: String,
    pub trace: String,
    pub rounds_run: usize,
    pub diverged: bool,
    pub gap_kind: GapKind,
    #[serde(serialize_with = "floatfmt::option::serialize")]
    pub final_f_gap: Option<f64>,
    #[serde(serialize_with = "floatfmt::option::serialize")]
    pub final_dist_sq: Option<f64>,
    pub rounds_to_tolerance: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub version: u32,
    pub seed: u64,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub tolerance: f64,
    pub entries: Vec<EntrySummary>,
    pub checks: Vec<CheckOutcome>,
    /// True iff every non-advisory check passed.
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub traces: Vec<Trace>,
    pub labels: Vec<String>,
    pub summary: ExperimentSummary,
}

impl Experiment {
    pub fn trace(&self, label: &str) -> Option<&Trace> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| &self.traces[i])
    }

    /// Writes `<label>.csv`, `<label>.json` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.traces
            .par_iter()
            .zip(&self.labels)
            .try_for_each(|(trace, label)| trace.write(&dir.join(format!("{label}.csv"))))?;
        let mut text = serde_json::to_string_pretty(&self.summary)?;
        text.push('\n');
        std::fs::write(dir.join("summary.json"), text)?;
        Ok(())
    }
}

/// Long centralized GD run (`H = 1`, `η = 1/L`) whose best value stands in for `f*`.
pub fn reference_minimum(problem: &FederationProblem, rounds: usize) -> Result<ReferenceMinimum> {
    let config = RunConfig {
        algorithm: AlgorithmSpec::CentralizedGd,
        schedule: ClientSchedule::Uniform { h: 1 },
        steps: StepPolicy::Uniform {
            eta: 1.0 / problem.smoothness(),
        },
        rounds,
        initial: None,
    };
    let trace = run(&config, problem)?;
    let value = trace
        .rows
        .iter()
        .map(|r| r.f_gap)
        .fold(f64::INFINITY, f64::min);
    Ok(ReferenceMinimum {
        value,
        method: "centralized_gd".into(),
        rounds,
    })
}

/// Runs every entry (in parallel), applies references, evaluates checks and
/// writes outputs when `output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let mut sources: BTreeMap<String, (&ProblemSource, usize)> = BTreeMap::new();
    for e in &cfg.entries {
        let src = cfg.entry_source(e);
        let rounds = e.rounds.unwrap_or(cfg.rounds);
        let slot = sources.entry(src.key()).or_insert((src, 0));
        slot.1 = slot.1.max(rounds);
    }
    let problems: BTreeMap<String, (FederationProblem, Option<ReferenceMinimum>)> = sources
        .into_par_iter()
        .map(|(key, (src, rounds))| {
            let problem = src.build(cfg.seed)?;
            let reference = if problem.x_star().is_none() && problem.f_star().is_none() {
                Some(reference_minimum(&problem, 10 * rounds)?)
            } else {
                None
            };
            Ok((key, (problem, reference)))
        })
        .collect::<Result<_>>()?;

    let traces: Vec<Trace> = cfg
        .entries
        .par_iter()
        .map(|e| {
            let (problem, reference) = &problems[&cfg.entry_source(e).key()];
            let mut trace = run(&cfg.run_config(e), problem)?;
            if let Some(r) = reference {
                trace.apply_reference(r.clone())?;
            }
            Ok(trace)
        })
        .collect::<Result<_>>()?;
    let labels: Vec<String> = cfg.entries.iter().map(|e| e.label.clone()).collect();

    let entries = cfg
        .entries
        .iter()
        .zip(&traces)
        .map(|(e, t)| EntrySummary {
            label: e.label.clone(),
            algorithm: e.algorithm.name().into(),
            trace: format!("{}.csv", e.label),
            rounds_run: t.rows.len() - 1,
            diverged: t.diverged(),
            gap_kind: t.meta.gap_kind,
            final_f_gap: (!t.diverged()).then(|| t.last().f_gap),
            final_dist_sq: if t.diverged() { None } else { t.last().dist_sq },
            rounds_to_tolerance: t.rounds_to_dist(SUMMARY_TOLERANCE),
        })
        .collect();

    let lookup = |label: &str| -> (usize, &Trace) {
        let i = labels
            .iter()
            .position(|l| l == label)
            .expect("labels validated");
        (i, &traces[i])
    };
    let checks: Vec<CheckOutcome> = cfg
        .checks
        .iter()
        .map(|spec| {
            let (passed, detail) = match evaluate(&spec.check, cfg, &problems, &lookup) {
                Ok(result) => result,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome {
                description: spec.check.describe(),
                advisory: spec.advisory,
                passed,
                detail,
            }
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed || c.advisory);
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        version: cfg.version,
        seed: cfg.seed,
        tolerance: SUMMARY_TOLERANCE,
        entries,
        checks,
        passed,
    };
    let experiment = Experiment {
        traces,
        labels,
        summary,
    };
    if let Some(dir) = &cfg.output_dir {
        experiment.write(dir)?;
    }
    Ok(experiment)
}

type Problems = BTreeMap<String, (FederationProblem, Option<ReferenceMinimum>)>;

fn evaluate<'t>(
    check: &Check,
    cfg: &ExperimentConfig,
    problems: &Problems,
    lookup: &dyn Fn(&str) -> (usize, &'t Trace),
) -> Result<(bool, String)> {
    let problem_of = |i: usize| &problems[&cfg.entry_source(&cfg.entries[i]).key()].0;
    Ok(match check {
        Check::Converges { label, tol } => {
            let (_, t) = lookup(label);
            match t.last().dist_sq {
                Some(d) if !t.diverged() => (d <= *tol, format!("final dist_sq {d:e}")),
                _ => (false, "diverged or x* unknown".into()),
            }
        }
        Check::Diverges { label } => {
            let (_, t) = lookup(label);
            (
                t.diverged(),
                format!("{} rounds recorded", t.rows.len() - 1),
            )
        }
        Check::FloorPositive { label } => {
            let (_, t) = lookup(label);
            let gap = t.last().f_gap;
            (!t.diverged() && gap > 0.0, format!("final gap {gap:e}"))
        }
        Check::Plateau { label, tol } => {
            let (i, t) = lookup(label);
            if t.diverged() {
                return Ok((false, "diverged".into()));
            }
            let target = surrogate_for(&cfg.entries[i], problem_of(i))?;
            let x = Vector::from_row_slice(&t.meta.final_iterate);
            let err = (&x - &target.surrogate_minimizer).norm();
            (
                err <= *tol && target.distortion > *tol,
                format!("|x - x~*| = {err:e}, |x~* - x*| = {:e}", target.distortion),
            )
        }
        Check::Nondecreasing { labels, metric } => {
            let values: Vec<f64> = labels
                .iter()
                .map(|l| {
                    let (_, t) = lookup(l);
                    match metric {
                        Metric::FinalGap if t.diverged() => f64::INFINITY,
                        Metric::FinalGap => t.last().f_gap,
                        Metric::RoundsToDist { tol } => {
                            t.rounds_to_dist(*tol).map_or(f64::INFINITY, |r| r as f64)
                        }
                    }
                })
                .collect();
            let ok =
                values.windows(2).all(|w| w[0] <= w[1]) && values.iter().all(|v| v.is_finite());
            (ok, format!("{values:?}"))
        }
        Check::RoundsAtMost {
            label,
            reference,
            tol,
        } => {
            let a = lookup(label).1.rounds_to_dist(*tol);
            let b = lookup(reference).1.rounds_to_dist(*tol);
            let ok = match (a, b) {
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                _ => false,
            };
            (ok, format!("{a:?} vs {b:?}"))
        }
        Check::Bound { label, theorem } => {
            let (i, t) = lookup(label);
            let dissimilarity = match t.meta.config.steps.preset() {
                Some(Preset::Thm8 { c }) => {
                    Some(dissimilarity_estimate(problem_of(i), c, cfg.seed)?)
                }
                _ => None,
            };
            let bound = bound_for_trace(t, *theorem, dissimilarity)?;
            let report = verify_bound(t, &bound)?;
            (
                report.passed,
                format!(
                    "{} failures over {} horizons, max ratio {:e}",
                    report.failures,
                    report.rounds.len(),
                    report.max_ratio
                ),
            )
        }
    })
}

/// Sampled `(C, D)` over a box covering the start point and `x*`.
pub fn dissimilarity_estimate(
    problem: &FederationProblem,
    c: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let radius = problem.x_star().map_or(1.0, |x| 2.0 * (1.0 + x.amax()));
    estimate_dissimilarity(problem, 2000, radius, seed, c)
}

fn surrogate_for(
    entry: &Entry,
    problem: &FederationProblem,
) -> Result<crate::oracle::SurrogateSolution> {
    let StepPolicy::Uniform { eta } = entry.steps else {
        return Err(Error::InvalidConfig(
            "surrogate check needs a constant step".into(),
        ));
    };
    let m = problem.num_clients();
    match entry.algorithm {
        AlgorithmSpec::FedAvg | AlgorithmSpec::FedProx { .. } => {
            let beta = match entry.algorithm {
                AlgorithmSpec::FedProx { beta } => beta,
                _ => 0.0,
            };
            let h = entry
                .schedule
                .uniform_h()
                .ok_or_else(|| Error::InvalidConfig("FedProx needs a uniform H".into()))?;
            surrogate_fedprox(problem, eta, beta, h)
        }
        AlgorithmSpec::FedNova => {
            if matches!(
                entry.schedule,
                ClientSchedule::SeededUniformRange {
                    per_round: true,
                    ..
                }
            ) {
                return Err(Error::InvalidConfig(
                    "surrogate check needs fixed τ_i".into(),
                ));
            }
            surrogate_fednova(problem, eta, &entry.schedule.taus(m, 1))
        }
        _ => Err(Error::InvalidConfig(format!(
            "{} has no surrogate minimizer",
            entry.algorithm.name()
        ))),
    }
}

/// Iterates until `‖x̄_{t+1} − x̄_t‖ ≤ 1e−12 (1 + ‖x̄_t‖)`.
pub fn fixed_point(
    config: &RunConfig,
    problem: &FederationProblem,
    t_max: usize,
) -> Result<Vector> {
    let mut runner = Runner::new(config.clone(), problem)?;
    for _ in 0..t_max {
        let before = runner.x_bar().clone();
        runner.step()?;
        if runner.diverged() {
            return Err(Error::NoConvergence(runner.round() - 1));
        }
        if (runner.x_bar() - &before).norm() <= 1e-12 * (1.0 + before.norm()) {
            return Ok(runner.x_bar().clone());
        }
    }
    Err(Error::NoConvergence(t_max))
}

/// Runs up to `config.rounds` rounds, stopping once `‖x̄_t − x*‖² ≤ tol`.
/// Returns the round index `t` reached, or `None`.
pub fn rounds_to_tolerance(
    config: &RunConfig,
    problem: &FederationProblem,
    tol: f64,
) -> Result<Option<usize>> {
    let x_star = problem.x_star().ok_or(Error::MissingConstant("x*"))?;
    let mut runner = Runner::new(config.clone(), problem)?;
    for _ in 0..=config.rounds {
        if (runner.x_bar() - x_star).norm_squared() <= tol {
            return Ok(Some(runner.round()));
        }
        if runner.round() > config.rounds {
            break;
        }
        runner.step()?;
        if runner.diverged() {
            break;
        }
    }
    Ok(None)
}

/// One horizon of [`check_lower_bound`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundRound {
    pub t: usize,
    /// `‖x̄_{t+1} − x*‖² / ‖x̄_1 − x*‖²`.
    #[serde(serialize_with = "floatfmt::serialize")]
    pub dist_ratio: f64,
    /// `(f(x̄_{t+1}) − f*) / (f(x̄_1) − f*)`.
    #[serde(serialize_with = "floatfmt::serialize")]
    pub gap_ratio: f64,
    /// `exp(−4t)`.
    #[serde(serialize_with = "floatfmt::serialize")]
    pub floor: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LowerBoundCheck {
    pub instance: crate::oracle::LowerBoundReport,
    pub rounds: Vec<LowerBoundRound>,
    pub passed: bool,
}

/// Runs uncompressed FedLin from `x̄_1 = (0, 1)` on the two-client lower-bound
/// instance and checks both ratios stay at or above `exp(−4t)`.
pub fn check_lower_bound(l: f64, h: usize, eta: f64, rounds: usize) -> Result<LowerBoundCheck> {
    let instance = crate::oracle::lower_bound_instance(l, h, eta)?;
    let config = RunConfig {
        algorithm: AlgorithmSpec::fedlin_uncompressed(2),
        schedule: ClientSchedule::Uniform { h },
        steps: StepPolicy::Uniform { eta },
        rounds,
        initial: Some(vec![0.0, 1.0]),
    };
    let trace = run(&config, &instance.problem)?;
    let first = trace.first();
    let d1 = first.dist_sq.expect("instance has a minimizer");
    let rows = trace
        .rows
        .iter()
        .skip(1)
        .map(|r| {
            let t = r.round - 1;
            let floor = (-4.0 * t as f64).exp();
            let dist_ratio = r.dist_sq.expect("instance has a minimizer") / d1;
            let gap_ratio = r.f_gap / first.f_gap;
            LowerBoundRound {
                t,
                dist_ratio,
                gap_ratio,
                floor,
                passed: dist_ratio >= floor && gap_ratio >= floor,
            }
        })
        .collect::<Vec<_>>();
    let passed = !trace.diverged() && rows.len() == rounds && rows.iter().all(|r| r.passed);
    Ok(LowerBoundCheck {
        instance: instance.report(),
        rounds: rows,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::CompressionPlan;

    fn small_config() -> ExperimentConfig {
        let d = 4;
        ExperimentConfig {
            name: "small".into(),
            version: 1,
            problem: ProblemSource::LeastSquares {
                m: 4,
                n_i: 12,
                d,
                alpha: 2.0,
                noise_std: 0.5,
            },
            rounds: 60,
            seed: 3,
            entries: vec![
                Entry {
                    label: "dense".into(),
                    algorithm: AlgorithmSpec::fedlin_uncompressed(d),
                    schedule: ClientSchedule::SeededUniformRange {
                        lo: 2,
                        hi: 6,
                        seed: 3,
                        per_round: false,
                    },
                    steps: StepPolicy::Preset {
                        preset: Preset::Thm3,
                    },
                    problem: None,
                    rounds: None,
                    initial: None,
                },
                Entry {
                    label: "server-k2".into(),
                    algorithm: AlgorithmSpec::FedLin {
                        plan: CompressionPlan::server(2, d, false).unwrap(),
                    },
                    schedule: ClientSchedule::SeededUniformRange {
                        lo: 2,
                        hi: 6,
                        seed: 3,
                        per_round: false,
                    },
                    steps: StepPolicy::Preset {
                        preset: Preset::Thm6,
                    },
                    problem: None,
                    rounds: None,
                    initial: None,
                },
            ],
            checks: vec![
                CheckSpec {
                    check: Check::Bound {
                        label: "dense".into(),
                        theorem: TheoremId::T3,
                    },
                    advisory: false,
                },
                CheckSpec {
                    check: Check::Bound {
                        label: "server-k2".into(),
                        theorem: TheoremId::T6,
                    },
                    advisory: false,
                },
            ],
            output_dir: None,
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small_config();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small_config();
        cfg.entries[1].label = "dense".into();
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.entries.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.rounds = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn outputs_are_identical_across_thread_counts() {
        let cfg = small_config();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        one.install(|| run_experiment(&cfg).unwrap().write(a.path()))
            .unwrap();
        four.install(|| run_experiment(&cfg).unwrap().write(b.path()))
            .unwrap();
        for name in [
            "dense.csv",
            "dense.json",
            "server-k2.csv",
            "server-k2.json",
            "summary.json",
        ] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs");
        }
        let exp = run_experiment(&cfg).unwrap();
        assert!(exp.summary.passed, "{:?}", exp.summary.checks);
    }

    #[test]
    fn logistic_gaps_use_a_reference_run() {
        let cfg = ExperimentConfig {
            name: "logistic".into(),
            version: 1,
            problem: ProblemSource::Logistic {
                m: 3,
                n_i: 20,
                d: 3,
                alpha: 0.0,
                noise_std: 0.0,
            },
            rounds: 30,
            seed: 1,
            entries: vec![Entry {
                label: "fedlin".into(),
                algorithm: AlgorithmSpec::fedlin_uncompressed(3),
                schedule: ClientSchedule::Uniform { h: 3 },
                steps: StepPolicy::Preset {
                    preset: Preset::Thm3,
                },
                problem: None,
                rounds: None,
                initial: None,
            }],
            checks: vec![],
            output_dir: None,
        };
        let exp = run_experiment(&cfg).unwrap();
        let t = &exp.traces[0];
        assert_eq!(t.meta.gap_kind, GapKind::Reference);
        assert_eq!(t.meta.reference.as_ref().unwrap().rounds, 300);
        assert!(t.rows.iter().all(|r| r.f_gap >= 0.0));
    }

    #[test]
    fn fixed_points() {
        let p = two_client_scalar();
        let gd = RunConfig {
            algorithm: AlgorithmSpec::CentralizedGd,
            schedule: ClientSchedule::Uniform { h: 1 },
            steps: StepPolicy::Uniform { eta: 0.3 },
            rounds: 0,
            initial: None,
        };
        let x = fixed_point(&gd, &p, 1000).unwrap();
        assert!((x[0] - 103.0 / 3.0).abs() < 1e-10);

        let prox = RunConfig {
            algorithm: AlgorithmSpec::FedProx { beta: 0.0 },
            schedule: ClientSchedule::Uniform { h: 2 },
            ..gd.clone()
        };
        let prox = RunConfig {
            steps: StepPolicy::Uniform { eta: 0.1 },
            ..prox
        };
        let x = fixed_point(&prox, &p, 10_000).unwrap();
        let s = surrogate_fedprox(&p, 0.1, 0.0, 2).unwrap();
        assert!((x[0] - s.surrogate_minimizer[0]).abs() < 1e-8);

        let slow = RunConfig {
            steps: StepPolicy::Uniform { eta: 1e-6 },
            ..gd
        };
        assert!(matches!(
            fixed_point(&slow, &p, 5),
            Err(Error::NoConvergence(5))
        ));
    }

    #[test]
    fn lower_bound_holds_below_one_over_h() {
        for h in [2, 10] {
            let check = check_lower_bound(14.0, h, 0.5 / h as f64, 10).unwrap();
            assert!(check.passed);
            assert_eq!(check.rounds.len(), 10);
            let lambda2 = check.instance.lambda2;
            let last = &check.rounds[9];
            assert!((last.dist_ratio - lambda2.powi(20)).abs() <= 1e-12 * lambda2.powi(20));
        }
    }

    #[test]
    fn early_stop_counts_rounds() {
        let p = two_client_scalar();
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::CentralizedGd,
            schedule: ClientSchedule::Uniform { h: 1 },
            steps: StepPolicy::Uniform { eta: 0.3 },
            rounds: 500,
            initial: None,
        };
        let r = rounds_to_tolerance(&cfg, &p, 1e-8).unwrap().unwrap();
        let trace = run(&cfg, &p).unwrap();
        assert_eq!(trace.rounds_to_dist(1e-8), Some(r));
        let short = RunConfig { rounds: 2, ..cfg };
        assert_eq!(rounds_to_tolerance(&short, &p, 1e-8).unwrap(), None);
    }
}
