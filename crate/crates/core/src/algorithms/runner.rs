use super::fedlin::{FedLinState, RoundReport};
use super::trace::{GapKind, RoundMetrics, Trace, TraceMeta};
use super::{AlgorithmSpec, CompressionPlan, RunConfig};
use crate::compression::BYTES_PER_ENTRY;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, ordered_mean, Vector};
use crate::objectives::FederationProblem;

/// A run is declared divergent once `‖x̄_t‖` exceeds this.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

enum Method {
    FedLin(FedLinState),
    /// FedAvg, FedProx and FedNova: only `x̄` persists between rounds.
    Local {
        x_bar: Vector,
        beta: f64,
        nova: bool,
    },
    Split {
        x_bar: Vector,
        z: Vec<Vector>,
    },
    Centralized {
        x_bar: Vector,
    },
}

/// Steps one algorithm on one problem, a round at a time.
pub struct Runner<'a> {
    config: RunConfig,
    problem: &'a FederationProblem,
    plan: CompressionPlan,
    method: Method,
    round: usize,
    grad_evals: u64,
    bytes_up: u64,
    bytes_down: u64,
    iterate_sum: Vector,
    averaged_gap: Option<Vec<f64>>,
    diverged: bool,
}

impl<'a> Runner<'a> {
    pub fn new(config: RunConfig, problem: &'a FederationProblem) -> Result<Self> {
        let d = problem.dim();
        let m = problem.num_clients();
        config.algorithm.validate(d)?;
        config.schedule.validate(m)?;
        let x0 = match &config.initial {
            Some(x) => {
                check_dim(d, x.len())?;
                Vector::from_row_slice(x)
            }
            None => Vector::zeros(d),
        };
        let mut grad_evals = 0;
        let method = match &config.algorithm {
            AlgorithmSpec::FedLin { .. } => {
                grad_evals = FedLinState::init_grad_evals(problem);
                Method::FedLin(FedLinState::new(problem, x0)?)
            }
            AlgorithmSpec::FedAvg => Method::Local {
                x_bar: x0,
                beta: 0.0,
                nova: false,
            },
            AlgorithmSpec::FedProx { beta } => Method::Local {
                x_bar: x0,
                beta: *beta,
                nova: false,
            },
            AlgorithmSpec::FedNova => Method::Local {
                x_bar: x0,
                beta: 0.0,
                nova: true,
            },
            AlgorithmSpec::FedSplit { .. } => Method::Split {
                z: vec![x0.clone(); m],
                x_bar: x0,
            },
            AlgorithmSpec::CentralizedGd => Method::Centralized { x_bar: x0 },
        };
        let averaged_gap = problem.x_star().map(|_| Vec::new());
        Ok(Self {
            plan: config.algorithm.plan(d),
            config,
            problem,
            method,
            round: 1,
            grad_evals,
            bytes_up: 0,
            bytes_down: 0,
            iterate_sum: Vector::zeros(d),
            averaged_gap,
            diverged: false,
        })
    }

    pub fn x_bar(&self) -> &Vector {
        match &self.method {
            Method::FedLin(s) => &s.x_bar,
            Method::Local { x_bar, .. }
            | Method::Split { x_bar, .. }
            | Method::Centralized { x_bar } => x_bar,
        }
    }

    pub fn fedlin_state(&self) -> Option<&FedLinState> {
        match &self.method {
            Method::FedLin(s) => Some(s),
            _ => None,
        }
    }

    /// Index `t` of the current iterate `x̄_t`.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn metrics(&self) -> RoundMetrics {
        let p = self.problem;
        let x = self.x_bar();
        let grad = ordered_mean(
            p.dim(),
            p.clients()
                .iter()
                .map(|c| c.grad(x))
                .collect::<Vec<_>>()
                .iter(),
        );
        let f_gap = p.suboptimality(x).unwrap_or_else(|| p.value_unchecked(x));
        RoundMetrics {
            round: self.round,
            f_gap,
            dist_sq: p.x_star().map(|xs| (x - xs).norm_squared()),
            grad_norm_sq: grad.norm_squared(),
            grad_evals: self.grad_evals,
            bytes_up: self.bytes_up,
            bytes_down: self.bytes_down,
        }
    }

    /// Executes round `t`, moving from `x̄_t` to `x̄_{t+1}`.
    pub fn step(&mut self) -> Result<RoundReport> {
        if self.diverged {
            return Err(Error::InvalidInput("cannot step a diverged run".into()));
        }
        let p = self.problem;
        let m = p.num_clients();
        let d = p.dim();
        let taus = self.config.schedule.taus(m, self.round);
        let etas = self.config.steps.etas(p.smoothness(), &self.plan, &taus)?;
        let current = self.x_bar().clone();
        self.iterate_sum += current;
        let dense = (BYTES_PER_ENTRY * d) as u64;

        let report = match &mut self.method {
            Method::FedLin(state) => state.step(p, &taus, &etas, &self.plan)?,
            Method::Local { x_bar, beta, nova } => {
                if !*nova && taus.iter().any(|&t| t != taus[0]) {
                    return Err(Error::InvalidConfig(
                        "FedAvg and FedProx need the same H on every client".into(),
                    ));
                }
                let mut report = RoundReport::default();
                let mut locals = Vec::with_capacity(m);
                let mut sums = Vec::with_capacity(m);
                for (i, client) in p.clients().iter().enumerate() {
                    let mut x = x_bar.clone();
                    let mut sum = Vector::zeros(d);
                    let mut drift = 0.0_f64;
                    for _ in 0..taus[i] {
                        let g = client.grad(&x);
                        if *nova {
                            x -= &g * etas[i];
                            sum += g;
                        } else {
                            let dir = g + (&x - &*x_bar) * *beta;
                            x -= dir * etas[i];
                        }
                        drift = drift.max((&x - &*x_bar).norm());
                    }
                    report.drift.push(drift);
                    report.grad_evals += taus[i] as u64;
                    locals.push(x);
                    sums.push(sum);
                }
                if *nova {
                    let tau_eff = taus.iter().sum::<usize>() as f64 / m as f64;
                    let mut step = Vector::zeros(d);
                    for i in 0..m {
                        let alpha = tau_eff / taus[i] as f64;
                        step += &sums[i] * (alpha * etas[i]);
                    }
                    *x_bar -= step / m as f64;
                } else {
                    *x_bar = ordered_mean(d, &locals);
                }
                report.bytes_up = m as u64 * dense;
                report.bytes_down = m as u64 * dense;
                report
            }
            Method::Split { x_bar, z } => {
                let AlgorithmSpec::FedSplit { s, alpha, e_steps } = self.config.algorithm else {
                    unreachable!("split state only built for FedSplit");
                };
                let mut report = RoundReport::default();
                for (client, zi) in p.clients().iter().zip(z.iter_mut()) {
                    let u = &*x_bar * 2.0 - &*zi;
                    let mut y = u.clone();
                    for _ in 0..e_steps {
                        let dir = client.grad(&y) + (&y - &u) / s;
                        y -= dir * alpha;
                    }
                    report.drift.push((&y - &*x_bar).norm());
                    *zi += (y - &*x_bar) * 2.0;
                }
                report.grad_evals = (m * e_steps) as u64;
                *x_bar = ordered_mean(d, z.iter());
                report.bytes_up = m as u64 * dense;
                report.bytes_down = m as u64 * dense;
                report
            }
            Method::Centralized { x_bar } => {
                let h = taus[0];
                if taus.iter().any(|&t| t != h) {
                    return Err(Error::InvalidConfig(
                        "centralized GD takes the same H steps for every client".into(),
                    ));
                }
                let start = x_bar.clone();
                for _ in 0..h {
                    let g = ordered_mean(
                        d,
                        p.clients()
                            .iter()
                            .map(|c| c.grad(x_bar))
                            .collect::<Vec<_>>()
                            .iter(),
                    );
                    *x_bar -= g * etas[0];
                }
                RoundReport {
                    drift: vec![(&*x_bar - start).norm(); m],
                    grad_evals: (h * m) as u64,
                    bytes_up: (h * m) as u64 * dense,
                    bytes_down: (h * m) as u64 * dense,
                }
            }
        };

        self.grad_evals += report.grad_evals;
        self.bytes_up += report.bytes_up;
        self.bytes_down += report.bytes_down;
        let x = self.x_bar();
        if !all_finite(x) || x.norm() > DIVERGENCE_THRESHOLD {
            self.diverged = true;
        } else if let Some(gaps) = &mut self.averaged_gap {
            let avg = &self.iterate_sum / self.round as f64;
            gaps.push(p.suboptimality(&avg).expect("minimizer known"));
        }
        self.round += 1;
        Ok(report)
    }

    fn into_trace(self, rows: Vec<RoundMetrics>) -> Trace {
        let p = self.problem;
        let gap_kind = if p.x_star().is_some() || p.f_star().is_some() {
            GapKind::Exact
        } else {
            GapKind::Raw
        };
        let final_iterate = if self.diverged {
            Vec::new()
        } else {
            self.x_bar().iter().copied().collect()
        };
        let averaged_gap = self.averaged_gap.filter(|_| !self.diverged);
        Trace {
            meta: TraceMeta {
                config: self.config,
                problem: p.provenance().clone(),
                dim: p.dim(),
                num_clients: p.num_clients(),
                smoothness: p.smoothness(),
                strong_convexity: p.strong_convexity(),
                diverged: self.diverged,
                gap_kind,
                reference: None,
                averaged_gap,
                final_iterate,
            },
            rows,
        }
    }
}

/// Runs `config.rounds` rounds and records metrics at `x̄_1, …, x̄_{T+1}`.
/// A divergent run stops early with `diverged` set in the trace.
pub fn run(config: &RunConfig, problem: &FederationProblem) -> Result<Trace> {
    let mut runner = Runner::new(config.clone(), problem)?;
    let mut rows = Vec::with_capacity(config.rounds + 1);
    rows.push(runner.metrics());
    for _ in 0..config.rounds {
        runner.step()?;
        if runner.diverged() {
            break;
        }
        rows.push(runner.metrics());
    }
    Ok(runner.into_trace(rows))
}
