//! Round-based execution of FedLin and the baseline methods.
//!
//! Every method shares the same driver: a [`Runner`] holds the round-start
//! state, [`Runner::step`] executes one communication round, and [`run`]
//! records [`RoundMetrics`] at each round boundary.

mod fedlin;
mod runner;
mod trace;

pub use fedlin::{fedlin_local_update, fedlin_round, FedLinState, RoundReport};
pub use runner::{run, Runner, DIVERGENCE_THRESHOLD};
pub use trace::{GapKind, ReferenceMinimum, RoundMetrics, Trace, TraceMeta, CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::compression::SparsityLevel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

/// Number of local steps `τ_i(t)` taken by client `i` in round `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientSchedule {
    Uniform {
        h: usize,
    },
    PerClient {
        taus: Vec<usize>,
    },
    /// `τ_i` drawn uniformly from `[lo, hi]`, once per client or afresh every
    /// round when `per_round` is set.
    SeededUniformRange {
        lo: usize,
        hi: usize,
        seed: u64,
        #[serde(default)]
        per_round: bool,
    },
}

impl ClientSchedule {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            Self::Uniform { h } if *h == 0 => {
                Err(Error::InvalidConfig("uniform schedule needs H ≥ 1".into()))
            }
            Self::PerClient { taus } if taus.len() != m => Err(Error::InvalidConfig(format!(
                "schedule lists {} clients, problem has {m}",
                taus.len()
            ))),
            Self::PerClient { taus } if taus.contains(&0) => {
                Err(Error::InvalidConfig("every client needs τ_i ≥ 1".into()))
            }
            Self::SeededUniformRange { lo, hi, .. } if *lo == 0 || lo > hi => Err(
                Error::InvalidConfig(format!("invalid τ range [{lo}, {hi}]")),
            ),
            _ => Ok(()),
        }
    }

    /// `τ_i(t)` for client `i` in round `t` (both counted from 1 for `t`, 0 for `i`).
    pub fn tau(&self, client: usize, round: usize) -> usize {
        match self {
            Self::Uniform { h } => *h,
            Self::PerClient { taus } => taus[client],
            Self::SeededUniformRange {
                lo,
                hi,
                seed,
                per_round,
            } => {
                let stream = if *per_round {
                    ((round as u64) << 32) | client as u64
                } else {
                    client as u64
                };
                SeededRng::new(derive_seed(*seed, stream)).uniform_int(*lo, *hi)
            }
        }
    }

    pub fn taus(&self, m: usize, round: usize) -> Vec<usize> {
        (0..m).map(|i| self.tau(i, round)).collect()
    }

    /// `H` when every client takes the same number of steps in every round.
    pub fn uniform_h(&self) -> Option<usize> {
        match self {
            Self::Uniform { h } => Some(*h),
            Self::PerClient { taus } => {
                let first = *taus.first()?;
                taus.iter().all(|&t| t == first).then_some(first)
            }
            Self::SeededUniformRange { lo, hi, .. } => (lo == hi).then_some(*lo),
        }
    }
}

/// Step-size presets tied to the convergence theorems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `η = 1/(6LH)`, uniform `H`.
    Thm1,
    /// `η = 1/L`, homogeneous clients.
    P3,
    /// `η̄ = 1/(6L)`.
    Thm3,
    /// `η̄ = 1/(10L)`.
    Thm4a,
    /// `η̄ = 1/(6L)`.
    Thm4b,
    /// `η̄ = 1/(26L)`.
    Thm5,
    /// `η̄ = 1/(2(2+√δ_s)L)`.
    Thm6,
    /// `η̄ = 1/(72Lδ_s)`.
    Thm7,
    /// `η̄ = 1/(72Lδ_c C)`.
    Thm8 { c: f64 },
}

impl Preset {
    pub const HELP: &'static str = "\
step-size presets (eta_i = eta_bar / tau_i unless noted):
  thm1   eta = 1/(6 L H), uniform H across clients
  p3     eta = 1/L, identical clients
  thm3   eta_bar = 1/(6 L)
  thm4a  eta_bar = 1/(10 L)
  thm4b  eta_bar = 1/(6 L)
  thm5   eta_bar = 1/(26 L)
  thm6   eta_bar = 1/(2 (2 + sqrt(delta_s)) L), server TOP-k without error feedback
  thm7   eta_bar = 1/(72 L delta_s), server TOP-k with error feedback
  thm8   eta_bar = 1/(72 L delta_c C), client TOP-k with error feedback (C defaults to 2)";

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "thm1" | "t1" => Self::Thm1,
            "p3" => Self::P3,
            "thm3" | "t3" => Self::Thm3,
            "thm4a" | "t4a" => Self::Thm4a,
            "thm4b" | "t4b" => Self::Thm4b,
            "thm5" | "t5" => Self::Thm5,
            "thm6" | "t6" => Self::Thm6,
            "thm7" | "t7" => Self::Thm7,
            "thm8" | "t8" => Self::Thm8 { c: 2.0 },
            other => return Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        })
    }

    /// Step applied by every client; `η_i = η̄/τ_i` for the inverse-τ presets.
    fn eta_bar(&self, smoothness: f64, plan: &CompressionPlan) -> f64 {
        let l = smoothness;
        let ds = plan.server.delta();
        match self {
            Self::Thm1 | Self::P3 => f64::NAN,
            Self::Thm3 | Self::Thm4b => 1.0 / (6.0 * l),
            Self::Thm4a => 1.0 / (10.0 * l),
            Self::Thm5 => 1.0 / (26.0 * l),
            Self::Thm6 => 1.0 / (2.0 * (2.0 + ds.sqrt()) * l),
            Self::Thm7 => 1.0 / (72.0 * l * ds),
            Self::Thm8 { c } => 1.0 / (72.0 * l * plan.client.delta() * c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    Uniform {
        eta: f64,
    },
    /// `η_i = η̄/τ_i`.
    InverseTau {
        eta_bar: f64,
    },
    PerClient {
        etas: Vec<f64>,
    },
    Preset {
        preset: Preset,
    },
}

impl StepPolicy {
    pub fn preset(&self) -> Option<Preset> {
        match self {
            Self::Preset { preset } => Some(*preset),
            _ => None,
        }
    }

    /// Per-client step sizes for one round.
    pub fn etas(
        &self,
        smoothness: f64,
        plan: &CompressionPlan,
        taus: &[usize],
    ) -> Result<Vec<f64>> {
        let etas = match self {
            Self::Uniform { eta } => vec![*eta; taus.len()],
            Self::InverseTau { eta_bar } => taus.iter().map(|&t| eta_bar / t as f64).collect(),
            Self::PerClient { etas } => {
                if etas.len() != taus.len() {
                    return Err(Error::InvalidConfig(format!(
                        "step policy lists {} clients, problem has {}",
                        etas.len(),
                        taus.len()
                    )));
                }
                etas.clone()
            }
            Self::Preset { preset } => {
                if !(smoothness > 0.0) {
                    return Err(Error::MissingConstant("L"));
                }
                match preset {
                    Preset::Thm1 => {
                        let h = taus[0];
                        if taus.iter().any(|&t| t != h) {
                            return Err(Error::InvalidConfig(
                                "the thm1 preset needs the same H on every client".into(),
                            ));
                        }
                        vec![1.0 / (6.0 * smoothness * h as f64); taus.len()]
                    }
                    Preset::P3 => vec![1.0 / smoothness; taus.len()],
                    other => {
                        let eta_bar = other.eta_bar(smoothness, plan);
                        taus.iter().map(|&t| eta_bar / t as f64).collect()
                    }
                }
            }
        };
        if let Some(bad) = etas.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "step size {bad} must be positive"
            )));
        }
        Ok(etas)
    }
}

/// TOP-k levels for client uploads and server broadcasts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub server: SparsityLevel,
    pub client: SparsityLevel,
    /// When false, the server sends `C_δs(∇f(x̄))` and keeps no residual.
    pub server_error_feedback: bool,
}

impl CompressionPlan {
    pub fn none(d: usize) -> Self {
        Self {
            server: SparsityLevel::dense(d),
            client: SparsityLevel::dense(d),
            server_error_feedback: true,
        }
    }

    pub fn server(k: usize, d: usize, error_feedback: bool) -> Result<Self> {
        Ok(Self {
            server: SparsityLevel::new(k, d)?,
            client: SparsityLevel::dense(d),
            server_error_feedback: error_feedback,
        })
    }

    pub fn client(k: usize, d: usize) -> Result<Self> {
        Ok(Self {
            server: SparsityLevel::dense(d),
            client: SparsityLevel::new(k, d)?,
            server_error_feedback: true,
        })
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.server.dim() != d || self.client.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if self.server.dim() != d {
                    self.server.dim()
                } else {
                    self.client.dim()
                },
            });
        }
        if !self.server_error_feedback && !self.client.is_dense() {
            return Err(Error::InvalidConfig(
                "server compression without error feedback requires uncompressed clients".into(),
            ));
        }
        Ok(())
    }

    pub fn is_uncompressed(&self) -> bool {
        self.server.is_dense() && self.client.is_dense()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    #[serde(rename = "fedlin")]
    FedLin { plan: CompressionPlan },
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx { beta: f64 },
    #[serde(rename = "fednova")]
    FedNova,
    /// Inexact prox: `e_steps` gradient steps of size `alpha` on `f_i(x) + ‖u − x‖²/(2s)`.
    #[serde(rename = "fedsplit")]
    FedSplit { s: f64, alpha: f64, e_steps: usize },
    /// `H` full-gradient steps per round.
    CentralizedGd,
}

impl AlgorithmSpec {
    pub fn fedlin_uncompressed(d: usize) -> Self {
        Self::FedLin {
            plan: CompressionPlan::none(d),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FedLin { .. } => "fedlin",
            Self::FedAvg => "fedavg",
            Self::FedProx { .. } => "fedprox",
            Self::FedNova => "fednova",
            Self::FedSplit { .. } => "fedsplit",
            Self::CentralizedGd => "centralized_gd",
        }
    }

    /// Compression plan in force; baselines always send dense vectors.
    pub fn plan(&self, d: usize) -> CompressionPlan {
        match self {
            Self::FedLin { plan } => *plan,
            _ => CompressionPlan::none(d),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::FedLin { plan } => plan.validate(d),
            Self::FedProx { beta } if !(*beta >= 0.0 && beta.is_finite()) => Err(
                Error::InvalidConfig(format!("FedProx needs β ≥ 0, got {beta}")),
            ),
            Self::FedSplit { s, alpha, e_steps } => {
                if !(*s > 0.0 && *alpha > 0.0) || *e_steps == 0 {
                    return Err(Error::InvalidConfig(
                        "FedSplit needs s > 0, alpha > 0 and at least one inner step".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Everything needed to reproduce one run on a given problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub algorithm: AlgorithmSpec,
    pub schedule: ClientSchedule,
    pub steps: StepPolicy,
    pub rounds: usize,
    /// Starting point `x̄_1`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_schedule_is_reproducible_and_in_range() {
        let s = ClientSchedule::SeededUniformRange {
            lo: 2,
            hi: 100,
            seed: 3,
            per_round: false,
        };
        let a = s.taus(20, 1);
        assert_eq!(a, s.taus(20, 7));
        assert!(a.iter().all(|t| (2..=100).contains(t)));
        assert!(a.iter().any(|&t| t != a[0]));
        let r = ClientSchedule::SeededUniformRange {
            lo: 2,
            hi: 100,
            seed: 3,
            per_round: true,
        };
        assert_ne!(r.taus(20, 1), r.taus(20, 2));
        assert_eq!(r.taus(20, 2), r.taus(20, 2));
    }

    #[test]
    fn schedule_validation() {
        assert!(ClientSchedule::Uniform { h: 0 }.validate(2).is_err());
        assert!(ClientSchedule::PerClient { taus: vec![1, 2] }
            .validate(3)
            .is_err());
        assert!(ClientSchedule::PerClient { taus: vec![1, 0] }
            .validate(2)
            .is_err());
        assert_eq!(
            ClientSchedule::PerClient { taus: vec![4, 4] }.uniform_h(),
            Some(4)
        );
    }

    #[test]
    fn presets_resolve() {
        let plan = CompressionPlan::none(4);
        let l = 2.0;
        let thm1 = StepPolicy::Preset {
            preset: Preset::Thm1,
        };
        assert_eq!(thm1.etas(l, &plan, &[5, 5]).unwrap(), vec![1.0 / 60.0; 2]);
        assert!(thm1.etas(l, &plan, &[5, 4]).is_err());
        let thm3 = StepPolicy::Preset {
            preset: Preset::Thm3,
        };
        assert_eq!(
            thm3.etas(l, &plan, &[1, 2]).unwrap(),
            vec![1.0 / 12.0, 1.0 / 24.0]
        );
        let t6 = StepPolicy::Preset {
            preset: Preset::Thm6,
        };
        let t3 = thm3.etas(l, &plan, &[3]).unwrap();
        assert!((t6.etas(l, &plan, &[3]).unwrap()[0] - t3[0]).abs() < 1e-15);
        let sparse = CompressionPlan::server(1, 4, true).unwrap();
        let t7 = StepPolicy::Preset {
            preset: Preset::Thm7,
        };
        assert_eq!(
            t7.etas(l, &sparse, &[1]).unwrap(),
            vec![1.0 / (72.0 * 2.0 * 4.0)]
        );
        let t8 = StepPolicy::Preset {
            preset: Preset::Thm8 { c: 2.0 },
        };
        let client = CompressionPlan::client(2, 4).unwrap();
        assert_eq!(
            t8.etas(l, &client, &[1]).unwrap(),
            vec![1.0 / (72.0 * 2.0 * 2.0 * 2.0)]
        );
    }

    #[test]
    fn rejects_nonpositive_steps() {
        let plan = CompressionPlan::none(1);
        assert!(StepPolicy::Uniform { eta: 0.0 }
            .etas(1.0, &plan, &[1])
            .is_err());
        assert!(StepPolicy::PerClient { etas: vec![0.1] }
            .etas(1.0, &plan, &[1, 1])
            .is_err());
    }

    #[test]
    fn no_feedback_requires_dense_clients() {
        let mut plan = CompressionPlan::client(1, 3).unwrap();
        plan.server_error_feedback = false;
        assert!(plan.validate(3).is_err());
        assert!(CompressionPlan::server(1, 3, false)
            .unwrap()
            .validate(3)
            .is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::FedLin {
                plan: CompressionPlan::server(2, 4, false).unwrap(),
            },
            schedule: ClientSchedule::Uniform { h: 3 },
            steps: StepPolicy::Preset {
                preset: Preset::Thm8 { c: 2.0 },
            },
            rounds: 5,
            initial: None,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"algorithm\":\"fedlin\""));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
