use serde::Serialize;

use crate::algorithms::{AlgorithmSpec, Preset, Trace};
use crate::error::{Error, Result};
use crate::floatfmt;
use crate::oracle::{rate_bound, BoundConstants, RateBound, TheoremId};

/// Relative slack allowed on every bound comparison.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundCheck {
    /// `T` in the theorem statement.
    pub horizon: usize,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub measured: f64,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub bound: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub theorem: TheoremId,
    pub constants: BoundConstants,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub tolerance: f64,
    /// Absolute allowance for rounding in the measured quantity.
    #[serde(serialize_with = "floatfmt::serialize")]
    pub noise_floor: f64,
    pub passed: bool,
    pub failures: usize,
    pub first_failure: Option<usize>,
    /// Largest `measured / bound` over all rounds.
    #[serde(serialize_with = "floatfmt::serialize")]
    pub max_ratio: f64,
    /// Smallest `bound − measured`.
    #[serde(serialize_with = "floatfmt::serialize")]
    pub min_slack: f64,
    pub rounds: Vec<RoundCheck>,
}

fn required_preset(theorem: TheoremId) -> &'static str {
    match theorem {
        TheoremId::T1 => "thm1",
        TheoremId::P3 => "p3",
        TheoremId::T3 => "thm3",
        TheoremId::T4a => "thm4a",
        TheoremId::T4b => "thm4b",
        TheoremId::T5 => "thm5",
        TheoremId::T6 => "thm6",
        TheoremId::T7 => "thm7",
        TheoremId::T8 => "thm8",
    }
}

fn preset_matches(theorem: TheoremId, preset: Preset) -> bool {
    matches!(
        (theorem, preset),
        (TheoremId::T1, Preset::Thm1)
            | (TheoremId::P3, Preset::P3)
            | (TheoremId::T3, Preset::Thm3)
            | (TheoremId::T4a, Preset::Thm4a)
            | (TheoremId::T4b, Preset::Thm4b)
            | (TheoremId::T5, Preset::Thm5)
            | (TheoremId::T6, Preset::Thm6)
            | (TheoremId::T7, Preset::Thm7)
            | (TheoremId::T8, Preset::Thm8 { .. })
    )
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::PresetMismatch(msg.into())
}

/// Checks that `trace` was produced under the step preset and compression
/// plan `theorem` assumes, and collects the constants it needs.
///
/// `dissimilarity` supplies `(C, D)` for T8 and is ignored otherwise.
pub fn bound_for_trace(
    trace: &Trace,
    theorem: TheoremId,
    dissimilarity: Option<(f64, f64)>,
) -> Result<RateBound> {
    let meta = &trace.meta;
    let config = &meta.config;
    let preset = config.steps.preset().ok_or_else(|| {
        mismatch(format!(
            "{} needs the {} step preset",
            theorem.name(),
            required_preset(theorem)
        ))
    })?;
    if !preset_matches(theorem, preset) {
        return Err(mismatch(format!(
            "{} needs the {} step preset, trace used {preset:?}",
            theorem.name(),
            required_preset(theorem)
        )));
    }
    let plan = config.algorithm.plan(meta.dim);
    let server_only = plan.client.is_dense();
    let client_only = plan.server.is_dense();
    match theorem {
        TheoremId::T6 if !(server_only && !plan.server_error_feedback) => {
            return Err(mismatch(
                "T6 needs server TOP-k without error feedback and dense clients",
            ))
        }
        TheoremId::T7 if !(server_only && plan.server_error_feedback) => {
            return Err(mismatch(
                "T7 needs server TOP-k with error feedback and dense clients",
            ))
        }
        TheoremId::T8 if !(client_only && plan.server_error_feedback) => {
            return Err(mismatch("T8 needs client TOP-k with a dense server"))
        }
        TheoremId::T6 | TheoremId::T7 | TheoremId::T8 => {}
        _ if !plan.is_uncompressed() => {
            return Err(mismatch(format!(
                "{} assumes uncompressed communication",
                theorem.name()
            )))
        }
        _ => {}
    }
    if matches!(config.algorithm, AlgorithmSpec::FedSplit { .. }) {
        return Err(mismatch("FedSplit ignores step presets"));
    }
    if meta.gap_kind != crate::algorithms::GapKind::Exact && theorem != TheoremId::T5 {
        return Err(Error::MissingConstant("x*"));
    }

    let first = trace.first();
    let h = config.schedule.uniform_h();
    if matches!(theorem, TheoremId::T1 | TheoremId::P3) && h.is_none() {
        return Err(mismatch(format!(
            "{} needs the same H on every client",
            theorem.name()
        )));
    }
    let mut constants = BoundConstants {
        smoothness: Some(meta.smoothness),
        strong_convexity: Some(meta.strong_convexity),
        delta_s: Some(plan.server.delta()),
        delta_c: Some(plan.client.delta()),
        h,
        initial_gap: Some(first.f_gap),
        initial_dist_sq: first.dist_sq,
        ..BoundConstants::default()
    };
    if let Preset::Thm8 { c } = preset {
        let (c_est, d_est) = dissimilarity.ok_or(Error::MissingConstant("(C, D)"))?;
        if (c_est - c).abs() > 1e-12 * c {
            return Err(mismatch(format!(
                "preset uses C = {c}, dissimilarity estimated for C = {c_est}"
            )));
        }
        constants.c = Some(c);
        constants.d = Some(d_est);
        constants.eta_bar = Some(1.0 / (72.0 * meta.smoothness * plan.client.delta() * c));
    }
    Ok(RateBound::new(theorem, constants))
}

/// Level below which rounding stalls the iterates.
///
/// Once `η_min‖∇f‖` drops under half an ulp of `x̄` the updates round away, so
/// the distance to `x*` cannot shrink below about `ε√d‖x̄‖/(η_min μ)`.
fn noise_floor(trace: &Trace, theorem: TheoremId) -> Result<f64> {
    let meta = &trace.meta;
    let config = &meta.config;
    let plan = config.algorithm.plan(meta.dim);
    let taus = config.schedule.taus(meta.num_clients, 1);
    let eta_min = config
        .steps
        .etas(meta.smoothness, &plan, &taus)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let scale = 1.0 + meta.final_iterate.iter().map(|v| v * v).sum::<f64>().sqrt();
    let stall_grad = f64::EPSILON * (meta.dim as f64).sqrt() * scale / eta_min;
    let dist = if meta.strong_convexity > 0.0 {
        (stall_grad / meta.strong_convexity).powi(2)
    } else {
        (4.0 * f64::EPSILON * scale).powi(2) * meta.dim as f64
    };
    Ok(match theorem {
        TheoremId::T8 => dist,
        TheoremId::T5 => stall_grad.powi(2),
        _ => meta.smoothness * dist,
    })
}

/// Compares a trace against `bound` at every horizon the trace covers.
pub fn verify_bound(trace: &Trace, bound: &RateBound) -> Result<BoundReport> {
    bound_for_trace(
        trace,
        bound.theorem,
        bound.constants.c.zip(bound.constants.d),
    )?;
    let rows = &trace.rows;
    let first = trace.first();
    let need_dist =
        |i: usize| -> Result<f64> { rows[i].dist_sq.ok_or(Error::MissingConstant("x*")) };
    let mut checks = Vec::new();
    match bound.theorem {
        TheoremId::T4a => {
            let avg = trace
                .meta
                .averaged_gap
                .as_ref()
                .ok_or(Error::MissingConstant("averaged-iterate gaps"))?;
            let d1 = need_dist(0)?;
            for t in 1..=avg.len().min(rows.len() - 1) {
                let b = rate_bound(bound, t)? * (d1 - need_dist(t)?);
                checks.push((t, avg[t - 1], b));
            }
        }
        TheoremId::T4b => {
            for t in 1..=rows.len() {
                checks.push((t, rows[t - 1].f_gap, rate_bound(bound, t)? * first.f_gap));
            }
        }
        TheoremId::T5 => {
            let mut best = f64::INFINITY;
            for t in 1..rows.len() {
                best = best.min(rows[t - 1].grad_norm_sq);
                let b = rate_bound(bound, t)? * (first.f_gap - rows[t].f_gap);
                checks.push((t, best, b));
            }
        }
        TheoremId::T8 => {
            let d1 = need_dist(0)?;
            let floor = bound.floor()?;
            for t in 1..rows.len() {
                checks.push((t, need_dist(t)?, rate_bound(bound, t)? * d1 + floor));
            }
        }
        _ => {
            for t in 1..rows.len() {
                checks.push((t, rows[t].f_gap, rate_bound(bound, t)? * first.f_gap));
            }
        }
    }

    let noise = noise_floor(trace, bound.theorem)?;
    let rounds: Vec<RoundCheck> = checks
        .into_iter()
        .map(|(horizon, measured, b)| RoundCheck {
            horizon,
            measured,
            bound: b,
            passed: measured <= b + BOUND_TOLERANCE * b.abs() + noise,
        })
        .collect();
    let failures = rounds.iter().filter(|r| !r.passed).count();
    let max_ratio = rounds
        .iter()
        .filter(|r| r.bound > 0.0)
        .map(|r| r.measured / r.bound)
        .fold(0.0, f64::max);
    let min_slack = rounds
        .iter()
        .map(|r| r.bound - r.measured)
        .fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        theorem: bound.theorem,
        constants: bound.constants.clone(),
        tolerance: BOUND_TOLERANCE,
        noise_floor: noise,
        passed: failures == 0 && !trace.diverged(),
        failures,
        first_failure: rounds.iter().find(|r| !r.passed).map(|r| r.horizon),
        max_ratio,
        min_slack: if min_slack.is_finite() {
            min_slack
        } else {
            0.0
        },
        rounds,
    })
}
