use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::floatfmt::{self, format_f64};
use crate::objectives::Provenance;

pub const CSV_HEADER: [&str; 7] = [
    "round",
    "f_gap",
    "dist_sq",
    "grad_norm_sq",
    "grad_evals",
    "bytes_up",
    "bytes_down",
];

/// Metrics at the start of round `t`, i.e. at `x̄_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// `f(x̄_t) − f*`, or the raw value when no minimum is known.
    pub f_gap: f64,
    pub dist_sq: Option<f64>,
    pub grad_norm_sq: f64,
    /// Cumulative gradient-oracle calls.
    pub grad_evals: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// Best value found by a long centralized run, used when `x*` is unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMinimum {
    #[serde(serialize_with = "floatfmt::serialize")]
    pub value: f64,
    pub method: String,
    pub rounds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    /// Against the known minimizer.
    Exact,
    /// Against a [`ReferenceMinimum`].
    Reference,
    /// Raw objective values.
    Raw,
}

/// JSON sidecar written next to every CSV trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config: RunConfig,
    pub problem: Provenance,
    pub dim: usize,
    pub num_clients: usize,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub smoothness: f64,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub strong_convexity: f64,
    pub diverged: bool,
    pub gap_kind: GapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceMinimum>,
    /// `f(avg(x̄_1..x̄_T)) − f*` for `T = 1, 2, …`.
    #[serde(
        default,
        serialize_with = "floatfmt::option_vec::serialize",
        skip_serializing_if = "Option::is_none"
    )]
    pub averaged_gap: Option<Vec<f64>>,
    #[serde(serialize_with = "floatfmt::vec::serialize")]
    pub final_iterate: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub rows: Vec<RoundMetrics>,
}

fn opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

impl Trace {
    pub fn first(&self) -> &RoundMetrics {
        &self.rows[0]
    }

    pub fn last(&self) -> &RoundMetrics {
        self.rows.last().expect("a trace has at least one row")
    }

    pub fn diverged(&self) -> bool {
        self.meta.diverged
    }

    /// First round whose `dist_sq` is at or below `tol`.
    pub fn rounds_to_dist(&self, tol: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.dist_sq.is_some_and(|d| d <= tol))
            .map(|r| r.round)
    }

    /// First round whose `f_gap` is at or below `tol`.
    pub fn rounds_to_gap(&self, tol: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.f_gap <= tol).map(|r| r.round)
    }

    /// Re-expresses raw objective values as gaps to a reference minimum.
    pub fn apply_reference(&mut self, reference: ReferenceMinimum) -> Result<()> {
        if self.meta.gap_kind != GapKind::Raw {
            return Err(Error::InvalidInput(
                "trace already reports gaps against a minimum".into(),
            ));
        }
        for r in &mut self.rows {
            r.f_gap -= reference.value;
        }
        self.meta.gap_kind = GapKind::Reference;
        self.meta.reference = Some(reference);
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.round.to_string(),
                format_f64(r.f_gap),
                opt(r.dist_sq),
                format_f64(r.grad_norm_sq),
                r.grad_evals.to_string(),
                r.bytes_up.to_string(),
                r.bytes_down.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is ascii"))
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<RoundMetrics>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidInput(format!(
                "unexpected trace header {header:?}"
            )));
        }
        r.deserialize().map(|row| Ok(row?)).collect()
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes the CSV at `csv_path` and the sidecar beside it.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()?)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(Self::sidecar_path(csv_path), meta)?;
        Ok(())
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let rows = Self::rows_from_csv(&std::fs::read_to_string(csv_path)?)?;
        let meta_text = std::fs::read_to_string(Self::sidecar_path(csv_path))?;
        let meta = serde_json::from_str(&meta_text)?;
        if rows.is_empty() {
            return Err(Error::InvalidInput("trace has no rows".into()));
        }
        Ok(Self { meta, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{AlgorithmSpec, ClientSchedule, StepPolicy};

    fn sample() -> Trace {
        Trace {
            meta: TraceMeta {
                config: RunConfig {
                    algorithm: AlgorithmSpec::FedAvg,
                    schedule: ClientSchedule::Uniform { h: 2 },
                    steps: StepPolicy::Uniform { eta: 0.1 },
                    rounds: 1,
                    initial: None,
                },
                problem: Provenance::default(),
                dim: 1,
                num_clients: 2,
                smoothness: 2.0,
                strong_convexity: 1.0,
                diverged: false,
                gap_kind: GapKind::Raw,
                reference: None,
                averaged_gap: Some(vec![0.1]),
                final_iterate: vec![0.3],
            },
            rows: vec![
                RoundMetrics {
                    round: 1,
                    f_gap: 3.0,
                    dist_sq: None,
                    grad_norm_sq: 0.1,
                    grad_evals: 0,
                    bytes_up: 0,
                    bytes_down: 0,
                },
                RoundMetrics {
                    round: 2,
                    f_gap: 2.5,
                    dist_sq: Some(1e-3),
                    grad_norm_sq: 0.05,
                    grad_evals: 4,
                    bytes_up: 24,
                    bytes_down: 24,
                },
            ],
        }
    }

    #[test]
    fn csv_has_fixed_header_and_round_trips() {
        let t = sample();
        let text = t.to_csv().unwrap();
        assert!(
            text.starts_with("round,f_gap,dist_sq,grad_norm_sq,grad_evals,bytes_up,bytes_down\n")
        );
        assert_eq!(Trace::rows_from_csv(&text).unwrap(), t.rows);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = sample();
        t.write(&path).unwrap();
        assert_eq!(Trace::read(&path).unwrap(), t);
    }

    #[test]
    fn reference_shifts_raw_values_once() {
        let mut t = sample();
        let reference = ReferenceMinimum {
            value: 2.0,
            method: "centralized_gd".into(),
            rounds: 10,
        };
        t.apply_reference(reference.clone()).unwrap();
        assert_eq!(t.rows[1].f_gap, 0.5);
        assert!(t.apply_reference(reference).is_err());
        assert_eq!(t.rounds_to_dist(1e-2), Some(2));
        assert_eq!(t.rounds_to_gap(0.6), Some(2));
    }
}
