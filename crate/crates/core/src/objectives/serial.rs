//! JSON problem files. Matrices are stored row-major with explicit shapes and
//! every float is written with 17 significant digits, so a problem read back
//! from disk is bit-identical to the one written.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Family, FederationProblem, LeastSquares, Logistic, Objective, Provenance, Quadratic};
use crate::error::{Error, Result};
use crate::floatfmt;
use crate::linalg::{Matrix, Vector};

pub const PROBLEM_FORMAT: &str = "fedlin-problem/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemDocument {
    pub format: String,
    pub provenance: Provenance,
    pub dim: usize,
    pub clients: Vec<ClientDocument>,
    #[serde(
        default,
        serialize_with = "floatfmt::option_vec::serialize",
        skip_serializing_if = "Option::is_none"
    )]
    pub x_star: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClientDocument {
    Quadratic {
        rows: usize,
        cols: usize,
        #[serde(serialize_with = "floatfmt::vec::serialize")]
        matrix: Vec<f64>,
        #[serde(serialize_with = "floatfmt::vec::serialize")]
        linear: Vec<f64>,
        #[serde(serialize_with = "floatfmt::serialize")]
        constant: f64,
    },
    LeastSquares {
        rows: usize,
        cols: usize,
        #[serde(serialize_with = "floatfmt::vec::serialize")]
        design: Vec<f64>,
        #[serde(serialize_with = "floatfmt::vec::serialize")]
        response: Vec<f64>,
    },
    Logistic {
        rows: usize,
        cols: usize,
        #[serde(serialize_with = "floatfmt::vec::serialize")]
        features: Vec<f64>,
        labels: Vec<i8>,
    },
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}

fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if rows * cols != data.len() {
        return Err(Error::InvalidInput(format!(
            "matrix data has {} entries, expected {rows}x{cols}",
            data.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

impl ProblemDocument {
    pub fn from_problem(problem: &FederationProblem) -> Self {
        let clients = problem
            .clients()
            .iter()
            .map(|c| match c.family() {
                Family::Quadratic(q) => ClientDocument::Quadratic {
                    rows: q.matrix().nrows(),
                    cols: q.matrix().ncols(),
                    matrix: row_major(q.matrix()),
                    linear: q.linear().iter().copied().collect(),
                    constant: q.constant(),
                },
                Family::LeastSquares(l) => ClientDocument::LeastSquares {
                    rows: l.design().nrows(),
                    cols: l.design().ncols(),
                    design: row_major(l.design()),
                    response: l.response().iter().copied().collect(),
                },
                Family::Logistic(l) => ClientDocument::Logistic {
                    rows: l.features().nrows(),
                    cols: l.features().ncols(),
                    features: row_major(l.features()),
                    labels: l
                        .labels()
                        .iter()
                        .map(|&b| if b > 0.0 { 1 } else { -1 })
                        .collect(),
                },
            })
            .collect();
        Self {
            format: PROBLEM_FORMAT.into(),
            provenance: problem.provenance().clone(),
            dim: problem.dim(),
            clients,
            x_star: problem.x_star().map(|x| x.iter().copied().collect()),
        }
    }

    pub fn into_problem(self) -> Result<FederationProblem> {
        if self.format != PROBLEM_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported problem format {:?}",
                self.format
            )));
        }
        let mut clients = Vec::with_capacity(self.clients.len());
        for c in self.clients {
            let family = match c {
                ClientDocument::Quadratic {
                    rows,
                    cols,
                    matrix,
                    linear,
                    constant,
                } => Family::Quadratic(Quadratic::new_unchecked_curvature(
                    from_row_major(rows, cols, &matrix)?,
                    Vector::from_vec(linear),
                    constant,
                )?),
                ClientDocument::LeastSquares {
                    rows,
                    cols,
                    design,
                    response,
                } => Family::LeastSquares(LeastSquares::new(
                    from_row_major(rows, cols, &design)?,
                    Vector::from_vec(response),
                )?),
                ClientDocument::Logistic {
                    rows,
                    cols,
                    features,
                    labels,
                } => Family::Logistic(Logistic::new(
                    from_row_major(rows, cols, &features)?,
                    labels.into_iter().map(f64::from).collect(),
                )?),
            };
            clients.push(Objective::new(family));
        }
        let problem = FederationProblem::new(clients)?;
        if problem.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: problem.dim(),
            });
        }
        let problem = match self.x_star {
            Some(x) => problem.with_minimizer(Vector::from_vec(x))?,
            None => problem,
        };
        Ok(problem.with_provenance(self.provenance))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_problem(problem: &FederationProblem, path: &Path) -> Result<()> {
    let text = ProblemDocument::from_problem(problem).to_json()?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_problem(path: &Path) -> Result<FederationProblem> {
    let text = std::fs::read_to_string(path)?;
    ProblemDocument::from_json(&text)?.into_problem()
}
