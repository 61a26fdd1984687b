//! TOP-k sparsification and error-feedback accumulators.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Vector;

/// Bytes per transmitted coordinate: a 4-byte index plus an 8-byte value.
pub const BYTES_PER_ENTRY: usize = 12;

/// Number of coordinates kept by a TOP-k compressor in dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LevelRepr")]
pub struct SparsityLevel {
    k: usize,
    d: usize,
}

#[derive(Deserialize)]
struct LevelRepr {
    k: usize,
    d: usize,
}

impl TryFrom<LevelRepr> for SparsityLevel {
    type Error = Error;

    fn try_from(r: LevelRepr) -> Result<Self> {
        Self::new(r.k, r.d)
    }
}

impl SparsityLevel {
    pub fn new(k: usize, d: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::SparsityOutOfRange { k, d });
        }
        Ok(Self { k, d })
    }

    pub fn dense(d: usize) -> Self {
        Self { k: d, d }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `δ = d/k`.
    pub fn delta(&self) -> f64 {
        self.d as f64 / self.k as f64
    }

    pub fn is_dense(&self) -> bool {
        self.k == self.d
    }

    pub fn payload_bytes(&self) -> usize {
        BYTES_PER_ENTRY * self.k
    }
}

fn by_magnitude(x: &Vector) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| {
        x[j].abs()
            .partial_cmp(&x[i].abs())
            .expect("NaN rejected before selection")
            .then(i.cmp(&j))
    }
}

/// Keeps the `k` largest-magnitude entries of `x` and zeroes the rest.
/// Equal magnitudes are resolved in favour of the lower index.
pub fn top_k(x: &Vector, level: SparsityLevel) -> Result<Vector> {
    check_dim(level.dim(), x.len())?;
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("top_k input contains NaN".into()));
    }
    if level.is_dense() {
        return Ok(x.clone());
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.select_nth_unstable_by(level.k() - 1, by_magnitude(x));
    let mut keep = idx[..level.k()].to_vec();
    keep.sort_unstable();
    let mut out = Vector::zeros(x.len());
    for i in keep {
        out[i] = x[i];
    }
    Ok(out)
}

/// Untransmitted mass carried between rounds by one client or by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorAccumulator {
    residual: Vector,
}

impl ErrorAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            residual: Vector::zeros(d),
        }
    }

    pub fn residual(&self) -> &Vector {
        &self.residual
    }

    /// Compresses `residual + payload`, keeps what was not sent, and returns
    /// the transmitted vector.
    pub fn push(&mut self, payload: &Vector, level: SparsityLevel) -> Result<Vector> {
        check_dim(self.residual.len(), payload.len())?;
        let target = &self.residual + payload;
        let sent = top_k(&target, level)?;
        self.residual = target - &sent;
        Ok(sent)
    }
}

pub fn compress_with_feedback(
    acc: &ErrorAccumulator,
    payload: &Vector,
    level: SparsityLevel,
) -> Result<(Vector, ErrorAccumulator)> {
    let mut next = acc.clone();
    let sent = next.push(payload, level)?;
    Ok((sent, next))
}
