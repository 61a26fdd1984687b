//! Closed-form ground truth: surrogate minimizers reached by FedProx and
//! FedNova, their scalar error formulas, the two-client lower-bound
//! instance, theorem rate bounds and a sampled dissimilarity estimate.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::floatfmt;
use crate::linalg::{spd_solve, Matrix, Vector};
use crate::objectives::{Family, FederationProblem, Objective, Quadratic};
use crate::rng::SeededRng;

/// Distortion matrices `Q_i` and the minimizer of the surrogate they define.
#[derive(Clone, Debug)]
pub struct SurrogateSolution {
    pub q: Vec<Matrix>,
    pub surrogate_minimizer: Vector,
    /// `‖x̃* − x*‖`.
    pub distortion: f64,
}

fn quadratic_forms(problem: &FederationProblem) -> Result<Vec<(&Matrix, &Vector)>> {
    problem
        .clients()
        .iter()
        .map(|c| {
            c.quadratic_form().ok_or_else(|| {
                Error::InvalidInput("surrogate analysis needs quadratic-type clients".into())
            })
        })
        .collect()
}

/// `Σ_{ℓ<n} Bᴸ` by repeated multiplication.
fn geometric_sum(b: &Matrix, n: usize) -> Matrix {
    let d = b.nrows();
    let mut power = Matrix::identity(d, d);
    let mut sum = Matrix::zeros(d, d);
    for _ in 0..n {
        sum += &power;
        power = b * power;
    }
    sum
}

fn solve_surrogate(problem: &FederationProblem, q: Vec<Matrix>) -> Result<SurrogateSolution> {
    let forms = quadratic_forms(problem)?;
    let d = problem.dim();
    let mut lhs = Matrix::zeros(d, d);
    let mut rhs = Vector::zeros(d);
    // A_i c_i = b_i, so Σ Q_i A_i c_i = Σ Q_i b_i
    for (qi, (a, b)) in q.iter().zip(&forms) {
        lhs += qi * *a;
        rhs += qi * *b;
    }
    let lhs = (&lhs + lhs.transpose()) * 0.5;
    let x = spd_solve(&lhs, &rhs)?;
    let x_star = problem.x_star().ok_or(Error::MissingConstant("x*"))?;
    Ok(SurrogateSolution {
        distortion: (&x - x_star).norm(),
        surrogate_minimizer: x,
        q,
    })
}

fn check_step(eta: f64, hi: f64) -> Result<()> {
    if !(eta > 0.0 && eta < hi) {
        return Err(Error::StepOutOfRange { eta, lo: 0.0, hi });
    }
    Ok(())
}

/// Fixed point of FedProx: `Q_i = Σ_{ℓ<H} [I − η(A_i + βI)]^ℓ`.
pub fn surrogate_fedprox(
    problem: &FederationProblem,
    eta: f64,
    beta: f64,
    h: usize,
) -> Result<SurrogateSolution> {
    if h == 0 || !(beta >= 0.0) {
        return Err(Error::InvalidConfig("need H ≥ 1 and β ≥ 0".into()));
    }
    check_step(eta, 1.0 / (problem.smoothness() + beta))?;
    let d = problem.dim();
    let q = quadratic_forms(problem)?
        .into_iter()
        .map(|(a, _)| {
            let b = Matrix::identity(d, d) - (a + Matrix::identity(d, d) * beta) * eta;
            geometric_sum(&b, h)
        })
        .collect();
    solve_surrogate(problem, q)
}

/// Fixed point of FedNova: `Q_i = α_i Σ_{ℓ<τ_i} [I − ηA_i]^ℓ` with `α_i = τ_eff/τ_i`.
pub fn surrogate_fednova(
    problem: &FederationProblem,
    eta: f64,
    taus: &[usize],
) -> Result<SurrogateSolution> {
    check_dim(problem.num_clients(), taus.len())?;
    if taus.contains(&0) {
        return Err(Error::InvalidConfig("every client needs τ_i ≥ 1".into()));
    }
    check_step(eta, 1.0 / problem.smoothness())?;
    let d = problem.dim();
    let tau_eff = taus.iter().sum::<usize>() as f64 / taus.len() as f64;
    let q = quadratic_forms(problem)?
        .into_iter()
        .zip(taus)
        .map(|((a, _), &tau)| {
            let b = Matrix::identity(d, d) - a * eta;
            geometric_sum(&b, tau) * (tau_eff / tau as f64)
        })
        .collect();
    solve_surrogate(problem, q)
}

/// `|x̃* − x*|` of FedProx with `H = 2` on the two-client scalar instance.
pub fn fedprox_scalar_error(eta: f64, beta: f64) -> Result<f64> {
    check_step(eta, 1.0 / (2.0 + beta))?;
    Ok(94.0 * eta / (3.0 * (6.0 - eta * (5.0 + 3.0 * beta))))
}

/// `|x̃* − x*|` of FedNova with `(τ_1, τ_2) = (3, 2)` on the two-client scalar instance.
pub fn fednova_scalar_error(eta: f64) -> Result<f64> {
    check_step(eta, 0.5)?;
    let (a1, a2) = (5.0 / 6.0, 5.0 / 4.0);
    let s = 3.0 * a1 + 4.0 * a2;
    Ok(94.0 * a1 * eta * eta / (3.0 * (eta * eta * a1 - eta * s + s)))
}

/// Step counts under which [`fednova_scalar_error`] holds.
pub const FEDNOVA_SCALAR_TAUS: [usize; 2] = [3, 2];

/// Two quadratics `½xᵀx + bᵀx` and `½xᵀdiag(L,1)x − bᵀx` on which FedLin
/// cannot converge faster than `exp(−4T)` when `η < 1/H`.
#[derive(Clone, Debug)]
pub struct LowerBoundInstance {
    pub problem: FederationProblem,
    /// `x̄_{t+1} = M x̄_t`.
    pub transition: Matrix,
    pub lambda1: f64,
    pub lambda2: f64,
    pub smoothness: f64,
    pub h: usize,
    pub eta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LowerBoundReport {
    #[serde(serialize_with = "floatfmt::serialize")]
    pub smoothness: f64,
    pub h: usize,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub eta: f64,
    #[serde(serialize_with = "floatfmt::vec::serialize")]
    pub transition: Vec<f64>,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub lambda1: f64,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub lambda2: f64,
    pub schur_stable: bool,
}

impl LowerBoundInstance {
    pub fn schur_stable(&self) -> bool {
        self.lambda1.abs() < 1.0 && self.lambda2.abs() < 1.0
    }

    pub fn report(&self) -> LowerBoundReport {
        LowerBoundReport {
            smoothness: self.smoothness,
            h: self.h,
            eta: self.eta,
            transition: vec![
                self.transition[(0, 0)],
                self.transition[(0, 1)],
                self.transition[(1, 0)],
                self.transition[(1, 1)],
            ],
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            schur_stable: self.schur_stable(),
        }
    }
}

pub fn lower_bound_instance(l: f64, h: usize, eta: f64) -> Result<LowerBoundInstance> {
    lower_bound_instance_with_offset(l, h, eta, &Vector::zeros(2))
}

pub fn lower_bound_instance_with_offset(
    l: f64,
    h: usize,
    eta: f64,
    b: &Vector,
) -> Result<LowerBoundInstance> {
    if !(l >= 14.0) || h < 2 || !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lower-bound instance needs L ≥ 14, H ≥ 2, η > 0 (got L={l}, H={h}, η={eta})"
        )));
    }
    check_dim(2, b.len())?;
    let first = Quadratic::new(Matrix::identity(2, 2), -b, 0.0)?;
    let second = Quadratic::new(
        Matrix::from_diagonal(&Vector::from_row_slice(&[l, 1.0])),
        b.clone(),
        0.0,
    )?;
    let problem = FederationProblem::new(vec![
        Objective::new(Family::Quadratic(first)),
        Objective::new(Family::Quadratic(second)),
    ])?
    .with_closed_form_minimizer()?;

    let hf = h as i32;
    let lambda1 = ((1.0 - eta).powi(hf) + (1.0 - eta * l).powi(hf) / l) * (l + 1.0) / 4.0
        - (l - 1.0).powi(2) / (4.0 * l);
    let lambda2 = (1.0 - eta).powi(hf);
    Ok(LowerBoundInstance {
        problem,
        transition: Matrix::from_diagonal(&Vector::from_row_slice(&[lambda1, lambda2])),
        lambda1,
        lambda2,
        smoothness: l,
        h,
        eta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremId {
    T1,
    P3,
    T3,
    T4a,
    T4b,
    T5,
    T6,
    T7,
    T8,
}

impl TheoremId {
    pub const ALL: [TheoremId; 9] = [
        Self::T1,
        Self::P3,
        Self::T3,
        Self::T4a,
        Self::T4b,
        Self::T5,
        Self::T6,
        Self::T7,
        Self::T8,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown theorem {name:?}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::T1 => "T1",
            Self::P3 => "P3",
            Self::T3 => "T3",
            Self::T4a => "T4a",
            Self::T4b => "T4b",
            Self::T5 => "T5",
            Self::T6 => "T6",
            Self::T7 => "T7",
            Self::T8 => "T8",
        }
    }
}

/// Constants a bound may need; unused ones stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub smoothness: Option<f64>,
    pub strong_convexity: Option<f64>,
    pub delta_s: Option<f64>,
    pub delta_c: Option<f64>,
    /// Dissimilarity constants `(C, D)`.
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub eta_bar: Option<f64>,
    pub h: Option<usize>,
    /// `f(x̄_1) − f*` and `‖x̄_1 − x*‖²`, needed by T4b.
    pub initial_gap: Option<f64>,
    pub initial_dist_sq: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub theorem: TheoremId,
    pub constants: BoundConstants,
}

fn need(x: Option<f64>, name: &'static str) -> Result<f64> {
    x.filter(|v| v.is_finite())
        .ok_or(Error::MissingConstant(name))
}

impl RateBound {
    pub fn new(theorem: TheoremId, constants: BoundConstants) -> Self {
        Self { theorem, constants }
    }

    fn kappa(&self) -> Result<f64> {
        let l = need(self.constants.smoothness, "L")?;
        let mu = need(self.constants.strong_convexity, "mu")?;
        if !(mu > 0.0) {
            return Err(Error::MissingConstant("mu"));
        }
        Ok(l / mu)
    }

    /// Per-round contraction factor of the linear-rate theorems.
    pub fn factor(&self) -> Result<f64> {
        let c = &self.constants;
        Ok(match self.theorem {
            TheoremId::T1 | TheoremId::T3 => 1.0 - 1.0 / (6.0 * self.kappa()?),
            TheoremId::P3 => {
                let h = c.h.ok_or(Error::MissingConstant("H"))?;
                (1.0 - 1.0 / self.kappa()?).powi(h as i32)
            }
            TheoremId::T6 => {
                let ds = c.delta_s.unwrap_or(1.0);
                1.0 - 1.0 / (2.0 * ds * (2.0 + ds.sqrt()) * self.kappa()?)
            }
            TheoremId::T7 => 1.0 - 1.0 / (96.0 * c.delta_s.unwrap_or(1.0) * self.kappa()?),
            TheoremId::T8 => {
                1.0 - 0.75 * need(c.eta_bar, "eta_bar")? * need(c.strong_convexity, "mu")?
            }
            TheoremId::T4a | TheoremId::T4b | TheoremId::T5 => {
                return Err(Error::InvalidInput(format!(
                    "{} is a sublinear bound without a per-round factor",
                    self.theorem.name()
                )))
            }
        })
    }

    /// Additive term of T8; zero for every other theorem.
    pub fn floor(&self) -> Result<f64> {
        if self.theorem != TheoremId::T8 {
            return Ok(0.0);
        }
        let c = &self.constants;
        let dc = c.delta_c.unwrap_or(1.0);
        let cc = need(c.c, "C")?;
        Ok(
            16.0 / 3.0 * need(c.eta_bar, "eta_bar")? * (6.0 / (dc * cc) + dc) * need(c.d, "D")?
                / need(c.strong_convexity, "mu")?,
        )
    }
}

/// Multiplier applied to the initial quantity after `t` rounds.
///
/// Linear theorems return `lead · factor^t` (lead is `2κ` for T7 and 2 for
/// T8). T4a and T5 return `10L/t` and `52L/t`; T4b returns
/// `1/(c·gap_1·(t−1) + 1)` for the iterate `x̄_t`.
pub fn rate_bound(bound: &RateBound, t: usize) -> Result<f64> {
    let c = &bound.constants;
    let tf = t as f64;
    match bound.theorem {
        TheoremId::T4a | TheoremId::T5 => {
            if t == 0 {
                return Err(Error::InvalidInput(
                    "sublinear bounds start at T = 1".into(),
                ));
            }
            let coef = if bound.theorem == TheoremId::T4a {
                10.0
            } else {
                52.0
            };
            Ok(coef * need(c.smoothness, "L")? / tf)
        }
        TheoremId::T4b => {
            if t == 0 {
                return Err(Error::InvalidInput(
                    "sublinear bounds start at T = 1".into(),
                ));
            }
            let l = need(c.smoothness, "L")?;
            let gap1 = need(c.initial_gap, "initial gap")?;
            let dist1 = need(c.initial_dist_sq, "initial distance")?;
            let coef = 1.0 / (12.0 * dist1 * l);
            Ok(1.0 / (coef * gap1 * (tf - 1.0) + 1.0))
        }
        TheoremId::T7 => Ok(2.0 * bound.kappa()? * bound.factor()?.powi(t as i32)),
        TheoremId::T8 => Ok(2.0 * bound.factor()?.powi(t as i32)),
        _ => Ok(bound.factor()?.powi(t as i32)),
    }
}

/// Sampled estimate of `D` in `(1/m)Σ‖∇f_i(x)‖² ≤ C‖∇f(x)‖² + D` for a fixed `C`.
///
/// Points are drawn uniformly from the box `[−radius, radius]^d`. The result
/// is a lower estimate of the true constant, not a certificate.
pub fn estimate_dissimilarity(
    problem: &FederationProblem,
    sample_count: usize,
    radius: f64,
    seed: u64,
    c: f64,
) -> Result<(f64, f64)> {
    if sample_count == 0 || !(radius >= 0.0) || !(c >= 1.0) {
        return Err(Error::InvalidConfig(
            "need at least one sample, a nonnegative radius and C ≥ 1".into(),
        ));
    }
    let d = problem.dim();
    let m = problem.num_clients() as f64;
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..sample_count {
        let x = Vector::from_iterator(d, (0..d).map(|_| radius * (2.0 * rng.uniform() - 1.0)));
        let grads: Vec<Vector> = problem.clients().iter().map(|cl| cl.grad(&x)).collect();
        let mean_sq = grads.iter().map(|g| g.norm_squared()).sum::<f64>() / m;
        let avg = crate::linalg::ordered_mean(d, &grads);
        worst = worst.max(mean_sq - c * avg.norm_squared());
    }
    Ok((c, worst))
}

#[derive(Clone, Debug, Serialize)]
pub struct SurrogateReport {
    pub algorithm: String,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub eta: f64,
    #[serde(serialize_with = "floatfmt::vec::serialize")]
    pub surrogate_minimizer: Vec<f64>,
    #[serde(serialize_with = "floatfmt::vec::serialize")]
    pub x_star: Vec<f64>,
    #[serde(serialize_with = "floatfmt::serialize")]
    pub distortion: f64,
    /// Each `Q_i`, row-major.
    pub q: Vec<QMatrix>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QMatrix {
    pub rows: usize,
    pub cols: usize,
    #[serde(serialize_with = "floatfmt::vec::serialize")]
    pub data: Vec<f64>,
}

impl SurrogateSolution {
    pub fn report(&self, algorithm: &str, eta: f64, x_star: &Vector) -> SurrogateReport {
        SurrogateReport {
            algorithm: algorithm.into(),
            eta,
            surrogate_minimizer: self.surrogate_minimizer.iter().copied().collect(),
            x_star: x_star.iter().copied().collect(),
            distortion: self.distortion,
            q: self
                .q
                .iter()
                .map(|q| QMatrix {
                    rows: q.nrows(),
                    cols: q.ncols(),
                    data: (0..q.nrows())
                        .flat_map(|r| q.row(r).iter().copied().collect::<Vec<_>>())
                        .collect(),
                })
                .collect(),
        }
    }
}
