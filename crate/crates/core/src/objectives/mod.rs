//! Client loss families, the federated global objective, and their constants.
//!
//! Each client owns one [`Objective`]: a quadratic, a least-squares fit, or a
//! logistic-regression loss. A [`FederationProblem`] averages `m` of them in
//! client-index order.

mod generators;
mod serial;

pub use generators::{
    fedsplit_instance, identical_clients, indefinite_quadratics, random_spd_quadratics,
    rank_deficient_least_squares, synth_least_squares, synth_logistic, two_client_scalar,
    SynthConfig,
};
pub use serial::{read_problem, write_problem, ClientDocument, ProblemDocument, PROBLEM_FORMAT};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{asymmetry, eigen_extremes, spd_solve, Matrix, Vector};

/// `f(x) = ½ xᵀA x − bᵀx + c0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    a: Matrix,
    b: Vector,
    c0: f64,
}

impl Quadratic {
    /// Builds a convex quadratic; `a` must be symmetric positive-semidefinite.
    pub fn new(a: Matrix, b: Vector, c0: f64) -> Result<Self> {
        let q = Self::new_unchecked_curvature(a, b, c0)?;
        let (lo, _) = eigen_extremes(&q.a);
        if lo < -1e-10 {
            return Err(Error::InvalidInput(format!(
                "quadratic is not positive-semidefinite (smallest eigenvalue {lo:e})"
            )));
        }
        Ok(q)
    }

    /// Same as [`Quadratic::new`] but admits indefinite `a` (smooth nonconvex clients).
    pub fn new_unchecked_curvature(a: Matrix, b: Vector, c0: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidInput(
                "quadratic matrix must be square".into(),
            ));
        }
        check_dim(a.nrows(), b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) || !c0.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite quadratic coefficients".into(),
            ));
        }
        if asymmetry(&a) > 1e-12 {
            return Err(Error::InvalidInput(
                "quadratic matrix is not symmetric".into(),
            ));
        }
        Ok(Self { a, b, c0 })
    }

    /// Center form `½‖A^{1/2}(x − c)‖²`, i.e. `b = A c`, `c0 = ½ cᵀA c`.
    pub fn from_center(a: Matrix, center: &Vector) -> Result<Self> {
        check_dim(a.ncols(), center.len())?;
        let b = &a * center;
        let c0 = 0.5 * center.dot(&b);
        Self::new(a, b, c0)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn linear(&self) -> &Vector {
        &self.b
    }

    pub fn constant(&self) -> f64 {
        self.c0
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b.dot(x) + self.c0
    }

    fn grad(&self, x: &Vector) -> Vector {
        &self.a * x - &self.b
    }
}

/// `f(x) = ½‖design·x − response‖²`, with the Gram matrix cached for fast gradients.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    design: Matrix,
    response: Vector,
    gram: Matrix,
    moment: Vector,
}

impl PartialEq for LeastSquares {
    fn eq(&self, other: &Self) -> bool {
        self.design == other.design && self.response == other.response
    }
}

impl LeastSquares {
    pub fn new(design: Matrix, response: Vector) -> Result<Self> {
        check_dim(design.nrows(), response.len())?;
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite least-squares data".into()));
        }
        let gram = design.transpose() * &design;
        let moment = design.transpose() * &response;
        Ok(Self {
            design,
            response,
            gram,
            moment,
        })
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn response(&self) -> &Vector {
        &self.response
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn moment(&self) -> &Vector {
        &self.moment
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, x: &Vector) -> f64 {
        let r = &self.design * x - &self.response;
        0.5 * r.dot(&r)
    }

    fn grad(&self, x: &Vector) -> Vector {
        &self.gram * x - &self.moment
    }
}

/// `f(x) = Σ_j log(1 + exp(−b_j a_jᵀx))` with labels in {+1, −1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    features: Matrix,
    labels: Vec<f64>,
}

impl Logistic {
    pub fn new(features: Matrix, labels: Vec<f64>) -> Result<Self> {
        check_dim(features.nrows(), labels.len())?;
        if labels.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidInput(
                "logistic labels must be +1 or -1".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite logistic features".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn value(&self, x: &Vector) -> f64 {
        let z = &self.features * x;
        z.iter()
            .zip(&self.labels)
            .map(|(zj, bj)| softplus(-bj * zj))
            .sum()
    }

    fn grad(&self, x: &Vector) -> Vector {
        let z = &self.features * x;
        // d/dz log(1+exp(-b z)) = -b σ(-b z)
        let w = Vector::from_iterator(
            z.len(),
            z.iter()
                .zip(&self.labels)
                .map(|(zj, bj)| -bj * sigmoid(-bj * zj)),
        );
        self.features.transpose() * w
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Quadratic(Quadratic),
    LeastSquares(LeastSquares),
    Logistic(Logistic),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Quadratic,
    LeastSquares,
    Logistic,
}

/// One client's loss with its cached smoothness `L_i` and strong-convexity `μ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    family: Family,
    smoothness: f64,
    strong_convexity: f64,
}

impl Objective {
    pub fn new(family: Family) -> Self {
        let (smoothness, strong_convexity) = compute_constants(&family);
        Self {
            family,
            smoothness,
            strong_convexity,
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn tag(&self) -> FamilyTag {
        match self.family {
            Family::Quadratic(_) => FamilyTag::Quadratic,
            Family::LeastSquares(_) => FamilyTag::LeastSquares,
            Family::Logistic(_) => FamilyTag::Logistic,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            Family::Quadratic(q) => q.dim(),
            Family::LeastSquares(l) => l.dim(),
            Family::Logistic(l) => l.dim(),
        }
    }

    /// `(L_i, μ_i)`.
    pub fn smoothness_constants(&self) -> (f64, f64) {
        (self.smoothness, self.strong_convexity)
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.value_unchecked(x))
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(self.grad(x))
    }

    pub(crate) fn value_unchecked(&self, x: &Vector) -> f64 {
        match &self.family {
            Family::Quadratic(q) => q.value(x),
            Family::LeastSquares(l) => l.value(x),
            Family::Logistic(l) => l.value(x),
        }
    }

    pub(crate) fn grad(&self, x: &Vector) -> Vector {
        match &self.family {
            Family::Quadratic(q) => q.grad(x),
            Family::LeastSquares(l) => l.grad(x),
            Family::Logistic(l) => l.grad(x),
        }
    }

    /// Constant Hessian and linear term `(H, r)` with `∇f(x) = H x − r`, when the family is quadratic.
    pub fn quadratic_form(&self) -> Option<(&Matrix, &Vector)> {
        match &self.family {
            Family::Quadratic(q) => Some((&q.a, &q.b)),
            Family::LeastSquares(l) => Some((&l.gram, &l.moment)),
            Family::Logistic(_) => None,
        }
    }
}

/// `(L_i, μ_i)` for a loss family.
pub fn smoothness_constants(obj: &Objective) -> (f64, f64) {
    obj.smoothness_constants()
}

fn compute_constants(family: &Family) -> (f64, f64) {
    match family {
        Family::Quadratic(q) => curvature_constants(&q.a),
        Family::LeastSquares(l) => curvature_constants(&l.gram),
        Family::Logistic(l) => {
            let xtx = l.features.transpose() * &l.features;
            let (_, hi) = eigen_extremes(&xtx);
            (0.25 * hi.max(0.0), 0.0)
        }
    }
}

fn curvature_constants(h: &Matrix) -> (f64, f64) {
    let (lo, hi) = eigen_extremes(h);
    // indefinite clients are smooth with constant max|λ| and carry no strong convexity
    let smooth = hi.abs().max(lo.abs());
    let strong = if lo > 0.0 { lo } else { 0.0 };
    (smooth, strong)
}

/// Where a problem came from; echoed into problem files and trace sidecars.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub seed: Option<u64>,
    pub generator: Option<SynthConfig>,
}

/// `m` client objectives averaged into `f(x) = (1/m) Σ f_i(x)`.
#[derive(Clone, Debug)]
pub struct FederationProblem {
    clients: Vec<Objective>,
    smoothness: f64,
    strong_convexity: f64,
    x_star: Option<Vector>,
    // averaged constant Hessian when every client is quadratic-type
    hessian: Option<Matrix>,
    f_star: Option<f64>,
    provenance: Provenance,
}

impl FederationProblem {
    pub fn new(clients: Vec<Objective>) -> Result<Self> {
        let Some(first) = clients.first() else {
            return Err(Error::InvalidInput(
                "a federation needs at least one client".into(),
            ));
        };
        let d = first.dim();
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        for c in &clients {
            check_dim(d, c.dim())?;
        }
        let smoothness = clients.iter().map(|c| c.smoothness).fold(0.0_f64, f64::max);
        let strong_convexity = clients
            .iter()
            .map(|c| c.strong_convexity)
            .fold(f64::INFINITY, f64::min);
        let hessian = if clients.iter().all(|c| c.quadratic_form().is_some()) {
            let mut h = Matrix::zeros(d, d);
            for c in &clients {
                h += c.quadratic_form().map(|(a, _)| a).expect("checked above");
            }
            Some(h / clients.len() as f64)
        } else {
            None
        };
        Ok(Self {
            clients,
            smoothness,
            strong_convexity,
            x_star: None,
            hessian,
            f_star: None,
            provenance: Provenance::default(),
        })
    }

    /// Attaches a known global minimizer; it must be first-order optimal.
    pub fn with_minimizer(mut self, x_star: Vector) -> Result<Self> {
        check_dim(self.dim(), x_star.len())?;
        let (f, g) = self.global_value_and_gradient(&x_star)?;
        if g.norm() > 1e-8 * (1.0 + x_star.norm()) {
            return Err(Error::InvalidInput(format!(
                "supplied minimizer has gradient norm {:e}",
                g.norm()
            )));
        }
        self.f_star = Some(f);
        self.x_star = Some(x_star);
        Ok(self)
    }

    /// Attaches the closed-form minimizer when every client is quadratic-type.
    pub fn with_closed_form_minimizer(self) -> Result<Self> {
        let x = closed_form_minimizer(&self)?;
        self.with_minimizer(x)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn clients(&self) -> &[Objective] {
        &self.clients
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    /// `L = max_i L_i`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `μ = min_i μ_i` (0 when any client is not strongly convex).
    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn kappa(&self) -> Option<f64> {
        (self.strong_convexity > 0.0).then(|| self.smoothness / self.strong_convexity)
    }

    pub fn x_star(&self) -> Option<&Vector> {
        self.x_star.as_ref()
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    /// Averaged Hessian of a quadratic-type federation.
    pub fn hessian(&self) -> Option<&Matrix> {
        self.hessian.as_ref()
    }

    /// `((1/m)Σ f_i(x), (1/m)Σ ∇f_i(x))`, summed in client-index order.
    pub fn global_value_and_gradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        check_dim(self.dim(), x.len())?;
        Ok(self.value_and_grad(x))
    }

    pub(crate) fn value_and_grad(&self, x: &Vector) -> (f64, Vector) {
        let m = self.clients.len() as f64;
        let mut value = 0.0;
        let mut grad = Vector::zeros(self.dim());
        for c in &self.clients {
            value += c.value_unchecked(x);
            grad += c.grad(x);
        }
        (value / m, grad / m)
    }

    pub(crate) fn value_unchecked(&self, x: &Vector) -> f64 {
        let m = self.clients.len() as f64;
        self.clients
            .iter()
            .map(|c| c.value_unchecked(x))
            .sum::<f64>()
            / m
    }

    /// `f(x) − f(x*)` when `x*` is known.
    ///
    /// For quadratic-type federations this is evaluated as `½ eᵀH e` with
    /// `e = x − x*`, which stays accurate down to the underflow range.
    pub fn suboptimality(&self, x: &Vector) -> Option<f64> {
        let x_star = self.x_star.as_ref()?;
        if let Some(h) = &self.hessian {
            let e = x - x_star;
            return Some(0.5 * e.dot(&(h * &e)));
        }
        self.f_star.map(|fs| self.value_unchecked(x) - fs)
    }
}

/// Minimizer of a quadratic-type federation: `(Σ H_i)⁻¹ Σ r_i`.
fn closed_form_minimizer(problem: &FederationProblem) -> Result<Vector> {
    let d = problem.dim();
    let mut h = Matrix::zeros(d, d);
    let mut r = Vector::zeros(d);
    for c in problem.clients() {
        let Some((hi, ri)) = c.quadratic_form() else {
            return Err(Error::InvalidInput(
                "closed-form minimizer needs quadratic or least-squares clients".into(),
            ));
        };
        h += hi;
        r += ri;
    }
    spd_solve(&h, &r)
}

/// `x* = (Σ A_i)⁻¹ (Σ b_i)` for a federation of quadratics.
pub fn quadratic_global_minimizer(problem: &FederationProblem) -> Result<Vector> {
    if problem
        .clients()
        .iter()
        .any(|c| c.tag() != FamilyTag::Quadratic)
    {
        return Err(Error::InvalidInput("all clients must be quadratics".into()));
    }
    closed_form_minimizer(problem)
}

/// `x* = (Σ A_iᵀA_i)⁻¹ (Σ A_iᵀ b_i)` for a federation of least-squares clients.
pub fn least_squares_global_minimizer(problem: &FederationProblem) -> Result<Vector> {
    if problem
        .clients()
        .iter()
        .any(|c| c.tag() != FamilyTag::LeastSquares)
    {
        return Err(Error::InvalidInput(
            "all clients must be least-squares".into(),
        ));
    }
    closed_form_minimizer(problem)
}
