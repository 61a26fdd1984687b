use nalgebra::QR;
use serde::{Deserialize, Serialize};

use super::{Family, FederationProblem, LeastSquares, Logistic, Objective, Provenance, Quadratic};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::rng::SeededRng;

/// Synthetic-data generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// number of clients
    pub m: usize,
    /// samples per client
    pub n_i: usize,
    pub d: usize,
    /// heterogeneity level: per-client means `u_i ~ N(0, alpha)`
    pub alpha: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_i == 0 || self.d == 0 {
            return Err(Error::InvalidConfig(
                "m, n_i and d must all be at least 1".into(),
            ));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Least-squares federation with heterogeneity controlled by `alpha`.
///
/// Per client, in order: `u_i ~ N(0, alpha)`, true parameter entries
/// `~ N(u_i, 1)`, design entries `~ N(0, 1)` (row-major), then noise entries
/// `~ N(0, noise_std²)`. The response is `A_i x_i + ε_i`. The closed-form
/// minimizer is attached.
pub fn synth_least_squares(cfg: &SynthConfig) -> Result<FederationProblem> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut clients = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let u = rng.normal_with(0.0, cfg.alpha.sqrt());
        let truth = Vector::from_iterator(cfg.d, (0..cfg.d).map(|_| rng.normal_with(u, 1.0)));
        let design = rng.normal_matrix(cfg.n_i, cfg.d);
        let noise = Vector::from_iterator(
            cfg.n_i,
            (0..cfg.n_i).map(|_| rng.normal_with(0.0, cfg.noise_std)),
        );
        let response = &design * &truth + noise;
        clients.push(Objective::new(Family::LeastSquares(LeastSquares::new(
            design, response,
        )?)));
    }
    FederationProblem::new(clients)?
        .with_closed_form_minimizer()
        .map(|p| p.with_provenance(synth_provenance("synth_least_squares", cfg)))
}

/// Logistic-regression federation.
///
/// A shared parameter `x ~ N(0, I_d)` is drawn first. Per client:
/// `u_i ~ N(0, alpha)` shifts every entry of the client's parameter, then
/// features `~ N(0, 1)` (row-major), then for each sample a logit noise
/// `~ N(0, noise_std²)` and a uniform draw `U`; the label is `+1` iff
/// `U < σ(a_jᵀx_i + noise)`. With `alpha = 0` and `noise_std = 0` every client
/// samples from the same logistic model. No minimizer is attached.
pub fn synth_logistic(cfg: &SynthConfig) -> Result<FederationProblem> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let shared = rng.normal_vector(cfg.d);
    let mut clients = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let u = rng.normal_with(0.0, cfg.alpha.sqrt());
        let truth = shared.add_scalar(u);
        let features = rng.normal_matrix(cfg.n_i, cfg.d);
        let logits = &features * &truth;
        let labels = logits
            .iter()
            .map(|&z| draw_label(&mut rng, z, cfg.noise_std))
            .collect();
        clients.push(Objective::new(Family::Logistic(Logistic::new(
            features, labels,
        )?)));
    }
    Ok(FederationProblem::new(clients)?.with_provenance(synth_provenance("synth_logistic", cfg)))
}

/// Draws a ±1 label with `P(+1) = σ(logit + N(0, noise_std²))`.
pub(crate) fn draw_label(rng: &mut SeededRng, logit: f64, noise_std: f64) -> f64 {
    let noisy = logit + rng.normal_with(0.0, noise_std);
    if rng.uniform() < super::sigmoid(noisy) {
        1.0
    } else {
        -1.0
    }
}

fn synth_provenance(kind: &str, cfg: &SynthConfig) -> Provenance {
    Provenance {
        kind: kind.into(),
        seed: Some(cfg.seed),
        generator: Some(cfg.clone()),
    }
}

/// `f₁(x) = ½(x − 3)²`, `f₂(x) = (x − 50)²`.
pub fn two_client_scalar() -> FederationProblem {
    let clients = [(1.0, 3.0), (2.0, 50.0)]
        .iter()
        .map(|&(a, c)| {
            let q =
                Quadratic::from_center(Matrix::from_element(1, 1, a), &Vector::from_element(1, c))
                    .expect("valid scalar quadratic");
            Objective::new(Family::Quadratic(q))
        })
        .collect();
    FederationProblem::new(clients)
        .and_then(FederationProblem::with_closed_form_minimizer)
        .expect("two-client instance is well posed")
        .with_provenance(Provenance {
            kind: "two_client_scalar".into(),
            ..Provenance::default()
        })
}

/// `m` copies of one objective.
pub fn identical_clients(obj: Objective, m: usize) -> Result<FederationProblem> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let p = FederationProblem::new(vec![obj; m])?;
    let p = if p.hessian().is_some() {
        p.with_closed_form_minimizer()?
    } else {
        p
    };
    Ok(p.with_provenance(Provenance {
        kind: "identical_clients".into(),
        ..Provenance::default()
    }))
}

fn random_orthogonal(rng: &mut SeededRng, d: usize) -> Matrix {
    let g = rng.normal_matrix(d, d);
    QR::new(g).q()
}

fn spectral_matrix(rng: &mut SeededRng, eigenvalues: &[f64]) -> Matrix {
    let d = eigenvalues.len();
    let q = random_orthogonal(rng, d);
    let diag = Matrix::from_diagonal(&Vector::from_row_slice(eigenvalues));
    let a = &q * diag * q.transpose();
    // exact symmetry
    (&a + a.transpose()) * 0.5
}

/// Random strongly convex quadratics in center form.
///
/// Each client's spectrum is drawn uniformly from `[mu, l]`, with client 0
/// pinned to contain both endpoints so the federation has `μ = mu`, `L = l`.
/// Centers are `N(0, center_std² I)`.
pub fn random_spd_quadratics(
    m: usize,
    d: usize,
    mu: f64,
    l: f64,
    center_std: f64,
    seed: u64,
) -> Result<FederationProblem> {
    if m == 0 || d == 0 || !(mu > 0.0) || !(l >= mu) {
        return Err(Error::InvalidConfig(format!(
            "need m, d >= 1 and 0 < mu <= l (got m={m}, d={d}, mu={mu}, l={l})"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut clients = Vec::with_capacity(m);
    for i in 0..m {
        let mut eig: Vec<f64> = (0..d).map(|_| mu + (l - mu) * rng.uniform()).collect();
        if i == 0 {
            eig[0] = mu;
            if d > 1 {
                eig[d - 1] = l;
            }
        }
        let a = spectral_matrix(&mut rng, &eig);
        let center = rng.normal_vector(d) * center_std;
        clients.push(Objective::new(Family::Quadratic(Quadratic::from_center(
            a, &center,
        )?)));
    }
    Ok(FederationProblem::new(clients)?
        .with_closed_form_minimizer()?
        .with_provenance(Provenance {
            kind: "random_spd_quadratics".into(),
            seed: Some(seed),
            generator: None,
        }))
}

/// Smooth quadratics where client 0 has negative curvature but the average is positive-definite.
///
/// Client 0's spectrum is uniform on `[-neg, l]` with one eigenvalue pinned
/// at `-neg`; every other client's spectrum is uniform on `[1, l]`. Requires
/// `neg < m − 1` so the averaged Hessian stays positive-definite.
pub fn indefinite_quadratics(
    m: usize,
    d: usize,
    neg: f64,
    l: f64,
    seed: u64,
) -> Result<FederationProblem> {
    if m < 2 || d == 0 || !(neg > 0.0) || !(neg < (m - 1) as f64) || !(l >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need m >= 2, d >= 1, 0 < neg < m - 1 and l >= 1 (got m={m}, neg={neg}, l={l})"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut clients = Vec::with_capacity(m);
    for i in 0..m {
        let (lo, hi) = if i == 0 { (-neg, l) } else { (1.0, l) };
        let mut eig: Vec<f64> = (0..d).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        if i == 0 {
            eig[0] = -neg;
        }
        let a = spectral_matrix(&mut rng, &eig);
        let center = rng.normal_vector(d);
        let b = &a * &center;
        clients.push(Objective::new(Family::Quadratic(
            Quadratic::new_unchecked_curvature(a, b, 0.0)?,
        )));
    }
    Ok(FederationProblem::new(clients)?
        .with_closed_form_minimizer()?
        .with_provenance(Provenance {
            kind: "indefinite_quadratics".into(),
            seed: Some(seed),
            generator: None,
        }))
}

/// Least squares with `n_i < d` rows per client (each client rank-deficient)
/// but `m · n_i >= d` rows overall, so the global problem has a unique minimizer.
pub fn rank_deficient_least_squares(
    m: usize,
    n_i: usize,
    d: usize,
    seed: u64,
) -> Result<FederationProblem> {
    if n_i == 0 || n_i >= d || m * n_i < d {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= n_i < d and m * n_i >= d (got m={m}, n_i={n_i}, d={d})"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut clients = Vec::with_capacity(m);
    for _ in 0..m {
        let design = rng.normal_matrix(n_i, d);
        let response = rng.normal_vector(n_i);
        clients.push(Objective::new(Family::LeastSquares(LeastSquares::new(
            design, response,
        )?)));
    }
    Ok(FederationProblem::new(clients)?
        .with_closed_form_minimizer()?
        .with_provenance(Provenance {
            kind: "rank_deficient_least_squares".into(),
            seed: Some(seed),
            generator: None,
        }))
}

/// Two diagonal quadratics `½xᵀA_i x − b_iᵀx` with `A_1 = diag(l, mu)`,
/// `b_1 = (1, 1)`, `A_2 = diag(mu, mu)`, `b_2 = (−1, 2)`.
pub fn fedsplit_instance(l: f64, mu: f64) -> Result<FederationProblem> {
    if !(mu > 0.0) || !(l >= mu) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < mu <= l (got mu={mu}, l={l})"
        )));
    }
    let client = |diag: [f64; 2], b: [f64; 2]| -> Result<Objective> {
        let a = Matrix::from_diagonal(&Vector::from_row_slice(&diag));
        Ok(Objective::new(Family::Quadratic(Quadratic::new(
            a,
            Vector::from_row_slice(&b),
            0.0,
        )?)))
    };
    let clients = vec![client([l, mu], [1.0, 1.0])?, client([mu, mu], [-1.0, 2.0])?];
    Ok(FederationProblem::new(clients)?
        .with_closed_form_minimizer()?
        .with_provenance(Provenance {
            kind: "fedsplit_instance".into(),
            ..Provenance::default()
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::least_squares_global_minimizer;

    fn cfg(alpha: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            m: 3,
            n_i: 12,
            d: 4,
            alpha,
            noise_std: 0.5,
            seed,
        }
    }

    #[test]
    fn fedsplit_instance_minimizer() {
        let p = fedsplit_instance(1000.0, 1.0).unwrap();
        let xs = p.x_star().unwrap();
        assert!((xs[0] - 0.0).abs() < 1e-15);
        assert!((xs[1] - 1.5).abs() < 1e-15);
        assert_eq!(p.smoothness(), 1000.0);
        assert_eq!(p.strong_convexity(), 1.0);
    }

    #[test]
    fn least_squares_is_deterministic() {
        let a = synth_least_squares(&cfg(10.0, 5)).unwrap();
        let b = synth_least_squares(&cfg(10.0, 5)).unwrap();
        for (ca, cb) in a.clients().iter().zip(b.clients()) {
            assert_eq!(ca, cb);
        }
        assert_eq!(a.x_star(), b.x_star());
    }

    #[test]
    fn least_squares_shape_matches_config() {
        let c = SynthConfig {
            m: 20,
            n_i: 500,
            d: 100,
            alpha: 10.0,
            noise_std: 0.5,
            seed: 1,
        };
        let p = synth_least_squares(&c).unwrap();
        assert_eq!(p.num_clients(), 20);
        assert_eq!(p.dim(), 100);
        let Family::LeastSquares(ls) = p.clients()[0].family() else {
            panic!("expected least squares");
        };
        assert_eq!(ls.design().shape(), (500, 100));
        assert_eq!(ls.response().len(), 500);
        assert!(p.x_star().is_some());
    }

    #[test]
    fn zero_alpha_noiseless_clients_share_the_parameter_mean() {
        // with alpha = 0 every client's parameter entries are N(0, 1)
        let c = SynthConfig {
            m: 2,
            n_i: 50,
            d: 50,
            alpha: 0.0,
            noise_std: 0.0,
            seed: 3,
        };
        let p = synth_least_squares(&c).unwrap();
        for client in p.clients() {
            let Family::LeastSquares(ls) = client.family() else {
                unreachable!()
            };
            let single = FederationProblem::new(vec![client.clone()]).unwrap();
            let x = least_squares_global_minimizer(&single).unwrap();
            assert!((ls.design() * &x - ls.response()).norm() < 1e-8);
            let mean = x.mean();
            assert!(mean.abs() < 4.0 / (50f64).sqrt(), "mean {mean}");
        }
    }

    #[test]
    fn logistic_is_deterministic_and_shaped() {
        let c = SynthConfig {
            m: 10,
            n_i: 500,
            d: 100,
            alpha: 0.0,
            noise_std: 0.0,
            seed: 9,
        };
        let a = synth_logistic(&c).unwrap();
        let b = synth_logistic(&c).unwrap();
        assert_eq!(a.num_clients(), 10);
        assert_eq!(a.dim(), 100);
        assert!(a.x_star().is_none());
        for (ca, cb) in a.clients().iter().zip(b.clients()) {
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn saturated_logistic_label_is_positive() {
        // one huge positive feature times a positive parameter: σ ≈ 1
        let feature = 1e6;
        let truth = 2.0;
        for seed in 0..50 {
            let mut rng = SeededRng::new(seed);
            assert_eq!(draw_label(&mut rng, feature * truth, 0.5), 1.0);
        }
        let draw = |seed| draw_label(&mut SeededRng::new(seed), 0.3, 0.5);
        assert_eq!(draw(17), draw(17));
    }

    #[test]
    fn rejects_invalid_config() {
        let mut c = cfg(1.0, 0);
        c.alpha = -1.0;
        assert!(synth_least_squares(&c).is_err());
        let mut c = cfg(1.0, 0);
        c.d = 0;
        assert!(synth_logistic(&c).is_err());
    }

    #[test]
    fn random_quadratics_pin_constants() {
        let p = random_spd_quadratics(5, 6, 1.0, 50.0, 1.0, 4).unwrap();
        assert!((p.smoothness() - 50.0).abs() < 1e-9);
        assert!((p.strong_convexity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn indefinite_average_is_positive_definite() {
        let p = indefinite_quadratics(4, 5, 1.0, 5.0, 2).unwrap();
        assert_eq!(p.strong_convexity(), 0.0);
        let (lo, _) = crate::linalg::eigen_extremes(p.hessian().unwrap());
        assert!(lo > 0.0);
    }
}
