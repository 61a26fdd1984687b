use crate::compression::{top_k, ErrorAccumulator};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{ordered_mean, Vector};
use crate::objectives::{FederationProblem, Objective};

use super::CompressionPlan;

/// One local step: `x − η_i(∇f_i(x) − ∇f_i(x̄) + g)`.
#[cfg_attr(not(debug_assertions), allow(unused_variables))]
pub fn fedlin_local_update(
    x: &Vector,
    x_bar: &Vector,
    grad_at_xbar_i: &Vector,
    g: &Vector,
    eta_i: f64,
    obj: &Objective,
) -> Vector {
    debug_assert_eq!(x.len(), x_bar.len());
    let direction = obj.grad(x) - grad_at_xbar_i + g;
    x - direction * eta_i
}

/// Round-start state of FedLin.
#[derive(Clone, Debug)]
pub struct FedLinState {
    pub x_bar: Vector,
    pub g: Vector,
    pub client_residuals: Vec<ErrorAccumulator>,
    pub server_residual: ErrorAccumulator,
    pub round: usize,
    /// `∇f_i(x̄_t)`, computed at the end of the previous round.
    grads_at_xbar: Vec<Vector>,
}

/// Bookkeeping for one executed round.
#[derive(Clone, Debug, Default)]
pub struct RoundReport {
    /// `max_ℓ ‖x_{i,ℓ} − x̄_t‖` per client.
    pub drift: Vec<f64>,
    pub grad_evals: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl FedLinState {
    /// `x̄_1 = x0`, `g_1 = ∇f(x̄_1)`, zero residuals. Costs `m` gradient calls.
    pub fn new(problem: &FederationProblem, x0: Vector) -> Result<Self> {
        let d = problem.dim();
        check_dim(d, x0.len())?;
        let grads: Vec<Vector> = problem.clients().iter().map(|c| c.grad(&x0)).collect();
        let g = ordered_mean(d, &grads);
        Ok(Self {
            x_bar: x0,
            g,
            client_residuals: vec![ErrorAccumulator::new(d); problem.num_clients()],
            server_residual: ErrorAccumulator::new(d),
            round: 1,
            grads_at_xbar: grads,
        })
    }

    /// Gradient calls spent by [`FedLinState::new`].
    pub fn init_grad_evals(problem: &FederationProblem) -> u64 {
        problem.num_clients() as u64
    }

    /// Executes one round in place.
    pub fn step(
        &mut self,
        problem: &FederationProblem,
        taus: &[usize],
        etas: &[f64],
        plan: &CompressionPlan,
    ) -> Result<RoundReport> {
        let m = problem.num_clients();
        let d = problem.dim();
        if taus.len() != m || etas.len() != m {
            return Err(Error::InvalidConfig(format!(
                "round needs {m} local step counts and step sizes, got {} and {}",
                taus.len(),
                etas.len()
            )));
        }
        let mut report = RoundReport {
            drift: Vec::with_capacity(m),
            ..RoundReport::default()
        };

        let mut locals = Vec::with_capacity(m);
        for (i, client) in problem.clients().iter().enumerate() {
            let mut x = self.x_bar.clone();
            let mut drift = 0.0_f64;
            for _ in 0..taus[i] {
                x = fedlin_local_update(
                    &x,
                    &self.x_bar,
                    &self.grads_at_xbar[i],
                    &self.g,
                    etas[i],
                    client,
                );
                drift = drift.max((&x - &self.x_bar).norm());
            }
            report.grad_evals += taus[i] as u64;
            report.drift.push(drift);
            locals.push(x);
        }
        let x_next = ordered_mean(d, &locals);

        let grads: Vec<Vector> = problem.clients().iter().map(|c| c.grad(&x_next)).collect();
        report.grad_evals += m as u64;

        let g_next = if plan.server_error_feedback {
            let mut uploads = Vec::with_capacity(m);
            for (acc, grad) in self.client_residuals.iter_mut().zip(&grads) {
                uploads.push(acc.push(grad, plan.client)?);
            }
            let avg = ordered_mean(d, &uploads);
            self.server_residual.push(&avg, plan.server)?
        } else {
            top_k(&ordered_mean(d, &grads), plan.server)?
        };

        let model_bytes = (crate::compression::BYTES_PER_ENTRY * d) as u64;
        report.bytes_up = m as u64 * (model_bytes + plan.client.payload_bytes() as u64);
        report.bytes_down = m as u64 * (model_bytes + plan.server.payload_bytes() as u64);

        self.x_bar = x_next;
        self.g = g_next;
        self.grads_at_xbar = grads;
        self.round += 1;
        Ok(report)
    }

    pub fn grads_at_xbar(&self) -> &[Vector] {
        &self.grads_at_xbar
    }
}

/// Functional form of [`FedLinState::step`].
pub fn fedlin_round(
    state: &FedLinState,
    problem: &FederationProblem,
    taus: &[usize],
    etas: &[f64],
    plan: &CompressionPlan,
) -> Result<(FedLinState, RoundReport)> {
    let mut next = state.clone();
    let report = next.step(problem, taus, etas, plan)?;
    Ok((next, report))
}
