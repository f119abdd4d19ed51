//! Damped Gauss-Newton for the small dense problems the positioning solvers
//! pose (three or four unknowns, a handful of residuals).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquaresProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Matrix of the normal equations at `x`. Gauss-Newton's `JᵀJ` unless a
    /// problem knows its exact Hessian.
    fn normal_matrix(
        &self,
        _x: &DVector<f64>,
        jac: &DMatrix<f64>,
        _r: &DVector<f64>,
    ) -> DMatrix<f64> {
        jac.transpose() * jac
    }

    /// Maps an iterate back into the feasible set.
    fn project(&self, _x: &mut DVector<f64>) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsConfig {
    /// Converged once the accepted step is shorter than this, meters.
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Default for NlsConfig {
    fn default() -> Self {
        Self {
            step_tol: 1e-4,
            max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlsOutcome {
    pub x: DVector<f64>,
    pub residuals: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl NlsOutcome {
    pub fn residual_norm(&self) -> f64 {
        self.residuals.norm()
    }
}

fn cost(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Minimizes `½‖r(x)‖²` from `x0`. Plain Gauss-Newton steps are tried
/// first; Levenberg-Marquardt damping takes over when a step fails to
/// reduce the cost or the normal matrix cannot be factored.
pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: DVector<f64>,
    cfg: &NlsConfig,
) -> Result<NlsOutcome> {
    let mut x = x0;
    problem.project(&mut x);
    let mut r = problem.residuals(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite residual at the initial guess".into(),
        ));
    }
    let mut lambda = 0.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let jac = problem.jacobian(&x);
        let normal = problem.normal_matrix(&x, &jac, &r);
        let grad = jac.transpose() * &r;
        let scale = normal.diagonal().max().max(1e-300);

        let mut accepted = None;
        for _ in 0..12 {
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * scale;
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda = if lambda == 0.0 { 1e-9 } else { lambda * 10.0 };
                continue;
            };
            let mut candidate = &x + &step;
            problem.project(&mut candidate);
            let rc = problem.residuals(&candidate);
            if rc.iter().all(|v| v.is_finite()) && cost(&rc) <= cost(&r) * (1.0 + 1e-12) {
                accepted = Some((candidate, rc));
                lambda *= 0.1;
                if lambda < 1e-9 {
                    lambda = 0.0;
                }
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
        }

        let Some((next, rn)) = accepted else {
            // No descent direction left; treat as a stationary point.
            converged = grad.norm() <= 1e-9 * (1.0 + r.norm());
            break;
        };
        let moved = (&next - &x).norm();
        x = next;
        r = rn;
        if moved < cfg.step_tol {
            converged = true;
            break;
        }
    }

    Ok(NlsOutcome {
        x,
        residuals: r,
        iterations,
        converged,
    })
}

/// Central finite-difference Jacobian, used to validate analytic ones.
pub fn numeric_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let m = problem.residuals(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let d = (problem.residuals(&xp) - problem.residuals(&xm)) / (2.0 * step);
        out.set_column(k, &d);
    }
    out
}
