//! Bound-constrained nonlinear least squares by a Levenberg–Marquardt
//! trust-region iteration.
//!
//! Each step solves the damped subproblem `min ‖r + J δ‖² + λ ‖D δ‖²` through
//! the SVD of the column-normalised Jacobian, so ill-conditioned Jacobians
//! never go through the normal equations. Trial points are projected onto the
//! bounds; a trial point the problem cannot evaluate counts as a rejected step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd;

/// Residual vector and its Jacobian.
pub trait LeastSquaresProblem {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Residuals and Jacobian `∂r/∂x` at `x`.
    fn residuals_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Largest cosine between the residual and a Jacobian column.
    pub gradient_tol: f64,
    /// Relative step size below which the iteration stops.
    pub step_tol: f64,
    /// Relative cost reduction of an accepted step below which the iteration stops; 0 disables.
    pub cost_tol: f64,
    pub initial_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: 1e-8,
            step_tol: 1e-10,
            cost_tol: 0.0,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ZeroResidual,
    Gradient,
    StepSize,
    CostReduction,
    MaxIterations,
    /// Damping grew without bound; no further decrease was found.
    NoProgress,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations | Termination::NoProgress)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Largest `|J_iᵀ r| / (‖J_i‖ ‖r‖)` over columns not pinned at an active bound.
fn scaled_gradient(jac: &DMatrix<f64>, r: &[f64], x: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let rn = sum_sq(r).sqrt();
    if rn == 0.0 {
        return 0.0;
    }
    let rv = DVector::from_column_slice(r);
    let mut worst = 0.0f64;
    for (i, col) in jac.column_iter().enumerate() {
        let cn = col.norm();
        if cn == 0.0 {
            continue;
        }
        let g = col.dot(&rv);
        // descent direction is −g; skip components blocked by a bound
        if (g > 0.0 && x[i] <= lower[i]) || (g < 0.0 && x[i] >= upper[i]) {
            continue;
        }
        worst = worst.max(g.abs() / (cn * rn));
    }
    worst
}

/// Minimises `‖r(x)‖²` over `lower ≤ x ≤ upper` starting at `x0`.
pub fn solve<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &SolverOptions,
) -> Result<Solution> {
    let p = x0.len();
    if lower.len() != p || upper.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: lower.len().min(upper.len()) });
    }
    if (0..p).any(|i| !(lower[i] <= x0[i] && x0[i] <= upper[i])) {
        return Err(Error::InvalidFitConfig("initial guess lies outside the bounds".into()));
    }

    let mut x = x0.to_vec();
    let (mut r, mut jac) = problem.residuals_and_jacobian(&x)?;
    let mut cost = sum_sq(&r);
    let mut evaluations = 1;
    let mut lambda = options.initial_damping;
    let mut nu = 2.0;
    let mut iterations = 0;

    let finish = |x: Vec<f64>, r: Vec<f64>, jac: DMatrix<f64>, cost: f64, it: usize, ev: usize, t: Termination| Solution {
        x,
        residuals: r,
        jacobian: jac,
        cost,
        iterations: it,
        evaluations: ev,
        termination: t,
    };

    loop {
        if cost == 0.0 {
            return Ok(finish(x, r, jac, cost, iterations, evaluations, Termination::ZeroResidual));
        }
        if scaled_gradient(&jac, &r, &x, lower, upper) <= options.gradient_tol {
            return Ok(finish(x, r, jac, cost, iterations, evaluations, Termination::Gradient));
        }
        if iterations >= options.max_iterations {
            return Ok(finish(x, r, jac, cost, iterations, evaluations, Termination::MaxIterations));
        }
        iterations += 1;

        // column normalisation: D = diag(‖J_i‖)
        let scale: Vec<f64> = jac
            .column_iter()
            .zip(&x)
            .map(|(c, xi)| {
                let n = c.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0 / xi.abs().max(1.0)
                }
            })
            .collect();
        let grad = jac.tr_mul(&DVector::from_column_slice(&r));
        let mut js = jac.clone();
        for (i, mut col) in js.column_iter_mut().enumerate() {
            let blocked = (grad[i] > 0.0 && x[i] <= lower[i]) || (grad[i] < 0.0 && x[i] >= upper[i]);
            if blocked {
                col.fill(0.0);
            } else {
                col /= scale[i];
            }
        }
        let dec = svd(&js)?;
        let ut_r = dec.u.tr_mul(&DVector::from_column_slice(&r));

        let mut accepted = false;
        while !accepted {
            // δ_s = −V diag(s / (s² + λ)) Uᵀ r
            let coeffs = DVector::from_iterator(
                p,
                dec.singular_values.iter().zip(ut_r.iter()).map(|(s, c)| -s * c / (s * s + lambda)),
            );
            let step_s = &dec.v * coeffs;
            let mut trial: Vec<f64> = (0..p).map(|i| x[i] + step_s[i] / scale[i]).collect();
            project(&mut trial, lower, upper);
            let step: Vec<f64> = (0..p).map(|i| trial[i] - x[i]).collect();

            let rel_step = step
                .iter()
                .zip(&x)
                .map(|(d, xi)| d.abs() / (xi.abs() + options.step_tol))
                .fold(0.0, f64::max);
            if rel_step <= options.step_tol {
                return Ok(finish(x, r, jac, cost, iterations, evaluations, Termination::StepSize));
            }

            // predicted cost of the linearised model at the projected step
            let js_step = &jac * DVector::from_column_slice(&step);
            let predicted_cost: f64 = r.iter().zip(js_step.iter()).map(|(a, b)| (a + b).powi(2)).sum();
            let predicted = cost - predicted_cost;

            evaluations += 1;
            let trial_cost = problem.residuals(&trial).map(|rt| sum_sq(&rt)).unwrap_or(f64::INFINITY);
            let actual = cost - trial_cost;
            let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };

            if trial_cost.is_finite() && rho > 1e-4 {
                accepted = true;
                lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                let (r_new, jac_new) = problem.residuals_and_jacobian(&trial)?;
                let new_cost = sum_sq(&r_new);
                let reduction = (cost - new_cost) / cost;
                x = trial;
                r = r_new;
                jac = jac_new;
                cost = new_cost;
                if reduction.abs() <= options.cost_tol {
                    return Ok(finish(x, r, jac, cost, iterations, evaluations, Termination::CostReduction));
                }
            } else {
                lambda *= nu;
                nu *= 2.0;
                if !lambda.is_finite() || lambda > 1e32 {
                    return Ok(finish(x, r, jac, cost, iterations, evaluations, Termination::NoProgress));
                }
            }
        }
    }
}
