//! Output sensitivity matrices `χ_{ji} = ∂z(t_j; θ)/∂θ_i`.
//!
//! The forward route integrates the state, the cumulative output and the
//! sensitivity of both to every active parameter as one system:
//!
//! ```text
//! d/dt ∂x/∂θ_i = ∂g/∂x · ∂x/∂θ_i + ∂g/∂θ_i,      ∂x/∂θ_i(t0) = ∂x0/∂θ_i
//! d/dt ∂C/∂θ_i = ∂c/∂x · ∂x/∂θ_i + ∂c/∂θ_i,      ∂C/∂θ_i(t0) = 0
//! ```
//!
//! The finite-difference route is kept as an independent check.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{output_series, resolve_indices, ModelSystem};
use crate::ode::{integrate, IntegratorConfig, OdeSystem, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    /// Observation times, one per row.
    pub times: Vec<f64>,
    /// Active parameter names, one per column.
    pub names: Vec<String>,
    /// Full parameter vector the matrix was evaluated at.
    pub theta: Vec<f64>,
    /// Model outputs `z(t_j; θ)` at the same point.
    pub outputs: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl SensitivityMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Columns for `names`, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<SensitivityMatrix> {
        let cols = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::SubsetUnknownName(n.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(SensitivityMatrix {
            times: self.times.clone(),
            names: names.iter().map(|s| s.to_string()).collect(),
            theta: self.theta.clone(),
            outputs: self.outputs.clone(),
            values: self.values.select_columns(&cols),
        })
    }
}

/// Which components of the joint state/sensitivity system drive step-size control.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ErrorControl {
    /// Only the state and cumulative output. The step sequence is then the
    /// same for every active subset, so a column does not depend on which
    /// other parameters are active.
    #[default]
    StateOnly,
    /// State, cumulative output and every sensitivity column.
    Full,
}

struct ForwardSystem<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a [f64],
    active: &'a [usize],
    control: ErrorControl,
}

impl<M: ModelSystem + ?Sized> OdeSystem for ForwardSystem<'_, M> {
    fn dim(&self) -> usize {
        (self.model.state_dim() + 1) * (1 + self.active.len())
    }

    fn error_components(&self) -> usize {
        match self.control {
            ErrorControl::StateOnly => self.model.state_dim() + 1,
            ErrorControl::Full => self.dim(),
        }
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.model.state_dim();
        let block = d + 1;
        let x = &y[..d];
        self.model.vector_field(t, x, self.theta, &mut dy[..d]);
        dy[d] = self.model.output_rate(t, x, self.theta);

        let jx = self.model.state_jacobian(t, x, self.theta);
        let jp = self.model.param_jacobian(t, x, self.theta);
        let cx = self.model.output_rate_state_grad(t, x, self.theta);
        let cp = self.model.output_rate_param_grad(t, x, self.theta);

        for (k, &pi) in self.active.iter().enumerate() {
            let off = block * (k + 1);
            let s = &y[off..off + d];
            for r in 0..d {
                let mut acc = jp[(r, pi)];
                for c in 0..d {
                    acc += jx[(r, c)] * s[c];
                }
                dy[off + r] = acc;
            }
            dy[off + d] = cp[pi] + cx.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn check_inputs<M: ModelSystem + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_count() {
        return Err(Error::DimensionMismatch { expected: model.param_count(), got: theta.len() });
    }
    model.validate(theta)
}

/// Forward-sensitivity χ for the named active parameters, at the full parameter vector `theta`.
pub fn output_sensitivities<M: ModelSystem + ?Sized, S: AsRef<str>>(
    model: &M,
    theta: &[f64],
    active: &[S],
    grid: &TimeGrid,
    config: &IntegratorConfig,
) -> Result<SensitivityMatrix> {
    output_sensitivities_with(model, theta, active, grid, config, ErrorControl::default())
}

pub fn output_sensitivities_with<M: ModelSystem + ?Sized, S: AsRef<str>>(
    model: &M,
    theta: &[f64],
    active: &[S],
    grid: &TimeGrid,
    config: &IntegratorConfig,
    control: ErrorControl,
) -> Result<SensitivityMatrix> {
    check_inputs(model, theta)?;
    let idx = resolve_indices(model, active)?;
    let d = model.state_dim();
    let block = d + 1;

    let x0 = model.initial_state(theta);
    let x0_jac = model.initial_state_jacobian(theta);
    let mut y0 = vec![0.0; block * (1 + idx.len())];
    y0[..d].copy_from_slice(&x0);
    for (k, &pi) in idx.iter().enumerate() {
        let off = block * (k + 1);
        for r in 0..d {
            y0[off + r] = x0_jac[(r, pi)];
        }
    }

    let system = ForwardSystem { model, theta, active: &idx, control };
    let traj = integrate(&system, &y0, grid, config)?;

    let n = grid.len();
    let mut values = DMatrix::zeros(n, idx.len());
    let mut outputs = Vec::with_capacity(n);
    for j in 0..n {
        let (prev, next) = (&traj.states[j], &traj.states[j + 1]);
        outputs.push(next[d] - prev[d]);
        for k in 0..idx.len() {
            let pos = block * (k + 1) + d;
            values[(j, k)] = next[pos] - prev[pos];
        }
    }

    Ok(SensitivityMatrix {
        times: grid.points().to_vec(),
        names: active.iter().map(|s| s.as_ref().to_string()).collect(),
        theta: theta.to_vec(),
        outputs,
        values,
    })
}

/// Smallest perturbation magnitude used for parameters at or near zero.
pub const FD_FLOOR: f64 = 1e-8;

/// Central finite differences of the output series; column `i` perturbs
/// `θ_i` by `rel_step · max(|θ_i|, 1e-8)`.
pub fn finite_difference_sensitivities<M: ModelSystem + ?Sized, S: AsRef<str>>(
    model: &M,
    theta: &[f64],
    active: &[S],
    grid: &TimeGrid,
    config: &IntegratorConfig,
    rel_step: f64,
) -> Result<SensitivityMatrix> {
    if !(rel_step > 0.0) {
        return Err(Error::InvalidParameters("rel_step must be positive".into()));
    }
    check_inputs(model, theta)?;
    let idx = resolve_indices(model, active)?;
    let n = grid.len();
    let mut values = DMatrix::zeros(n, idx.len());
    for (k, &pi) in idx.iter().enumerate() {
        let h = rel_step * theta[pi].abs().max(FD_FLOOR);
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[pi] += h;
        minus[pi] -= h;
        let zp = output_series(model, &plus, grid, config)?;
        let zm = output_series(model, &minus, grid, config)?;
        for j in 0..n {
            values[(j, k)] = (zp[j] - zm[j]) / (2.0 * h);
        }
    }
    Ok(SensitivityMatrix {
        times: grid.points().to_vec(),
        names: active.iter().map(|s| s.as_ref().to_string()).collect(),
        theta: theta.to_vec(),
        outputs: output_series(model, theta, grid, config)?,
        values,
    })
}

/// Largest over columns of `‖a_i − b_i‖∞ / ‖b_i‖∞`.
pub fn max_relative_column_discrepancy(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.column_iter()
        .zip(b.column_iter())
        .map(|(ca, cb)| {
            let scale = cb.amax();
            let diff = (ca - cb).amax();
            if scale == 0.0 {
                diff
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}
