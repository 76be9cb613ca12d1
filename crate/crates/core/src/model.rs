//! Generic parametric ODE model interface and its incidence-type observation.
//!
//! A model exposes its vector field `g(t, x, θ)`, analytic Jacobians, initial
//! state `x0(θ)`, and an output rate `c(t, x, θ)`. The observation at `t_j` is
//! the integral of the output rate over `[t_{j-1}, t_j]`, computed by carrying
//! a cumulative state `C' = c` alongside `x`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{integrate, IntegratorConfig, OdeSystem, TimeGrid, Trajectory};

pub trait ModelSystem: Sync {
    fn state_dim(&self) -> usize;

    fn param_names(&self) -> &[&'static str];

    fn param_count(&self) -> usize {
        self.param_names().len()
    }

    fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| *n == name)
    }

    fn validate(&self, theta: &[f64]) -> Result<()>;

    fn initial_state(&self, theta: &[f64]) -> Vec<f64>;

    /// `∂x0/∂θ`, `state_dim × p`.
    fn initial_state_jacobian(&self, theta: &[f64]) -> DMatrix<f64>;

    fn vector_field(&self, t: f64, x: &[f64], theta: &[f64], dx: &mut [f64]);

    /// `∂g/∂x`, `state_dim × state_dim`.
    fn state_jacobian(&self, t: f64, x: &[f64], theta: &[f64]) -> DMatrix<f64>;

    /// `∂g/∂θ`, `state_dim × p`.
    fn param_jacobian(&self, t: f64, x: &[f64], theta: &[f64]) -> DMatrix<f64>;

    /// Instantaneous rate whose interval integrals form the observations.
    fn output_rate(&self, t: f64, x: &[f64], theta: &[f64]) -> f64;

    fn output_rate_state_grad(&self, t: f64, x: &[f64], theta: &[f64]) -> Vec<f64>;

    fn output_rate_param_grad(&self, t: f64, x: &[f64], theta: &[f64]) -> Vec<f64>;
}

/// Named, ordered full parameter vector of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub units: Vec<String>,
}

impl ParameterSet {
    pub fn new(names: Vec<String>, values: Vec<f64>, units: Vec<String>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: values.len() });
        }
        if units.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: units.len() });
        }
        Ok(Self { names, values, units })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::SubsetUnknownName(name.to_string()))?;
        self.values[i] = value;
        Ok(())
    }
}

/// Resolves parameter names to indices into the model's full parameter vector.
pub fn resolve_indices<M: ModelSystem + ?Sized, S: AsRef<str>>(model: &M, names: &[S]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let name = name.as_ref();
        let idx = model
            .param_index(name)
            .ok_or_else(|| Error::SubsetUnknownName(name.to_string()))?;
        if out.contains(&idx) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        out.push(idx);
    }
    Ok(out)
}

/// The model state augmented with the cumulative output `C`.
struct CumulativeSystem<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a [f64],
}

impl<M: ModelSystem + ?Sized> OdeSystem for CumulativeSystem<'_, M> {
    fn dim(&self) -> usize {
        self.model.state_dim() + 1
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.model.state_dim();
        self.model.vector_field(t, &y[..d], self.theta, &mut dy[..d]);
        dy[d] = self.model.output_rate(t, &y[..d], self.theta);
    }
}

fn check_theta<M: ModelSystem + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_count() {
        return Err(Error::DimensionMismatch { expected: model.param_count(), got: theta.len() });
    }
    model.validate(theta)
}

/// Integrates state plus cumulative output; the last component of each state is `C(t)`.
pub fn simulate<M: ModelSystem + ?Sized>(
    model: &M,
    theta: &[f64],
    grid: &TimeGrid,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    check_theta(model, theta)?;
    let mut y0 = model.initial_state(theta);
    y0.push(0.0);
    let system = CumulativeSystem { model, theta };
    integrate(&system, &y0, grid, config)
}

/// Interval integrals of the output rate, `z_j = C(t_j) − C(t_{j−1})`.
pub fn output_series<M: ModelSystem + ?Sized>(
    model: &M,
    theta: &[f64],
    grid: &TimeGrid,
    config: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let traj = simulate(model, theta, grid, config)?;
    let d = model.state_dim();
    Ok(traj.states.windows(2).map(|w| w[1][d] - w[0][d]).collect())
}
