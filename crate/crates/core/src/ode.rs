//! Explicit adaptive Runge–Kutta integration (Dormand–Prince 5(4)).
//!
//! Every requested grid point is hit exactly: a step that would overshoot
//! the next grid point is shortened to end on it, so reported states are
//! never interpolated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation schedule: a start time and strictly increasing observation times after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t0: f64, points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("at least one observation time is required".into()));
        }
        if !t0.is_finite() || points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("times must be finite".into()));
        }
        if points[0] <= t0 {
            return Err(Error::InvalidGrid(format!(
                "first observation time {} must exceed t0 = {}",
                points[0], t0
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "observation times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { t0, points })
    }

    /// `span * per_unit` equally spaced observations starting one cadence after `t0`.
    pub fn uniform(t0: f64, span: f64, per_unit: f64) -> Result<Self> {
        if !(span > 0.0 && per_unit > 0.0) {
            return Err(Error::InvalidGrid("span and cadence must be positive".into()));
        }
        let n = (span * per_unit).round() as usize;
        let points = (1..=n).map(|k| t0 + k as f64 / per_unit).collect();
        Self::new(t0, points)
    }

    /// Weekly observations over five years starting at zero (n = 260).
    pub fn default_weekly() -> Self {
        Self::uniform(0.0, 5.0, 52.0).expect("static grid is valid")
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Start of the interval ending at observation `j` (t0 for the first one).
    pub fn interval_start(&self, j: usize) -> f64 {
        if j == 0 {
            self.t0
        } else {
            self.points[j - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AbsTol {
    Scalar(f64),
    PerComponent(Vec<f64>),
}

impl AbsTol {
    fn get(&self, i: usize) -> f64 {
        match self {
            AbsTol::Scalar(a) => *a,
            AbsTol::PerComponent(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: AbsTol,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: AbsTol::Scalar(1e-10),
            max_step: f64::INFINITY,
            max_steps: 500_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol: AbsTol::Scalar(abs_tol),
            ..Self::default()
        }
    }

    /// Both tolerances divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        let abs_tol = match &self.abs_tol {
            AbsTol::Scalar(a) => AbsTol::Scalar(a / factor),
            AbsTol::PerComponent(v) => AbsTol::PerComponent(v.iter().map(|a| a / factor).collect()),
        };
        Self {
            rel_tol: self.rel_tol / factor,
            abs_tol,
            ..self.clone()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidIntegratorConfig("rel_tol must be positive".into()));
        }
        match &self.abs_tol {
            AbsTol::Scalar(a) if !(*a > 0.0) => {
                return Err(Error::InvalidIntegratorConfig("abs_tol must be positive".into()))
            }
            AbsTol::PerComponent(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
                }
                if v.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::InvalidIntegratorConfig("abs_tol must be positive".into()));
                }
            }
            _ => {}
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidIntegratorConfig("max_step must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidIntegratorConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A first-order system `y' = f(t, y)` of fixed dimension.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Number of leading components that take part in step-size control.
    fn error_components(&self) -> usize {
        self.dim()
    }
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// States at `t0` followed by each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b*, the embedded error weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

struct Workspace {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y_stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
        }
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], config: &IntegratorConfig) -> f64 {
    let sum: f64 = err
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let sc = config.abs_tol.get(i) + config.rel_tol * y[i].abs().max(y_new[i].abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / y.len() as f64).sqrt()
}

/// Hairer–Nørsett–Wanner starting step heuristic.
fn initial_step<S: OdeSystem + ?Sized>(
    system: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    config: &IntegratorConfig,
    controlled: usize,
    stats: &mut IntegrationStats,
) -> f64 {
    let dim = controlled;
    let sc = |i: usize| config.abs_tol.get(i) + config.rel_tol * y[i].abs();
    let d0 = (y[..dim].iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / dim as f64).sqrt();
    let d1 = (f0[..dim].iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / dim as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, f)| v + h0 * f).collect();
    let mut f1 = vec![0.0; y.len()];
    system.rhs(t + h0, &y1, &mut f1);
    stats.rhs_evals += 1;
    let d2 = (f1[..dim]
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / sc(i)).powi(2))
        .sum::<f64>()
        / dim as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    let h = (100.0 * h0).min(h1);
    if h.is_finite() && h > 0.0 {
        h.min(config.max_step)
    } else {
        1e-6f64.min(config.max_step)
    }
}

/// Integrates `system` from `grid.t0()` through every grid point.
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    y0: &[f64],
    grid: &TimeGrid,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let dim = system.dim();
    if y0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: y0.len() });
    }
    config.validate(dim)?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t: grid.t0() });
    }

    let mut stats = IntegrationStats::default();
    let mut times = Vec::with_capacity(grid.len() + 1);
    let mut states = Vec::with_capacity(grid.len() + 1);
    times.push(grid.t0());
    states.push(y0.to_vec());

    let mut ws = Workspace::new(dim);
    let mut t = grid.t0();
    let mut y = y0.to_vec();
    system.rhs(t, &y, &mut ws.k[0]);
    stats.rhs_evals += 1;
    if ws.k[0].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { t });
    }
    let controlled = system.error_components().clamp(1, dim);
    let mut h = initial_step(system, t, &y, &ws.k[0].clone(), config, controlled, &mut stats);
    let mut err_buf = vec![0.0; dim];

    for &target in grid.points() {
        while t < target {
            if stats.accepted + stats.rejected >= config.max_steps {
                return Err(Error::StepLimitExceeded { t, steps: config.max_steps });
            }
            h = h.min(config.max_step);
            let remaining = target - t;
            // land exactly on the grid point; stretch slightly rather than leave a sliver
            let (h_try, hits) = if h >= remaining * 0.999_999 || t + 1.01 * h >= target {
                (remaining, true)
            } else {
                (h, false)
            };
            if h_try <= 16.0 * f64::EPSILON * t.abs().max(1.0) && !hits {
                return Err(Error::NonFiniteState { t });
            }

            let err = dopri_step(system, t, &y, h_try, &mut ws, &mut err_buf);
            stats.rhs_evals += 6;
            let norm = if err.iter().all(|e| e.is_finite()) && ws.y_new.iter().all(|v| v.is_finite()) {
                error_norm(&y[..controlled], &ws.y_new[..controlled], &err[..controlled], config)
            } else {
                f64::NAN
            };

            if !norm.is_finite() {
                stats.rejected += 1;
                h = h_try * 0.25;
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::NonFiniteState { t });
                }
                continue;
            }

            if norm <= 1.0 {
                stats.accepted += 1;
                t = if hits { target } else { t + h_try };
                std::mem::swap(&mut y, &mut ws.y_new);
                // FSAL: the last stage is f(t_new, y_new)
                let last = std::mem::take(&mut ws.k[6]);
                ws.k[6] = std::mem::replace(&mut ws.k[0], last);
                let factor = if norm == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                // a shortened grid-hitting step should not shrink the natural step size
                h = if hits { (h_try * factor).max(h) } else { h_try * factor };
            } else {
                stats.rejected += 1;
                let factor = (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
                h = h_try * factor;
            }
        }
        times.push(target);
        states.push(y.clone());
    }

    Ok(Trajectory { times, states, stats })
}

/// One Dormand–Prince trial step; `ws.k[0]` must hold f(t, y). Fills `ws.y_new`
/// and returns the embedded error estimate.
fn dopri_step<'a, S: OdeSystem + ?Sized>(
    system: &S,
    t: f64,
    y: &[f64],
    h: f64,
    ws: &mut Workspace,
    err: &'a mut [f64],
) -> &'a [f64] {
    let dim = y.len();
    let Workspace { k, y_stage, y_new } = ws;

    for i in 0..dim {
        y_stage[i] = y[i] + h * A21 * k[0][i];
    }
    system.rhs(t + C2 * h, y_stage, &mut k[1]);
    for i in 0..dim {
        y_stage[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    system.rhs(t + C3 * h, y_stage, &mut k[2]);
    for i in 0..dim {
        y_stage[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    system.rhs(t + C4 * h, y_stage, &mut k[3]);
    for i in 0..dim {
        y_stage[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    system.rhs(t + C5 * h, y_stage, &mut k[4]);
    for i in 0..dim {
        y_stage[i] = y[i]
            + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    system.rhs(t + h, y_stage, &mut k[5]);
    for i in 0..dim {
        y_new[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    system.rhs(t + h, y_new, &mut k[6]);
    for i in 0..dim {
        err[i] = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
    }
    err
}
