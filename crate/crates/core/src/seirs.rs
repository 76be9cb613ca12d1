//! Seasonally forced SEIRS model with constant population and demography.
//!
//! State `x = (S, E, I, R)` in people, time in years. Parameters are ordered
//! `(S0, E0, I0, N, L, D, M, P, beta0, a1, b1)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{output_series, ModelSystem, ParameterSet};
use crate::ode::{IntegratorConfig, TimeGrid};

pub const PARAM_NAMES: [&str; 11] = ["S0", "E0", "I0", "N", "L", "D", "M", "P", "beta0", "a1", "b1"];
pub const PARAM_UNITS: [&str; 11] = [
    "people", "people", "people", "people", "years", "years", "years", "years", "1/years", "1", "1",
];

pub const IDX_S0: usize = 0;
pub const IDX_E0: usize = 1;
pub const IDX_I0: usize = 2;
pub const IDX_N: usize = 3;
pub const IDX_L: usize = 4;
pub const IDX_D: usize = 5;
pub const IDX_M: usize = 6;
pub const IDX_P: usize = 7;
pub const IDX_BETA0: usize = 8;
pub const IDX_A1: usize = 9;
pub const IDX_B1: usize = 10;

/// Default estimation bounds: seasonal amplitudes in `[-1, 1]`, everything else nonnegative.
pub fn default_bounds(name: &str) -> (f64, f64) {
    match name {
        "a1" | "b1" => (-1.0, 1.0),
        _ => (0.0, f64::INFINITY),
    }
}

/// Seasonal transmission rate `β0 (1 + a1 cos 2πt + b1 sin 2πt)`.
pub fn beta_at(t: f64, beta0: f64, a1: f64, b1: f64) -> f64 {
    let w = 2.0 * PI * t;
    beta0 * (1.0 + a1 * w.cos() + b1 * w.sin())
}

/// Converts amplitude/phase forcing `β1 cos(2π(t − t0))` to `(a1, b1)`.
pub fn seasonal_coefficients(beta1: f64, phase_t0: f64) -> (f64, f64) {
    let w = 2.0 * PI * phase_t0;
    (beta1 * w.cos(), beta1 * w.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeirsParameters {
    pub s0: f64,
    pub e0: f64,
    pub i0: f64,
    pub n: f64,
    pub l: f64,
    pub d: f64,
    pub m: f64,
    pub p: f64,
    pub beta0: f64,
    pub a1: f64,
    pub b1: f64,
}

impl SeirsParameters {
    pub fn nominal() -> Self {
        Self {
            s0: 2.78e5,
            e0: 1.08e-1,
            i0: 1.89e-1,
            n: 1.00e6,
            l: 5.00,
            d: 9.59e-3,
            m: 5.48e-3,
            p: 75.00,
            beta0: 375.00,
            a1: 2.00e-2,
            b1: -2.00e-2,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.s0, self.e0, self.i0, self.n, self.l, self.d, self.m, self.p, self.beta0, self.a1, self.b1,
        ]
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        if theta.len() != PARAM_NAMES.len() {
            return Err(Error::DimensionMismatch { expected: PARAM_NAMES.len(), got: theta.len() });
        }
        Ok(Self {
            s0: theta[IDX_S0],
            e0: theta[IDX_E0],
            i0: theta[IDX_I0],
            n: theta[IDX_N],
            l: theta[IDX_L],
            d: theta[IDX_D],
            m: theta[IDX_M],
            p: theta[IDX_P],
            beta0: theta[IDX_BETA0],
            a1: theta[IDX_A1],
            b1: theta[IDX_B1],
        })
    }

    pub fn to_parameter_set(&self) -> ParameterSet {
        ParameterSet {
            names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            values: self.to_vec(),
            units: PARAM_UNITS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameters(format!("{} is not finite", PARAM_NAMES[i])));
        }
        for (name, value) in [
            ("N", self.n),
            ("L", self.l),
            ("D", self.d),
            ("M", self.m),
            ("P", self.p),
            ("beta0", self.beta0),
        ] {
            if value <= 0.0 {
                return Err(Error::InvalidParameters(format!("{name} must be positive, got {value}")));
            }
        }
        for (name, value) in [("S0", self.s0), ("E0", self.e0), ("I0", self.i0)] {
            if value < 0.0 {
                return Err(Error::InvalidParameters(format!("{name} must be nonnegative, got {value}")));
            }
        }
        if self.s0 + self.e0 + self.i0 > self.n {
            return Err(Error::InvalidParameters(format!(
                "S0 + E0 + I0 = {} exceeds N = {}",
                self.s0 + self.e0 + self.i0,
                self.n
            )));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> [f64; 4] {
        [self.s0, self.e0, self.i0, self.n - self.s0 - self.e0 - self.i0]
    }
}

impl Default for SeirsParameters {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Nominal parameters, observation variance and grid used for subset selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalScenario {
    pub params: SeirsParameters,
    pub sigma0_sq: f64,
    pub grid: TimeGrid,
}

impl Default for NominalScenario {
    fn default() -> Self {
        Self {
            params: SeirsParameters::nominal(),
            sigma0_sq: 500.0,
            grid: TimeGrid::default_weekly(),
        }
    }
}

impl NominalScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0) {
            return Err(Error::InvalidParameters("sigma0_sq must be positive".into()));
        }
        self.params.validate()
    }
}

/// The SEIRS system as a [`ModelSystem`]; observations are new active infections `∫ E/M dt`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeirsModel;

impl ModelSystem for SeirsModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn param_names(&self) -> &[&'static str] {
        &PARAM_NAMES
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        SeirsParameters::from_slice(theta)?.validate()
    }

    fn initial_state(&self, theta: &[f64]) -> Vec<f64> {
        let (s0, e0, i0, n) = (theta[IDX_S0], theta[IDX_E0], theta[IDX_I0], theta[IDX_N]);
        vec![s0, e0, i0, n - s0 - e0 - i0]
    }

    fn initial_state_jacobian(&self, _theta: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(4, PARAM_NAMES.len());
        j[(0, IDX_S0)] = 1.0;
        j[(1, IDX_E0)] = 1.0;
        j[(2, IDX_I0)] = 1.0;
        j[(3, IDX_S0)] = -1.0;
        j[(3, IDX_E0)] = -1.0;
        j[(3, IDX_I0)] = -1.0;
        j[(3, IDX_N)] = 1.0;
        j
    }

    fn vector_field(&self, t: f64, x: &[f64], theta: &[f64], dx: &mut [f64]) {
        let (s, e, i, r) = (x[0], x[1], x[2], x[3]);
        let n = theta[IDX_N];
        let (l, d, m, p) = (theta[IDX_L], theta[IDX_D], theta[IDX_M], theta[IDX_P]);
        let beta = beta_at(t, theta[IDX_BETA0], theta[IDX_A1], theta[IDX_B1]);
        let infection = beta * s * i / n;
        dx[0] = n / p + r / l - infection - s / p;
        dx[1] = infection - e / m - e / p;
        dx[2] = e / m - i / d - i / p;
        dx[3] = i / d - r / l - r / p;
    }

    fn state_jacobian(&self, t: f64, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let (s, i) = (x[0], x[2]);
        let n = theta[IDX_N];
        let (l, d, m, p) = (theta[IDX_L], theta[IDX_D], theta[IDX_M], theta[IDX_P]);
        let beta = beta_at(t, theta[IDX_BETA0], theta[IDX_A1], theta[IDX_B1]);
        #[rustfmt::skip]
        let j = DMatrix::from_row_slice(4, 4, &[
            -beta * i / n - 1.0 / p, 0.0,                 -beta * s / n,          1.0 / l,
             beta * i / n,           -1.0 / m - 1.0 / p,   beta * s / n,          0.0,
             0.0,                     1.0 / m,            -1.0 / d - 1.0 / p,     0.0,
             0.0,                     0.0,                 1.0 / d,              -1.0 / l - 1.0 / p,
        ]);
        j
    }

    fn param_jacobian(&self, t: f64, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let (s, e, i, r) = (x[0], x[1], x[2], x[3]);
        let n = theta[IDX_N];
        let (l, d, m, p) = (theta[IDX_L], theta[IDX_D], theta[IDX_M], theta[IDX_P]);
        let (beta0, a1, b1) = (theta[IDX_BETA0], theta[IDX_A1], theta[IDX_B1]);
        let w = 2.0 * PI * t;
        let (cw, sw) = (w.cos(), w.sin());
        let beta = beta0 * (1.0 + a1 * cw + b1 * sw);
        let contact = s * i / n;

        let mut j = DMatrix::zeros(4, PARAM_NAMES.len());
        j[(0, IDX_N)] = 1.0 / p + beta * contact / n;
        j[(1, IDX_N)] = -beta * contact / n;

        j[(0, IDX_L)] = -r / (l * l);
        j[(3, IDX_L)] = r / (l * l);

        j[(2, IDX_D)] = i / (d * d);
        j[(3, IDX_D)] = -i / (d * d);

        j[(1, IDX_M)] = e / (m * m);
        j[(2, IDX_M)] = -e / (m * m);

        let p2 = p * p;
        j[(0, IDX_P)] = (s - n) / p2;
        j[(1, IDX_P)] = e / p2;
        j[(2, IDX_P)] = i / p2;
        j[(3, IDX_P)] = r / p2;

        let dbeta0 = (1.0 + a1 * cw + b1 * sw) * contact;
        j[(0, IDX_BETA0)] = -dbeta0;
        j[(1, IDX_BETA0)] = dbeta0;
        j[(0, IDX_A1)] = -beta0 * cw * contact;
        j[(1, IDX_A1)] = beta0 * cw * contact;
        j[(0, IDX_B1)] = -beta0 * sw * contact;
        j[(1, IDX_B1)] = beta0 * sw * contact;
        j
    }

    fn output_rate(&self, _t: f64, x: &[f64], theta: &[f64]) -> f64 {
        x[1] / theta[IDX_M]
    }

    fn output_rate_state_grad(&self, _t: f64, _x: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![0.0, 1.0 / theta[IDX_M], 0.0, 0.0]
    }

    fn output_rate_param_grad(&self, _t: f64, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; PARAM_NAMES.len()];
        g[IDX_M] = -x[1] / (theta[IDX_M] * theta[IDX_M]);
        g
    }
}

/// New active infections per observation interval.
pub fn incidence_series(params: &SeirsParameters, grid: &TimeGrid, config: &IntegratorConfig) -> Result<Vec<f64>> {
    params.validate()?;
    output_series(&SeirsModel, &params.to_vec(), grid, config)
}
