//! Synthetic observations `y_j = z(t_j; θ0) + σ0 ε_j` with i.i.d. standard normal `ε_j`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::model::{output_series, ModelSystem};
use crate::ode::{IntegratorConfig, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma0: f64,
    pub seed: u64,
}

/// Standard normal draws from a seeded ChaCha20 stream (Box–Muller, both variates used).
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed), spare: None }
    }

    /// Uniform on (0, 1].
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

pub fn provenance(noise: &NoiseSpec) -> String {
    format!("synthetic; ChaCha20 seed={} sigma0={}", noise.seed, noise.sigma0)
}

/// Simulates the noise-free output at `theta0` and adds scaled Gaussian errors.
pub fn generate<M: ModelSystem + ?Sized>(
    model: &M,
    theta0: &[f64],
    grid: &TimeGrid,
    noise: &NoiseSpec,
    integrator: &IntegratorConfig,
) -> Result<DataSet> {
    if !(noise.sigma0 >= 0.0 && noise.sigma0.is_finite()) {
        return Err(Error::InvalidParameters(format!("sigma0 must be finite and nonnegative, got {}", noise.sigma0)));
    }
    let z = output_series(model, theta0, grid, integrator)?;
    let mut stream = GaussianStream::new(noise.seed);
    let values = z.iter().map(|z| z + noise.sigma0 * stream.next_normal()).collect();
    DataSet::new(grid.points().to_vec(), values, provenance(noise))
}
