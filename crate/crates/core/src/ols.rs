//! Ordinary least squares estimation of an active parameter subset,
//! asymptotic uncertainty at the estimate, and residual diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank, svd};
use crate::lsq::{self, LeastSquaresProblem, SolverOptions, Termination};
use crate::model::{output_series, ModelSystem, ParameterSet};
use crate::ode::{IntegratorConfig, TimeGrid};
use crate::seirs;
use crate::sensitivity::output_sensitivities;
use crate::subset::SubsetSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Start values of the active parameters, in subset order.
    pub initial_guess: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub cost_tol: f64,
    /// Start of the first observation interval.
    pub t0: f64,
}

impl FitConfig {
    pub fn new(initial_guess: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let defaults = SolverOptions::default();
        Self {
            initial_guess,
            lower,
            upper,
            max_iterations: defaults.max_iterations,
            gradient_tol: defaults.gradient_tol,
            step_tol: defaults.step_tol,
            cost_tol: defaults.cost_tol,
            t0: 0.0,
        }
    }

    /// Starts at the values in `start` with the SEIRS default bounds.
    pub fn seirs(subset: &SubsetSpec, start: &ParameterSet) -> Result<Self> {
        let guess = subset.active_values(start)?;
        let (lower, upper) = subset.active.iter().map(|n| seirs::default_bounds(n)).unzip();
        Ok(Self::new(guess, lower, upper))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.initial_guess.len();
        if self.lower.len() != p || self.upper.len() != p {
            return Err(Error::InvalidFitConfig("bounds and initial guess differ in length".into()));
        }
        for i in 0..p {
            if !(self.lower[i] <= self.initial_guess[i] && self.initial_guess[i] <= self.upper[i]) {
                return Err(Error::InvalidFitConfig(format!(
                    "initial value {} of parameter {} outside [{}, {}]",
                    self.initial_guess[i], i, self.lower[i], self.upper[i]
                )));
            }
        }
        if self.max_iterations == 0 || !(self.gradient_tol >= 0.0) || !(self.step_tol >= 0.0) {
            return Err(Error::InvalidFitConfig("tolerances must be nonnegative and max_iterations positive".into()));
        }
        Ok(())
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            gradient_tol: self.gradient_tol,
            step_tol: self.step_tol,
            cost_tol: self.cost_tol,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    /// `J(θ̂) = Σ r_j²`
    pub objective: f64,
    pub sigma_hat_sq: f64,
    /// Absent when χ(θ̂) is rank deficient.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub se: Option<Vec<f64>>,
    /// `SE / estimate`, signed.
    pub cv: Option<Vec<f64>>,
    pub times: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    pub rank_deficient_at_solution: bool,
    pub warnings: Vec<String>,
}

struct OlsProblem<'a, M: ?Sized> {
    model: &'a M,
    subset: &'a SubsetSpec,
    data: &'a [f64],
    grid: &'a TimeGrid,
    integrator: &'a IntegratorConfig,
}

impl<M: ModelSystem + ?Sized> LeastSquaresProblem for OlsProblem<'_, M> {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let theta = self.subset.assemble(self.model, x)?;
        let z = output_series(self.model, &theta, self.grid, self.integrator)?;
        Ok(self.data.iter().zip(&z).map(|(y, z)| y - z).collect())
    }

    fn residuals_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let theta = self.subset.assemble(self.model, x)?;
        let chi = output_sensitivities(self.model, &theta, &self.subset.active, self.grid, self.integrator)?;
        let r = self.data.iter().zip(&chi.outputs).map(|(y, z)| y - z).collect();
        Ok((r, -chi.values))
    }
}

/// `J(θ | y) = Σ_j (y_j − z(t_j; θ))²` for active values `theta_active`.
pub fn objective<M: ModelSystem + ?Sized>(
    theta_active: &[f64],
    subset: &SubsetSpec,
    data: &DataSet,
    model: &M,
    grid: &TimeGrid,
    integrator: &IntegratorConfig,
) -> Result<f64> {
    check_data(data, grid)?;
    let problem = OlsProblem { model, subset, data: &data.values, grid, integrator };
    Ok(problem.residuals(theta_active)?.iter().map(|r| r * r).sum())
}

fn check_data(data: &DataSet, grid: &TimeGrid) -> Result<()> {
    if data.times.as_slice() != grid.points() {
        return Err(Error::DataParse("data times do not match the observation grid".into()));
    }
    Ok(())
}

/// Fits the active parameters of `subset` to `data` by bounded trust-region least squares.
///
/// Non-convergence and a rank-deficient χ(θ̂) are reported through
/// `converged` and `rank_deficient_at_solution`; the partial result is still returned.
pub fn fit<M: ModelSystem + ?Sized>(
    data: &DataSet,
    model: &M,
    subset: &SubsetSpec,
    config: &FitConfig,
    integrator: &IntegratorConfig,
) -> Result<FitResult> {
    config.validate()?;
    let p = subset.p();
    if config.initial_guess.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: config.initial_guess.len() });
    }
    let grid = data.grid(config.t0)?;
    let n = grid.len();
    if n <= p {
        return Err(Error::DegenerateDof { n, p });
    }

    let problem = OlsProblem { model, subset, data: &data.values, grid: &grid, integrator };
    let mut warnings = Vec::new();
    let (_, jac0) = problem.residuals_and_jacobian(&config.initial_guess)?;
    let s0: Vec<f64> = svd(&jac0)?.singular_values.iter().copied().collect();
    let rank0 = numerical_rank(&s0, n, p);
    if rank0 < p {
        warnings.push(format!("sensitivity matrix at the initial guess has rank {rank0} < {p}"));
    }

    let sol = lsq::solve(&problem, &config.initial_guess, &config.lower, &config.upper, &config.solver_options())?;
    let residuals = sol.residuals.clone();
    let fitted: Vec<f64> = data.values.iter().zip(&residuals).map(|(y, r)| y - r).collect();
    let sigma_hat_sq = sigma_hat(&residuals, p)?;
    let chi = -sol.jacobian;

    let (covariance, se, cv, rank_deficient) = match linalg::covariance(sigma_hat_sq, &chi) {
        Ok(cov) => {
            let se = linalg::standard_errors(&cov)?;
            let cv = se.iter().zip(&sol.x).map(|(s, t)| s / t).collect::<Vec<_>>();
            let rows = cov.row_iter().map(|r| r.iter().copied().collect()).collect();
            (Some(rows), Some(se), Some(cv), false)
        }
        Err(Error::RankDeficient { rank, .. }) => {
            warnings.push(format!("sensitivity matrix at the estimate has rank {rank} < {p}; covariance omitted"));
            (None, None, None, true)
        }
        Err(e) => return Err(e),
    };

    Ok(FitResult {
        names: subset.active.clone(),
        estimate: sol.x,
        objective: sol.cost,
        sigma_hat_sq,
        covariance,
        se,
        cv,
        times: data.times.clone(),
        fitted,
        residuals,
        converged: sol.termination.converged(),
        termination: sol.termination,
        iterations: sol.iterations,
        evaluations: sol.evaluations,
        rank_deficient_at_solution: rank_deficient,
        warnings,
    })
}

/// `σ̂² = Σ r_j² / (n − p)`
pub fn sigma_hat(residuals: &[f64], p: usize) -> Result<f64> {
    let n = residuals.len();
    if n <= p {
        return Err(Error::DegenerateDof { n, p });
    }
    Ok(residuals.iter().map(|r| r * r).sum::<f64>() / (n - p) as f64)
}

/// First-order OLS estimate `θ0 + V Λ⁻¹ U₁ᵀ ε` from the thin SVD of χ.
pub fn linearized_estimator(chi: &DMatrix<f64>, errors: &[f64], theta0: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = chi.shape();
    check_linearized(chi, errors, theta0)?;
    let dec = svd(chi)?;
    let s = dec.singular_values.as_slice();
    let rank = numerical_rank(s, n, p);
    if rank < p {
        return Err(Error::RankDeficient { rank, p });
    }
    let coeffs = dec.u.tr_mul(&DVector::from_column_slice(errors));
    let scaled = DVector::from_iterator(p, coeffs.iter().zip(s).map(|(c, s)| c / s));
    let delta = &dec.v * scaled;
    Ok(theta0.iter().zip(delta.iter()).map(|(t, d)| t + d).collect())
}

/// The same estimate through the normal equations `θ0 + (χᵀχ)⁻¹ χᵀ ε`.
pub fn linearized_estimator_normal(chi: &DMatrix<f64>, errors: &[f64], theta0: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = chi.shape();
    check_linearized(chi, errors, theta0)?;
    let f = linalg::fisher(chi);
    let rhs = chi.tr_mul(&DVector::from_column_slice(errors));
    let delta = match f.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => f.lu().solve(&rhs).ok_or(Error::RankDeficient { rank: p.min(n).saturating_sub(1), p })?,
    };
    Ok(theta0.iter().zip(delta.iter()).map(|(t, d)| t + d).collect())
}

fn check_linearized(chi: &DMatrix<f64>, errors: &[f64], theta0: &[f64]) -> Result<()> {
    let (n, p) = chi.shape();
    if errors.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: errors.len() });
    }
    if theta0.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: theta0.len() });
    }
    Ok(())
}

/// Temporal-structure summary of a residual series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub lag1_autocorrelation: f64,
    /// Number of runs of equal sign (zeros skipped).
    pub sign_runs: usize,
    pub expected_runs: f64,
    /// Wald–Wolfowitz z-score; strongly negative means too few runs, i.e. structure.
    pub runs_z: f64,
}

pub const MIN_DIAGNOSTIC_LEN: usize = 10;

pub fn residual_diagnostics(residuals: &[f64], times: &[f64]) -> Result<ResidualSummary> {
    let n = residuals.len();
    if times.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: times.len() });
    }
    if n < MIN_DIAGNOSTIC_LEN {
        return Err(Error::DegenerateDof { n, p: MIN_DIAGNOSTIC_LEN });
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = residuals.iter().map(|r| r - mean).collect();
    let ss: f64 = centered.iter().map(|c| c * c).sum();
    let lag1 = if ss > 0.0 {
        centered.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / ss
    } else {
        0.0
    };
    let std_dev = (ss / (n - 1) as f64).sqrt();

    let signs: Vec<bool> = residuals.iter().filter(|r| **r != 0.0).map(|r| *r > 0.0).collect();
    let pos = signs.iter().filter(|s| **s).count() as f64;
    let neg = signs.len() as f64 - pos;
    let sign_runs = if signs.is_empty() { 0 } else { 1 + signs.windows(2).filter(|w| w[0] != w[1]).count() };
    let total = pos + neg;
    let (expected_runs, runs_z) = if pos > 0.0 && neg > 0.0 {
        let mu = 2.0 * pos * neg / total + 1.0;
        let var = 2.0 * pos * neg * (2.0 * pos * neg - total) / (total * total * (total - 1.0));
        (mu, if var > 0.0 { (sign_runs as f64 - mu) / var.sqrt() } else { 0.0 })
    } else {
        (1.0, 0.0)
    };

    Ok(ResidualSummary { n, mean, std_dev, lag1_autocorrelation: lag1, sign_runs, expected_runs, runs_z })
}
