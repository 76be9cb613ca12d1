//! SVD-based identifiability kernel: numerical rank, condition number,
//! Fisher information, covariance, standard errors and coefficient-of-variation scores.
//!
//! Inverses of `χᵀχ` are always formed from the thin SVD `χ = U₁ diag(s) Vᵀ`
//! as `V diag(s⁻²) Vᵀ`; the normal equations are never inverted directly.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `n × p`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, nonnegative.
    pub singular_values: DVector<f64>,
    /// `p × p`, orthogonal.
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

/// Thin SVD with singular values sorted in descending order.
pub fn svd(matrix: &DMatrix<f64>) -> Result<SvdResult> {
    let (n, p) = matrix.shape();
    if n < p {
        return Err(Error::DimensionMismatch { expected: p, got: n });
    }
    if p == 0 {
        return Ok(SvdResult {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(0, 0),
        });
    }
    let decomposition = SVD::try_new(matrix.clone(), true, true, f64::EPSILON, 2000 * p.max(10))
        .ok_or(Error::ConvergenceFailure)?;
    let u = decomposition.u.ok_or(Error::ConvergenceFailure)?;
    let v_t = decomposition.v_t.ok_or(Error::ConvergenceFailure)?;
    let s = decomposition.singular_values;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let singular_values = DVector::from_iterator(p, order.iter().map(|&k| s[k].max(0.0)));
    let u = u.select_columns(&order);
    let v = v_t.transpose().select_columns(&order);
    Ok(SvdResult { u, singular_values, v })
}

/// Threshold below which singular values count as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum RankTolerance {
    /// `s₁ · max(n, p) · ε`
    #[default]
    Machine,
    /// `s₁ · factor`
    Relative(f64),
}

impl RankTolerance {
    pub fn threshold(&self, s: &[f64], n: usize) -> f64 {
        let s1 = s.first().copied().unwrap_or(0.0);
        match *self {
            RankTolerance::Machine => s1 * n.max(s.len()) as f64 * f64::EPSILON,
            RankTolerance::Relative(f) => s1 * f,
        }
    }
}

/// Count of singular values above `s₁ · max(n, p) · ε`.
pub fn numerical_rank(s: &[f64], n: usize, p: usize) -> usize {
    numerical_rank_with(s, n.max(p), RankTolerance::Machine)
}

pub fn numerical_rank_with(s: &[f64], n: usize, rule: RankTolerance) -> usize {
    match s.first() {
        None => 0,
        Some(&s1) if s1 <= 0.0 => 0,
        Some(_) => {
            let tol = rule.threshold(s, n);
            s.iter().filter(|&&v| v > tol).count()
        }
    }
}

/// `s₁ / s_p`; fails when the smallest singular value is at or below the rank tolerance.
pub fn condition_number(s: &[f64], n: usize) -> Result<f64> {
    condition_number_with(s, n, RankTolerance::Machine)
}

pub fn condition_number_with(s: &[f64], n: usize, rule: RankTolerance) -> Result<f64> {
    let p = s.len();
    let rank = numerical_rank_with(s, n, rule);
    if p == 0 || rank < p {
        return Err(Error::RankDeficient { rank, p });
    }
    Ok(s[0] / s[p - 1])
}

/// Fisher information `χᵀχ`.
pub fn fisher(chi: &DMatrix<f64>) -> DMatrix<f64> {
    chi.tr_mul(chi)
}

/// Eigenvalues of a symmetric positive semidefinite matrix, descending, by cyclic Jacobi rotations.
///
/// Small eigenvalues keep their relative accuracy when the matrix is badly
/// scaled, unlike an SVD of the explicitly formed product.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, got: a.ncols() });
    }
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let aij = m[(i, j)];
                if aij == 0.0 || aij.abs() <= f64::EPSILON * (m[(i, i)] * m[(j, j)]).abs().sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..p {
                    let (mki, mkj) = (m[(k, i)], m[(k, j)]);
                    m[(k, i)] = c * mki - sn * mkj;
                    m[(k, j)] = sn * mki + c * mkj;
                }
                for k in 0..p {
                    let (mik, mjk) = (m[(i, k)], m[(j, k)]);
                    m[(i, k)] = c * mik - sn * mjk;
                    m[(j, k)] = sn * mik + c * mjk;
                }
                m[(i, j)] = 0.0;
                m[(j, i)] = 0.0;
            }
        }
        if !rotated {
            let mut ev: Vec<f64> = m.diagonal().iter().copied().collect();
            ev.sort_by(|x, y| y.total_cmp(x));
            return Ok(ev);
        }
    }
    Err(Error::ConvergenceFailure)
}

/// `κ(χᵀχ)` from the eigenvalues of the Fisher information.
pub fn fisher_condition_number(f: &DMatrix<f64>) -> Result<f64> {
    let ev = symmetric_eigenvalues(f)?;
    condition_number(&ev, f.nrows())
}

/// `σ² (χᵀχ)⁻¹` through the SVD of χ.
pub fn covariance(sigma_sq: f64, chi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dec = svd(chi)?;
    covariance_from_svd(sigma_sq, &dec, chi.nrows(), RankTolerance::Machine)
}

pub fn covariance_from_svd(sigma_sq: f64, dec: &SvdResult, n: usize, rule: RankTolerance) -> Result<DMatrix<f64>> {
    let s = dec.singular_values.as_slice();
    let p = s.len();
    let rank = numerical_rank_with(s, n, rule);
    if rank < p {
        return Err(Error::RankDeficient { rank, p });
    }
    let inv_sq = DVector::from_iterator(p, s.iter().map(|v| 1.0 / (v * v)));
    let scaled = &dec.v * DMatrix::from_diagonal(&inv_sq);
    let mut cov = scaled * dec.v.transpose() * sigma_sq;
    // exact symmetry
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
    }
    Ok(cov)
}

/// Square roots of the covariance diagonal.
pub fn standard_errors(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    cov.diagonal()
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value < 0.0 {
                Err(Error::NegativeDiagonal { index, value })
            } else {
                Ok(value.sqrt())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    /// Signed coefficients of variation `√Σ_ii / θ_i`.
    pub cv: Vec<f64>,
    /// Euclidean norm of `cv`.
    pub score: f64,
}

pub fn coefficients_of_variation(theta: &[f64], cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    if theta.len() != cov.nrows() {
        return Err(Error::DimensionMismatch { expected: cov.nrows(), got: theta.len() });
    }
    if let Some(index) = theta.iter().position(|v| *v == 0.0) {
        return Err(Error::ZeroParameterValue { index });
    }
    let se = standard_errors(cov)?;
    Ok(se.iter().zip(theta).map(|(s, t)| s / t).collect())
}

pub fn uncertainty_score(theta: &[f64], cov: &DMatrix<f64>) -> Result<UncertaintyScore> {
    let cv = coefficients_of_variation(theta, cov)?;
    let score = cv.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(UncertaintyScore { cv, score })
}

/// Rank, conditioning and uncertainty of one sensitivity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Identifiability {
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub kappa: Option<f64>,
    pub uncertainty: Option<UncertaintyScore>,
}

impl Identifiability {
    pub fn full_rank(&self) -> bool {
        self.rank == self.singular_values.len()
    }
}

/// Full analysis of `χ` at parameter values `theta` with error variance `sigma_sq`.
/// Rank deficiency is reported in the result, not as an error.
pub fn analyze(chi: &DMatrix<f64>, theta: &[f64], sigma_sq: f64, rule: RankTolerance) -> Result<Identifiability> {
    let n = chi.nrows();
    let dec = svd(chi)?;
    let s: Vec<f64> = dec.singular_values.iter().copied().collect();
    let rank = numerical_rank_with(&s, n, rule);
    if rank < s.len() {
        return Ok(Identifiability { singular_values: s, rank, kappa: None, uncertainty: None });
    }
    let kappa = condition_number_with(&s, n, rule)?;
    let cov = covariance_from_svd(sigma_sq, &dec, n, rule)?;
    let uncertainty = uncertainty_score(theta, &cov)?;
    Ok(Identifiability { singular_values: s, rank, kappa: Some(kappa), uncertainty: Some(uncertainty) })
}
