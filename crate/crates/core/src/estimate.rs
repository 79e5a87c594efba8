//! Estimated covariance matrices, projection onto physical states and error propagation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criterion::{simon_criterion, SeparabilityReport};
use crate::error::{Error, Result};
use crate::state::{uncertainty_min_eigenvalue, GaussianState, VALIDITY_TOL};

pub type Matrix4 = [[f64; 4]; 4];

/// Estimated first and second moments of a two-mode state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub gamma_hat: Matrix4,
    pub means_hat: [f64; 4],
    /// Standard error of each `gamma_hat` entry.
    pub std_errors: Matrix4,
    pub means_std_errors: [f64; 4],
    /// Total number of state copies consumed.
    pub shots_used: usize,
}

impl CovarianceEstimate {
    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        to_dmatrix(&self.gamma_hat)
    }

    pub fn means_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.means_hat)
    }
}

pub fn to_dmatrix(m: &Matrix4) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| m[i][j])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Matrix4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    out
}

/// Criterion applied to an estimated covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedVerdict {
    /// Report on the projected (physical) covariance.
    pub report: SeparabilityReport,
    pub raw_gamma: Matrix4,
    pub projected_gamma: Matrix4,
    /// Multiple of the identity added to restore `Γ + iJ/2 ⪰ 0`.
    pub epsilon: f64,
    /// Margin of the raw estimate, before projection.
    pub raw_margin: f64,
    /// Linearly propagated standard error of the margin.
    pub margin_std_error: f64,
}

/// `det A + det B - 2 det C - 4 det Γ - 1/4` for any symmetric 4×4 matrix.
pub fn margin_of(cov: &DMatrix<f64>) -> f64 {
    let blk = |r: usize, c: usize| {
        cov[(r, c)] * cov[(r + 1, c + 1)] - cov[(r, c + 1)] * cov[(r + 1, c)]
    };
    blk(0, 0) + blk(2, 2) - 2.0 * blk(0, 2) - 4.0 * cov.determinant() - 0.25
}

/// First-order standard errors of `f(x)` for independent inputs with standard
/// errors `sigma`, using central differences.
pub fn propagate_std<F>(f: F, x: &[f64], sigma: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let base = f(x);
    let mut var = vec![0.0; base.len()];
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        if sigma[k] == 0.0 {
            continue;
        }
        let h = 1e-6 * x[k].abs().max(1.0);
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        for (v, (u, d)) in var.iter_mut().zip(up.iter().zip(&down)) {
            let g = (u - d) / (2.0 * h);
            *v += (g * sigma[k]).powi(2);
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

/// Standard error of the margin, treating the ten independent entries of `Γ̂` as
/// uncorrelated.
pub fn margin_std_error(gamma: &Matrix4, std_errors: &Matrix4) -> f64 {
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i..4).map(move |j| (i, j))).collect();
    let x: Vec<f64> = pairs.iter().map(|&(i, j)| gamma[i][j]).collect();
    let s: Vec<f64> = pairs.iter().map(|&(i, j)| std_errors[i][j]).collect();
    let f = |v: &[f64]| {
        let mut m = DMatrix::zeros(4, 4);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
        }
        vec![margin_of(&m)]
    };
    propagate_std(f, &x, &s)[0]
}

/// Smallest `ε ≥ 0` such that `Γ + ε I + iJ/2 ⪰ 0`; zero for estimates that are
/// already valid within [`VALIDITY_TOL`].
pub fn projection_epsilon(cov: &DMatrix<f64>) -> f64 {
    let lam = uncertainty_min_eigenvalue(cov);
    if lam >= -VALIDITY_TOL {
        0.0
    } else {
        -lam
    }
}

/// Projects an estimate to a valid covariance and applies the criterion.
pub fn verdict_from_estimate(gamma_hat: &Matrix4, std_errors: Option<&Matrix4>) -> Result<EstimatedVerdict> {
    let raw = to_dmatrix(gamma_hat);
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Projection("estimate has non-finite entries".into()));
    }
    let asym = (&raw - raw.transpose()).amax();
    if asym > 1e-9 * raw.amax().max(1.0) {
        return Err(Error::Projection(format!("estimate is not symmetric ({asym:e})")));
    }
    let raw = (&raw + raw.transpose()) * 0.5;
    let epsilon = projection_epsilon(&raw);
    let projected = &raw + DMatrix::identity(4, 4) * epsilon;
    let state = GaussianState::new(DVector::zeros(4), projected.clone())
        .map_err(|e| Error::Projection(e.to_string()))?;
    let report = simon_criterion(&state).map_err(|e| Error::Projection(e.to_string()))?;
    let margin_std_error = std_errors
        .map(|s| margin_std_error(gamma_hat, s))
        .unwrap_or(0.0);
    Ok(EstimatedVerdict {
        report,
        raw_gamma: from_dmatrix(&raw),
        projected_gamma: from_dmatrix(&projected),
        epsilon,
        raw_margin: margin_of(&raw),
        margin_std_error,
    })
}
