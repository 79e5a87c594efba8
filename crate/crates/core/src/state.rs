//! Gaussian states described by first moments and covariance matrix.

use nalgebra::{Complex, DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symplectic::{omega, SymplecticTransform};

/// Tolerance on the smallest eigenvalue of `Γ + iJ/2`.
pub const VALIDITY_TOL: f64 = 1e-10;
/// Tolerance on `|Γ - Γᵀ|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// An `n`-mode Gaussian state. `cov` holds the symmetrized second moments minus
/// mean products, `Γ_kl = ½⟨{R_k, R_l}⟩ - d_k d_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateFile", into = "StateFile")]
pub struct GaussianState {
    n_modes: usize,
    means: DVector<f64>,
    cov: DMatrix<f64>,
}

/// On-disk layout: `{n_modes, means: [...], cov: [[...], ...]}`, full matrix, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub n_modes: usize,
    pub means: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl TryFrom<StateFile> for GaussianState {
    type Error = Error;

    fn try_from(file: StateFile) -> Result<Self> {
        let dim = 2 * file.n_modes;
        if file.cov.len() != dim || file.cov.iter().any(|row| row.len() != dim) {
            return Err(Error::Dimension(format!(
                "cov must be {dim}x{dim} for {} modes",
                file.n_modes
            )));
        }
        let cov = DMatrix::from_fn(dim, dim, |i, j| file.cov[i][j]);
        GaussianState::new(DVector::from_vec(file.means), cov)
    }
}

impl From<GaussianState> for StateFile {
    fn from(state: GaussianState) -> Self {
        let dim = state.dim();
        StateFile {
            n_modes: state.n_modes,
            means: state.means.iter().copied().collect(),
            cov: (0..dim)
                .map(|i| (0..dim).map(|j| state.cov[(i, j)]).collect())
                .collect(),
        }
    }
}

/// The 2×2 blocks of a two-mode covariance `[[A, C], [Cᵀ, B]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDecomposition {
    pub a: Matrix2<f64>,
    pub b: Matrix2<f64>,
    pub c: Matrix2<f64>,
}

impl BlockDecomposition {
    pub fn from_cov(cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != 4 || cov.ncols() != 4 {
            return Err(Error::Unsupported(format!(
                "block decomposition needs a 4x4 covariance, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let block = |r: usize, c: usize| Matrix2::from_fn(|i, j| cov[(r + i, c + j)]);
        Ok(Self {
            a: block(0, 0),
            b: block(2, 2),
            c: block(0, 2),
        })
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let mut cov = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                cov[(i, j)] = self.a[(i, j)];
                cov[(i + 2, j + 2)] = self.b[(i, j)];
                cov[(i, j + 2)] = self.c[(i, j)];
                cov[(j + 2, i)] = self.c[(i, j)];
            }
        }
        cov
    }

    pub fn det_a(&self) -> f64 {
        self.a.determinant()
    }

    pub fn det_b(&self) -> f64 {
        self.b.determinant()
    }

    pub fn det_c(&self) -> f64 {
        self.c.determinant()
    }
}

/// Smallest eigenvalue of the Hermitian matrix `cov + (i/2) J`.
pub fn uncertainty_min_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    let dim = cov.nrows();
    let j = omega(dim / 2);
    let h = DMatrix::from_fn(dim, dim, |r, c| Complex::new(cov[(r, c)], 0.5 * j[(r, c)]));
    h.symmetric_eigenvalues().min()
}

impl GaussianState {
    /// Builds a state after checking dimensions and symmetry; the covariance is
    /// symmetrized exactly. Physical validity is checked separately by [`validate`](Self::validate).
    pub fn new(means: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 || dim % 2 != 0 || cov.ncols() != dim {
            return Err(Error::Dimension(format!(
                "covariance must be 2n x 2n, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if means.len() != dim {
            return Err(Error::Dimension(format!(
                "means has length {}, expected {dim}",
                means.len()
            )));
        }
        if cov.iter().chain(means.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * cov.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self {
            n_modes: dim / 2,
            means,
            cov,
        })
    }

    pub fn vacuum(n_modes: usize) -> Self {
        let dim = 2 * n_modes;
        Self {
            n_modes,
            means: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * 0.5,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Symmetrized raw second moments `½⟨{R_k, R_l}⟩ = Γ + d dᵀ`.
    pub fn second_moments(&self) -> DMatrix<f64> {
        &self.cov + &self.means * self.means.transpose()
    }

    /// True when `Γ + iJ/2 ⪰ 0` up to [`VALIDITY_TOL`].
    pub fn validate(&self) -> bool {
        self.uncertainty_min_eigenvalue() >= -VALIDITY_TOL
    }

    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        uncertainty_min_eigenvalue(&self.cov)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let lam = self.uncertainty_min_eigenvalue();
        if lam >= -VALIDITY_TOL {
            Ok(())
        } else {
            Err(Error::InvalidState(lam))
        }
    }

    pub fn blocks(&self) -> Result<BlockDecomposition> {
        BlockDecomposition::from_cov(&self.cov)
    }

    /// Mirror reflection `p2 -> -p2` applied to covariance and means.
    pub fn partial_transpose(&self) -> Result<Self> {
        if self.n_modes != 2 {
            return Err(Error::Unsupported(format!(
                "partial transpose is defined here for two modes, got {}",
                self.n_modes
            )));
        }
        let sign = [1.0, 1.0, 1.0, -1.0];
        let cov = DMatrix::from_fn(4, 4, |i, j| sign[i] * sign[j] * self.cov[(i, j)]);
        let means = DVector::from_fn(4, |i, _| sign[i] * self.means[i]);
        Ok(Self {
            n_modes: 2,
            means,
            cov,
        })
    }

    pub fn apply_transform(&self, t: &SymplecticTransform) -> Result<Self> {
        if t.n_modes() != self.n_modes {
            return Err(Error::Dimension(format!(
                "{}-mode transform applied to {}-mode state",
                t.n_modes(),
                self.n_modes
            )));
        }
        Ok(Self {
            n_modes: self.n_modes,
            means: t.apply_means(&self.means),
            cov: t.apply_cov(&self.cov),
        })
    }

    /// Joint state of independent systems, `self` first.
    pub fn tensor_product(&self, other: &GaussianState) -> Self {
        let (d1, d2) = (self.dim(), other.dim());
        let mut cov = DMatrix::zeros(d1 + d2, d1 + d2);
        cov.view_mut((0, 0), (d1, d1)).copy_from(&self.cov);
        cov.view_mut((d1, d1), (d2, d2)).copy_from(&other.cov);
        let mut means = DVector::zeros(d1 + d2);
        means.rows_mut(0, d1).copy_from(&self.means);
        means.rows_mut(d1, d2).copy_from(&other.means);
        Self {
            n_modes: self.n_modes + other.n_modes,
            means,
            cov,
        }
    }

    /// Marginal on `modes`, in the given order.
    pub fn reduced(&self, modes: &[usize]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Dimension("empty mode list".into()));
        }
        let mut seen = vec![false; self.n_modes];
        for &m in modes {
            if m >= self.n_modes || seen[m] {
                return Err(Error::Dimension(format!(
                    "invalid mode list {modes:?} for {} modes",
                    self.n_modes
                )));
            }
            seen[m] = true;
        }
        let idx: Vec<usize> = modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
        let dim = idx.len();
        Ok(Self {
            n_modes: modes.len(),
            means: DVector::from_fn(dim, |i, _| self.means[idx[i]]),
            cov: DMatrix::from_fn(dim, dim, |i, j| self.cov[(idx[i], idx[j])]),
        })
    }

    /// Traces out `traced` and keeps the remaining modes in their original order.
    pub fn partial_trace(&self, traced: &[usize]) -> Result<Self> {
        if let Some(&m) = traced.iter().find(|&&m| m >= self.n_modes) {
            return Err(Error::Dimension(format!(
                "mode {m} out of range for {} modes",
                self.n_modes
            )));
        }
        let keep: Vec<usize> = (0..self.n_modes).filter(|m| !traced.contains(m)).collect();
        self.reduced(&keep)
    }

    pub fn det_cov(&self) -> f64 {
        self.cov.determinant()
    }

    /// `Tr ρ² = 1 / (2ⁿ √det Γ)`.
    pub fn purity(&self) -> Result<f64> {
        let det = self.det_cov();
        if !(det > 0.0) {
            return Err(Error::InvalidCovariance(format!(
                "purity needs det cov > 0, got {det:e}"
            )));
        }
        Ok(1.0 / (2f64.powi(self.n_modes as i32) * det.sqrt()))
    }

    /// Wigner density `exp(-½ (x-d)ᵀ Γ⁻¹ (x-d)) / ((2π)ⁿ √det Γ)`.
    pub fn wigner_pdf(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has length {}, expected {}",
                point.len(),
                self.dim()
            )));
        }
        let chol = self.cov.clone().cholesky().ok_or_else(|| {
            Error::InvalidCovariance("covariance is singular or not positive definite".into())
        })?;
        let x = DVector::from_column_slice(point) - &self.means;
        let y = chol.l().solve_lower_triangular(&x).ok_or_else(|| {
            Error::InvalidCovariance("covariance is singular".into())
        })?;
        let det = chol.l().diagonal().product().powi(2);
        let norm = (2.0 * std::f64::consts::PI).powi(self.n_modes as i32) * det.sqrt();
        Ok((-0.5 * y.norm_squared()).exp() / norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn json_round_trip() {
        let s = GaussianState::vacuum(2);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"n_modes\":2"));
        let back: GaussianState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn json_rejects_bad_shape_and_unknown_keys() {
        let bad = r#"{"n_modes":1,"means":[0,0],"cov":[[0.5,0],[0,0.5],[0,0]]}"#;
        assert!(serde_json::from_str::<GaussianState>(bad).is_err());
        let extra = r#"{"n_modes":1,"means":[0,0],"cov":[[0.5,0],[0,0.5]],"x":1}"#;
        assert!(serde_json::from_str::<GaussianState>(extra).is_err());
    }

    #[test]
    fn rejects_asymmetric() {
        let mut cov = DMatrix::identity(2, 2) * 0.5;
        cov[(0, 1)] = 0.1;
        assert!(matches!(
            GaussianState::new(DVector::zeros(2), cov),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn blocks_reassemble() {
        let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 * (i + j) as f64 });
        let b = BlockDecomposition::from_cov(&cov).unwrap();
        assert_eq!(b.assemble(), cov);
    }

    #[test]
    fn vacuum_validity_saturates() {
        assert_abs_diff_eq!(GaussianState::vacuum(2).uncertainty_min_eigenvalue(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn partial_trace_keeps_order() {
        let a = GaussianState::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        let b = GaussianState::vacuum(1);
        let ab = a.tensor_product(&b);
        assert_eq!(ab.partial_trace(&[1]).unwrap(), a);
        assert_eq!(ab.reduced(&[1]).unwrap(), b);
        assert!(ab.reduced(&[0, 0]).is_err());
    }
}
