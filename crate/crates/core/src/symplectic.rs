//! Symplectic form and linear optical transforms on phase space.
//!
//! Quadratures are ordered `(q1, p1, q2, p2, ...)` with `ħ = 1`, so that
//! `[R_k, R_l] = i J_kl` and the vacuum covariance is `I/2`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on `S J Sᵀ = J` when accepting a transform.
pub const SYMPLECTIC_TOL: f64 = 1e-10;

/// The symplectic form `J = ⊕ [[0, 1], [-1, 0]]` on `n` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    n_modes: usize,
    matrix: DMatrix<f64>,
}

impl SymplecticForm {
    pub fn new(n_modes: usize) -> Self {
        let dim = 2 * n_modes;
        let mut matrix = DMatrix::zeros(dim, dim);
        for k in 0..n_modes {
            matrix[(2 * k, 2 * k + 1)] = 1.0;
            matrix[(2 * k + 1, 2 * k)] = -1.0;
        }
        Self { n_modes, matrix }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// Shorthand for the `J` matrix on `n` modes.
pub fn omega(n_modes: usize) -> DMatrix<f64> {
    SymplecticForm::new(n_modes).into_matrix()
}

/// Affine symplectic map `x -> S x + shift` (Heisenberg picture on quadratures).
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticTransform {
    matrix: DMatrix<f64>,
    shift: DVector<f64>,
}

impl SymplecticTransform {
    /// Builds a transform, rejecting matrices that are not symplectic.
    pub fn new(matrix: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 || dim % 2 != 0 || matrix.ncols() != dim {
            return Err(Error::Dimension(format!(
                "symplectic matrix must be 2n x 2n, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if shift.len() != dim {
            return Err(Error::Dimension(format!(
                "shift has length {}, expected {dim}",
                shift.len()
            )));
        }
        if matrix.iter().chain(shift.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite transform entry".into()));
        }
        let j = omega(dim / 2);
        let defect = (&matrix * &j * matrix.transpose() - &j).amax();
        let scale = matrix.amax().powi(2).max(1.0);
        if defect > SYMPLECTIC_TOL * scale {
            return Err(Error::NotSymplectic(defect));
        }
        Ok(Self { matrix, shift })
    }

    /// Pure linear transform (no displacement).
    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        Self::new(matrix, DVector::zeros(dim))
    }

    pub fn identity(n_modes: usize) -> Self {
        let dim = 2 * n_modes;
        Self {
            matrix: DMatrix::identity(dim, dim),
            shift: DVector::zeros(dim),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    /// `other ∘ self`: apply `self` first, then `other`.
    pub fn then(&self, other: &SymplecticTransform) -> Result<Self> {
        if self.n_modes() != other.n_modes() {
            return Err(Error::Dimension(format!(
                "cannot compose {}-mode and {}-mode transforms",
                self.n_modes(),
                other.n_modes()
            )));
        }
        Ok(Self {
            matrix: &other.matrix * &self.matrix,
            shift: &other.matrix * &self.shift + &other.shift,
        })
    }

    /// Block-diagonal sum acting on the modes of `self` followed by those of `other`.
    pub fn direct_sum(&self, other: &SymplecticTransform) -> Self {
        let (d1, d2) = (self.matrix.nrows(), other.matrix.nrows());
        let mut matrix = DMatrix::zeros(d1 + d2, d1 + d2);
        matrix.view_mut((0, 0), (d1, d1)).copy_from(&self.matrix);
        matrix.view_mut((d1, d1), (d2, d2)).copy_from(&other.matrix);
        let mut shift = DVector::zeros(d1 + d2);
        shift.rows_mut(0, d1).copy_from(&self.shift);
        shift.rows_mut(d1, d2).copy_from(&other.shift);
        Self { matrix, shift }
    }

    /// Lifts the transform to a `total_modes` system, acting on `modes` in the given
    /// order and as the identity elsewhere.
    pub fn embed(&self, modes: &[usize], total_modes: usize) -> Result<Self> {
        if modes.len() != self.n_modes() {
            return Err(Error::Dimension(format!(
                "transform acts on {} modes but {} were given",
                self.n_modes(),
                modes.len()
            )));
        }
        let mut seen = vec![false; total_modes];
        for &m in modes {
            if m >= total_modes || seen[m] {
                return Err(Error::Dimension(format!(
                    "invalid mode list {modes:?} for {total_modes} modes"
                )));
            }
            seen[m] = true;
        }
        let dim = 2 * total_modes;
        let mut matrix = DMatrix::identity(dim, dim);
        let mut shift = DVector::zeros(dim);
        let index = |k: usize| 2 * modes[k / 2] + k % 2;
        for a in 0..modes.len() * 2 {
            shift[index(a)] = self.shift[a];
            for b in 0..modes.len() * 2 {
                matrix[(index(a), index(b))] = self.matrix[(a, b)];
            }
        }
        Ok(Self { matrix, shift })
    }

    /// Maps a mean vector.
    pub fn apply_means(&self, means: &DVector<f64>) -> DVector<f64> {
        &self.matrix * means + &self.shift
    }

    /// Maps a covariance matrix.
    pub fn apply_cov(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        let out = &self.matrix * cov * self.matrix.transpose();
        (&out + out.transpose()) * 0.5
    }
}

fn from_rows(n: usize, rows: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, rows)
}

fn checked(matrix: DMatrix<f64>) -> Result<SymplecticTransform> {
    SymplecticTransform::linear(matrix)
}

fn finite(label: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{label}: parameters must be finite")))
    }
}

/// Balanced beam splitter with outputs `(a1 - a2)/√2` and `(a1 + a2)/√2`.
pub fn beam_splitter_50_50() -> SymplecticTransform {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    #[rustfmt::skip]
    let m = from_rows(4, &[
        h, 0.0, -h, 0.0,
        0.0, h, 0.0, -h,
        h, 0.0, h, 0.0,
        0.0, h, 0.0, h,
    ]);
    checked(m).expect("balanced beam splitter is symplectic")
}

/// Phase shift `a -> a e^{iφ}`: `q -> q cos φ - p sin φ`, `p -> q sin φ + p cos φ`.
pub fn phase_shifter(phi: f64) -> Result<SymplecticTransform> {
    finite("phase_shifter", &[phi])?;
    let (s, c) = phi.sin_cos();
    checked(from_rows(2, &[c, -s, s, c]))
}

/// Two-mode passive rotation `[[cos θ I, sin θ I], [-sin θ I, cos θ I]]`.
pub fn rotation_theta(theta: f64) -> Result<SymplecticTransform> {
    finite("rotation_theta", &[theta])?;
    let (s, c) = theta.sin_cos();
    #[rustfmt::skip]
    let m = from_rows(4, &[
        c, 0.0, s, 0.0,
        0.0, c, 0.0, s,
        -s, 0.0, c, 0.0,
        0.0, -s, 0.0, c,
    ]);
    checked(m)
}

/// Displacement by the complex amplitude `alpha`: shifts `(q, p)` by `√2 (Re α, Im α)`.
pub fn displacement(alpha: Complex<f64>) -> Result<SymplecticTransform> {
    finite("displacement", &[alpha.re, alpha.im])?;
    let r2 = std::f64::consts::SQRT_2;
    SymplecticTransform::new(
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![r2 * alpha.re, r2 * alpha.im]),
    )
}

/// Squeezer `exp(½(ξ* a² - ξ a†²))` with `ξ = θ e^{iγ}`:
/// `a -> a cosh θ - e^{iγ} a† sinh θ`.
pub fn single_mode_squeezer(theta: f64, gamma: f64) -> Result<SymplecticTransform> {
    finite("single_mode_squeezer", &[theta, gamma])?;
    let (c, s) = (theta.cosh(), theta.sinh());
    let (sg, cg) = gamma.sin_cos();
    checked(from_rows(
        2,
        &[c - s * cg, -s * sg, -s * sg, c + s * cg],
    ))
}

/// Parametric amplifier with outputs `μ a1 + ν a2†` and `μ a2 + ν a1†`,
/// where `μ = cosh g` and `ν = e^{iΦ} sinh g`.
pub fn opa(gain: f64, pump_phase: f64) -> Result<SymplecticTransform> {
    finite("opa", &[gain, pump_phase])?;
    let (c, s) = (gain.cosh(), gain.sinh());
    let (sp, cp) = pump_phase.sin_cos();
    #[rustfmt::skip]
    let m = from_rows(4, &[
        c, 0.0, s * cp, s * sp,
        0.0, c, s * sp, -s * cp,
        s * cp, s * sp, c, 0.0,
        s * sp, -s * cp, 0.0, c,
    ]);
    checked(m)
}

/// Two-mode squeezer producing the standard two-mode squeezed vacuum from vacuum.
pub fn two_mode_squeezer(r: f64) -> Result<SymplecticTransform> {
    opa(r, 0.0)
}
