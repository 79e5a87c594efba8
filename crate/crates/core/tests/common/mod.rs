#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Block-diagonal symplectic form built entry by entry.
pub fn j_matrix(n_modes: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        j[(2 * k, 2 * k + 1)] = 1.0;
        j[(2 * k + 1, 2 * k)] = -1.0;
    }
    j
}

/// `Λ Γ Λ` with `Λ = diag(1, 1, 1, -1)`.
pub fn mirror(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let lambda = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, -1.0]));
    &lambda * cov * &lambda
}

/// Symplectic spectrum as the moduli of the (purely imaginary) eigenvalues of `JΓ`,
/// which coincide with those of `iJΓ`. Sorted ascending, each value listed twice.
pub fn spectral_moduli(cov: &DMatrix<f64>) -> Vec<f64> {
    let n = cov.nrows() / 2;
    let m = j_matrix(n) * cov;
    let mut v: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn spectral_min(cov: &DMatrix<f64>) -> f64 {
    spectral_moduli(cov)[0]
}

/// Minimum eigenvalue of `Γ + iJ/2`, via the real symmetric embedding
/// `[[Γ, -J/2], [J/2, Γ]]` whose spectrum doubles the Hermitian one.
pub fn uncertainty_min(cov: &DMatrix<f64>) -> f64 {
    let d = cov.nrows();
    let half_j = j_matrix(d / 2) * 0.5;
    let mut big = DMatrix::zeros(2 * d, 2 * d);
    big.view_mut((0, 0), (d, d)).copy_from(cov);
    big.view_mut((d, d), (d, d)).copy_from(cov);
    big.view_mut((0, d), (d, d)).copy_from(&(-&half_j));
    big.view_mut((d, 0), (d, d)).copy_from(&half_j);
    big.symmetric_eigen().eigenvalues.min()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
