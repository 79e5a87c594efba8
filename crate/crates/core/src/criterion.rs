//! Symplectic spectra and the PPT separability test for two-mode states.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::GaussianState;
use crate::symplectic::omega;

/// Tolerance on the criterion margin; `|margin| ≤ MARGIN_TOL` is reported as a boundary case.
pub const MARGIN_TOL: f64 = 1e-10;
/// Tolerance on a negative discriminant `D² - 4 det Γ` before it is treated as an error.
pub const DISCRIMINANT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Separable,
    Entangled,
    Boundary,
}

impl Verdict {
    pub fn from_margin(margin: f64) -> Self {
        if margin.abs() <= MARGIN_TOL {
            Verdict::Boundary
        } else if margin < 0.0 {
            Verdict::Separable
        } else {
            Verdict::Entangled
        }
    }

    /// Boundary states are PPT and therefore separable.
    pub fn is_separable(self) -> bool {
        !matches!(self, Verdict::Entangled)
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Separable => "Separable",
            Verdict::Entangled => "Entangled",
            Verdict::Boundary => "Boundary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub det_a: f64,
    pub det_b: f64,
    pub det_c: f64,
    pub det_gamma: f64,
    /// `det A + det B - 2 det C`, the symplectic invariant of the partially transposed state.
    pub d: f64,
    /// Smallest symplectic eigenvalue of the partially transposed covariance.
    pub xi_min: f64,
    /// `D - 4 det Γ - 1/4`; positive means entangled.
    pub margin: f64,
    pub verdict: Verdict,
    /// `max(0, -ln(2 ξ_min))`.
    pub log_negativity: f64,
    /// `-ln ξ_min`, without the vacuum normalization.
    pub log_negativity_raw: f64,
}

/// Outcome of evaluating the criterion from four determinants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminantVerdict {
    pub report: SeparabilityReport,
    /// False when `D² < 4 det Γ` beyond tolerance, i.e. the determinants cannot come
    /// from one physical covariance matrix.
    pub consistent: bool,
}

/// Smaller root of `x⁴ - D x² + det Γ = 0`, with small negative discriminants clamped.
fn smaller_root(d: f64, det_gamma: f64) -> (f64, bool) {
    let disc = d * d - 4.0 * det_gamma;
    let tol = DISCRIMINANT_TOL * (d * d).max(1.0);
    let consistent = disc >= -tol;
    let x2 = 0.5 * (d - disc.max(0.0).sqrt());
    (x2.max(0.0).sqrt(), consistent)
}

/// Builds the report from `det A`, `det B`, `det C`, `det Γ` of the (untransposed) state.
pub fn report_from_determinants(det_a: f64, det_b: f64, det_c: f64, det_gamma: f64) -> DeterminantVerdict {
    let d = det_a + det_b - 2.0 * det_c;
    let (xi_min, consistent) = smaller_root(d, det_gamma);
    let margin = d - 4.0 * det_gamma - 0.25;
    let log_negativity_raw = -xi_min.ln();
    let report = SeparabilityReport {
        det_a,
        det_b,
        det_c,
        det_gamma,
        d,
        xi_min,
        margin,
        verdict: Verdict::from_margin(margin),
        log_negativity: (-(2.0 * xi_min).ln()).max(0.0),
        log_negativity_raw,
    };
    DeterminantVerdict { report, consistent }
}

fn require_two_modes(state: &GaussianState) -> Result<()> {
    if state.n_modes() != 2 {
        return Err(Error::Unsupported(format!(
            "two-mode quantity requested for a {}-mode state",
            state.n_modes()
        )));
    }
    Ok(())
}

/// Smaller symplectic eigenvalue of a two-mode state's own covariance, from the
/// invariant `Δ = det A + det B + 2 det C`. Applied to the partial transpose this is
/// the PPT eigenvalue.
pub fn min_symplectic_eigenvalue(state: &GaussianState) -> Result<f64> {
    require_two_modes(state)?;
    let b = state.blocks()?;
    let delta = b.det_a() + b.det_b() + 2.0 * b.det_c();
    let det_gamma = state.det_cov();
    let (xi, consistent) = smaller_root(delta, det_gamma);
    if !consistent {
        return Err(Error::InvalidCovariance(format!(
            "Δ² - 4 det Γ = {:e} < 0",
            delta * delta - 4.0 * det_gamma
        )));
    }
    Ok(xi)
}

/// Smaller symplectic eigenvalue of the partial transpose, computed from the
/// blocks of the original covariance via `D = det A + det B - 2 det C`.
pub fn ppt_min_symplectic_eigenvalue(state: &GaussianState) -> Result<f64> {
    require_two_modes(state)?;
    let b = state.blocks()?;
    let d = b.det_a() + b.det_b() - 2.0 * b.det_c();
    let det_gamma = state.det_cov();
    let (xi, consistent) = smaller_root(d, det_gamma);
    if !consistent {
        return Err(Error::InvalidCovariance(format!(
            "D² - 4 det Γ = {:e} < 0",
            d * d - 4.0 * det_gamma
        )));
    }
    Ok(xi)
}

/// All symplectic eigenvalues (ascending) of an `n`-mode covariance, as the positive
/// eigenvalues of the Hermitian matrix `Γ^{1/2} (iJ) Γ^{1/2}`.
pub fn symplectic_spectrum(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = cov.nrows();
    if dim == 0 || dim % 2 != 0 || cov.ncols() != dim {
        return Err(Error::Dimension("covariance must be 2n x 2n".into()));
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -DISCRIMINANT_TOL * eig.eigenvalues.amax().max(1.0) {
        return Err(Error::InvalidCovariance("covariance is not positive semidefinite".into()));
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let j = omega(dim / 2);
    let root_c = root.map(|x| Complex::new(x, 0.0));
    let ij = j.map(|x| Complex::new(0.0, x));
    let h = &root_c * ij * &root_c;
    let h = (&h + h.adjoint()) * Complex::new(0.5, 0.0);
    let mut vals: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<f64> = vals[..dim / 2].to_vec();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Applies the PPT criterion to a valid two-mode state.
pub fn simon_criterion(state: &GaussianState) -> Result<SeparabilityReport> {
    require_two_modes(state)?;
    state.ensure_valid()?;
    let b = state.blocks()?;
    let out = report_from_determinants(b.det_a(), b.det_b(), b.det_c(), state.det_cov());
    if !out.consistent {
        return Err(Error::InvalidCovariance(format!(
            "D² - 4 det Γ = {:e} < 0",
            out.report.d * out.report.d - 4.0 * out.report.det_gamma
        )));
    }
    Ok(out.report)
}

/// PPT test done directly on the transposed covariance: true when `Γ̃ + iJ/2 ⪰ 0`.
pub fn is_ppt(state: &GaussianState) -> Result<bool> {
    Ok(state.partial_transpose()?.validate())
}
