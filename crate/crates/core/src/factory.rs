//! Constructors for commonly used states.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::GaussianState;
use crate::symplectic::{
    displacement, phase_shifter, rotation_theta, single_mode_squeezer, two_mode_squeezer,
    SymplecticTransform,
};

/// Parameters of a displaced squeezed thermal mode: thermal occupation, displacement
/// `α = d e^{iβ}` and squeezing `ξ = θ e^{iγ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStateParams {
    pub n_bar: f64,
    pub d: f64,
    #[serde(default)]
    pub beta: f64,
    pub theta: f64,
    #[serde(default)]
    pub gamma: f64,
}

impl ReferenceStateParams {
    /// Unbiased mode (`β = γ = 0`).
    pub fn unbiased(n_bar: f64, d: f64, theta: f64) -> Self {
        Self {
            n_bar,
            d,
            beta: 0.0,
            theta,
            gamma: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.n_bar, self.d, self.beta, self.theta, self.gamma];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("reference parameters must be finite".into()));
        }
        if self.n_bar < 0.0 {
            return Err(Error::InvalidParameter(format!("n_bar = {} < 0", self.n_bar)));
        }
        if self.d < 0.0 {
            return Err(Error::InvalidParameter(format!("d = {} < 0", self.d)));
        }
        if self.theta < 0.0 {
            return Err(Error::InvalidParameter(format!("theta = {} < 0", self.theta)));
        }
        Ok(())
    }
}

impl Default for ReferenceStateParams {
    fn default() -> Self {
        Self::unbiased(0.0, 1.0, 0.2)
    }
}

/// Closed-form first and (operator-ordered) second moments of a reference mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceMoments {
    pub q_mean: f64,
    pub p_mean: f64,
    pub q2: f64,
    pub p2: f64,
    /// `⟨q p⟩ = sym + i/2`.
    pub qp: Complex<f64>,
    /// `⟨p q⟩ = sym - i/2`.
    pub pq: Complex<f64>,
    pub q2_minus_p2: f64,
    pub q2_plus_p2: f64,
}

impl ReferenceMoments {
    /// Builds moments from real quantities, with `sym = ½⟨{q, p}⟩`.
    pub fn from_real(q_mean: f64, p_mean: f64, q2: f64, p2: f64, sym: f64) -> Self {
        Self {
            q_mean,
            p_mean,
            q2,
            p2,
            qp: Complex::new(sym, 0.5),
            pq: Complex::new(sym, -0.5),
            q2_minus_p2: q2 - p2,
            q2_plus_p2: q2 + p2,
        }
    }

    /// `½⟨{q, p}⟩`.
    pub fn sym(&self) -> f64 {
        0.5 * (self.qp + self.pq).re
    }

    /// Moments of the rotated quadratures `q cos φ - p sin φ`, `q sin φ + p cos φ`.
    pub fn rotated(&self, phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        let sym = self.sym();
        let q_mean = c * self.q_mean - s * self.p_mean;
        let p_mean = s * self.q_mean + c * self.p_mean;
        let q2 = c * c * self.q2 - 2.0 * c * s * sym + s * s * self.p2;
        let p2 = s * s * self.q2 + 2.0 * c * s * sym + c * c * self.p2;
        let sym_rot = c * s * (self.q2 - self.p2) + (c * c - s * s) * sym;
        Self::from_real(q_mean, p_mean, q2, p2, sym_rot)
    }
}

fn require_non_negative(label: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidParameter(format!("{label} = {x} must be finite and >= 0")));
    }
    Ok(())
}

/// Single-mode thermal state with `Γ = (n̄ + 1/2) I`.
pub fn thermal(n_bar: f64) -> Result<GaussianState> {
    require_non_negative("n_bar", n_bar)?;
    GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2) * (n_bar + 0.5))
}

/// Thermal state squeezed by `θ e^{iγ}` and then displaced by `d e^{iβ}`.
pub fn displaced_squeezed_thermal(p: &ReferenceStateParams) -> Result<GaussianState> {
    p.check()?;
    let squeeze = single_mode_squeezer(p.theta, p.gamma)?;
    let shift = displacement(Complex::from_polar(p.d, p.beta))?;
    thermal(p.n_bar)?.apply_transform(&squeeze.then(&shift)?)
}

/// Closed-form moments of [`displaced_squeezed_thermal`].
pub fn reference_moments(p: &ReferenceStateParams) -> Result<ReferenceMoments> {
    p.check()?;
    let nh = p.n_bar + 0.5;
    let (c2t, s2t) = ((2.0 * p.theta).cosh(), (2.0 * p.theta).sinh());
    let (half_s, half_c) = (0.5 * p.gamma).sin_cos();
    let (e_plus, e_minus) = ((2.0 * p.theta).exp(), (-2.0 * p.theta).exp());
    let d2 = p.d * p.d;
    let (sb, cb) = p.beta.sin_cos();
    let q2 = nh * (e_plus * half_s * half_s + e_minus * half_c * half_c) + 2.0 * d2 * cb * cb;
    let p2 = nh * (e_plus * half_c * half_c + e_minus * half_s * half_s) + 2.0 * d2 * sb * sb;
    let sym = d2 * (2.0 * p.beta).sin() - nh * s2t * p.gamma.sin();
    Ok(ReferenceMoments {
        q_mean: SQRT_2 * p.d * cb,
        p_mean: SQRT_2 * p.d * sb,
        q2,
        p2,
        qp: Complex::new(sym, 0.5),
        pq: Complex::new(sym, -0.5),
        q2_minus_p2: 2.0 * d2 * (2.0 * p.beta).cos() - (2.0 * p.n_bar + 1.0) * s2t * p.gamma.cos(),
        q2_plus_p2: 2.0 * d2 + (2.0 * p.n_bar + 1.0) * c2t,
    })
}

/// Moments of an arbitrary single-mode state, in the same layout.
pub fn single_mode_moments(state: &GaussianState) -> Result<ReferenceMoments> {
    if state.n_modes() != 1 {
        return Err(Error::Dimension(format!(
            "single-mode moments requested for {} modes",
            state.n_modes()
        )));
    }
    let m = state.second_moments();
    Ok(ReferenceMoments::from_real(
        state.means()[0],
        state.means()[1],
        m[(0, 0)],
        m[(1, 1)],
        m[(0, 1)],
    ))
}

/// Two-mode squeezed vacuum: `A = B = cosh(2r)/2 I`, `C = sinh(2r)/2 diag(1, -1)`.
pub fn two_mode_squeezed_vacuum(r: f64) -> Result<GaussianState> {
    GaussianState::vacuum(2).apply_transform(&two_mode_squeezer(r)?)
}

/// Normal-form state with `A = λ I`, `B = μ I`, `C = diag(s, t)`; rejected if it
/// violates the uncertainty bound.
pub fn simon_form(lambda: f64, mu: f64, s: f64, t: f64) -> Result<GaussianState> {
    if [lambda, mu, s, t].iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("normal-form parameters must be finite".into()));
    }
    let mut cov = DMatrix::zeros(4, 4);
    cov[(0, 0)] = lambda;
    cov[(1, 1)] = lambda;
    cov[(2, 2)] = mu;
    cov[(3, 3)] = mu;
    cov[(0, 2)] = s;
    cov[(2, 0)] = s;
    cov[(1, 3)] = t;
    cov[(3, 1)] = t;
    let state = GaussianState::new(DVector::zeros(4), cov)?;
    let lam = state.uncertainty_min_eigenvalue();
    if lam < -crate::state::VALIDITY_TOL {
        return Err(Error::InvalidCovariance(format!(
            "normal form (λ={lambda}, μ={mu}, s={s}, t={t}) violates cov + iJ/2 ⪰ 0 \
             (smallest eigenvalue {lam:e})"
        )));
    }
    Ok(state)
}

/// Random passive two-mode transform: phases, beam splitter, phases.
fn random_passive<R: Rng + ?Sized>(rng: &mut R) -> Result<SymplecticTransform> {
    let phase = |rng: &mut R| phase_shifter(rng.random_range(0.0..2.0 * PI));
    let first = phase(rng)?.direct_sum(&phase(rng)?);
    let mix = rotation_theta(rng.random_range(0.0..PI))?;
    let last = phase(rng)?.direct_sum(&phase(rng)?);
    first.then(&mix)?.then(&last)
}

/// Random valid two-mode state drawn with `rng`: Williamson form
/// `diag(ν1, ν1, ν2, ν2)` with `ν_i ~ U[1/2, 1/2 + max_thermal]`, conjugated by
/// `passive · (squeezer ⊕ squeezer) · passive` with squeeze magnitudes `≤ max_squeeze`.
pub fn random_state_with<R: Rng + ?Sized>(
    rng: &mut R,
    max_squeeze: f64,
    max_thermal: f64,
) -> Result<GaussianState> {
    require_non_negative("max_squeeze", max_squeeze)?;
    require_non_negative("max_thermal", max_thermal)?;
    let nu1 = 0.5 + max_thermal * rng.random::<f64>();
    let nu2 = 0.5 + max_thermal * rng.random::<f64>();
    let williamson = GaussianState::new(
        DVector::zeros(4),
        DMatrix::from_diagonal(&DVector::from_vec(vec![nu1, nu1, nu2, nu2])),
    )?;
    let inner = random_passive(rng)?;
    let r1 = max_squeeze * rng.random::<f64>();
    let r2 = max_squeeze * rng.random::<f64>();
    let squeeze = single_mode_squeezer(r1, 0.0)?.direct_sum(&single_mode_squeezer(r2, 0.0)?);
    let outer = random_passive(rng)?;
    williamson.apply_transform(&inner.then(&squeeze)?.then(&outer)?)
}

/// Seeded version of [`random_state_with`] using ChaCha8.
pub fn random_state(seed: u64, max_squeeze: f64, max_thermal: f64) -> Result<GaussianState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_state_with(&mut rng, max_squeeze, max_thermal)
}

/// Random reference parameters for testing: unbiased or biased, with nonzero displacement.
pub fn random_reference<R: Rng + ?Sized>(rng: &mut R) -> ReferenceStateParams {
    ReferenceStateParams {
        n_bar: rng.random_range(0.0..1.0),
        d: rng.random_range(0.2..1.5),
        beta: rng.random_range(-PI..PI),
        theta: rng.random_range(0.0..0.8),
        gamma: rng.random_range(-PI..PI),
    }
}
