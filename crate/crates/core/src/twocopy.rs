//! Two-copy estimation of the criterion without full tomography.
//!
//! `det A`, `det B` and `det Γ` come from SWAP tests on pairs of copies. The SWAP
//! operator has eigenvalues ±1 and `⟨SWAP⟩ = Tr ρ²`, so the outcomes are
//! Bernoulli with `P(+1) = (1 + Tr ρ²)/2`. For an `n`-mode Gaussian state
//! `Tr ρ² = 1/(2ⁿ √det Γ)`. `det C` comes from one of three methods:
//!
//! 1. random local quadrature pairs (homodyne cross moments);
//! 2. for normal-form states, a SWAP test on one output of a `π/4` rotation;
//! 3. Stokes-like measurements behind one parametric amplifier per side, fed with
//!    two zero-mean copies.
//!
//! In method 2 the rotated marginal is `½((λ+μ) I - (C + Cᵀ))`, so its determinant
//! is `¼((λ+μ)² - 2(λ+μ)(s+t) + 4st)`. Together with
//! `det Γ = (λμ - s²)(λμ - t²) = (λμ)² - λμ((s+t)² - 2st) + (st)²` this fixes
//! `s + t` and `st`.

use std::f64::consts::FRAC_PI_4;

use nalgebra::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criterion::{report_from_determinants, SeparabilityReport};
use crate::error::{Error, Result};
use crate::estimate::propagate_std;
use crate::factory::{reference_moments, simon_form, ReferenceStateParams};
use crate::moments::QuadraticSymbol;
use crate::sampler::{sample_wigner, stream_rng, substream, Backend, MomentEstimate};
use crate::state::GaussianState;
use crate::stokes::{expect_stokes, sample_observable, StokesNetwork, StokesObservable};
use crate::symplectic::{displacement, opa, rotation_theta};

/// Minimum shots per quadrature pair in method 1.
pub const MIN_PAIR_SHOTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapTestResult {
    pub n_modes: usize,
    /// Zero for exact evaluation.
    pub n_shots: usize,
    pub p_plus: f64,
    pub purity_hat: f64,
    pub purity_std_error: f64,
    /// `(1/(2ⁿ purity))²`, absent when the purity estimate is not positive.
    pub det_hat: Option<f64>,
    pub det_std_error: Option<f64>,
}

impl SwapTestResult {
    fn from_purity(n_modes: usize, n_shots: usize, p_plus: f64, purity: f64, purity_err: f64) -> Self {
        let (det_hat, det_std_error) = if purity > 0.0 {
            let det = (1.0 / (2f64.powi(n_modes as i32) * purity)).powi(2);
            (Some(det), Some(2.0 * det * purity_err / purity))
        } else {
            (None, None)
        };
        Self {
            n_modes,
            n_shots,
            p_plus,
            purity_hat: purity,
            purity_std_error: purity_err,
            det_hat,
            det_std_error,
        }
    }

    /// Determinant estimate, or an error when the shots did not give a positive purity.
    pub fn determinant(&self) -> Result<MomentEstimate> {
        match (self.det_hat, self.det_std_error) {
            (Some(value), Some(std_error)) => Ok(MomentEstimate {
                value,
                std_error,
                n_shots: self.n_shots,
            }),
            _ => Err(Error::InsufficientShots(format!(
                "SWAP test purity estimate {} is not positive after {} shots",
                self.purity_hat, self.n_shots
            ))),
        }
    }
}

/// Simulated SWAP test on `n_shots` pairs of copies.
pub fn swap_test(state: &GaussianState, n_shots: usize, seed: u64) -> Result<SwapTestResult> {
    if n_shots == 0 {
        return Err(Error::InsufficientShots("SWAP test needs at least one shot".into()));
    }
    state.ensure_valid()?;
    let mu = state.purity()?.min(1.0);
    let p = 0.5 * (1.0 + mu);
    let mut rng = stream_rng(seed, 0);
    let plus = (0..n_shots).filter(|_| rng.random_bool(p)).count();
    let n = n_shots as f64;
    let p_hat = plus as f64 / n;
    let err = 2.0 * (p_hat * (1.0 - p_hat) / n).sqrt();
    Ok(SwapTestResult::from_purity(state.n_modes(), n_shots, p_hat, 2.0 * p_hat - 1.0, err))
}

/// Exact SWAP expectation (infinite shots).
pub fn swap_test_exact(state: &GaussianState) -> Result<SwapTestResult> {
    state.ensure_valid()?;
    let mu = state.purity()?;
    Ok(SwapTestResult::from_purity(state.n_modes(), 0, 0.5 * (1.0 + mu), mu, 0.0))
}

fn swap_with(backend: &Backend, state: &GaussianState, branch: u64) -> Result<SwapTestResult> {
    match *backend {
        Backend::Analytic => swap_test_exact(state),
        Backend::Sampled { shots, seed } => swap_test(state, shots, substream(seed, branch)),
    }
}

/// Estimated off-diagonal block `[[Γ_q1q2, Γ_q1p2], [Γ_p1q2, Γ_p1p2]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CBlockEstimate {
    pub c: [[f64; 2]; 2],
    pub std_errors: [[f64; 2]; 2],
    pub det_c: f64,
    pub det_c_std_error: f64,
    pub shots_used: usize,
}

fn det2(c: &[[f64; 2]; 2]) -> f64 {
    c[0][0] * c[1][1] - c[0][1] * c[1][0]
}

/// Method 1: every copy is measured in one of the four local quadrature pairs,
/// chosen uniformly at random.
pub fn method1_c(state: &GaussianState, n_shots: usize, seed: u64) -> Result<CBlockEstimate> {
    if state.n_modes() != 2 {
        return Err(Error::Unsupported("method 1 needs a two-mode state".into()));
    }
    let batch = sample_wigner(state, n_shots, substream(seed, 0))?;
    let mut choice = stream_rng(seed, 1);
    // (side-1 index, side-2 index) for q1q2, q1p2, p1q2, p1p2
    const PAIRS: [(usize, usize); 4] = [(0, 2), (0, 3), (1, 2), (1, 3)];
    let mut data: [Vec<(f64, f64)>; 4] = Default::default();
    for row in batch.rows() {
        let k = choice.random_range(0..4);
        let (i, j) = PAIRS[k];
        data[k].push((row[i], row[j]));
    }
    let mut c = [[0.0; 2]; 2];
    let mut err = [[0.0; 2]; 2];
    for (k, pairs) in data.iter().enumerate() {
        if pairs.len() < MIN_PAIR_SHOTS {
            return Err(Error::InsufficientShots(format!(
                "quadrature pair {k} received {} shots, need {MIN_PAIR_SHOTS}",
                pairs.len()
            )));
        }
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let prods: Vec<f64> = pairs.iter().map(|&(x, y)| (x - mx) * (y - my)).collect();
        let est = MomentEstimate::from_values(&prods);
        c[k / 2][k % 2] = est.value * n / (n - 1.0);
        err[k / 2][k % 2] = est.std_error;
    }
    let det_c = det2(&c);
    // the four entries come from disjoint sets of copies
    let det_c_std_error = ((c[1][1] * err[0][0]).powi(2)
        + (c[0][0] * err[1][1]).powi(2)
        + (c[1][0] * err[0][1]).powi(2)
        + (c[0][1] * err[1][0]).powi(2))
    .sqrt();
    Ok(CBlockEstimate {
        c,
        std_errors: err,
        det_c,
        det_c_std_error,
        shots_used: n_shots,
    })
}

/// Determinant estimates consumed by method 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Method2Inputs {
    pub det_a: f64,
    pub det_b: f64,
    pub det_gamma: f64,
    /// Determinant of the rotated marginal `½((λ+μ)I - (C + Cᵀ))`.
    pub det_rotated: f64,
    /// Determinant of the other rotated output `½((λ+μ)I + (C + Cᵀ))`, used only as
    /// a consistency check when present.
    pub det_rotated_other: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method2Outcome {
    /// `st`, absent when two valid solutions remain.
    pub det_c: Option<f64>,
    /// `s + t` of the selected solution.
    pub sum_st: Option<f64>,
    /// Every `(s + t, st)` pair that yields a valid normal-form state.
    pub candidates: Vec<(f64, f64)>,
    pub ambiguous: bool,
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE);
    if a.abs() <= 1e-12 * scale {
        if b.abs() <= 1e-14 * scale {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < -1e-12 * (b * b).max(scale * scale) {
        return Vec::new();
    }
    let sq = disc.max(0.0).sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return vec![0.0];
    }
    let mut roots = vec![q / a, c / q];
    if (roots[0] - roots[1]).abs() <= 1e-12 * roots[0].abs().max(1.0) {
        roots.truncate(1);
    }
    roots
}

/// Every real `(s + t, st)` pair solving the method 2 equations, before any
/// validity check.
pub fn method2_solutions(inputs: &Method2Inputs) -> Result<Vec<(f64, f64)>> {
    let Method2Inputs {
        det_a,
        det_b,
        det_gamma,
        det_rotated,
        ..
    } = *inputs;
    if !(det_a > 0.0 && det_b > 0.0) {
        return Err(Error::ModelMismatch(format!(
            "marginal determinants must be positive (det A = {det_a}, det B = {det_b})"
        )));
    }
    let (lambda, mu) = (det_a.sqrt(), det_b.sqrt());
    let l = lambda * mu;
    let k = lambda + mu;
    // st = alpha + beta (s + t)
    let alpha = det_rotated - 0.25 * k * k;
    let beta = 0.5 * k;
    let qa = beta * beta - l;
    let qb = 2.0 * beta * (l + alpha);
    let qc = (l + alpha).powi(2) - det_gamma;
    Ok(quadratic_roots(qa, qb, qc)
        .into_iter()
        .map(|sigma| (sigma, alpha + beta * sigma))
        .collect())
}

/// Method 2 algebra: recovers `det C = st` for a normal-form covariance.
/// `tol` bounds the accepted violation of `Γ + iJ/2 ⪰ 0` and the mismatch of the
/// optional consistency check.
pub fn method2_det_c(inputs: &Method2Inputs, tol: f64) -> Result<Method2Outcome> {
    let roots = method2_solutions(inputs)?;
    let (lambda, mu) = (inputs.det_a.sqrt(), inputs.det_b.sqrt());
    let k = lambda + mu;
    let det_rotated_other = inputs.det_rotated_other;
    if roots.is_empty() {
        return Err(Error::ModelMismatch(
            "no real (s + t, st) solution; the state is not of normal form within noise".into(),
        ));
    }
    let mut candidates = Vec::new();
    for (sigma, pi) in roots {
        let disc = sigma * sigma - 4.0 * pi;
        if disc < -tol * sigma.abs().max(1.0).powi(2) {
            continue;
        }
        let r = disc.max(0.0).sqrt();
        let (s, t) = (0.5 * (sigma + r), 0.5 * (sigma - r));
        let Ok(state) = simon_form_relaxed(lambda, mu, s, t) else {
            continue;
        };
        if state.uncertainty_min_eigenvalue() >= -tol {
            candidates.push((sigma, pi));
        }
    }
    if candidates.is_empty() {
        return Err(Error::ModelMismatch(
            "no solution gives a valid normal-form covariance".into(),
        ));
    }
    if let Some(other) = det_rotated_other {
        let predicted = |(sigma, pi): (f64, f64)| 0.25 * (k * k + 2.0 * k * sigma + 4.0 * pi);
        let residual = |c: (f64, f64)| (predicted(c) - other).abs();
        let best = candidates
            .iter()
            .copied()
            .min_by(|a, b| residual(*a).total_cmp(&residual(*b)))
            .expect("nonempty");
        if residual(best) > tol * other.abs().max(1.0) {
            return Err(Error::ModelMismatch(format!(
                "second rotated marginal has det {other}, the normal-form solution predicts {}",
                predicted(best)
            )));
        }
        let consistent: Vec<(f64, f64)> = candidates
            .iter()
            .copied()
            .filter(|c| residual(*c) <= tol * other.abs().max(1.0))
            .collect();
        let ambiguous = consistent.len() > 1
            && consistent.iter().any(|c| (c.1 - best.1).abs() > tol.max(1e-12));
        return Ok(Method2Outcome {
            det_c: (!ambiguous).then_some(best.1),
            sum_st: (!ambiguous).then_some(best.0),
            candidates,
            ambiguous,
        });
    }
    let ambiguous = candidates.len() > 1
        && (candidates[0].1 - candidates[1].1).abs() > tol.max(1e-12);
    Ok(Method2Outcome {
        det_c: (!ambiguous).then_some(candidates[0].1),
        sum_st: (!ambiguous).then_some(candidates[0].0),
        candidates,
        ambiguous,
    })
}

/// Normal-form covariance without the validity rejection of [`simon_form`], so
/// near-boundary candidates can be compared against a tolerance.
fn simon_form_relaxed(lambda: f64, mu: f64, s: f64, t: f64) -> Result<GaussianState> {
    match simon_form(lambda, mu, s, t) {
        Ok(st) => Ok(st),
        Err(Error::InvalidCovariance(_)) => {
            let mut cov = nalgebra::DMatrix::zeros(4, 4);
            for (i, v) in [lambda, lambda, mu, mu].into_iter().enumerate() {
                cov[(i, i)] = v;
            }
            cov[(0, 2)] = s;
            cov[(2, 0)] = s;
            cov[(1, 3)] = t;
            cov[(3, 1)] = t;
            GaussianState::new(nalgebra::DVector::zeros(4), cov)
        }
        Err(e) => Err(e),
    }
}

/// Output mode `keep` of a `π/4` rotation of the two modes.
pub fn rotated_marginal(state: &GaussianState, keep: usize) -> Result<GaussianState> {
    state.apply_transform(&rotation_theta(FRAC_PI_4)?)?.reduced(&[keep])
}

/// Parametric-amplifier settings `(g, Φ)` on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpaParams {
    pub g1: f64,
    pub phi1: f64,
    pub g2: f64,
    pub phi2: f64,
}

impl Default for OpaParams {
    fn default() -> Self {
        Self {
            g1: 0.3,
            phi1: 0.0,
            g2: 0.2,
            phi2: std::f64::consts::FRAC_PI_3,
        }
    }
}

/// Coefficients linking the four Stokes-like readouts to the cross moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpaConstants {
    pub m1: f64,
    pub n1: f64,
    pub m2: f64,
    pub n2: f64,
    pub m1p: f64,
    pub n1p: f64,
    pub m2p: f64,
    pub n2p: f64,
}

impl OpaParams {
    pub fn constants(&self) -> OpaConstants {
        let (c1, s1) = (self.g1.cosh(), self.g1.sinh());
        let (c2, s2) = (self.g2.cosh(), self.g2.sinh());
        let (sd, cd) = (self.phi1 - self.phi2).sin_cos();
        let (sp1, cp1) = self.phi1.sin_cos();
        let (sp2, cp2) = self.phi2.sin_cos();
        OpaConstants {
            m1: s1 * s2 * sd,
            n1: -c1 * c2 + s1 * s2 * cd,
            m2: c1 * c2 + s1 * s2 * cd,
            n2: -s1 * s2 * sd,
            m1p: -c1 * s2 * sp2 + s1 * c2 * sp1,
            n1p: c1 * s2 * cp2 - s1 * c2 * cp1,
            m2p: c1 * s2 * cp2 + s1 * c2 * cp1,
            n2p: s1 * c2 * sp1 + c1 * s2 * sp2,
        }
    }

    pub fn check(&self) -> Result<()> {
        if [self.g1, self.phi1, self.g2, self.phi2].iter().any(|x| !x.is_finite())
            || self.g1 < 0.0
            || self.g2 < 0.0
        {
            return Err(Error::InvalidParameter("OPA gains must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// The four method-3 observables, in order: `i(A3†B3 - h.c.)`, `A3†B3 + h.c.`,
/// `i(A3†B4 - h.c.)`, `A3†B4 + h.c.`, evaluated on the amplified two-copy state.
fn method3_setup(state: &GaussianState, opa_params: &OpaParams) -> Result<(GaussianState, [QuadraticSymbol; 4])> {
    // modes: copy 1 = (0, 1), copy 2 = (2, 3); Alice holds 0 and 2, Bob 1 and 3
    let two = state.tensor_product(state);
    let alice = opa(opa_params.g1, opa_params.phi1)?.embed(&[2, 0], 4)?;
    let bob = opa(opa_params.g2, opa_params.phi2)?.embed(&[3, 1], 4)?;
    let out = two.apply_transform(&alice.then(&bob)?)?;
    // A3 on mode 2, A4 on mode 0, B3 on mode 3, B4 on mode 1
    let coherence = |a: usize, b: usize| {
        let mut f = QuadraticSymbol::zero(8);
        f.add_product(2 * a + 1, 2 * b, 1.0);
        f.add_product(2 * a, 2 * b + 1, -1.0);
        f
    };
    let overlap = |a: usize, b: usize| {
        let mut f = QuadraticSymbol::zero(8);
        f.add_product(2 * a, 2 * b, 1.0);
        f.add_product(2 * a + 1, 2 * b + 1, 1.0);
        f
    };
    Ok((out, [coherence(2, 3), overlap(2, 3), coherence(2, 1), overlap(2, 1)]))
}

/// Solves the two 2×2 systems for `C` from the four readouts.
pub fn method3_solve(k: &OpaConstants, readouts: &[f64; 4]) -> Result<[[f64; 2]; 2]> {
    let solve = |a: f64, b: f64, c: f64, d: f64, r1: f64, r2: f64, which: &str| {
        let det = a * d - b * c;
        let scale = (a.abs() + b.abs()) * (c.abs() + d.abs());
        if det.abs() <= 1e-10 * scale.max(1e-300) {
            return Err(Error::Conditioning(format!(
                "{which} OPA system is singular (det = {det:e}); use different gains or pump phases"
            )));
        }
        Ok(((d * r1 - b * r2) / det, (a * r2 - c * r1) / det))
    };
    // sum_pp = ⟨q1q2⟩ + ⟨p1p2⟩, diff_cross = ⟨q1p2⟩ - ⟨p1q2⟩
    let (sum_pp, diff_cross) = solve(k.m1, k.n1, k.m2, k.n2, readouts[0], readouts[1], "first")?;
    // diff_pp = ⟨q1q2⟩ - ⟨p1p2⟩, sum_cross = ⟨q1p2⟩ + ⟨p1q2⟩
    let (diff_pp, sum_cross) = solve(k.m1p, k.n1p, k.m2p, k.n2p, readouts[2], readouts[3], "second")?;
    Ok([
        [0.5 * (sum_pp + diff_pp), 0.5 * (sum_cross + diff_cross)],
        [0.5 * (sum_cross - diff_cross), 0.5 * (sum_pp - diff_pp)],
    ])
}

/// How method 3 handles nonzero first moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeanHandling {
    /// Estimate the means with single-mode interferometry and displace them away first.
    #[default]
    Displace,
    /// Assume the means already vanish.
    AssumeZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Method3Outcome {
    pub block: CBlockEstimate,
    pub readouts: [MomentEstimate; 4],
    /// Means removed before the two-copy stage.
    pub removed_means: [f64; 4],
}

/// Estimates the signal means from two single-mode `S1` readouts per mode.
fn estimate_means(state: &GaussianState, backend: &Backend) -> Result<([f64; 4], usize)> {
    let reference = ReferenceStateParams::default();
    let r = reference_moments(&reference)?;
    let phases = [0.0, std::f64::consts::FRAC_PI_2];
    let mut means = [0.0; 4];
    let mut used = 0;
    for mode in 0..2 {
        let mut rows = [[0.0; 2]; 2];
        let mut rhs = [0.0; 2];
        for (i, &phi) in phases.iter().enumerate() {
            let net = StokesNetwork::SingleMode { mode, phi, reference };
            let value = match *backend {
                Backend::Analytic => expect_stokes(&net, state)?
                    .into_iter()
                    .find(|ro| ro.observable == StokesObservable::S1)
                    .expect("single-mode network reads S1")
                    .value,
                Backend::Sampled { shots, seed } => {
                    let s = substream(seed, 100 + 2 * mode as u64 + i as u64);
                    sample_observable(&net, StokesObservable::S1, state, shots, s)?.value
                }
            };
            used += value.n_shots;
            let rr = r.rotated(phi);
            rows[i] = [rr.q_mean, rr.p_mean];
            rhs[i] = value.value;
        }
        let det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0];
        if det.abs() < 1e-10 {
            return Err(Error::Conditioning(
                "reference has no coherent amplitude; cannot read signal means".into(),
            ));
        }
        means[2 * mode] = (rhs[0] * rows[1][1] - rows[0][1] * rhs[1]) / det;
        means[2 * mode + 1] = (rows[0][0] * rhs[1] - rows[1][0] * rhs[0]) / det;
    }
    Ok((means, used))
}

/// Method 3: amplified two-copy Stokes-like readouts.
pub fn method3_c(
    state: &GaussianState,
    opa_params: &OpaParams,
    backend: &Backend,
    means: MeanHandling,
) -> Result<Method3Outcome> {
    if state.n_modes() != 2 {
        return Err(Error::Unsupported("method 3 needs a two-mode state".into()));
    }
    opa_params.check()?;
    state.ensure_valid()?;
    let k = opa_params.constants();
    let (removed, mut used) = match means {
        MeanHandling::AssumeZero => ([0.0; 4], 0),
        MeanHandling::Displace => estimate_means(state, backend)?,
    };
    let centered = if removed.iter().any(|&m| m != 0.0) {
        let shift = displacement(Complex::new(-removed[0], -removed[1]) / std::f64::consts::SQRT_2)?
            .direct_sum(&displacement(Complex::new(-removed[2], -removed[3]) / std::f64::consts::SQRT_2)?);
        state.apply_transform(&shift)?
    } else {
        state.clone()
    };
    let (joint, symbols) = method3_setup(&centered, opa_params)?;
    let readouts: Vec<MomentEstimate> = match *backend {
        Backend::Analytic => symbols
            .iter()
            .map(|f| MomentEstimate::exact(f.expectation(&joint)))
            .collect(),
        Backend::Sampled { shots, seed } => symbols
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let batch = sample_wigner(&joint, shots, substream(seed, 200 + i as u64))?;
                Ok(crate::sampler::estimate_functional(&batch, |x| f.eval(x)))
            })
            .collect::<Result<_>>()?,
    };
    used += readouts.iter().map(|r| r.n_shots).sum::<usize>();
    let values = [readouts[0].value, readouts[1].value, readouts[2].value, readouts[3].value];
    let sigma: Vec<f64> = readouts.iter().map(|r| r.std_error).collect();
    let c = method3_solve(&k, &values)?;
    let f = |v: &[f64]| -> Vec<f64> {
        match method3_solve(&k, &[v[0], v[1], v[2], v[3]]) {
            Ok(c) => vec![c[0][0], c[0][1], c[1][0], c[1][1], det2(&c)],
            Err(_) => vec![f64::NAN; 5],
        }
    };
    let errs = propagate_std(f, &values, &sigma);
    Ok(Method3Outcome {
        block: CBlockEstimate {
            c,
            std_errors: [[errs[0], errs[1]], [errs[2], errs[3]]],
            det_c: det2(&c),
            det_c_std_error: errs[4],
            shots_used: used,
        },
        readouts: [readouts[0], readouts[1], readouts[2], readouts[3]],
        removed_means: removed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMethod {
    Method1,
    Method2,
    Method3,
}

impl CMethod {
    /// Distinct measurement settings used to obtain `det C`.
    pub fn settings(self) -> usize {
        match self {
            CMethod::Method1 => 4,
            CMethod::Method2 => 2,
            CMethod::Method3 => 4,
        }
    }
}

/// Settings needed by the five-observable tomography for comparison.
pub const TOMOGRAPHY_SETTINGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterminantEstimates {
    pub det_a: MomentEstimate,
    pub det_b: MomentEstimate,
    pub det_c: MomentEstimate,
    pub det_gamma: MomentEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoCopyReport {
    pub report: SeparabilityReport,
    /// False when `D² < 4 det Γ` beyond tolerance.
    pub consistent: bool,
    pub margin_std_error: f64,
    /// Three SWAP tests plus the settings of the `det C` method.
    pub measurement_settings: usize,
    pub tomography_settings: usize,
}

/// Criterion from four determinant estimates.
pub fn assemble_verdict(dets: &DeterminantEstimates, method: CMethod) -> TwoCopyReport {
    let out = report_from_determinants(
        dets.det_a.value,
        dets.det_b.value,
        dets.det_c.value,
        dets.det_gamma.value,
    );
    let margin_std_error = (dets.det_a.std_error.powi(2)
        + dets.det_b.std_error.powi(2)
        + 4.0 * dets.det_c.std_error.powi(2)
        + 16.0 * dets.det_gamma.std_error.powi(2))
    .sqrt();
    TwoCopyReport {
        report: out.report,
        consistent: out.consistent,
        margin_std_error,
        measurement_settings: 3 + method.settings(),
        tomography_settings: TOMOGRAPHY_SETTINGS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoCopyConfig {
    pub opa: OpaParams,
    pub means: MeanHandling,
    /// Accepted violation in the method 2 normal-form checks.
    pub method2_tol: f64,
}

impl Default for TwoCopyConfig {
    fn default() -> Self {
        Self {
            opa: OpaParams::default(),
            means: MeanHandling::Displace,
            method2_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoCopyResult {
    pub method: CMethod,
    pub dets: DeterminantEstimates,
    pub verdict: TwoCopyReport,
    pub c_block: Option<CBlockEstimate>,
    pub method2: Option<Method2Outcome>,
    pub shots_used: usize,
}

/// Full two-copy pipeline: three SWAP tests plus one `det C` method. With a
/// sampled backend every branch receives `shots` shots on its own sub-stream.
pub fn run_twocopy(state: &GaussianState, method: CMethod, backend: &Backend, config: &TwoCopyConfig) -> Result<TwoCopyResult> {
    if state.n_modes() != 2 {
        return Err(Error::Unsupported("two-copy scheme needs a two-mode state".into()));
    }
    state.ensure_valid()?;
    let swap_a = swap_with(backend, &state.reduced(&[0])?, 0)?;
    let swap_b = swap_with(backend, &state.reduced(&[1])?, 1)?;
    let swap_g = swap_with(backend, state, 2)?;
    let (det_a, det_b, det_gamma) = (swap_a.determinant()?, swap_b.determinant()?, swap_g.determinant()?);
    let mut shots_used = swap_a.n_shots + swap_b.n_shots + swap_g.n_shots;

    let (det_c, c_block, method2) = match method {
        CMethod::Method1 => {
            let block = match *backend {
                Backend::Sampled { shots, seed } => method1_c(state, shots, substream(seed, 3))?,
                Backend::Analytic => {
                    let b = state.blocks()?;
                    let c = [[b.c[(0, 0)], b.c[(0, 1)]], [b.c[(1, 0)], b.c[(1, 1)]]];
                    CBlockEstimate {
                        c,
                        std_errors: [[0.0; 2]; 2],
                        det_c: det2(&c),
                        det_c_std_error: 0.0,
                        shots_used: 0,
                    }
                }
            };
            shots_used += block.shots_used;
            let d = MomentEstimate {
                value: block.det_c,
                std_error: block.det_c_std_error,
                n_shots: block.shots_used,
            };
            (d, Some(block), None)
        }
        CMethod::Method2 => {
            let rot = swap_with(backend, &rotated_marginal(state, 1)?, 3)?;
            let other = swap_with(backend, &rotated_marginal(state, 0)?, 4)?;
            shots_used += rot.n_shots + other.n_shots;
            let det_rot = rot.determinant()?;
            let det_other = other.determinant()?;
            let inputs = Method2Inputs {
                det_a: det_a.value,
                det_b: det_b.value,
                det_gamma: det_gamma.value,
                det_rotated: det_rot.value,
                det_rotated_other: Some(det_other.value),
            };
            let tol = match backend {
                Backend::Analytic => config.method2_tol,
                // allow five standard errors of the noisiest input
                Backend::Sampled { .. } => {
                    let worst = [det_a, det_b, det_gamma, det_rot, det_other]
                        .iter()
                        .map(|d| d.std_error / d.value.abs().max(1e-12))
                        .fold(0.0, f64::max);
                    config.method2_tol.max(5.0 * worst)
                }
            };
            let outcome = method2_det_c(&inputs, tol)?;
            let value = outcome.det_c.ok_or_else(|| {
                Error::ModelMismatch(format!(
                    "two normal-form solutions fit the data: {:?}",
                    outcome.candidates
                ))
            })?;
            let sigma = [det_a.std_error, det_b.std_error, det_gamma.std_error, det_rot.std_error];
            let x = [det_a.value, det_b.value, det_gamma.value, det_rot.value];
            let f = |v: &[f64]| {
                let inp = Method2Inputs {
                    det_a: v[0],
                    det_b: v[1],
                    det_gamma: v[2],
                    det_rotated: v[3],
                    det_rotated_other: None,
                };
                match method2_det_c(&inp, f64::INFINITY) {
                    Ok(o) => vec![o
                        .candidates
                        .iter()
                        .map(|c| c.1)
                        .min_by(|a, b| (a - value).abs().total_cmp(&(b - value).abs()))
                        .unwrap_or(f64::NAN)],
                    Err(_) => vec![f64::NAN],
                }
            };
            let std_error = propagate_std(f, &x, &sigma)[0];
            let d = MomentEstimate {
                value,
                std_error: if std_error.is_finite() { std_error } else { 0.0 },
                n_shots: rot.n_shots + other.n_shots,
            };
            (d, None, Some(outcome))
        }
        CMethod::Method3 => {
            let out = method3_c(state, &config.opa, backend, config.means)?;
            shots_used += out.block.shots_used;
            let d = MomentEstimate {
                value: out.block.det_c,
                std_error: out.block.det_c_std_error,
                n_shots: out.block.shots_used,
            };
            (d, Some(out.block), None)
        }
    };
    let dets = DeterminantEstimates {
        det_a,
        det_b,
        det_c,
        det_gamma,
    };
    Ok(TwoCopyResult {
        method,
        verdict: assemble_verdict(&dets, method),
        dets,
        c_block,
        method2,
        shots_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constants_at_zero_gain() {
        let k = OpaParams {
            g1: 0.0,
            phi1: 0.4,
            g2: 0.0,
            phi2: 1.3,
        }
        .constants();
        assert_abs_diff_eq!(k.m1, 0.0);
        assert_abs_diff_eq!(k.n1, -1.0);
        assert_abs_diff_eq!(k.m2, 1.0);
        assert_abs_diff_eq!(k.n2, 0.0);
    }

    #[test]
    fn quadratic_roots_stable() {
        let r = quadratic_roots(1.0, -3.0, 2.0);
        assert_eq!(r.len(), 2);
        assert!(r.contains(&1.0) && r.contains(&2.0));
        assert_eq!(quadratic_roots(0.0, 2.0, -4.0), vec![2.0]);
        assert!(quadratic_roots(1.0, 0.0, 1.0).is_empty());
    }

    #[test]
    fn pure_state_swap_is_deterministic() {
        let r = swap_test(&GaussianState::vacuum(2), 1000, 5).unwrap();
        assert_eq!(r.p_plus, 1.0);
        assert_eq!(r.purity_std_error, 0.0);
        assert_abs_diff_eq!(r.det_hat.unwrap(), 1.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn equal_gains_and_phases_are_singular() {
        let p = OpaParams {
            g1: 0.3,
            phi1: 0.2,
            g2: 0.3,
            phi2: 0.2,
        };
        let err = method3_c(&GaussianState::vacuum(2), &p, &Backend::Analytic, MeanHandling::AssumeZero).unwrap_err();
        assert!(matches!(err, Error::Conditioning(_)));
    }

    #[test]
    fn settings_accounting() {
        let dets = DeterminantEstimates {
            det_a: MomentEstimate::exact(0.25),
            det_b: MomentEstimate::exact(0.25),
            det_c: MomentEstimate::exact(0.0),
            det_gamma: MomentEstimate::exact(1.0 / 16.0),
        };
        let r = assemble_verdict(&dets, CMethod::Method3);
        assert_eq!(r.measurement_settings, 7);
        assert_eq!(r.tomography_settings, 5);
        assert_abs_diff_eq!(r.report.margin, 0.0, epsilon = 1e-15);
    }
}
