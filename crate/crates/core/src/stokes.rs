//! Interferometric reconstruction with Stokes-like observables.
//!
//! A signal mode `k` interferes with a displaced squeezed thermal reference on a
//! balanced beam splitter after a phase shift `φ` on the reference:
//! `ã1 = (a_k - a_r e^{iφ})/√2`, `ã2 = (a_k + a_r e^{iφ})/√2`, and
//! `S1(φ) = ã2†ã2 - ã1†ã1 = q_k q_r^φ + p_k p_r^φ`.
//!
//! For the two-mode network the signal modes first meet on a balanced splitter,
//! giving `(a1 - a2)/√2` and `(a1 + a2)/√2`. Each output then interferes with its
//! own reference (`c` with phase `φ1`, `d` with phase `φ2`). The observables are
//! the intensity differences of both output pairs, their squares and product,
//! and the cross-coherence `S3 = i(a6†a3 - a3†a6)`.
//!
//! The sum-arm square at `φ2 = π/4` is derived here from the rotated reference
//! moments, so its `p2²` term multiplies `⟨p1²⟩ + 2⟨p1p2⟩ + ⟨p2²⟩`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{propagate_std, verdict_from_estimate, CovarianceEstimate, EstimatedVerdict, Matrix4};
use crate::factory::{displaced_squeezed_thermal, reference_moments, single_mode_moments, ReferenceMoments, ReferenceStateParams};
use crate::moments::QuadraticSymbol;
use crate::sampler::{sample_wigner, substream, Backend, MomentEstimate};
use crate::state::GaussianState;
use crate::symplectic::{beam_splitter_50_50, phase_shifter, SymplecticTransform};

/// Minimum shots per sampled readout.
pub const MIN_SHOTS: usize = 1000;
/// Smallest accepted ratio of singular values in the reconstruction systems.
const CONDITION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "snake_case")]
pub enum StokesNetwork {
    SingleMode {
        mode: usize,
        phi: f64,
        reference: ReferenceStateParams,
    },
    TwoMode {
        phi1: f64,
        phi2: f64,
        reference_c: ReferenceStateParams,
        reference_d: ReferenceStateParams,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StokesObservable {
    /// `S1(φ)` of a single-mode network, or of the difference arm.
    S1,
    /// `S1(φ)²`.
    S1Sq,
    /// `S1(φ2)` of the sum arm.
    S1Sum,
    /// `S1(φ2)²` of the sum arm.
    S1SumSq,
    /// `S1(φ1) ⊗ S1(φ2)`.
    S1xS1,
    /// `S3(φ1, φ2)`.
    S3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesReadout {
    pub network: StokesNetwork,
    pub observable: StokesObservable,
    pub value: MomentEstimate,
}

impl StokesNetwork {
    pub fn observables(&self) -> &'static [StokesObservable] {
        use StokesObservable::*;
        match self {
            StokesNetwork::SingleMode { .. } => &[S1, S1Sq],
            StokesNetwork::TwoMode { .. } => &[S1, S1Sum, S1Sq, S1SumSq, S1xS1, S3],
        }
    }

    fn supports(&self, obs: StokesObservable) -> bool {
        self.observables().contains(&obs)
    }

    fn check(&self, state: &GaussianState) -> Result<()> {
        match self {
            StokesNetwork::SingleMode { mode, reference, .. } => {
                reference.check()?;
                if *mode >= state.n_modes() {
                    return Err(Error::Dimension(format!(
                        "signal mode {mode} out of range for {} modes",
                        state.n_modes()
                    )));
                }
            }
            StokesNetwork::TwoMode {
                reference_c,
                reference_d,
                ..
            } => {
                reference_c.check()?;
                reference_d.check()?;
                if state.n_modes() != 2 {
                    return Err(Error::Unsupported(format!(
                        "two-mode network needs a two-mode signal, got {} modes",
                        state.n_modes()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Signal moments entering the two-mode formulas; the cross terms are raw
/// moments `⟨q1 q2⟩`, `⟨p1 p2⟩`, `⟨q1 p2⟩`, `⟨p1 q2⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeMoments {
    pub mode1: ReferenceMoments,
    pub mode2: ReferenceMoments,
    pub qq: f64,
    pub pp: f64,
    pub qp: f64,
    pub pq: f64,
}

impl TwoModeMoments {
    pub fn from_state(state: &GaussianState) -> Result<Self> {
        if state.n_modes() != 2 {
            return Err(Error::Unsupported("two-mode moments need two modes".into()));
        }
        let raw = state.second_moments();
        Ok(Self {
            mode1: single_mode_moments(&state.reduced(&[0])?)?,
            mode2: single_mode_moments(&state.reduced(&[1])?)?,
            qq: raw[(0, 2)],
            pp: raw[(1, 3)],
            qp: raw[(0, 3)],
            pq: raw[(1, 2)],
        })
    }
}

fn re(z: Complex<f64>) -> f64 {
    z.re
}

/// `⟨S1(φ)⟩ = ⟨q_k⟩⟨q_r^φ⟩ + ⟨p_k⟩⟨p_r^φ⟩`; `r` is the rotated reference.
pub fn single_s1(k: &ReferenceMoments, r: &ReferenceMoments) -> f64 {
    k.q_mean * r.q_mean + k.p_mean * r.p_mean
}

/// `⟨S1(φ)²⟩ = ⟨q_k²⟩⟨q_r²⟩ + ⟨p_k²⟩⟨p_r²⟩ + ⟨q_k p_k⟩⟨q_r p_r⟩ + ⟨p_k q_k⟩⟨p_r q_r⟩`,
/// with `r` the rotated reference.
pub fn single_s1_sq(k: &ReferenceMoments, r: &ReferenceMoments) -> f64 {
    k.q2 * r.q2 + k.p2 * r.p2 + re(k.qp * r.qp + k.pq * r.pq)
}

/// Moments of `X = q1 ∓ q2`, `Y = p1 ∓ p2`: `(⟨X²⟩, ⟨XY⟩, ⟨YX⟩, ⟨Y²⟩)`.
fn arm_moments(m: &TwoModeMoments, sign: f64) -> (f64, Complex<f64>, Complex<f64>, f64) {
    let (a, b) = (&m.mode1, &m.mode2);
    let x2 = a.q2 + 2.0 * sign * m.qq + b.q2;
    let y2 = a.p2 + 2.0 * sign * m.pp + b.p2;
    let cross = sign * (m.qp + m.pq);
    (x2, a.qp + cross + b.qp, a.pq + cross + b.pq, y2)
}

fn arm_s1(m: &TwoModeMoments, sign: f64, r: &ReferenceMoments) -> f64 {
    let x = m.mode1.q_mean + sign * m.mode2.q_mean;
    let y = m.mode1.p_mean + sign * m.mode2.p_mean;
    FRAC_1_SQRT_2 * (x * r.q_mean + y * r.p_mean)
}

fn arm_s1_sq(m: &TwoModeMoments, sign: f64, r: &ReferenceMoments) -> f64 {
    let (x2, xy, yx, y2) = arm_moments(m, sign);
    0.5 * (x2 * r.q2 + y2 * r.p2 + re(xy * r.qp + yx * r.pq))
}

/// Difference arm `S1(φ1)`; `c` is the rotated reference.
pub fn difference_s1(m: &TwoModeMoments, c: &ReferenceMoments) -> f64 {
    arm_s1(m, -1.0, c)
}

/// Sum arm `S1(φ2)`; `d` is the rotated reference.
pub fn sum_s1(m: &TwoModeMoments, d: &ReferenceMoments) -> f64 {
    arm_s1(m, 1.0, d)
}

/// `⟨S1(φ1)²⟩` of the difference arm.
pub fn difference_s1_sq(m: &TwoModeMoments, c: &ReferenceMoments) -> f64 {
    arm_s1_sq(m, -1.0, c)
}

/// `⟨S1(φ2)²⟩` of the sum arm.
pub fn sum_s1_sq(m: &TwoModeMoments, d: &ReferenceMoments) -> f64 {
    arm_s1_sq(m, 1.0, d)
}

/// `⟨S1(φ1) ⊗ S1(φ2)⟩` with rotated references `c`, `d`.
pub fn s1_product(m: &TwoModeMoments, c: &ReferenceMoments, d: &ReferenceMoments) -> f64 {
    let (a, b) = (&m.mode1, &m.mode2);
    let w_minus_z = m.qp - m.pq;
    0.5 * ((a.q2 - b.q2) * c.q_mean * d.q_mean
        + (a.p2 - b.p2) * c.p_mean * d.p_mean
        + re(a.qp - b.qp + w_minus_z) * c.q_mean * d.p_mean
        + re(a.pq - b.pq - w_minus_z) * c.p_mean * d.q_mean)
}

/// `⟨S3(φ1, φ2)⟩`; `c`, `d` are the unrotated reference moments.
pub fn s3(m: &TwoModeMoments, c: &ReferenceMoments, d: &ReferenceMoments, phi1: f64, phi2: f64) -> f64 {
    let (a, b) = (&m.mode1, &m.mode2);
    let (cr, dr) = (c.rotated(phi1), d.rotated(phi2));
    let (sd, cd) = (phi1 - phi2).sin_cos();
    let linear = (a.q_mean - b.q_mean) * dr.p_mean + (a.q_mean + b.q_mean) * cr.p_mean
        - (a.p_mean - b.p_mean) * dr.q_mean
        - (a.p_mean + b.p_mean) * cr.q_mean;
    let refs = c.q_mean * d.q_mean * sd + c.p_mean * d.p_mean * sd + d.q_mean * c.p_mean * cd
        - c.q_mean * d.p_mean * cd;
    linear / (2.0 * std::f64::consts::SQRT_2) + 0.5 * (m.qp - m.pq) + 0.5 * refs
}

/// Closed-form expectation of one observable of a network.
fn analytic_value(network: &StokesNetwork, obs: StokesObservable, state: &GaussianState) -> Result<f64> {
    use StokesObservable::*;
    match *network {
        StokesNetwork::SingleMode { mode, phi, reference } => {
            let k = single_mode_moments(&state.reduced(&[mode])?)?;
            let r = reference_moments(&reference)?.rotated(phi);
            Ok(match obs {
                S1 => single_s1(&k, &r),
                S1Sq => single_s1_sq(&k, &r),
                _ => unreachable!("checked by supports()"),
            })
        }
        StokesNetwork::TwoMode {
            phi1,
            phi2,
            reference_c,
            reference_d,
        } => {
            let m = TwoModeMoments::from_state(state)?;
            let c = reference_moments(&reference_c)?;
            let d = reference_moments(&reference_d)?;
            let (cr, dr) = (c.rotated(phi1), d.rotated(phi2));
            Ok(match obs {
                S1 => difference_s1(&m, &cr),
                S1Sum => sum_s1(&m, &dr),
                S1Sq => difference_s1_sq(&m, &cr),
                S1SumSq => sum_s1_sq(&m, &dr),
                S1xS1 => s1_product(&m, &cr, &dr),
                S3 => s3(&m, &c, &d, phi1, phi2),
            })
        }
    }
}

/// All readouts of a network evaluated from closed-form expressions.
pub fn expect_stokes(network: &StokesNetwork, state: &GaussianState) -> Result<Vec<StokesReadout>> {
    network.check(state)?;
    network
        .observables()
        .iter()
        .map(|&obs| {
            Ok(StokesReadout {
                network: *network,
                observable: obs,
                value: MomentEstimate::exact(analytic_value(network, obs, state)?),
            })
        })
        .collect()
}

/// `n(plus) - n(minus)` as a phase-space symbol.
fn number_difference(n_modes: usize, plus: usize, minus: usize) -> QuadraticSymbol {
    let mut f = QuadraticSymbol::zero(2 * n_modes);
    for k in 0..2 {
        f.m[(2 * plus + k, 2 * plus + k)] += 0.5;
        f.m[(2 * minus + k, 2 * minus + k)] -= 0.5;
    }
    f
}

/// Observable as a symbol or a product of two commuting symbols.
enum SymbolForm {
    Linear(QuadraticSymbol),
    Product(QuadraticSymbol, QuadraticSymbol),
}

/// Joint output state of the network and the symbols of its observables.
struct Propagated {
    state: GaussianState,
    symbols: Vec<(StokesObservable, SymbolForm)>,
}

fn propagate(network: &StokesNetwork, state: &GaussianState) -> Result<Propagated> {
    network.check(state)?;
    use StokesObservable::*;
    match *network {
        StokesNetwork::SingleMode { mode, phi, reference } => {
            let joint = state
                .reduced(&[mode])?
                .tensor_product(&displaced_squeezed_thermal(&reference)?);
            let t = phase_shifter(phi)?
                .embed(&[1], 2)?
                .then(&beam_splitter_50_50())?;
            let out = joint.apply_transform(&t)?;
            let s1 = number_difference(2, 1, 0);
            Ok(Propagated {
                state: out,
                symbols: vec![
                    (S1, SymbolForm::Linear(s1.clone())),
                    (S1Sq, SymbolForm::Product(s1.clone(), s1)),
                ],
            })
        }
        StokesNetwork::TwoMode {
            phi1,
            phi2,
            reference_c,
            reference_d,
        } => {
            let joint = state
                .tensor_product(&displaced_squeezed_thermal(&reference_c)?)
                .tensor_product(&displaced_squeezed_thermal(&reference_d)?);
            let steps: Vec<SymplecticTransform> = vec![
                beam_splitter_50_50().embed(&[0, 1], 4)?,
                phase_shifter(phi1)?.embed(&[2], 4)?,
                phase_shifter(phi2)?.embed(&[3], 4)?,
                beam_splitter_50_50().embed(&[0, 2], 4)?,
                beam_splitter_50_50().embed(&[1, 3], 4)?,
            ];
            let mut t = SymplecticTransform::identity(4);
            for s in &steps {
                t = t.then(s)?;
            }
            let out = joint.apply_transform(&t)?;
            // outputs: a3 on mode 0, a4 on mode 2, a5 on mode 1, a6 on mode 3
            let diff = number_difference(4, 2, 0);
            let sum = number_difference(4, 3, 1);
            let mut coherence = QuadraticSymbol::zero(8);
            coherence.add_product(7, 0, 1.0);
            coherence.add_product(6, 1, -1.0);
            Ok(Propagated {
                state: out,
                symbols: vec![
                    (S1, SymbolForm::Linear(diff.clone())),
                    (S1Sum, SymbolForm::Linear(sum.clone())),
                    (S1Sq, SymbolForm::Product(diff.clone(), diff.clone())),
                    (S1SumSq, SymbolForm::Product(sum.clone(), sum.clone())),
                    (S1xS1, SymbolForm::Product(diff, sum)),
                    (S3, SymbolForm::Linear(coherence)),
                ],
            })
        }
    }
}

/// Readouts computed directly from the propagated joint state.
pub fn joint_state_readouts(network: &StokesNetwork, state: &GaussianState) -> Result<Vec<StokesReadout>> {
    let prop = propagate(network, state)?;
    Ok(prop
        .symbols
        .iter()
        .map(|(obs, form)| {
            let v = match form {
                SymbolForm::Linear(f) => f.expectation(&prop.state),
                SymbolForm::Product(f, g) => f.symmetrized_product_expectation(g, &prop.state),
            };
            StokesReadout {
                network: *network,
                observable: *obs,
                value: MomentEstimate::exact(v),
            }
        })
        .collect())
}

/// Monte Carlo estimate of one observable: Wigner samples of the joint output
/// state, per-shot symbol values, plus the ordering offset of products.
pub fn sample_observable(
    network: &StokesNetwork,
    obs: StokesObservable,
    state: &GaussianState,
    shots: usize,
    seed: u64,
) -> Result<StokesReadout> {
    if shots < MIN_SHOTS {
        return Err(Error::InsufficientShots(format!(
            "{shots} shots per readout, need at least {MIN_SHOTS}"
        )));
    }
    if !network.supports(obs) {
        return Err(Error::InvalidParameter(format!("{obs:?} is not measured by this network")));
    }
    let prop = propagate(network, state)?;
    let form = prop
        .symbols
        .iter()
        .find(|(o, _)| *o == obs)
        .map(|(_, f)| f)
        .expect("symbol exists for supported observable");
    let batch = sample_wigner(&prop.state, shots, seed)?;
    let value = match form {
        SymbolForm::Linear(f) => crate::sampler::estimate_functional(&batch, |x| f.eval(x)),
        SymbolForm::Product(f, g) => {
            crate::sampler::estimate_functional(&batch, |x| f.eval(x) * g.eval(x)).shifted(f.ordering_offset(g))
        }
    };
    Ok(StokesReadout {
        network: *network,
        observable: obs,
        value,
    })
}

/// Sampled readouts of every observable of a network, each on its own sub-stream.
pub fn sample_stokes(network: &StokesNetwork, state: &GaussianState, shots: usize, seed: u64) -> Result<Vec<StokesReadout>> {
    network
        .observables()
        .iter()
        .enumerate()
        .map(|(i, &obs)| sample_observable(network, obs, state, shots, substream(seed, i as u64)))
        .collect()
}

/// Solves `f(x) = target` for a map `f` that is affine in `x`, by probing unit vectors.
fn solve_affine<F>(f: F, n: usize, target: &[f64], what: &str, advice: &str) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let zero = vec![0.0; n];
    let base = f(&zero);
    let mut a = DMatrix::zeros(target.len(), n);
    let mut probe = zero.clone();
    for k in 0..n {
        probe[k] = 1.0;
        let col = f(&probe);
        probe[k] = 0.0;
        for (i, (c, b)) in col.iter().zip(&base).enumerate() {
            a[(i, k)] = c - b;
        }
    }
    let sv = a.clone().singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(max > 0.0) || min / max < CONDITION_TOL {
        return Err(Error::Conditioning(format!(
            "{what} is singular (singular values {:.3e}..{:.3e}); {advice}",
            min, max
        )));
    }
    let rhs = DVector::from_iterator(target.len(), target.iter().zip(&base).map(|(t, b)| t - b));
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Conditioning(format!("{what} is singular; {advice}")))?;
    Ok(x.iter().copied().collect())
}

/// Reconstructed single-mode moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleModeSolution {
    pub q_mean: f64,
    pub p_mean: f64,
    pub q2: f64,
    pub p2: f64,
    /// `½⟨{q, p}⟩`.
    pub sym: f64,
}

impl SingleModeSolution {
    pub fn moments(&self) -> ReferenceMoments {
        ReferenceMoments::from_real(self.q_mean, self.p_mean, self.q2, self.p2, self.sym)
    }
}

/// Single-mode readouts: `S1` at two phases and `S1²` at three phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleModeReadouts {
    pub s1: [(f64, f64); 2],
    pub s1_sq: [(f64, f64); 3],
}

/// Inverts the single-mode readouts for the first and second moments of the signal.
pub fn solve_single_mode(readouts: &SingleModeReadouts, reference: &ReferenceStateParams) -> Result<SingleModeSolution> {
    let r = reference_moments(reference)?;
    let means = solve_affine(
        |x| {
            let k = ReferenceMoments::from_real(x[0], x[1], 0.0, 0.0, 0.0);
            readouts.s1.iter().map(|&(phi, _)| single_s1(&k, &r.rotated(phi))).collect()
        },
        2,
        &readouts.s1.map(|(_, v)| v),
        "single-mode mean system",
        &format!(
            "the reference displacement d = {} must be nonzero and the two phases distinct",
            reference.d
        ),
    )?;
    let second = solve_affine(
        |x| {
            let k = ReferenceMoments::from_real(0.0, 0.0, x[0], x[1], x[2]);
            readouts.s1_sq.iter().map(|&(phi, _)| single_s1_sq(&k, &r.rotated(phi))).collect()
        },
        3,
        &readouts.s1_sq.map(|(_, v)| v),
        "single-mode second-moment system",
        &format!(
            "the reference (d = {}, theta = {}) must not be phase-insensitive; increase d or theta, or change the phases",
            reference.d, reference.theta
        ),
    )?;
    Ok(SingleModeSolution {
        q_mean: means[0],
        p_mean: means[1],
        q2: second[0],
        p2: second[1],
        sym: second[2],
    })
}

/// Which readout fixes `⟨q1p2⟩ - ⟨p1q2⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossEquation {
    /// `⟨S1 ⊗ S1⟩`, informative when the reference means are not parallel.
    Product,
    /// `⟨S3⟩`, used when the product readout carries no information.
    Coherence,
}

/// Two-mode readouts used for the off-diagonal block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModeReadouts {
    pub phi1: f64,
    pub phi2: [f64; 2],
    /// `⟨S1(φ1)²⟩` of the difference arm.
    pub difference_sq: f64,
    /// `⟨S1(φ2)²⟩` of the sum arm at both `φ2` values.
    pub sum_sq: [f64; 2],
    /// `⟨S1(φ1) ⊗ S1(φ2[0])⟩`.
    pub product: f64,
    /// `⟨S3(φ1, φ2[0])⟩`.
    pub coherence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CBlockSolution {
    /// Raw cross moments `⟨q1q2⟩, ⟨p1p2⟩, ⟨q1p2⟩, ⟨p1q2⟩`.
    pub raw: [f64; 4],
    /// Covariance block `[[Γ_q1q2, Γ_q1p2], [Γ_p1q2, Γ_p1p2]]`.
    pub c: [[f64; 2]; 2],
    pub cross_equation: CrossEquation,
}

/// Chooses between the product and coherence readouts for `⟨q1p2⟩ - ⟨p1q2⟩`.
pub fn cross_equation_for(c: &ReferenceMoments, d: &ReferenceMoments) -> CrossEquation {
    let kappa = c.q_mean * d.p_mean - c.p_mean * d.q_mean;
    let scale = (c.q_mean.hypot(c.p_mean) * d.q_mean.hypot(d.p_mean)).max(1.0);
    if kappa.abs() > 1e-6 * scale {
        CrossEquation::Product
    } else {
        CrossEquation::Coherence
    }
}

/// Solves for the off-diagonal block given the single-mode moments of both signal modes.
pub fn solve_c_block(
    readouts: &TwoModeReadouts,
    mode1: &SingleModeSolution,
    mode2: &SingleModeSolution,
    reference_c: &ReferenceStateParams,
    reference_d: &ReferenceStateParams,
) -> Result<CBlockSolution> {
    let c = reference_moments(reference_c)?;
    let d = reference_moments(reference_d)?;
    let cr = c.rotated(readouts.phi1);
    let dr = [d.rotated(readouts.phi2[0]), d.rotated(readouts.phi2[1])];
    let eq = cross_equation_for(&cr, &dr[0]);
    let (m1, m2) = (mode1.moments(), mode2.moments());
    let model = |x: &[f64]| {
        let m = TwoModeMoments {
            mode1: m1,
            mode2: m2,
            qq: x[0],
            pp: x[1],
            qp: x[2],
            pq: x[3],
        };
        let last = match eq {
            CrossEquation::Product => s1_product(&m, &cr, &dr[0]),
            CrossEquation::Coherence => s3(&m, &c, &d, readouts.phi1, readouts.phi2[0]),
        };
        vec![
            difference_s1_sq(&m, &cr),
            sum_s1_sq(&m, &dr[0]),
            sum_s1_sq(&m, &dr[1]),
            last,
        ]
    };
    let last = match eq {
        CrossEquation::Product => readouts.product,
        CrossEquation::Coherence => readouts.coherence,
    };
    let target = [readouts.difference_sq, readouts.sum_sq[0], readouts.sum_sq[1], last];
    let x = solve_affine(
        model,
        4,
        &target,
        "off-diagonal system",
        "use references c and d with different second moments (e.g. different theta) \
         and a sum-arm phase pair that rotates reference d",
    )?;
    let raw = [x[0], x[1], x[2], x[3]];
    let c_block = [
        [raw[0] - m1.q_mean * m2.q_mean, raw[2] - m1.q_mean * m2.p_mean],
        [raw[3] - m1.p_mean * m2.q_mean, raw[1] - m1.p_mean * m2.p_mean],
    ];
    Ok(CBlockSolution {
        raw,
        c: c_block,
        cross_equation: eq,
    })
}

/// Phases and references of the full reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StokesConfig {
    /// `S1` uses the first two phases, `S1²` all three.
    pub single_phases: [f64; 3],
    pub phi1: f64,
    pub phi2: [f64; 2],
    pub reference: ReferenceStateParams,
    pub reference_c: ReferenceStateParams,
    pub reference_d: ReferenceStateParams,
}

impl Default for StokesConfig {
    fn default() -> Self {
        Self {
            single_phases: [0.0, FRAC_PI_2, FRAC_PI_4],
            phi1: 0.0,
            phi2: [0.0, FRAC_PI_4],
            reference: ReferenceStateParams::default(),
            reference_c: ReferenceStateParams::default(),
            reference_d: ReferenceStateParams::unbiased(0.0, 1.0, 0.5),
        }
    }
}

impl StokesConfig {
    /// Every readout the reconstruction consumes, in a fixed order.
    pub fn plan(&self) -> Vec<(StokesNetwork, StokesObservable)> {
        use StokesObservable::*;
        let mut plan = Vec::with_capacity(15);
        for mode in 0..2 {
            for &phi in &self.single_phases[..2] {
                let net = StokesNetwork::SingleMode { mode, phi, reference: self.reference };
                plan.push((net, S1));
            }
            for &phi in &self.single_phases {
                let net = StokesNetwork::SingleMode { mode, phi, reference: self.reference };
                plan.push((net, S1Sq));
            }
        }
        let net = |phi2: f64| StokesNetwork::TwoMode {
            phi1: self.phi1,
            phi2,
            reference_c: self.reference_c,
            reference_d: self.reference_d,
        };
        plan.push((net(self.phi2[0]), S1Sq));
        plan.push((net(self.phi2[0]), S1SumSq));
        plan.push((net(self.phi2[1]), S1SumSq));
        plan.push((net(self.phi2[0]), S1xS1));
        plan.push((net(self.phi2[0]), S3));
        plan
    }

    /// Reconstructs means and covariance from readout values given in [`plan`](Self::plan) order.
    pub fn reconstruct(&self, values: &[f64]) -> Result<([f64; 4], Matrix4, CrossEquation)> {
        if values.len() != 15 {
            return Err(Error::Dimension(format!("expected 15 readouts, got {}", values.len())));
        }
        let p = &self.single_phases;
        let mut modes = Vec::with_capacity(2);
        for k in 0..2 {
            let v = &values[5 * k..5 * k + 5];
            let ro = SingleModeReadouts {
                s1: [(p[0], v[0]), (p[1], v[1])],
                s1_sq: [(p[0], v[2]), (p[1], v[3]), (p[2], v[4])],
            };
            modes.push(solve_single_mode(&ro, &self.reference)?);
        }
        let two = TwoModeReadouts {
            phi1: self.phi1,
            phi2: self.phi2,
            difference_sq: values[10],
            sum_sq: [values[11], values[12]],
            product: values[13],
            coherence: values[14],
        };
        let cb = solve_c_block(&two, &modes[0], &modes[1], &self.reference_c, &self.reference_d)?;
        let (a, b) = (&modes[0], &modes[1]);
        let means = [a.q_mean, a.p_mean, b.q_mean, b.p_mean];
        let mut g = [[0.0; 4]; 4];
        for (offset, m) in [(0, a), (2, b)] {
            g[offset][offset] = m.q2 - m.q_mean * m.q_mean;
            g[offset + 1][offset + 1] = m.p2 - m.p_mean * m.p_mean;
            let s = m.sym - m.q_mean * m.p_mean;
            g[offset][offset + 1] = s;
            g[offset + 1][offset] = s;
        }
        for i in 0..2 {
            for j in 0..2 {
                g[i][2 + j] = cb.c[i][j];
                g[2 + j][i] = cb.c[i][j];
            }
        }
        Ok((means, g, cb.cross_equation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesResult {
    pub estimate: CovarianceEstimate,
    pub readouts: Vec<StokesReadout>,
    pub cross_equation: CrossEquation,
    pub verdict: EstimatedVerdict,
    /// The reconstruction recovers every first and second moment, i.e. it is a full
    /// tomography of the Gaussian state.
    pub full_tomography: bool,
}

/// Measures every readout, reconstructs the moments and applies the criterion.
pub fn full_pipeline(state: &GaussianState, config: &StokesConfig, backend: &Backend) -> Result<StokesResult> {
    if state.n_modes() != 2 {
        return Err(Error::Unsupported("the reconstruction needs a two-mode state".into()));
    }
    state.ensure_valid()?;
    let plan = config.plan();
    let readouts: Vec<StokesReadout> = match *backend {
        Backend::Analytic => plan
            .iter()
            .map(|(net, obs)| {
                net.check(state)?;
                Ok(StokesReadout {
                    network: *net,
                    observable: *obs,
                    value: MomentEstimate::exact(analytic_value(net, *obs, state)?),
                })
            })
            .collect::<Result<_>>()?,
        Backend::Sampled { shots, seed } => plan
            .par_iter()
            .enumerate()
            .map(|(i, (net, obs))| sample_observable(net, *obs, state, shots, substream(seed, i as u64)))
            .collect::<Result<_>>()?,
    };
    let values: Vec<f64> = readouts.iter().map(|r| r.value.value).collect();
    let sigma: Vec<f64> = readouts.iter().map(|r| r.value.std_error).collect();
    let (means, gamma, cross_equation) = config.reconstruct(&values)?;

    let flat = |v: &[f64]| -> Vec<f64> {
        match config.reconstruct(v) {
            Ok((m, g, _)) => m.iter().copied().chain(g.iter().flatten().copied()).collect(),
            Err(_) => vec![f64::NAN; 20],
        }
    };
    let errs = propagate_std(flat, &values, &sigma);
    let mut std_errors = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            std_errors[i][j] = errs[4 + 4 * i + j];
        }
    }
    let shots_used = readouts.iter().map(|r| r.value.n_shots).sum();
    let estimate = CovarianceEstimate {
        gamma_hat: gamma,
        means_hat: means,
        std_errors,
        means_std_errors: [errs[0], errs[1], errs[2], errs[3]],
        shots_used,
    };
    let verdict = verdict_from_estimate(&estimate.gamma_hat, Some(&estimate.std_errors))?;
    Ok(StokesResult {
        estimate,
        readouts,
        cross_equation,
        verdict,
        full_tomography: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn vacuum_signal_with_undisplaced_reference_has_zero_mean_s1() {
        let net = StokesNetwork::SingleMode {
            mode: 0,
            phi: 0.7,
            reference: ReferenceStateParams::unbiased(0.2, 0.0, 0.3),
        };
        let r = expect_stokes(&net, &GaussianState::vacuum(2)).unwrap();
        assert_eq!(r[0].observable, StokesObservable::S1);
        assert_abs_diff_eq!(r[0].value.value, 0.0, epsilon = 1e-15);
        assert_eq!(r[0].value.std_error, 0.0);
    }

    #[test]
    fn phase_insensitive_reference_is_rejected() {
        let ro = SingleModeReadouts {
            s1: [(0.0, 0.0), (FRAC_PI_2, 0.0)],
            s1_sq: [(0.0, 0.0), (FRAC_PI_2, 0.0), (FRAC_PI_4, 0.0)],
        };
        let err = solve_single_mode(&ro, &ReferenceStateParams::unbiased(0.0, 0.0, 0.0)).unwrap_err();
        match err {
            Error::Conditioning(msg) => assert!(msg.contains("d = 0")),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn identical_references_make_off_diagonal_system_singular() {
        let cfg = StokesConfig {
            reference_d: StokesConfig::default().reference_c,
            ..StokesConfig::default()
        };
        let err = full_pipeline(&GaussianState::vacuum(2), &cfg, &Backend::Analytic).unwrap_err();
        assert!(matches!(err, Error::Conditioning(_)));
    }

    #[test]
    fn plan_has_fifteen_readouts() {
        assert_eq!(StokesConfig::default().plan().len(), 15);
    }

    #[test]
    fn too_few_shots() {
        let net = StokesNetwork::SingleMode {
            mode: 0,
            phi: 0.0,
            reference: ReferenceStateParams::default(),
        };
        assert!(matches!(
            sample_stokes(&net, &GaussianState::vacuum(2), 10, 0),
            Err(Error::InsufficientShots(_))
        ));
    }
}
