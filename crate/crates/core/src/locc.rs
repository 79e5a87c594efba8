//! Five-observable local measurement schemes.
//!
//! Each copy is measured locally on both sides, and outcomes are grouped as
//! `A: q1⊗q2`, `B: p1⊗p2`, `C: sym1⊗sym2`, `D: q1⊗p2`, `E: p1⊗q2`.
//! Scheme I uses five fixed groups of `N` copies. Scheme II spends `4N` copies on
//! a quadrature pair chosen uniformly at random per copy and `N` copies on group C.
//!
//! Quadrature outcomes are drawn from the Wigner marginal, which is the exact joint
//! homodyne law. Group C outcomes are the per-shot products `q·p` on each side.
//! Their average is an unbiased estimate of `½⟨{q, p}⟩`, but they do not follow the
//! outcome law of that observable.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{CovarianceEstimate, Matrix4};
use crate::sampler::{sample_wigner, stream_rng, substream, MomentEstimate};
use crate::state::GaussianState;

/// Minimum copies per group.
pub const MIN_SHOTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeVariant {
    SchemeI,
    SchemeII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
    C,
    D,
    E,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::A, Group::B, Group::C, Group::D, Group::E];
    /// Groups that measure one quadrature on each side.
    pub const QUADRATURE_PAIRS: [Group; 4] = [Group::A, Group::B, Group::D, Group::E];

    /// Quadrature indices `(side 1, side 2)` in `(q1, p1, q2, p2)` order.
    fn quadratures(self) -> Option<(usize, usize)> {
        match self {
            Group::A => Some((0, 2)),
            Group::B => Some((1, 3)),
            Group::D => Some((0, 3)),
            Group::E => Some((1, 2)),
            Group::C => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiveGroupPlan {
    pub variant: SchemeVariant,
    pub shots_per_group: usize,
}

impl FiveGroupPlan {
    pub fn new(variant: SchemeVariant, shots_per_group: usize) -> Self {
        Self {
            variant,
            shots_per_group,
        }
    }

    pub fn total_shots(&self) -> usize {
        5 * self.shots_per_group
    }

    /// Classical bits exchanged: none for Scheme I; for Scheme II two bits per
    /// randomly paired copy (each side's quadrature choice) plus one group-label bit.
    pub fn classical_bits(&self) -> usize {
        match self.variant {
            SchemeVariant::SchemeI => 0,
            SchemeVariant::SchemeII => 2 * 4 * self.shots_per_group + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoccEstimate {
    pub plan: FiveGroupPlan,
    pub estimate: CovarianceEstimate,
    pub classical_bits: usize,
    /// Copies that ended up in groups A–E.
    pub group_shots: [usize; 5],
}

/// Per-group outcome pairs.
#[derive(Default)]
struct GroupData {
    pairs: [Vec<(f64, f64)>; 5],
}

fn pair_from_row(group: Group, row: &[f64]) -> (f64, f64) {
    match group.quadratures() {
        Some((i, j)) => (row[i], row[j]),
        None => (row[0] * row[1], row[2] * row[3]),
    }
}

fn collect_scheme_i(state: &GaussianState, n: usize, seed: u64) -> Result<GroupData> {
    let groups: Vec<Result<Vec<(f64, f64)>>> = Group::ALL
        .par_iter()
        .map(|&g| {
            let batch = sample_wigner(state, n, substream(seed, g.index() as u64))?;
            Ok(batch.rows().map(|row| pair_from_row(g, row)).collect())
        })
        .collect();
    let mut data = GroupData::default();
    for (slot, g) in data.pairs.iter_mut().zip(groups) {
        *slot = g?;
    }
    Ok(data)
}

fn collect_scheme_ii(state: &GaussianState, n: usize, seed: u64) -> Result<GroupData> {
    let paired = sample_wigner(state, 4 * n, substream(seed, 0))?;
    let sym = sample_wigner(state, n, substream(seed, 1))?;
    let mut choice = stream_rng(seed, 2);
    let mut data = GroupData::default();
    for row in paired.rows() {
        let g = Group::QUADRATURE_PAIRS[choice.random_range(0..4)];
        data.pairs[g.index()].push(pair_from_row(g, row));
    }
    data.pairs[Group::C.index()] = sym.rows().map(|row| pair_from_row(Group::C, row)).collect();
    Ok(data)
}

fn column(pairs: &[(f64, f64)], second: bool) -> Vec<f64> {
    pairs.iter().map(|&(a, b)| if second { b } else { a }).collect()
}

/// Unbiased sample covariance of two columns, with the standard error of the
/// per-shot centered products.
fn sample_cov(x: &[f64], y: &[f64]) -> MomentEstimate {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let est = MomentEstimate::from_values(&prods);
    MomentEstimate {
        value: est.value * n / (n - 1.0),
        ..est
    }
}

fn estimate_from_groups(data: &GroupData) -> Result<CovarianceEstimate> {
    for (g, pairs) in Group::ALL.iter().zip(&data.pairs) {
        if pairs.len() < 2 {
            return Err(Error::InsufficientShots(format!(
                "group {g:?} received {} copies",
                pairs.len()
            )));
        }
    }
    let a = &data.pairs[Group::A.index()];
    let b = &data.pairs[Group::B.index()];
    let c = &data.pairs[Group::C.index()];
    let d = &data.pairs[Group::D.index()];
    let e = &data.pairs[Group::E.index()];

    let (q1, q2) = (column(a, false), column(a, true));
    let (p1, p2) = (column(b, false), column(b, true));
    let means = [
        MomentEstimate::from_values(&q1),
        MomentEstimate::from_values(&p1),
        MomentEstimate::from_values(&q2),
        MomentEstimate::from_values(&p2),
    ];

    let mut gamma: Matrix4 = [[0.0; 4]; 4];
    let mut err: Matrix4 = [[0.0; 4]; 4];
    let mut set = |i: usize, j: usize, est: MomentEstimate| {
        gamma[i][j] = est.value;
        gamma[j][i] = est.value;
        err[i][j] = est.std_error;
        err[j][i] = est.std_error;
    };

    set(0, 0, sample_cov(&q1, &q1));
    set(2, 2, sample_cov(&q2, &q2));
    set(0, 2, sample_cov(&q1, &q2));
    set(1, 1, sample_cov(&p1, &p1));
    set(3, 3, sample_cov(&p2, &p2));
    set(1, 3, sample_cov(&p1, &p2));

    // Cross terms: raw product averages minus products of independently estimated means.
    let cross = |values: Vec<f64>, i: usize, j: usize| {
        let raw = MomentEstimate::from_values(&values);
        let (mi, mj) = (means[i], means[j]);
        MomentEstimate {
            value: raw.value - mi.value * mj.value,
            std_error: (raw.std_error.powi(2)
                + (mj.value * mi.std_error).powi(2)
                + (mi.value * mj.std_error).powi(2))
            .sqrt(),
            n_shots: raw.n_shots,
        }
    };
    set(0, 1, cross(column(c, false), 0, 1));
    set(2, 3, cross(column(c, true), 2, 3));
    set(0, 3, cross(d.iter().map(|&(x, y)| x * y).collect(), 0, 3));
    set(1, 2, cross(e.iter().map(|&(x, y)| x * y).collect(), 1, 2));

    let shots_used = data.pairs.iter().map(Vec::len).sum();
    Ok(CovarianceEstimate {
        gamma_hat: gamma,
        means_hat: means.map(|m| m.value),
        std_errors: err,
        means_std_errors: means.map(|m| m.std_error),
        shots_used,
    })
}

/// Simulates a five-group scheme and reconstructs means and covariance.
pub fn run_scheme(state: &GaussianState, plan: &FiveGroupPlan, seed: u64) -> Result<LoccEstimate> {
    if state.n_modes() != 2 {
        return Err(Error::Unsupported(format!(
            "local five-group scheme needs two modes, got {}",
            state.n_modes()
        )));
    }
    state.ensure_valid()?;
    if plan.shots_per_group < MIN_SHOTS {
        return Err(Error::InsufficientShots(format!(
            "{} copies per group, need at least {MIN_SHOTS}",
            plan.shots_per_group
        )));
    }
    let data = match plan.variant {
        SchemeVariant::SchemeI => collect_scheme_i(state, plan.shots_per_group, seed)?,
        SchemeVariant::SchemeII => collect_scheme_ii(state, plan.shots_per_group, seed)?,
    };
    let estimate = estimate_from_groups(&data)?;
    let group_shots = [0, 1, 2, 3, 4].map(|g| data.pairs[g].len());
    Ok(LoccEstimate {
        plan: *plan,
        estimate,
        classical_bits: plan.classical_bits(),
        group_shots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_accounting() {
        assert_eq!(FiveGroupPlan::new(SchemeVariant::SchemeI, 1000).classical_bits(), 0);
        assert_eq!(FiveGroupPlan::new(SchemeVariant::SchemeII, 1000).classical_bits(), 8001);
    }

    #[test]
    fn scheme_ii_group_sizes_sum_to_budget() {
        let plan = FiveGroupPlan::new(SchemeVariant::SchemeII, 500);
        let out = run_scheme(&GaussianState::vacuum(2), &plan, 3).unwrap();
        assert_eq!(out.group_shots.iter().sum::<usize>(), plan.total_shots());
        assert_eq!(out.group_shots[2], 500);
        assert_eq!(out.estimate.shots_used, plan.total_shots());
    }

    #[test]
    fn too_few_shots() {
        let plan = FiveGroupPlan::new(SchemeVariant::SchemeI, 10);
        assert!(matches!(
            run_scheme(&GaussianState::vacuum(2), &plan, 0),
            Err(Error::InsufficientShots(_))
        ));
    }
}
