//! Seeded Monte Carlo sampling of Gaussian Wigner densities.
//!
//! Shots are generated in fixed-size blocks. Block `b` of a batch with seed `s` uses
//! a ChaCha8 generator seeded from `s` on stream `b`, so a batch is bit-identical
//! regardless of how many worker threads run the blocks.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::GaussianState;

/// Shots per RNG stream.
pub const BLOCK_SIZE: usize = 1024;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `index` from a parent seed.
pub fn substream(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Generator for sub-stream `index` of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, index))
}

/// `N × 2n` phase-space samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotBatch {
    samples: Vec<f64>,
    dim: usize,
    n_shots: usize,
    seed: u64,
}

impl ShotBatch {
    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_shots, self.dim, &self.samples)
    }

    /// Sample mean and unbiased sample covariance.
    pub fn mean_and_covariance(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n_shots as f64;
        let mut mean = DVector::zeros(self.dim);
        for row in self.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for row in self.rows() {
            for i in 0..self.dim {
                let di = row[i] - mean[i];
                for j in i..self.dim {
                    cov[(i, j)] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..self.dim {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        cov /= (n - 1.0).max(1.0);
        (mean, cov)
    }

    /// Writes the batch as CSV with header `q1,p1,q2,p2,…`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.dim)
            .map(|k| format!("{}{}", if k % 2 == 0 { "q" } else { "p" }, k / 2 + 1))
            .collect();
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|x| x.to_string()))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

/// How expectations are obtained: exactly, or by Monte Carlo with a shot budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Analytic,
    Sampled { shots: usize, seed: u64 },
}

/// Sample mean of a functional with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_shots: usize,
}

impl MomentEstimate {
    /// An exact value (zero standard error).
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_shots: 0,
        }
    }

    /// Mean and standard error of a slice of per-shot values.
    pub fn from_values(values: &[f64]) -> Self {
        let mut acc = Welford::default();
        for &v in values {
            acc.push(v);
        }
        acc.finish()
    }

    pub fn shifted(self, offset: f64) -> Self {
        Self {
            value: self.value + offset,
            ..self
        }
    }
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(self) -> MomentEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        MomentEstimate {
            value: self.mean,
            std_error: (var / self.n.max(1) as f64).sqrt(),
            n_shots: self.n,
        }
    }
}

/// Lower-triangular (or symmetric) factor `L` with `L Lᵀ = Γ`.
fn cov_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = cov.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(Error::InvalidCovariance(
            "covariance is not positive semidefinite; cannot sample".into(),
        ));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Draws `n_shots` i.i.d. points from the Wigner density of a valid state.
pub fn sample_wigner(state: &GaussianState, n_shots: usize, seed: u64) -> Result<ShotBatch> {
    if n_shots == 0 {
        return Err(Error::InsufficientShots("at least one shot is required".into()));
    }
    // Gaussian Wigner functions are nonnegative only for physical states.
    state.ensure_valid()?;
    let dim = state.dim();
    let factor = cov_factor(state.cov())?;
    let means = state.means().clone();
    let n_blocks = n_shots.div_ceil(BLOCK_SIZE);
    let blocks: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK_SIZE.min(n_shots - b * BLOCK_SIZE);
            let mut out = Vec::with_capacity(count * dim);
            let mut z = vec![0.0; dim];
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                for i in 0..dim {
                    let mut x = means[i];
                    for (k, zk) in z.iter().enumerate() {
                        x += factor[(i, k)] * zk;
                    }
                    out.push(x);
                }
            }
            out
        })
        .collect();
    Ok(ShotBatch {
        samples: blocks.concat(),
        dim,
        n_shots,
        seed,
    })
}

/// Sample mean and standard error of `f` over the rows of a batch.
pub fn estimate_functional<F>(batch: &ShotBatch, f: F) -> MomentEstimate
where
    F: Fn(&[f64]) -> f64,
{
    let mut acc = Welford::default();
    for row in batch.rows() {
        acc.push(f(row));
    }
    acc.finish()
}
