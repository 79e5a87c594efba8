//! Exact Gaussian expectations of operator products and of phase-space polynomials.
//!
//! [`OperatorPolynomial`] evaluates operator-ordered products of linear forms in the
//! quadratures via Wick contractions with `Γ + iJ/2`. [`QuadraticSymbol`] handles the
//! Weyl symbols of quadratic observables, which is what Wigner sampling estimates.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::GaussianState;
use crate::symplectic::omega;

type C64 = Complex<f64>;

/// Linear combination `Σ c_k R_k` of quadrature operators.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm(pub DVector<C64>);

impl LinearForm {
    pub fn quadrature(dim: usize, index: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        Self(v)
    }

    /// `q_m` on an `n`-mode system.
    pub fn q(n_modes: usize, mode: usize) -> Self {
        Self::quadrature(2 * n_modes, 2 * mode)
    }

    /// `p_m` on an `n`-mode system.
    pub fn p(n_modes: usize, mode: usize) -> Self {
        Self::quadrature(2 * n_modes, 2 * mode + 1)
    }

    /// `a_m = (q_m + i p_m)/√2`.
    pub fn annihilation(n_modes: usize, mode: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = DVector::zeros(2 * n_modes);
        v[2 * mode] = C64::new(h, 0.0);
        v[2 * mode + 1] = C64::new(0.0, h);
        Self(v)
    }

    /// `a_m† = (q_m - i p_m)/√2`.
    pub fn creation(n_modes: usize, mode: usize) -> Self {
        Self(Self::annihilation(n_modes, mode).0.conjugate())
    }

    pub fn scale(&self, c: C64) -> Self {
        Self(&self.0 * c)
    }

    pub fn add(&self, other: &LinearForm) -> Self {
        Self(&self.0 + &other.0)
    }
}

/// Finite sum of scaled operator products `Σ c_t L_{t,1} L_{t,2} ⋯`, kept in order.
#[derive(Debug, Clone, Default)]
pub struct OperatorPolynomial {
    terms: Vec<(C64, Vec<LinearForm>)>,
}

impl OperatorPolynomial {
    pub fn constant(c: C64) -> Self {
        Self {
            terms: vec![(c, Vec::new())],
        }
    }

    pub fn linear(form: LinearForm) -> Self {
        Self {
            terms: vec![(C64::new(1.0, 0.0), vec![form])],
        }
    }

    pub fn product_of(factors: Vec<LinearForm>) -> Self {
        Self {
            terms: vec![(C64::new(1.0, 0.0), factors)],
        }
    }

    pub fn terms(&self) -> &[(C64, Vec<LinearForm>)] {
        &self.terms
    }

    pub fn add(&self, other: &OperatorPolynomial) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { terms }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            terms: self.terms.iter().map(|(k, f)| (k * c, f.clone())).collect(),
        }
    }

    /// Operator product `self · other`.
    pub fn mul(&self, other: &OperatorPolynomial) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (c1, f1) in &self.terms {
            for (c2, f2) in &other.terms {
                let mut f = f1.clone();
                f.extend(f2.iter().cloned());
                terms.push((c1 * c2, f));
            }
        }
        Self { terms }
    }

    /// Hermitian conjugate.
    pub fn adjoint(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|(c, f)| {
                    let rev = f
                        .iter()
                        .rev()
                        .map(|l| LinearForm(l.0.conjugate()))
                        .collect();
                    (c.conj(), rev)
                })
                .collect(),
        }
    }

    /// `Σ c_t ⟨L_{t,1} L_{t,2} ⋯⟩` in the given state.
    pub fn expectation(&self, state: &GaussianState) -> Result<C64> {
        let dim = state.dim();
        if self
            .terms
            .iter()
            .flat_map(|(_, f)| f.iter())
            .any(|l| l.0.len() != dim)
        {
            return Err(Error::Dimension("linear form length does not match state".into()));
        }
        let j = omega(state.n_modes());
        let g = DMatrix::from_fn(dim, dim, |r, c| {
            C64::new(state.cov()[(r, c)], 0.5 * j[(r, c)])
        });
        let means = state.means().map(|x| C64::new(x, 0.0));
        Ok(self
            .terms
            .iter()
            .map(|(c, factors)| c * ordered_moment(factors, &means, &g))
            .sum())
    }
}

/// `⟨L_1 ⋯ L_k⟩` for a Gaussian state with means `d` and ordered contraction matrix
/// `G = Γ + iJ/2`: expand each factor into mean plus fluctuation and sum over
/// order-preserving pairings of the fluctuations.
fn ordered_moment(factors: &[LinearForm], means: &DVector<C64>, g: &DMatrix<C64>) -> C64 {
    let k = factors.len();
    let m: Vec<C64> = factors.iter().map(|l| l.0.dot(means)).collect();
    let mut pair = DMatrix::zeros(k, k);
    for a in 0..k {
        let ga = g.tr_mul(&factors[a].0);
        for b in a + 1..k {
            pair[(a, b)] = ga.dot(&factors[b].0);
        }
    }
    let mut total = C64::new(0.0, 0.0);
    for mask in 0u32..(1 << k) {
        // bits set: factor contributes its fluctuation
        let fluct: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if fluct.len() % 2 == 1 {
            continue;
        }
        let mean_part: C64 = (0..k)
            .filter(|i| mask & (1 << i) == 0)
            .map(|i| m[i])
            .product();
        if mean_part == C64::new(0.0, 0.0) {
            continue;
        }
        total += mean_part * pairings(&fluct, &pair);
    }
    total
}

fn pairings(idx: &[usize], pair: &DMatrix<C64>) -> C64 {
    if idx.is_empty() {
        return C64::new(1.0, 0.0);
    }
    let first = idx[0];
    let mut total = C64::new(0.0, 0.0);
    for pos in 1..idx.len() {
        let rest: Vec<usize> = idx[1..]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i + 1 != pos)
            .map(|(_, &x)| x)
            .collect();
        total += pair[(first, idx[pos])] * pairings(&rest, pair);
    }
    total
}

/// Phase-space polynomial `f(x) = xᵀ M x + lᵀ x + c` with `M` symmetric; the Weyl
/// symbol of the Hermitian operator `Rᵀ M R + lᵀ R + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSymbol {
    pub m: DMatrix<f64>,
    pub l: DVector<f64>,
    pub c: f64,
}

impl QuadraticSymbol {
    pub fn zero(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
            l: DVector::zeros(dim),
            c: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.l.len()
    }

    /// Symmetrized bilinear term `½(x_i x_j + x_j x_i)` scaled by `w`.
    pub fn add_product(&mut self, i: usize, j: usize, w: f64) {
        if i == j {
            self.m[(i, i)] += w;
        } else {
            self.m[(i, j)] += 0.5 * w;
            self.m[(j, i)] += 0.5 * w;
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = self.c;
        for i in 0..n {
            let xi = x[i];
            acc += self.l[i] * xi;
            let row: f64 = (0..n).map(|j| self.m[(i, j)] * x[j]).sum();
            acc += xi * row;
        }
        acc
    }

    /// Exact operator expectation `tr(M Γ) + dᵀ M d + lᵀ d + c`.
    pub fn expectation(&self, state: &GaussianState) -> f64 {
        let d = state.means();
        (&self.m * state.cov()).trace() + d.dot(&(&self.m * d)) + self.l.dot(d) + self.c
    }

    /// Expectation of the phase-space product `f·g` under the Wigner density (Isserlis).
    pub fn wigner_product_mean(&self, other: &QuadraticSymbol, state: &GaussianState) -> f64 {
        let cov = state.cov();
        let d = state.means();
        let a1 = &self.m * d * 2.0 + &self.l;
        let a2 = &other.m * d * 2.0 + &other.l;
        let b1 = d.dot(&(&self.m * d)) + self.l.dot(d) + self.c;
        let b2 = d.dot(&(&other.m * d)) + other.l.dot(d) + other.c;
        let t1 = (&self.m * cov).trace();
        let t2 = (&other.m * cov).trace();
        let t12 = (&self.m * cov * &other.m * cov).trace();
        t1 * t2 + 2.0 * t12 + a1.dot(&(cov * a2)) + b1 * t2 + b2 * t1 + b1 * b2
    }

    /// Difference between `⟨½{F, G}⟩` and the Wigner average of `f g` for the
    /// quadratic operators `F`, `G` with these symbols: `½ tr(M_f J M_g J)`.
    pub fn ordering_offset(&self, other: &QuadraticSymbol) -> f64 {
        let j = omega(self.dim() / 2);
        0.5 * (&self.m * &j * &other.m * &j).trace()
    }

    /// `⟨½{F, G}⟩`; equals `⟨F G⟩` whenever the two operators commute.
    pub fn symmetrized_product_expectation(&self, other: &QuadraticSymbol, state: &GaussianState) -> f64 {
        self.wigner_product_mean(other, state) + self.ordering_offset(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn vacuum_number_operator_vanishes() {
        let a = LinearForm::annihilation(1, 0);
        let ad = LinearForm::creation(1, 0);
        let n = OperatorPolynomial::product_of(vec![ad, a]);
        let v = n.expectation(&GaussianState::vacuum(1)).unwrap();
        assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn qp_carries_half_i() {
        let qp = OperatorPolynomial::product_of(vec![LinearForm::q(1, 0), LinearForm::p(1, 0)]);
        let v = qp.expectation(&GaussianState::vacuum(1)).unwrap();
        assert_abs_diff_eq!(v.im, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn vacuum_fourth_moment_of_q() {
        let q = LinearForm::q(1, 0);
        let q4 = OperatorPolynomial::product_of(vec![q.clone(), q.clone(), q.clone(), q]);
        // 3 Var² with Var = 1/2
        assert_abs_diff_eq!(q4.expectation(&GaussianState::vacuum(1)).unwrap().re, 0.75, epsilon = 1e-14);
    }

    #[test]
    fn symbol_eval_matches_definition() {
        let mut f = QuadraticSymbol::zero(2);
        f.add_product(0, 1, 2.0);
        f.l[0] = 1.0;
        f.c = 0.5;
        assert_abs_diff_eq!(f.eval(&[2.0, 3.0]), 2.0 * 6.0 + 2.0 + 0.5, epsilon = 1e-15);
    }
}
