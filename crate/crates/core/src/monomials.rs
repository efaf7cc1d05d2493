//! Multivariate monomial bases in colexicographic order and dense polynomial
//! arithmetic over them.
//!
//! Basis positions are 0-based: position `i` holds the monomial written
//! `q_{i+1}` in 1-based numbering, so position 0 is always the constant.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UapError};

/// Exponent tuple `(α₁, …, αₙ)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Colex comparison: the largest index where the tuples differ decides.
    pub fn colex_cmp(&self, other: &Self) -> Ordering {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter().rev().zip(other.0.iter().rev()) {
            match a.cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }

    /// `α₁!⋯αₙ!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a)).product()
    }

    /// `|α|! / (α₁!⋯αₙ!)`
    pub fn multinomial(&self) -> f64 {
        factorial(self.degree()) / self.factorial()
    }

    /// `self − other` when every entry stays non-negative.
    pub fn checked_sub(&self, other: &Self) -> Option<MultiIndex> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.checked_sub(b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    pub fn add(&self, other: &Self) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `x^α`
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&a, &xi)| xi.powi(a as i32))
            .product()
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.colex_cmp(other)
    }
}

pub fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// All multi-indices of total degree ≤ d in strict colex order.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    n: usize,
    d: usize,
    indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.d == other.d
    }
}

pub fn enumerate_basis(n: usize, d: usize) -> Result<MonomialBasis> {
    if n == 0 {
        return Err(UapError::InvalidArgument("input dimension n must be ≥ 1".into()));
    }
    let mut indices = Vec::with_capacity(binomial(n + d, d));
    let mut cur = vec![0u32; n];
    fill(&mut indices, &mut cur, 0, d as u32);
    indices.sort();
    let lookup = indices
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    Ok(MonomialBasis { n, d, indices, lookup })
}

fn fill(out: &mut Vec<MultiIndex>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    if pos == cur.len() {
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for e in 0..=left {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

impl MonomialBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, i: usize) -> &MultiIndex {
        &self.indices[i]
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// `(q₁(x), …, q_N(x))` with shared power tables.
    pub fn eval_monomials(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        let powers: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| {
                let mut row = Vec::with_capacity(self.d + 1);
                let mut acc = 1.0;
                for _ in 0..=self.d {
                    row.push(acc);
                    acc *= xi;
                }
                row
            })
            .collect();
        Ok(self
            .indices
            .iter()
            .map(|m| {
                m.0.iter()
                    .enumerate()
                    .map(|(i, &e)| powers[i][e as usize])
                    .product()
            })
            .collect())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(UapError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `p(x) = Σᵢ νᵢ qᵢ(x − x₀)`.
#[derive(Debug, Clone)]
pub struct MultiPoly {
    basis: Arc<MonomialBasis>,
    center: Vec<f64>,
    coeffs: Vec<f64>,
}

impl MultiPoly {
    pub fn new(basis: Arc<MonomialBasis>, center: Vec<f64>, coeffs: Vec<f64>) -> Result<Self> {
        check_dim(basis.n(), center.len())?;
        check_dim(basis.len(), coeffs.len())?;
        Ok(MultiPoly { basis, center, coeffs })
    }

    pub fn zero(basis: Arc<MonomialBasis>, center: Vec<f64>) -> Result<Self> {
        let len = basis.len();
        Self::new(basis, center, vec![0.0; len])
    }

    /// Builds from `(coefficient, exponents)` terms; repeated exponents accumulate.
    pub fn from_terms(
        basis: Arc<MonomialBasis>,
        center: Vec<f64>,
        terms: &[(f64, Vec<u32>)],
    ) -> Result<Self> {
        let mut p = Self::zero(basis, center)?;
        for (c, e) in terms {
            check_dim(p.basis.n(), e.len())?;
            let idx = p.basis.position(&MultiIndex::new(e.clone())).ok_or_else(|| {
                UapError::InvalidArgument(format!(
                    "monomial {e:?} exceeds basis degree {}",
                    p.basis.d()
                ))
            })?;
            p.coeffs[idx] += c;
        }
        Ok(p)
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    /// ν̂(p): coefficients without the constant coordinate.
    pub fn truncated(&self) -> &[f64] {
        &self.coeffs[1..]
    }

    /// Largest total degree carrying a non-zero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.basis
            .indices()
            .iter()
            .zip(&self.coeffs)
            .filter(|(_, &c)| c != 0.0)
            .map(|(m, _)| m.degree() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n(), x.len())?;
        let shifted: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let q = self.basis.eval_monomials(&shifted)?;
        Ok(q.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum())
    }

    /// Δ_λ p: the mixed partial derivative ∂^λ, computed on the coefficient vector.
    pub fn derivative(&self, lambda: &MultiIndex) -> Result<MultiPoly> {
        check_dim(self.n(), lambda.dim())?;
        let mut out = vec![0.0; self.coeffs.len()];
        for (mu, &c) in self.basis.indices().iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            if let Some(rest) = mu.checked_sub(lambda) {
                let scale = mu.factorial() / rest.factorial();
                let idx = self.basis.position(&rest).expect("lower degree index in basis");
                out[idx] += c * scale;
            }
        }
        MultiPoly::new(self.basis.clone(), self.center.clone(), out)
    }

    /// Re-expresses the same polynomial in a basis of degree `d ≥ self.d`.
    pub fn elevate(&self, basis: Arc<MonomialBasis>) -> Result<MultiPoly> {
        check_dim(self.n(), basis.n())?;
        let mut out = vec![0.0; basis.len()];
        for (m, &c) in self.basis.indices().iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            let idx = basis.position(m).ok_or_else(|| {
                UapError::InvalidArgument(format!("target basis degree {} too small", basis.d()))
            })?;
            out[idx] = c;
        }
        MultiPoly::new(basis, self.center.clone(), out)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

pub fn eval_poly(p: &MultiPoly, x: &[f64]) -> Result<f64> {
    p.eval(x)
}

/// Same polynomial expanded around `new_center` by binomial re-expansion.
pub fn recenter(p: &MultiPoly, new_center: &[f64]) -> Result<MultiPoly> {
    check_dim(p.n(), new_center.len())?;
    let s: Vec<f64> = new_center.iter().zip(&p.center).map(|(c, x0)| c - x0).collect();
    let basis = p.basis.clone();
    let mut out = vec![0.0; basis.len()];
    for (alpha, &c) in basis.indices().iter().zip(&p.coeffs) {
        if c == 0.0 {
            continue;
        }
        for (j, beta) in basis.indices().iter().enumerate() {
            let Some(diff) = alpha.checked_sub(beta) else {
                continue;
            };
            let mut w = c;
            for i in 0..p.n() {
                let (a, b) = (alpha.0[i] as usize, beta.0[i] as usize);
                w *= binomial(a, b) as f64 * s[i].powi(diff.0[i] as i32);
            }
            out[j] += w;
        }
    }
    MultiPoly::new(basis, new_center.to_vec(), out)
}

/// Coefficients of `u ↦ Σ_i c_i (w·u)^i` over the colex basis.
///
/// The coefficient on `u^β` is `c_{|β|} · |β|!/β! · w^β`.
pub fn ridge_coefficients(basis: &MonomialBasis, c: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_dim(basis.n(), w.len())?;
    if c.len() > basis.d() + 1 {
        return Err(UapError::InvalidArgument(format!(
            "ridge profile degree {} exceeds basis degree {}",
            c.len() - 1,
            basis.d()
        )));
    }
    Ok(basis
        .indices()
        .iter()
        .map(|beta| {
            let k = beta.degree() as usize;
            c.get(k).map_or(0.0, |ck| ck * beta.multinomial() * beta.eval(w))
        })
        .collect())
}
