//! Single-hidden-layer networks `x ↦ W2[0] + Σⱼ W2[j]·σ(W1[0,j] + ŵⱼ·x)`.
//!
//! Biases live in row 0 of both weight matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UapError};
use crate::minimax::ActivationSpec;

pub const DOCUMENT_VERSION: u32 = 1;
pub const SIGMA_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    /// (n+1)×N, row 0 = first-layer biases.
    pub w1: DMatrix<f64>,
    /// (N+1)×m, row 0 = output biases.
    pub w2: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Summation {
    #[default]
    Plain,
    /// Neumaier-compensated accumulation over hidden units.
    Compensated,
}

impl NetworkWeights {
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>) -> Result<Self> {
        if w1.nrows() < 2 {
            return Err(UapError::InvalidArgument("W1 needs a bias row and ≥ 1 input row".into()));
        }
        if w2.nrows() != w1.ncols() + 1 {
            return Err(UapError::DimensionMismatch { expected: w1.ncols() + 1, got: w2.nrows() });
        }
        if w2.ncols() == 0 {
            return Err(UapError::InvalidArgument("W2 needs ≥ 1 output column".into()));
        }
        Ok(NetworkWeights { w1, w2 })
    }

    pub fn n(&self) -> usize {
        self.w1.nrows() - 1
    }

    pub fn m(&self) -> usize {
        self.w2.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    /// ŵⱼ: column j of W1 without the bias entry.
    pub fn direction(&self, j: usize) -> Vec<f64> {
        self.w1.column(j).iter().skip(1).copied().collect()
    }

    pub fn first_bias(&self, j: usize) -> f64 {
        self.w1[(0, j)]
    }

    pub fn output_bias(&self, t: usize) -> f64 {
        self.w2[(0, t)]
    }

    /// max |W2[j,t]| over non-bias rows.
    pub fn max_output_weight(&self) -> f64 {
        self.w2.rows(1, self.hidden()).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// min ‖ŵⱼ‖₂
    pub fn min_direction_norm(&self) -> f64 {
        (0..self.hidden())
            .map(|j| self.w1.column(j).rows(1, self.n()).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn forward(&self, sigma: &ActivationSpec, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(sigma, x, Summation::Plain)
    }

    pub fn forward_with(&self, sigma: &ActivationSpec, x: &[f64], mode: Summation) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(UapError::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        let acts: Vec<f64> = (0..self.hidden())
            .map(|j| {
                let col = self.w1.column(j);
                let pre = col[0] + x.iter().enumerate().map(|(i, xi)| col[i + 1] * xi).sum::<f64>();
                sigma.eval(pre)
            })
            .collect();
        Ok((0..self.m())
            .map(|t| {
                let terms = acts.iter().enumerate().map(|(j, a)| self.w2[(j + 1, t)] * a);
                match mode {
                    Summation::Plain => self.w2[(0, t)] + terms.sum::<f64>(),
                    Summation::Compensated => neumaier(std::iter::once(self.w2[(0, t)]).chain(terms)),
                }
            })
            .collect())
    }
}

fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn forward(w: &NetworkWeights, sigma: &ActivationSpec, x: &[f64]) -> Result<Vec<f64>> {
    w.forward(sigma, x)
}

/// Moves every output bias c into an extra unit σ(y₀) with output weight c/σ(y₀).
pub fn eliminate_output_bias(w: &NetworkWeights, sigma: &ActivationSpec, y0: f64) -> Result<NetworkWeights> {
    let s = sigma.eval(y0);
    if !(s.abs() > SIGMA_ZERO_TOL) {
        return Err(UapError::ActivationNearZero { y0, value: s });
    }
    let (n, big_n, m) = (w.n(), w.hidden(), w.m());
    let mut w1 = w.w1.clone().insert_column(big_n, 0.0);
    w1[(0, big_n)] = y0;
    debug_assert!((1..=n).all(|i| w1[(i, big_n)] == 0.0));
    let mut w2 = w.w2.clone().insert_row(big_n + 1, 0.0);
    for t in 0..m {
        w2[(big_n + 1, t)] = w2[(0, t)] / s;
        w2[(0, t)] = 0.0;
    }
    NetworkWeights::new(w1, w2)
}

/// Versioned JSON form with row-major weight matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub hidden: usize,
    pub sigma_kind: ActivationSpec,
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    #[serde(rename = "W2")]
    pub w2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if r.iter().any(|row| row.len() != cols) {
        return Err(UapError::Serialization("ragged weight matrix".into()));
    }
    Ok(DMatrix::from_fn(r.len(), cols, |i, j| r[i][j]))
}

impl NetworkDocument {
    pub fn from_weights(w: &NetworkWeights, sigma: &ActivationSpec) -> Self {
        NetworkDocument {
            version: DOCUMENT_VERSION,
            n: w.n(),
            m: w.m(),
            hidden: w.hidden(),
            sigma_kind: sigma.clone(),
            w1: rows(&w.w1),
            w2: rows(&w.w2),
            config_hash: None,
            tool_version: None,
        }
    }

    pub fn weights(&self) -> Result<NetworkWeights> {
        if self.version != DOCUMENT_VERSION {
            return Err(UapError::Serialization(format!(
                "unsupported network document version {} (expected {DOCUMENT_VERSION})",
                self.version
            )));
        }
        if self.w1.len() != self.n + 1 || self.w2.len() != self.hidden + 1 {
            return Err(UapError::Serialization("weight matrix shapes disagree with n/N".into()));
        }
        let w = NetworkWeights::new(from_rows(&self.w1, self.hidden)?, from_rows(&self.w2, self.m)?)?;
        self.sigma_kind.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| UapError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| UapError::Serialization(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, n: usize, big_n: usize, m: usize) -> NetworkWeights {
        let w1 = DMatrix::from_fn(n + 1, big_n, |_, _| rng.random_range(-2.0..2.0));
        let w2 = DMatrix::from_fn(big_n + 1, m, |_, _| rng.random_range(-2.0..2.0));
        NetworkWeights::new(w1, w2).unwrap()
    }

    #[test]
    fn zero_weights_zero_output() {
        let w = NetworkWeights::new(DMatrix::zeros(3, 4), DMatrix::zeros(5, 2)).unwrap();
        assert_eq!(w.forward(&ActivationSpec::Tanh, &[0.3, -0.8]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_wiring() {
        let w = NetworkWeights::new(
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        for x in [-1.5, 0.0, 0.7] {
            assert_eq!(w.forward(&ActivationSpec::Logistic, &[x]).unwrap()[0], ActivationSpec::Logistic.eval(x));
        }
    }

    #[test]
    fn two_sigma_x_minus_sigma_two_x() {
        // σ(y) = y as a table: 2σ(x) − σ(2x) = 0
        let id = ActivationSpec::table(vec![[-10.0, -10.0], [10.0, 10.0]]).unwrap();
        let w = NetworkWeights::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 2.0]),
            DMatrix::from_column_slice(3, 1, &[0.0, 2.0, -1.0]),
        )
        .unwrap();
        for x in [-3.0, -0.25, 0.0, 1.5, 4.0] {
            assert!(w.forward(&id, &[x]).unwrap()[0].abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let w = NetworkWeights::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)).unwrap();
        assert!(w.forward(&ActivationSpec::Tanh, &[1.0]).is_err());
        assert!(NetworkWeights::new(DMatrix::zeros(3, 2), DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn bias_elimination_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = random_net(&mut rng, 2, 3, 1);
        w.w2[(0, 0)] = 0.0;
        let e = eliminate_output_bias(&w, &ActivationSpec::Logistic, 0.0).unwrap();
        assert_eq!(e.w2[(4, 0)], 0.0);

        // c = 3, σ(y₀) = 0.5 → 6
        w.w2[(0, 0)] = 3.0;
        let e = eliminate_output_bias(&w, &ActivationSpec::Logistic, 0.0).unwrap();
        assert_eq!(e.w2[(4, 0)], 6.0);
        assert_eq!(e.hidden(), 4);
        assert_eq!(e.output_bias(0), 0.0);

        assert!(matches!(
            eliminate_output_bias(&w, &ActivationSpec::Tanh, 0.0),
            Err(UapError::ActivationNearZero { .. })
        ));
    }

    #[test]
    fn accessors() {
        let w = NetworkWeights::new(
            DMatrix::from_row_slice(3, 2, &[9.0, 9.0, 3.0, 0.0, 4.0, 2.0]),
            DMatrix::from_column_slice(3, 1, &[100.0, -0.5, 0.25]),
        )
        .unwrap();
        assert_eq!(w.direction(0), vec![3.0, 4.0]);
        assert_eq!(w.min_direction_norm(), 2.0);
        assert_eq!(w.max_output_weight(), 0.5);
    }

    #[test]
    fn json_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = random_net(&mut rng, 3, 7, 2);
        let doc = NetworkDocument::from_weights(&w, &ActivationSpec::Softplus);
        let back = NetworkDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.weights().unwrap(), w);
    }

    #[test]
    fn json_version_mismatch() {
        let w = NetworkWeights::new(DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)).unwrap();
        let mut doc = NetworkDocument::from_weights(&w, &ActivationSpec::Tanh);
        doc.version = 99;
        assert!(doc.weights().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn affine_in_output_layer(seed in 0u64..100_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_net(&mut rng, 2, 5, 3);
            let b2 = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
            let b = NetworkWeights::new(a.w1.clone(), b2).unwrap();
            let mix = NetworkWeights::new(a.w1.clone(), &a.w2 * alpha + &b.w2 * beta).unwrap();
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (fa, fb, fm) = (
                a.forward(&ActivationSpec::Tanh, &x).unwrap(),
                b.forward(&ActivationSpec::Tanh, &x).unwrap(),
                mix.forward(&ActivationSpec::Tanh, &x).unwrap(),
            );
            for t in 0..3 {
                let want = alpha * fa[t] + beta * fb[t];
                let scale = alpha.abs() * fa[t].abs() + beta.abs() * fb[t].abs() + 1.0;
                prop_assert!((fm[t] - want).abs() <= 1e-12 * scale * 16.0);
            }
        }

        #[test]
        fn bias_elimination_preserves_function(seed in 0u64..100_000, y0 in 0.2f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_net(&mut rng, 3, 6, 2);
            let e = eliminate_output_bias(&w, &ActivationSpec::Logistic, y0).unwrap();
            prop_assert_eq!(e.hidden(), w.hidden() + 1);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (a, b) = (w.forward(&ActivationSpec::Logistic, &x).unwrap(), e.forward(&ActivationSpec::Logistic, &x).unwrap());
                for t in 0..2 {
                    prop_assert!((a[t] - b[t]).abs() <= 1e-12 * a[t].abs().max(1.0));
                }
            }
        }

        #[test]
        fn compensated_agrees(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_net(&mut rng, 2, 40, 1);
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let p = w.forward_with(&ActivationSpec::Tanh, &x, Summation::Plain).unwrap()[0];
            let c = w.forward_with(&ActivationSpec::Tanh, &x, Summation::Compensated).unwrap()[0];
            prop_assert!((p - c).abs() <= 1e-12 * 40.0);
        }
    }
}
