//! Generalized Vandermonde matrices, the Wronskian factorization check,
//! Schur-seed points and the conditioning-aware linear solve.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Result, UapError};
use crate::monomials::{binomial, recenter, MonomialBasis, MultiIndex, MultiPoly};

pub const DEFAULT_NONSINGULAR_TOL: f64 = 1e-10;
pub const SOFT_CONDITION_LIMIT: f64 = 1e12;

/// `Q = [qᵢ(vⱼ)]`: row i is the i-th colex monomial, column j the j-th point.
#[derive(Debug, Clone)]
pub struct GeneralizedVandermonde {
    pub basis: Arc<MonomialBasis>,
    pub points: Vec<Vec<f64>>,
    pub matrix: DMatrix<f64>,
}

pub fn build_vandermonde(
    points: &[Vec<f64>],
    basis: &Arc<MonomialBasis>,
) -> Result<GeneralizedVandermonde> {
    let size = basis.len();
    if points.len() != size {
        return Err(UapError::DimensionMismatch { expected: size, got: points.len() });
    }
    let mut matrix = DMatrix::zeros(size, size);
    for (j, v) in points.iter().enumerate() {
        let col = basis.eval_monomials(v)?;
        for (i, q) in col.into_iter().enumerate() {
            matrix[(i, j)] = q;
        }
    }
    Ok(GeneralizedVandermonde { basis: basis.clone(), points: points.to_vec(), matrix })
}

impl GeneralizedVandermonde {
    pub fn log_det(&self) -> LogDet {
        log_det(&self.matrix)
    }
}

/// Determinant as `sign · exp(log_abs)`; `sign = 0` for an exactly singular pivot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogDet {
    pub sign: f64,
    pub log_abs: f64,
}

impl LogDet {
    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }
}

pub fn log_det(m: &DMatrix<f64>) -> LogDet {
    assert!(m.is_square(), "determinant of a non-square matrix");
    if m.nrows() == 0 {
        return LogDet { sign: 1.0, log_abs: 0.0 };
    }
    let lu = m.clone().lu();
    let mut sign = lu.p().determinant::<f64>();
    let mut log_abs = 0.0;
    let u = lu.u();
    for i in 0..u.nrows() {
        let p = u[(i, i)];
        if p == 0.0 {
            return LogDet { sign: 0.0, log_abs: f64::NEG_INFINITY };
        }
        sign *= p.signum();
        log_abs += p.abs().ln();
    }
    LogDet { sign, log_abs }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonsingularityCheck {
    pub nonsingular: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// σ_min / (tol·σ_max); above 1 means nonsingular.
    pub margin: f64,
}

impl NonsingularityCheck {
    pub fn condition(&self) -> f64 {
        if self.sigma_min > 0.0 {
            self.sigma_max / self.sigma_min
        } else {
            f64::INFINITY
        }
    }
}

/// Whether σ_min(Q) > tol·‖Q‖₂.
pub fn is_nonsingular(q: &GeneralizedVandermonde, tol: f64) -> NonsingularityCheck {
    singular_value_check(&q.matrix, tol)
}

pub fn singular_value_check(m: &DMatrix<f64>, tol: f64) -> NonsingularityCheck {
    if m.iter().any(|v| !v.is_finite()) {
        return NonsingularityCheck {
            nonsingular: false,
            sigma_min: 0.0,
            sigma_max: f64::INFINITY,
            margin: 0.0,
        };
    }
    let sv = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
    let sigma_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let margin = if sigma_max > 0.0 { sigma_min / (tol * sigma_max) } else { 0.0 };
    NonsingularityCheck { nonsingular: margin > 1.0, sigma_min, sigma_max, margin }
}

/// Points `vⱼ` with i-th coordinate `baseⱼ^{(d+1)^{i}}` (0-based i).
pub fn schur_seed_points(n: usize, d: usize, base: &[f64]) -> Result<Vec<Vec<f64>>> {
    let size = binomial(n + d, d);
    if base.len() != size {
        return Err(UapError::DimensionMismatch { expected: size, got: base.len() });
    }
    if base.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
        return Err(UapError::InvalidArgument("Schur seed bases must be positive".into()));
    }
    let mut sorted = base.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(UapError::InvalidArgument("Schur seed bases must be distinct".into()));
    }
    let exps: Vec<i32> = (0..n).map(|i| (d as i32 + 1).pow(i as u32)).collect();
    Ok(base
        .iter()
        .map(|&b| exps.iter().map(|&e| b.powi(e)).collect())
        .collect())
}

#[derive(Debug, Clone)]
pub struct WronskianCheck {
    /// `M_W(𝟏ₙ)` with entries `ŵⱼ^{λᵢ}·(Δ_{λᵢ}p)(ŵⱼ)`.
    pub lhs: DMatrix<f64>,
    pub m_prime: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub max_abs_error: f64,
    /// max_ij Σ_k |M′_ik|·|Q_kj|
    pub scale: f64,
    pub upper_triangular: bool,
    /// max_i |M′_ii − λᵢ!·α_{λᵢ}| relative to the diagonal magnitude.
    pub diagonal_error: f64,
    pub det_m_prime: LogDet,
}

/// Builds both sides of `M_W(𝟏ₙ) = M′·Q` and measures the mismatch.
pub fn wronskian_factor_check(p: &MultiPoly, points: &[Vec<f64>]) -> Result<WronskianCheck> {
    let n = p.n();
    let p = if p.center().iter().any(|&c| c != 0.0) {
        recenter(p, &vec![0.0; n])?
    } else {
        p.clone()
    };
    if let Some(i) = p.coeffs().iter().position(|&c| c == 0.0) {
        return Err(UapError::ZeroCoefficient(i));
    }
    let basis = p.basis().clone();
    let size = basis.len();
    let q = build_vandermonde(points, &basis)?.matrix;

    let derivs: Vec<MultiPoly> = basis
        .indices()
        .iter()
        .map(|l| p.derivative(l))
        .collect::<Result<_>>()?;

    let mut lhs = DMatrix::zeros(size, size);
    let mut m_prime = DMatrix::zeros(size, size);
    for (i, lam) in basis.indices().iter().enumerate() {
        for (j, w) in points.iter().enumerate() {
            lhs[(i, j)] = lam.eval(w) * derivs[i].eval(w)?;
        }
        for (j, lam_j) in basis.indices().iter().enumerate() {
            if let Some(diff) = lam_j.checked_sub(lam) {
                if let Some(k) = basis.position(&diff) {
                    m_prime[(i, j)] = derivs[i].coeffs()[k];
                }
            }
        }
    }

    let prod = &m_prime * &q;
    let max_abs_error = (&lhs - &prod).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = (m_prime.abs() * q.abs()).iter().fold(0.0f64, |m, v| m.max(*v));
    let upper_triangular = (0..size).all(|i| (0..i).all(|j| m_prime[(i, j)] == 0.0));
    let diagonal_error = basis
        .indices()
        .iter()
        .enumerate()
        .map(|(i, lam): (usize, &MultiIndex)| {
            let want = lam.factorial() * p.coeffs()[i];
            (m_prime[(i, i)] - want).abs() / want.abs()
        })
        .fold(0.0, f64::max);
    let det_m_prime = log_det(&m_prime);
    Ok(WronskianCheck {
        lhs,
        m_prime,
        q,
        max_abs_error,
        scale,
        upper_triangular,
        diagonal_error,
        det_m_prime,
    })
}

#[derive(Debug, Clone)]
pub struct LinearSolveReport {
    pub solution: DMatrix<f64>,
    /// ‖A·X − B‖_F on the unscaled system.
    pub residual_norm: f64,
    /// σ_max/σ_min of the row-equilibrated matrix.
    pub condition_estimate: f64,
}

/// Solves `A·X = B` by Householder QR after row equilibration.
pub fn solve_coefficients(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LinearSolveReport> {
    if !a.is_square() {
        return Err(UapError::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    if b.nrows() != a.nrows() {
        return Err(UapError::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    let size = a.nrows();
    let mut ae = a.clone();
    let mut be = b.clone();
    for i in 0..size {
        let r = ae.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(r > 0.0) || !r.is_finite() {
            return Err(UapError::Singular { condition: f64::INFINITY });
        }
        ae.row_mut(i).scale_mut(1.0 / r);
        be.row_mut(i).scale_mut(1.0 / r);
    }
    let chk = singular_value_check(&ae, 1.0);
    let condition_estimate = chk.condition().max(1.0);
    if condition_estimate * size as f64 * f64::EPSILON >= 1.0 {
        return Err(UapError::Singular { condition: condition_estimate });
    }
    let solution = ae
        .qr()
        .solve(&be)
        .ok_or(UapError::Singular { condition: condition_estimate })?;
    let residual_norm = (a * &solution - b).norm();
    Ok(LinearSolveReport { solution, residual_norm, condition_estimate })
}

/// Least-squares solution of `A·X ≈ B` for tall `A` by Householder QR.
///
/// Rank-deficient systems (|Rᵢᵢ| below 1e−12 of the largest) fall back to a
/// truncated SVD, which returns the minimum-norm solution.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(UapError::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    if a.nrows() < a.ncols() {
        return Err(UapError::InvalidArgument("least squares needs at least as many rows as columns".into()));
    }
    let cols = a.ncols();
    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    if dmax > 0.0 && diag.iter().all(|&v| v > 1e-12 * dmax) {
        let qtb = qr.q().transpose() * b;
        if let Some(x) = r.solve_upper_triangular(&qtb) {
            return Ok(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let cutoff = 1e-13 * svd.singular_values.max();
    svd.solve(b, cutoff).map_err(|e| UapError::InvalidArgument(e.to_string()))
}

/// Rank counted from singular values above `rel_tol·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monomials::enumerate_basis;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(n: usize, d: usize) -> Arc<MonomialBasis> {
        Arc::new(enumerate_basis(n, d).unwrap())
    }

    /// Cofactor expansion, used as an independent determinant oracle.
    fn cofactor_det(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = m.clone().remove_row(0).remove_column(j);
                let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
                sgn * m[(0, j)] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn classic_vandermonde() {
        let pts = vec![vec![1.0], vec![2.0], vec![3.0]];
        let q = build_vandermonde(&pts, &basis(1, 2)).unwrap();
        assert!((q.log_det().value() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bivariate_degree_one() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![2.0, 1.0]];
        let q = build_vandermonde(&pts, &basis(2, 1)).unwrap();
        assert_eq!(q.matrix, DMatrix::from_row_slice(3, 3, &[1., 1., 1., 1., 1., 2., 1., 2., 1.]));
        let oracle = cofactor_det(&q.matrix);
        assert_eq!(oracle, -1.0);
        assert!((q.log_det().value() - oracle).abs() < 1e-12);
    }

    #[test]
    fn repeated_point_is_singular() {
        let pts = vec![vec![0.3, 0.1], vec![0.7, -0.2], vec![0.3, 0.1]];
        let q = build_vandermonde(&pts, &basis(2, 1)).unwrap();
        assert_eq!(q.log_det().value(), 0.0);
        assert!(!is_nonsingular(&q, DEFAULT_NONSINGULAR_TOL).nonsingular);
    }

    #[test]
    fn count_mismatch() {
        let r = build_vandermonde(&[vec![1.0, 2.0]], &basis(2, 1));
        assert!(matches!(r, Err(UapError::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn schur_seed_examples() {
        let p = schur_seed_points(1, 3, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p, vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let p = schur_seed_points(2, 1, &[2.0, 3.0, 5.0]).unwrap();
        assert_eq!(p, vec![vec![2.0, 4.0], vec![3.0, 9.0], vec![5.0, 25.0]]);
        let q = build_vandermonde(&p, &basis(2, 1)).unwrap();
        assert_eq!(cofactor_det(&q.matrix), 6.0);
        assert!((q.log_det().value() - 6.0).abs() < 1e-10);
        assert!(schur_seed_points(2, 1, &[2.0, 2.0, 5.0]).is_err());
        assert!(schur_seed_points(2, 1, &[2.0, -3.0, 5.0]).is_err());
    }

    #[test]
    fn schur_seed_nonsingular_and_positive() {
        for n in 1..=3 {
            for d in 1..=4 {
                let size = binomial(n + d, d);
                // bases spread over (1, ρ] with ρ^{(d+1)^{n-1}} kept moderate
                let top = 2f64.powf(1.0 / (d as f64 + 1.0).powi(n as i32 - 1));
                let base: Vec<f64> =
                    (0..size).map(|j| 1.0 + (top - 1.0) * (j + 1) as f64 / size as f64).collect();
                let pts = schur_seed_points(n, d, &base).unwrap();
                let q = build_vandermonde(&pts, &basis(n, d)).unwrap();
                let ld = q.log_det();
                // det > 0 once rows are sorted by the exponent β·(1, d+1, (d+1)², …)
                let e: Vec<u64> = basis(n, d)
                    .indices()
                    .iter()
                    .map(|b| b.exponents().iter().rev().fold(0u64, |acc, &x| acc * (d as u64 + 1) + x as u64))
                    .collect();
                let inversions = (0..size)
                    .flat_map(|i| (i + 1..size).map(move |j| (i, j)))
                    .filter(|&(i, j)| e[i] > e[j])
                    .count();
                let want = if inversions % 2 == 0 { 1.0 } else { -1.0 };
                // the computed sign is only meaningful away from numerical singularity
                if is_nonsingular(&q, 1e-12).nonsingular {
                    assert_eq!(ld.sign, want, "n={n} d={d}");
                }
                // clustered bases are exact but badly conditioned beyond this size
                if size <= 6 {
                    assert!(is_nonsingular(&q, DEFAULT_NONSINGULAR_TOL).nonsingular, "n={n} d={d}");
                }
            }
        }
    }

    #[test]
    fn wronskian_hand_example() {
        let p = MultiPoly::new(basis(1, 1), vec![0.0], vec![1.0, 1.0]).unwrap();
        let w = wronskian_factor_check(&p, &[vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(w.lhs, DMatrix::from_row_slice(2, 2, &[3., 4., 2., 3.]));
        assert_eq!(w.m_prime, DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]));
        assert_eq!(w.q, DMatrix::from_row_slice(2, 2, &[1., 1., 2., 3.]));
        assert_eq!(w.max_abs_error, 0.0);
    }

    #[test]
    fn wronskian_repeated_points() {
        let p = MultiPoly::new(basis(1, 2), vec![0.0], vec![1.0, -2.0, 0.5]).unwrap();
        let w = wronskian_factor_check(&p, &[vec![1.5], vec![1.5], vec![-0.5]]).unwrap();
        assert!(w.max_abs_error < 1e-12);
        assert_eq!(log_det(&w.q).value(), 0.0);
        assert_eq!(log_det(&w.lhs).value().abs() < 1e-12, true);
    }

    #[test]
    fn wronskian_univariate_diagonal() {
        // diagonal entry k is k!·α_k
        let coeffs = vec![0.5, -1.5, 2.0, 0.25];
        let p = MultiPoly::new(basis(1, 3), vec![0.0], coeffs.clone()).unwrap();
        let pts: Vec<Vec<f64>> = [0.3, 0.9, 1.4, 2.2].iter().map(|&a| vec![a]).collect();
        let w = wronskian_factor_check(&p, &pts).unwrap();
        for (k, &a) in coeffs.iter().enumerate() {
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            assert_eq!(w.m_prime[(k, k)], fact * a);
        }
        assert!(w.upper_triangular);
    }

    #[test]
    fn wronskian_rejects_zero_coefficient() {
        let p = MultiPoly::new(basis(1, 2), vec![0.0], vec![1.0, 0.0, 1.0]).unwrap();
        let e = wronskian_factor_check(&p, &[vec![1.0], vec![2.0], vec![3.0]]);
        assert!(matches!(e, Err(UapError::ZeroCoefficient(1))));
    }

    #[test]
    fn solve_identity() {
        let a = DMatrix::<f64>::identity(4, 4);
        let b = DMatrix::from_fn(4, 2, |i, j| (i * 3 + j) as f64 - 2.5);
        let r = solve_coefficients(&a, &b).unwrap();
        assert_eq!(r.solution, b);
        assert_eq!(r.residual_norm, 0.0);
        assert_eq!(r.condition_estimate, 1.0);
    }

    #[test]
    fn solve_recovers_quadratic() {
        // rows are q_i(v_j); Qᵀ·c gives values, so solve Qᵀ c = values
        let q = build_vandermonde(&[vec![1.0], vec![2.0], vec![3.0]], &basis(1, 2)).unwrap();
        let c = [0.7, -1.1, 0.4];
        let vals = DMatrix::from_fn(3, 1, |j, _| c[0] + c[1] * (j + 1) as f64 + c[2] * ((j + 1) as f64).powi(2));
        let r = solve_coefficients(&q.matrix.transpose(), &vals).unwrap();
        for i in 0..3 {
            assert!((r.solution[(i, 0)] - c[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn solve_singular_errors() {
        let q = build_vandermonde(&[vec![1.0], vec![2.0], vec![2.0]], &basis(1, 2)).unwrap();
        let b = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(solve_coefficients(&q.matrix, &b), Err(UapError::Singular { .. })));
    }

    #[test]
    fn distinct_scalings_give_full_gram_rank() {
        // x ↦ p(aⱼx) independent iff the aⱼ are distinct
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
        for d in 1..=4 {
            let coeffs: Vec<f64> = (0..=d)
                .map(|_| {
                    let v: f64 = rng.random_range(0.5..1.5);
                    if rng.random_bool(0.5) { v } else { -v }
                })
                .collect();
            let p = |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
            let gram = |a: &[f64]| {
                let s = DMatrix::from_fn(grid.len(), a.len(), |i, j| p(a[j] * grid[i]));
                s.transpose() * s
            };
            let distinct: Vec<f64> = (0..=d).map(|j| 0.4 + 0.3 * j as f64).collect();
            assert_eq!(numerical_rank(&gram(&distinct), 1e-12), d + 1);
            let mut dup = distinct.clone();
            dup[d] = dup[0];
            assert!(numerical_rank(&gram(&dup), 1e-12) < d + 1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn factorization_residual(seed in 0u64..10_000, n in 1usize..=3, d in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = basis(n, d);
            let coeffs: Vec<f64> = (0..b.len())
                .map(|_| {
                    let v: f64 = rng.random_range(0.2..2.0);
                    if rng.random_bool(0.5) { v } else { -v }
                })
                .collect();
            let p = MultiPoly::new(b.clone(), vec![0.0; n], coeffs).unwrap();
            let pts: Vec<Vec<f64>> = (0..b.len())
                .map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let w = wronskian_factor_check(&p, &pts).unwrap();
            prop_assert!(w.max_abs_error <= 1e-8 * w.scale.max(1.0));
            prop_assert!(w.upper_triangular);
            prop_assert!(w.diagonal_error == 0.0);
            prop_assert!(w.det_m_prime.sign != 0.0);
            // det(M_W) = det(M′)·det(Q) so both vanish together
            let lhs = log_det(&w.lhs);
            let q = log_det(&w.q);
            if q.sign != 0.0 && lhs.sign != 0.0 {
                prop_assert!((lhs.log_abs - (w.det_m_prime.log_abs + q.log_abs)).abs() < 1e-6);
                prop_assert_eq!(lhs.sign, w.det_m_prime.sign * q.sign);
            }
        }
    }
}
