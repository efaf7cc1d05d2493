//! Best uniform polynomial approximation of activations on intervals, with
//! equioscillation certificates and modulus-of-continuity estimates.
//!
//! The approximant is computed by a discrete multi-point Remez exchange on a
//! Chebyshev–Lobatto grid. After convergence the residual is checked on a 4×
//! finer grid and the exchange is restarted there until the discrete levelled
//! error and the fine-grid sup agree to a relative `1e-6`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructor::{walk_schedule, ScaleSchedule};
use crate::error::{Result, UapError};
use crate::verify::{BoxDomain, GridSpec};

pub const MAX_EXCHANGE_ITERATIONS: usize = 100;
pub const STAGNATION_TOL: f64 = 1e-10;
pub const REFINEMENT_TOL: f64 = 1e-6;
pub const MAX_REFINEMENTS: usize = 6;
pub const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(UapError::DegenerateInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn centered(center: f64, length: f64) -> Result<Self> {
        Self::new(center - 0.5 * length, center + 0.5 * length)
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

/// A continuous activation σ: ℝ → ℝ.
///
/// Tables interpolate linearly between samples and extrapolate with the end
/// segments, so every variant is continuous on all of ℝ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationSpec {
    Logistic,
    Tanh,
    Relu,
    ReluSquared,
    Softplus,
    Gaussian,
    Exp,
    Abs,
    /// `Σ coeffs[i]·yⁱ`
    Polynomial { coeffs: Vec<f64> },
    Table {
        points: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_hint: Option<[f64; 2]>,
    },
}

impl ActivationSpec {
    pub fn table(points: Vec<[f64; 2]>) -> Result<Self> {
        let spec = ActivationSpec::Table { points, domain_hint: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActivationSpec::Table { points, domain_hint } => {
                if points.len() < 2 {
                    return Err(UapError::InvalidArgument(
                        "activation table needs at least 2 samples".into(),
                    ));
                }
                if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                    return Err(UapError::InvalidArgument("non-finite table sample".into()));
                }
                if points.windows(2).any(|w| w[0][0] >= w[1][0]) {
                    return Err(UapError::InvalidArgument(
                        "table abscissae must be strictly increasing".into(),
                    ));
                }
                if let Some([lo, hi]) = domain_hint {
                    Interval::new(*lo, *hi)?;
                }
                Ok(())
            }
            ActivationSpec::Polynomial { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(UapError::InvalidArgument(
                        "polynomial activation needs finite coefficients".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationSpec::Logistic => "logistic",
            ActivationSpec::Tanh => "tanh",
            ActivationSpec::Relu => "relu",
            ActivationSpec::ReluSquared => "relu_squared",
            ActivationSpec::Softplus => "softplus",
            ActivationSpec::Gaussian => "gaussian",
            ActivationSpec::Exp => "exp",
            ActivationSpec::Abs => "abs",
            ActivationSpec::Polynomial { .. } => "polynomial",
            ActivationSpec::Table { .. } => "table",
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            ActivationSpec::Logistic => {
                if y >= 0.0 {
                    1.0 / (1.0 + (-y).exp())
                } else {
                    let e = y.exp();
                    e / (1.0 + e)
                }
            }
            ActivationSpec::Tanh => y.tanh(),
            ActivationSpec::Relu => y.max(0.0),
            ActivationSpec::ReluSquared => {
                let r = y.max(0.0);
                r * r
            }
            ActivationSpec::Softplus => y.max(0.0) + (-y.abs()).exp().ln_1p(),
            ActivationSpec::Gaussian => (-y * y).exp(),
            ActivationSpec::Exp => y.exp(),
            ActivationSpec::Abs => y.abs(),
            ActivationSpec::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
            }
            ActivationSpec::Table { points, .. } => interpolate(points, y),
        }
    }

    /// Interval the probe and anchor searches should stay inside.
    pub fn domain_hint(&self) -> Option<Interval> {
        match self {
            ActivationSpec::Table { domain_hint: Some([lo, hi]), .. } => {
                Interval::new(*lo, *hi).ok()
            }
            ActivationSpec::Table { points, .. } => {
                Interval::new(points[0][0], points[points.len() - 1][0]).ok()
            }
            _ => None,
        }
    }
}

fn interpolate(points: &[[f64; 2]], y: f64) -> f64 {
    let k = points.partition_point(|p| p[0] <= y);
    let i = k.clamp(1, points.len() - 1) - 1;
    let [x0, y0] = points[i];
    let [x1, y1] = points[i + 1];
    y0 + (y1 - y0) * (y - x0) / (x1 - x0)
}

/// Degree-d best approximant with its equioscillation certificate.
#[derive(Debug, Clone, Serialize)]
pub struct MinimaxResult {
    pub sigma: ActivationSpec,
    pub interval: Interval,
    pub degree: usize,
    /// Chebyshev coefficients in `s = (y − mid)/half`.
    pub chebyshev: Vec<f64>,
    /// Levelled error E_d on the final grid; reported as 0 below the noise floor.
    pub error: f64,
    /// Sup of |σ − p| on the 4× finer check grid.
    pub fine_error: f64,
    pub alternation_points: Vec<f64>,
    /// δ with σ(aᵢ) − p(aᵢ) = (−1)ⁱ·δ·E_d.
    pub sign: f64,
    pub grid_size: usize,
    pub iterations: usize,
    pub refinements: usize,
    pub refinement_converged: bool,
    pub noise_floor: f64,
}

impl MinimaxResult {
    pub fn eval(&self, y: f64) -> f64 {
        clenshaw(&self.chebyshev, (y - self.interval.mid()) / self.interval.half())
    }

    pub fn residual(&self, y: f64) -> f64 {
        self.sigma.eval(y) - self.eval(y)
    }

    /// Upper estimate of ‖σ − p‖ on the interval.
    pub fn sup_error(&self) -> f64 {
        self.error.max(self.fine_error)
    }

    pub fn is_degenerate(&self) -> bool {
        self.error == 0.0
    }

    /// Coefficients `b` with `p(y) = Σ bᵢ (y − about)ⁱ`.
    pub fn power_coeffs_about(&self, about: f64) -> Vec<f64> {
        let mono_s = chebyshev_to_monomial(&self.chebyshev);
        let h = self.interval.half();
        let mut scale = 1.0;
        let mono_t: Vec<f64> = mono_s
            .iter()
            .map(|c| {
                let v = c / scale;
                scale *= h;
                v
            })
            .collect();
        shift_power_series(&mono_t, about - self.interval.mid())
    }

    /// Rows `(index, point, residual)` for auditing.
    pub fn write_certificate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let ser = |e: csv::Error| UapError::Serialization(e.to_string());
        wr.write_record(["index", "point", "residual"]).map_err(ser)?;
        for (i, &a) in self.alternation_points.iter().enumerate() {
            wr.write_record([i.to_string(), a.to_string(), self.residual(a).to_string()])
                .map_err(ser)?;
        }
        wr.flush().map_err(|e| UapError::Serialization(e.to_string()))
    }
}

fn clenshaw(c: &[f64], s: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * s * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    s * b1 - b2 + c[0]
}

pub(crate) fn chebyshev_to_monomial(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    prev[0] = 1.0;
    out[0] += c[0];
    if n > 1 {
        cur[1] = 1.0;
        out[1] += c[1];
    }
    for k in 2..n {
        let mut next = vec![0.0; n];
        for i in 0..n {
            if i > 0 {
                next[i] += 2.0 * cur[i - 1];
            }
            next[i] -= prev[i];
        }
        for i in 0..n {
            out[i] += c[k] * next[i];
        }
        prev = std::mem::replace(&mut cur, next);
    }
    out
}

/// Coefficients of `q(t + shift)` in powers of `t`.
pub fn shift_power_series(b: &[f64], shift: f64) -> Vec<f64> {
    let n = b.len();
    let mut out = vec![0.0; n];
    for (i, &bi) in b.iter().enumerate() {
        let mut binom = 1.0;
        for j in (0..=i).rev() {
            // term C(i, j)·t^j·shift^(i−j)
            out[j] += bi * binom * shift.powi((i - j) as i32);
            binom = binom * j as f64 / (i - j + 1) as f64;
        }
    }
    out
}

pub(crate) fn lobatto(m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            // sine form: exactly antisymmetric, midpoint exactly 0
            let k = 2.0 * i as f64 - (m - 1) as f64;
            (PI * k / (2.0 * (m - 1) as f64)).sin()
        })
        .collect()
}

struct Exchange {
    cheb: Vec<f64>,
    levelled: f64,
    reference: Vec<usize>,
    iterations: usize,
}

fn solve_reference(s: &[f64], f: &[f64], reference: &[usize], d: usize) -> Option<(Vec<f64>, f64)> {
    let k = d + 2;
    let mut a = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (row, &idx) in reference.iter().enumerate() {
        let x = s[idx];
        let (mut t0, mut t1) = (1.0, x);
        for col in 0..=d {
            let t = match col {
                0 => 1.0,
                1 => x,
                _ => {
                    let t2 = 2.0 * x * t1 - t0;
                    t0 = t1;
                    t1 = t2;
                    t2
                }
            };
            a[(row, col)] = t;
        }
        a[(row, d + 1)] = if row % 2 == 0 { 1.0 } else { -1.0 };
        rhs[row] = f[idx];
    }
    let sol = a.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, d + 1).iter().copied().collect(), sol[d + 1]))
}

fn next_reference(r: &[f64], d: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = Vec::new();
    let mut run_sign = 0.0;
    for (i, &ri) in r.iter().enumerate() {
        let sg = if ri > 0.0 {
            1.0
        } else if ri < 0.0 {
            -1.0
        } else {
            0.0
        };
        if cand.is_empty() {
            cand.push(i);
            run_sign = sg;
            continue;
        }
        if sg != 0.0 && run_sign != 0.0 && sg != run_sign {
            cand.push(i);
            run_sign = sg;
        } else {
            if run_sign == 0.0 {
                run_sign = sg;
            }
            let last = cand.len() - 1;
            if ri.abs() > r[cand[last]].abs() {
                cand[last] = i;
            }
        }
    }
    while cand.len() > d + 2 {
        let excess = cand.len() - (d + 2);
        let last = cand.len() - 1;
        if excess == 1 {
            if r[cand[0]].abs() <= r[cand[last]].abs() {
                cand.remove(0);
            } else {
                cand.pop();
            }
            continue;
        }
        let (imin, _) = cand
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, r[c].abs()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if imin == 0 || imin == last {
            cand.remove(imin);
        } else {
            let nb = if r[cand[imin - 1]].abs() <= r[cand[imin + 1]].abs() {
                imin - 1
            } else {
                imin + 1
            };
            let (a, b) = if nb < imin { (nb, imin) } else { (imin, nb) };
            cand.remove(b);
            cand.remove(a);
        }
    }
    cand
}

/// Adds grid indices furthest from the current ones until `want` remain.
fn fill_reference(cand: &mut Vec<usize>, len: usize, want: usize) {
    while cand.len() < want {
        let far = (0..len)
            .filter(|i| !cand.contains(i))
            .max_by_key(|&i| (cand.iter().map(|&c| c.abs_diff(i)).min().unwrap_or(usize::MAX), std::cmp::Reverse(i)));
        match far {
            Some(i) => {
                let pos = cand.partition_point(|&c| c < i);
                cand.insert(pos, i);
            }
            None => break,
        }
    }
}

fn residuals(s: &[f64], f: &[f64], cheb: &[f64]) -> Vec<f64> {
    s.par_iter().zip(f.par_iter()).map(|(&x, &fx)| fx - clenshaw(cheb, x)).collect()
}

fn exchange(s: &[f64], f: &[f64], d: usize, mut reference: Vec<usize>, noise: f64) -> Result<Exchange> {
    let mut prev_e = f64::NAN;
    for it in 1..=MAX_EXCHANGE_ITERATIONS {
        let (cheb, e) = solve_reference(s, f, &reference, d)
            .ok_or(UapError::NoConvergence { iterations: it })?;
        let r = residuals(s, f, &cheb);
        let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let done = |reference: Vec<usize>| Exchange { cheb: cheb.clone(), levelled: e, reference, iterations: it };
        if rmax <= noise || rmax - e.abs() <= STAGNATION_TOL * rmax {
            return Ok(done(reference));
        }
        if prev_e.is_finite() && (e.abs() - prev_e).abs() <= STAGNATION_TOL * e.abs() {
            return Ok(done(reference));
        }
        let mut next = next_reference(&r, d);
        if next.len() < d + 2 {
            fill_reference(&mut next, s.len(), d + 2);
        }
        if next == reference {
            return Ok(done(reference));
        }
        prev_e = e.abs();
        reference = next;
    }
    Err(UapError::NoConvergence { iterations: MAX_EXCHANGE_ITERATIONS })
}

/// Discrete minimax approximant of σ on `y` by polynomials of degree ≤ d.
///
/// `grid_size` is rounded up to an odd count so the interval midpoint is a
/// node.
pub fn best_approximant(
    sigma: &ActivationSpec,
    y: Interval,
    d: usize,
    grid_size: usize,
) -> Result<MinimaxResult> {
    if d < 1 {
        return Err(UapError::InvalidArgument("degree must be ≥ 1".into()));
    }
    if grid_size < 10 * (d + 2) {
        return Err(UapError::InvalidArgument(format!(
            "grid_size {grid_size} below 10·(d+2) = {}",
            10 * (d + 2)
        )));
    }
    let y = Interval::new(y.lo, y.hi)?;
    let mut m = grid_size | 1;
    let mid = y.mid();
    let half = y.half();
    let sample = |s: &[f64]| -> Vec<f64> { s.par_iter().map(|&x| sigma.eval(mid + half * x)).collect() };

    let mut s = lobatto(m);
    let mut f = sample(&s);
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(UapError::Evaluation {
            point: vec![mid + half * s[i]],
            message: format!("activation {} is not finite", sigma.name()),
        });
    }
    let mut reference: Vec<usize> = (0..d + 2)
        .map(|j| {
            let t = -(PI * j as f64 / (d + 1) as f64).cos();
            nearest(&s, t)
        })
        .collect();
    reference.dedup();
    if reference.len() < d + 2 {
        reference = (0..d + 2).map(|j| j * (m - 1) / (d + 1)).collect();
    }

    let mut iterations = 0;
    let mut refinements = 0;
    loop {
        let scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let noise = 64.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        let ex = exchange(&s, &f, d, reference, noise)?;
        iterations += ex.iterations;

        let fine_m = 4 * (m - 1) + 1;
        let fine_s = lobatto(fine_m);
        let fine_f = sample(&fine_s);
        let fine_sup = residuals(&fine_s, &fine_f, &ex.cheb)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let e = ex.levelled.abs();
        let converged = fine_sup - e <= REFINEMENT_TOL * e + noise;
        if converged || refinements == MAX_REFINEMENTS {
            let degenerate = e <= noise && fine_sup <= noise;
            return Ok(MinimaxResult {
                sigma: sigma.clone(),
                interval: y,
                degree: d,
                alternation_points: ex.reference.iter().map(|&i| mid + half * s[i]).collect(),
                chebyshev: ex.cheb,
                error: if degenerate { 0.0 } else { e },
                fine_error: if degenerate { 0.0 } else { fine_sup },
                sign: if ex.levelled < 0.0 { -1.0 } else { 1.0 },
                grid_size: m,
                iterations,
                refinements,
                refinement_converged: converged,
                noise_floor: noise,
            });
        }
        reference = ex.reference.iter().map(|&i| 4 * i).collect();
        m = fine_m;
        s = fine_s;
        f = fine_f;
        refinements += 1;
    }
}

fn nearest(s: &[f64], t: f64) -> usize {
    let k = s.partition_point(|&x| x < t);
    if k == 0 {
        0
    } else if k == s.len() {
        s.len() - 1
    } else if (s[k] - t).abs() < (t - s[k - 1]).abs() {
        k
    } else {
        k - 1
    }
}

/// Jackson: E_d(f) ≤ 6·ω_f(r/2d).
pub fn jackson_bound(omega_value: f64) -> Result<f64> {
    if !(omega_value >= 0.0) {
        return Err(UapError::InvalidArgument(format!(
            "modulus value must be ≥ 0, got {omega_value}"
        )));
    }
    Ok(6.0 * omega_value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlternationCheck {
    /// min(|y − lo|, |y − hi|) / |hi − lo|
    pub ratio: f64,
    pub crossing: f64,
    pub threshold: f64,
    pub passes: bool,
}

/// Locates a zero of σ − p between the second and third alternation points.
///
/// When E_d is zero the residual has no sign structure; the midpoint is
/// returned with ratio 1/2.
pub fn alternation_ratio_check(res: &MinimaxResult) -> Result<AlternationCheck> {
    let iv = res.interval;
    if res.is_degenerate() {
        return Ok(ratio_at(res, iv.mid()));
    }
    let c = bisect_crossing(res, res.alternation_points[1], res.alternation_points[2])?;
    Ok(ratio_at(res, c))
}

/// The sign change of σ − p, over all consecutive alternation pairs, that
/// lies furthest from both interval ends.
pub fn central_crossing(res: &MinimaxResult) -> Result<AlternationCheck> {
    let iv = res.interval;
    if res.is_degenerate() {
        return Ok(ratio_at(res, iv.mid()));
    }
    let mut best: Option<AlternationCheck> = None;
    for w in res.alternation_points.windows(2) {
        if let Ok(c) = bisect_crossing(res, w[0], w[1]) {
            let chk = ratio_at(res, c);
            if best.is_none_or(|b| chk.ratio > b.ratio) {
                best = Some(chk);
            }
        }
    }
    best.ok_or(UapError::NoSignChange { a1: iv.lo, a2: iv.hi })
}

fn ratio_at(res: &MinimaxResult, crossing: f64) -> AlternationCheck {
    let iv = res.interval;
    let threshold = 1.0 / (res.degree as f64 + 2.0);
    let ratio = (crossing - iv.lo).abs().min((iv.hi - crossing).abs()) / iv.length();
    AlternationCheck { ratio, crossing, threshold, passes: ratio > threshold }
}

fn bisect_crossing(res: &MinimaxResult, mut a: f64, mut b: f64) -> Result<f64> {
    let (mut ra, rb) = (res.residual(a), res.residual(b));
    if ra == 0.0 {
        return Ok(a);
    }
    if rb == 0.0 {
        return Ok(b);
    }
    if ra.signum() == rb.signum() {
        return Err(UapError::NoSignChange { a1: a, a2: b });
    }
    for _ in 0..200 {
        if b - a <= BISECTION_TOL {
            break;
        }
        let c = 0.5 * (a + b);
        if c <= a || c >= b {
            break;
        }
        let rc = res.residual(c);
        if rc == 0.0 {
            return Ok(c);
        }
        if rc.signum() == ra.signum() {
            a = c;
            ra = rc;
        } else {
            b = c;
        }
    }
    Ok(0.5 * (a + b))
}

/// Largest |f(x) − f(x′)| over grid pairs with ‖x − x′‖₂ ≤ δ.
///
/// This is a lower estimate of ω_f(δ) and is non-decreasing in δ on a fixed
/// grid. Grid spacing must not exceed δ/4 on any axis.
pub fn estimate_modulus(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &GridSpec,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(UapError::InvalidArgument("delta must be > 0".into()));
    }
    if grid.total() == 0 {
        return Err(UapError::EmptyGrid);
    }
    for i in 0..grid.dim() {
        if grid.spacing(i) > 0.25 * delta * (1.0 + 1e-12) {
            return Err(UapError::InvalidArgument(format!(
                "grid spacing {} on axis {i} exceeds delta/4 = {}",
                grid.spacing(i),
                0.25 * delta
            )));
        }
    }
    let values = grid.evaluate_scalar(f)?;
    Ok(modulus_from_values(grid, &values, delta))
}

fn modulus_from_values(grid: &GridSpec, values: &[f64], delta: f64) -> f64 {
    let offsets = neighbour_offsets(grid, delta);
    let res = grid.resolution();
    let n = res.len();
    (0..values.len())
        .into_par_iter()
        .map(|lin| {
            let idx = grid.unravel(lin);
            let mut best = 0.0f64;
            'next: for off in &offsets {
                let mut other = 0usize;
                let mut stride = 1usize;
                for ax in 0..n {
                    let j = idx[ax] as i64 + off[ax];
                    if j < 0 || j >= res[ax] as i64 {
                        continue 'next;
                    }
                    other += j as usize * stride;
                    stride *= res[ax];
                }
                best = best.max((values[lin] - values[other]).abs());
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Integer offsets with positive leading non-zero entry inside the δ-ball.
fn neighbour_offsets(grid: &GridSpec, delta: f64) -> Vec<Vec<i64>> {
    let n = grid.dim();
    let h: Vec<f64> = (0..n).map(|i| grid.spacing(i)).collect();
    let reach: Vec<i64> = h.iter().map(|&hi| if hi > 0.0 { (delta / hi).floor() as i64 } else { 0 }).collect();
    let lim = delta * delta * (1.0 + 1e-12);
    let mut out = Vec::new();
    let mut cur = vec![0i64; n];
    fn rec(ax: usize, cur: &mut Vec<i64>, reach: &[i64], h: &[f64], lim: f64, out: &mut Vec<Vec<i64>>) {
        if ax == cur.len() {
            let r2: f64 = cur.iter().zip(h).map(|(&o, hi)| (o as f64 * hi).powi(2)).sum();
            let first = cur.iter().find(|&&o| o != 0);
            if r2 <= lim && matches!(first, Some(&o) if o > 0) {
                out.push(cur.clone());
            }
            return;
        }
        for o in -reach[ax]..=reach[ax] {
            cur[ax] = o;
            rec(ax + 1, cur, reach, h, lim, out);
        }
        cur[ax] = 0;
    }
    rec(0, &mut cur, &reach, &h, lim, &mut out);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusRow {
    pub d: usize,
    pub delta: f64,
    pub resolution: usize,
    /// ω̂ per output coordinate.
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusSearch {
    pub d: usize,
    pub threshold: f64,
    pub table: Vec<ModulusRow>,
}

pub const DEFAULT_DEGREE_CAP: usize = 2000;
pub const MODULUS_GRID_CAP: usize = 2_000_000;

/// Smallest d ≥ 2 with ω̂_{f^[t]}(D/2d) < ε/6 for every output coordinate.
pub fn d_epsilon(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    domain: &BoxDomain,
    eps: f64,
    diameter: f64,
    cap: usize,
) -> Result<usize> {
    modulus_search(f, domain, eps, diameter, cap).map(|s| s.d)
}

/// [`d_epsilon`] with the measured modulus table.
///
/// Each candidate d uses its own tensor grid with `⌈4w/δ⌉ + 1` intervals per
/// axis, keeping the spacing strictly below δ/4.
pub fn modulus_search(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    domain: &BoxDomain,
    eps: f64,
    diameter: f64,
    cap: usize,
) -> Result<ModulusSearch> {
    if !(eps > 0.0) {
        return Err(UapError::InvalidArgument("eps must be > 0".into()));
    }
    if !(diameter >= 0.0) {
        return Err(UapError::InvalidArgument("diameter must be ≥ 0".into()));
    }
    let threshold = eps / 6.0;
    let mut table = Vec::new();
    for d in 2..=cap.max(2) {
        let delta = diameter / (2.0 * d as f64);
        let res: Vec<usize> = (0..domain.dim())
            .map(|i| {
                let w = domain.width(i);
                if w == 0.0 || delta == 0.0 {
                    1
                } else {
                    (4.0 * w / delta).ceil() as usize + 2
                }
            })
            .collect();
        let grid = GridSpec::new(domain.clone(), res.clone(), MODULUS_GRID_CAP)?;
        let values = grid.evaluate(f)?;
        let m = values.first().map_or(0, |v| v.len());
        let omega: Vec<f64> = (0..m)
            .map(|t| {
                if delta == 0.0 {
                    return 0.0;
                }
                let col: Vec<f64> = values.iter().map(|v| v[t]).collect();
                modulus_from_values(&grid, &col, delta)
            })
            .collect();
        let ok = omega.iter().all(|&w| w < threshold);
        let resolution = res.iter().copied().max().unwrap_or(1);
        table.push(ModulusRow { d, delta, resolution, omega });
        if ok {
            return Ok(ModulusSearch { d, threshold, table });
        }
    }
    Err(UapError::DegreeCapExceeded { cap })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthDiagnostic {
    pub lambdas: Vec<f64>,
    pub errors: Vec<f64>,
    /// E_d(σ|Y_k) / λ_k^{1+γ}
    pub ratios: Vec<f64>,
    pub tail_strictly_decreasing: bool,
}

/// Tracks E_d(σ|Y_k)/λ_k^{1+γ} along a schedule.
pub fn approx_growth_diagnostic(
    sigma: &ActivationSpec,
    schedule: &ScaleSchedule,
    d: usize,
    gamma: f64,
    scales: std::ops::Range<usize>,
) -> Result<GrowthDiagnostic> {
    if !(gamma > 0.0) {
        return Err(UapError::InvalidArgument("gamma must be > 0".into()));
    }
    if scales.len() < 3 {
        return Err(UapError::InvalidArgument("need at least 3 scales".into()));
    }
    let steps = walk_schedule(sigma, schedule, d, scales, DEFAULT_GRID)?;
    let lambdas: Vec<f64> = steps.iter().map(|s| s.interval.length()).collect();
    let errors: Vec<f64> = steps.iter().map(|s| s.fit.error).collect();
    let ratios: Vec<f64> = lambdas
        .iter()
        .zip(&errors)
        .map(|(l, e)| e / l.powf(1.0 + gamma))
        .collect();
    let tail = &ratios[ratios.len() / 2..];
    let tail_strictly_decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    Ok(GrowthDiagnostic { lambdas, errors, ratios, tail_strictly_decreasing })
}

pub const DEFAULT_GRID: usize = 401;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn abs_on_symmetric_interval() {
        let r = best_approximant(&ActivationSpec::Abs, Interval::new(-1.0, 1.0).unwrap(), 1, 201)
            .unwrap();
        assert!((r.error - 0.5).abs() < 1e-12);
        assert_eq!(r.alternation_points, vec![-1.0, 0.0, 1.0]);
        let p = r.power_coeffs_about(0.0);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[1].abs() < 1e-12);
        assert_eq!(r.sign, 1.0);
    }

    #[test]
    fn exp_linear_signs_alternate() {
        let r = best_approximant(&ActivationSpec::Exp, Interval::new(0.0, 1.0).unwrap(), 1, 201)
            .unwrap();
        let signs: Vec<f64> = r.alternation_points.iter().map(|&a| r.residual(a).signum()).collect();
        assert_eq!(signs, vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn polynomial_sigma_is_its_own_best() {
        let sigma = ActivationSpec::Polynomial { coeffs: vec![0.3, -1.0, 2.0] };
        let r = best_approximant(&sigma, Interval::new(-2.0, 3.0).unwrap(), 2, 101).unwrap();
        assert_eq!(r.error, 0.0);
        let p = r.power_coeffs_about(0.0);
        for (a, b) in p.iter().zip([0.3, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        let chk = alternation_ratio_check(&r).unwrap();
        assert_eq!(chk.ratio, 0.5);
    }

    #[test]
    fn grid_size_precondition() {
        let e = best_approximant(&ActivationSpec::Tanh, Interval::new(0.0, 1.0).unwrap(), 2, 39);
        assert!(matches!(e, Err(UapError::InvalidArgument(_))));
        assert!(Interval::new(1.0, 1.0).is_err());
    }

    #[test]
    fn abs_crossing() {
        let r = best_approximant(&ActivationSpec::Abs, Interval::new(-1.0, 1.0).unwrap(), 1, 201)
            .unwrap();
        let c = alternation_ratio_check(&r).unwrap();
        assert!((c.crossing - 0.5).abs() < 1e-12);
        assert!((c.ratio - 0.25).abs() < 1e-12);
        assert_eq!(c.threshold, 1.0 / 3.0);
    }

    #[test]
    fn symmetric_crossing_is_midpoint() {
        let r = best_approximant(&ActivationSpec::Tanh, Interval::new(-2.0, 2.0).unwrap(), 2, 401)
            .unwrap();
        let c = alternation_ratio_check(&r).unwrap();
        assert!(c.crossing.abs() < 1e-9);
        assert!((c.ratio - 0.5).abs() < 1e-9);
        assert_eq!(c.threshold, 0.25);
        assert!(c.passes);
    }

    #[test]
    fn jackson_values() {
        assert_eq!(jackson_bound(0.0).unwrap(), 0.0);
        assert!((jackson_bound(0.01).unwrap() - 0.06).abs() < 1e-15);
        // k-Lipschitz on length r: 6·k·r/(2d) = 3kr/d
        let (k, r, d) = (2.0, 3.0, 4.0);
        assert!((jackson_bound(k * r / (2.0 * d)).unwrap() - 3.0 * k * r / d).abs() < 1e-12);
        assert!(jackson_bound(-1.0).is_err());
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let t = ActivationSpec::table(vec![[0.0, 0.0], [1.0, 2.0], [2.0, 3.0]]).unwrap();
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(1.5), 2.5);
        assert_eq!(t.eval(-1.0), -2.0);
        assert_eq!(t.eval(3.0), 4.0);
        assert!(ActivationSpec::table(vec![[0.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(ActivationSpec::table(vec![[0.0, 0.0]]).is_err());
    }

    #[test]
    fn modulus_constant_and_identity() {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let grid = GridSpec::new(dom, vec![401], 1_000_000).unwrap();
        assert_eq!(estimate_modulus(&|_| 3.0, &grid, 0.1).unwrap(), 0.0);
        let w = estimate_modulus(&|x| x[0], &grid, 0.25).unwrap();
        assert!((w - 0.25).abs() <= 1.0 / 400.0);
        let coarse = GridSpec::new(BoxDomain::new(vec![0.0], vec![1.0]).unwrap(), vec![5], 100).unwrap();
        assert!(estimate_modulus(&|x| x[0], &coarse, 0.25).is_err());
    }

    #[test]
    fn shift_series_matches_direct() {
        let b = [1.0, -2.0, 0.5, 3.0];
        let s = shift_power_series(&b, 0.7);
        for t in [-1.0, 0.2, 2.0] {
            let direct: f64 = b.iter().enumerate().map(|(i, c)| c * (t + 0.7f64).powi(i as i32)).sum();
            let via: f64 = s.iter().enumerate().map(|(i, c)| c * t.powi(i as i32)).sum();
            assert!((direct - via).abs() < 1e-12);
        }
    }

    fn activations() -> impl Strategy<Value = ActivationSpec> {
        prop_oneof![
            Just(ActivationSpec::Logistic),
            Just(ActivationSpec::Tanh),
            Just(ActivationSpec::Softplus),
            Just(ActivationSpec::Gaussian),
            Just(ActivationSpec::Exp),
            Just(ActivationSpec::ReluSquared),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn equioscillation_and_sup(sigma in activations(), lo in -3.0f64..2.0, len in 0.1f64..3.0, d in 1usize..5) {
            let r = best_approximant(&sigma, Interval::new(lo, lo + len).unwrap(), d, 201).unwrap();
            prop_assert_eq!(r.alternation_points.len(), d + 2);
            if r.error > 0.0 {
                for (i, &a) in r.alternation_points.iter().enumerate() {
                    let want = if i % 2 == 0 { r.sign } else { -r.sign } * r.error;
                    prop_assert!((r.residual(a) - want).abs() <= 1e-6 * r.error + r.noise_floor);
                }
                prop_assert!(r.fine_error - r.error <= 1e-6 * r.error + r.noise_floor);
            }
        }

        #[test]
        fn nested_intervals_monotone(sigma in activations(), lo in -2.0f64..1.0, len in 0.2f64..2.0, shrink in 0.1f64..0.9) {
            let outer = Interval::new(lo, lo + len).unwrap();
            let inner = Interval::new(lo + 0.5 * (1.0 - shrink) * len, lo + 0.5 * (1.0 + shrink) * len).unwrap();
            let eo = best_approximant(&sigma, outer, 2, 201).unwrap().error;
            let ei = best_approximant(&sigma, inner, 2, 201).unwrap().error;
            prop_assert!(ei <= eo + 1e-8);
        }

        #[test]
        fn de_la_vallee_poussin(sigma in activations(), lo in -2.0f64..1.0, len in 0.2f64..2.0, perturb in proptest::collection::vec(-0.05f64..0.05, 3)) {
            // any polynomial's sup error on the interval is at least E_d
            let iv = Interval::new(lo, lo + len).unwrap();
            let r = best_approximant(&sigma, iv, 2, 201).unwrap();
            let base = r.power_coeffs_about(iv.mid());
            let q: Vec<f64> = base.iter().zip(&perturb).map(|(a, b)| a + b).collect();
            let sup = (0..=2000).map(|i| {
                let y = iv.lo + iv.length() * i as f64 / 2000.0;
                let t = y - iv.mid();
                (sigma.eval(y) - (q[0] + q[1] * t + q[2] * t * t)).abs()
            }).fold(0.0f64, f64::max);
            prop_assert!(sup >= r.error * (1.0 - 1e-9) - r.noise_floor);
        }

        #[test]
        fn jackson_consistency(sigma in activations(), lo in -3.0f64..2.0, len in 0.2f64..3.0, d in 1usize..5) {
            let iv = Interval::new(lo, lo + len).unwrap();
            let r = best_approximant(&sigma, iv, d, 201).unwrap();
            let delta = len / (2.0 * d as f64);
            let dom = BoxDomain::new(vec![iv.lo], vec![iv.hi]).unwrap();
            let res = (4.0 * len / delta).ceil() as usize * 8 + 1;
            let grid = GridSpec::new(dom, vec![res], 1_000_000).unwrap();
            let s2 = sigma.clone();
            let w = estimate_modulus(&move |x: &[f64]| s2.eval(x[0]), &grid, delta).unwrap();
            prop_assert!(r.error <= jackson_bound(w).unwrap() * 1.05);
        }

        #[test]
        fn modulus_monotone_in_delta(a in 0.01f64..0.2, b in 0.01f64..0.2) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
            let res = (4.0 / lo).ceil() as usize + 2;
            let grid = GridSpec::new(dom, vec![res, res], 1_000_000).unwrap();
            let f = |x: &[f64]| (3.0 * x[0]).sin() * x[1];
            prop_assert!(estimate_modulus(&f, &grid, lo).unwrap() <= estimate_modulus(&f, &grid, hi).unwrap());
        }
    }
}
