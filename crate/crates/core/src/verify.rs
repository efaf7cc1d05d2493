//! Grid-based uniform-error certification and empirical trial studies.
//!
//! "Certified" here means the sup of |f − g| over a tensor grid plus a
//! Lipschitz slack term covering the gaps between nodes. The Lipschitz
//! constant is itself estimated from finite differences, so the result is a
//! careful numerical estimate and never a proof.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{build_vandermonde, is_nonsingular, DEFAULT_NONSINGULAR_TOL};
use crate::constructor::{construct_random_features, ConstructionRequest, FrozenFirstLayer};
use crate::error::{Result, UapError};
use crate::monomials::{binomial, enumerate_basis};

pub const DEFAULT_GRID_CAP: usize = 10_000_000;
pub const GRID_FLOOR: usize = 33;
pub const LIPSCHITZ_SAFETY: f64 = 2.0;
pub const MIN_STUDY_SEEDS: usize = 30;

/// Axis-aligned box `∏ [loᵢ, hiᵢ]`; zero-width axes describe lower-dimensional
/// sets such as a single point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(UapError::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.is_empty() {
            return Err(UapError::InvalidArgument("domain needs ≥ 1 axis".into()));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(UapError::InvalidArgument(format!("axis {i}: need lo ≤ hi, got [{a}, {b}]")));
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Euclidean diameter D.
    pub fn diameter(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// r_X(x₀) = max over x ∈ X of ‖x − x₀‖₂.
    pub fn radius_from(&self, x0: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| (x0[i] - self.lo[i]).abs().max((self.hi[i] - x0[i]).abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }
}

/// Uniform tensor grid over a box; axis 0 varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    domain: BoxDomain,
    resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(domain: BoxDomain, resolution: Vec<usize>, cap: usize) -> Result<Self> {
        if resolution.len() != domain.dim() {
            return Err(UapError::DimensionMismatch { expected: domain.dim(), got: resolution.len() });
        }
        let mut res = resolution;
        for (i, r) in res.iter_mut().enumerate() {
            if domain.width(i) == 0.0 {
                *r = 1;
            } else if *r < 2 {
                return Err(UapError::InvalidArgument(format!("axis {i}: resolution must be ≥ 2")));
            }
        }
        let total = res.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r)).unwrap_or(usize::MAX);
        if total > cap {
            return Err(UapError::GridTooLarge { points: total, cap });
        }
        Ok(GridSpec { domain, resolution: res })
    }

    pub fn uniform(domain: BoxDomain, per_axis: usize, cap: usize) -> Result<Self> {
        let n = domain.dim();
        Self::new(domain, vec![per_axis; n], cap)
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn total(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let r = self.resolution[axis];
        if r <= 1 {
            0.0
        } else {
            self.domain.width(axis) / (r - 1) as f64
        }
    }

    /// Coordinate k on an axis. Doubling-minus-one refinement reproduces every
    /// coarse node bit-for-bit.
    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        let r = self.resolution[axis];
        if r <= 1 {
            return self.domain.lo[axis];
        }
        let (lo, hi) = (self.domain.lo[axis], self.domain.hi[axis]);
        lo + (hi - lo) * (k as f64) / ((r - 1) as f64)
    }

    pub fn unravel(&self, mut lin: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|&r| {
                let k = lin % r;
                lin /= r;
                k
            })
            .collect()
    }

    pub fn point(&self, lin: usize) -> Vec<f64> {
        self.unravel(lin).iter().enumerate().map(|(ax, &k)| self.coord(ax, k)).collect()
    }

    /// Resolution `2r − 1` on every axis, containing all current nodes.
    pub fn refined(&self, cap: usize) -> Result<Self> {
        let res = self.resolution.iter().map(|&r| if r <= 1 { 1 } else { 2 * r - 1 }).collect();
        Self::new(self.domain.clone(), res, cap)
    }

    pub fn evaluate(&self, f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync)) -> Result<Vec<Vec<f64>>> {
        if self.total() == 0 {
            return Err(UapError::EmptyGrid);
        }
        let values: Vec<Vec<f64>> = (0..self.total()).into_par_iter().map(|lin| f(&self.point(lin))).collect();
        if let Some(lin) = values.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(UapError::Evaluation { point: self.point(lin), message: "non-finite value".into() });
        }
        Ok(values)
    }

    pub fn evaluate_scalar(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<Vec<f64>> {
        if self.total() == 0 {
            return Err(UapError::EmptyGrid);
        }
        let values: Vec<f64> = (0..self.total()).into_par_iter().map(|lin| f(&self.point(lin))).collect();
        if let Some(lin) = values.iter().position(|v| !v.is_finite()) {
            return Err(UapError::Evaluation { point: self.point(lin), message: "non-finite value".into() });
        }
        Ok(values)
    }
}

pub type VectorFn<'a> = dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a;

enum Acc {
    Ok(Vec<f64>),
    Err(usize, UapError),
}

fn combine(a: Acc, b: Acc) -> Acc {
    match (a, b) {
        (Acc::Err(i, e), Acc::Err(j, f)) => {
            if i <= j {
                Acc::Err(i, e)
            } else {
                Acc::Err(j, f)
            }
        }
        (e @ Acc::Err(..), _) | (_, e @ Acc::Err(..)) => e,
        (Acc::Ok(x), Acc::Ok(y)) => {
            if x.is_empty() {
                return Acc::Ok(y);
            }
            if y.is_empty() {
                return Acc::Ok(x);
            }
            Acc::Ok(x.iter().zip(&y).map(|(a, b)| a.max(*b)).collect())
        }
    }
}

/// Per-output max over the grid of |fₜ − gₜ|.
pub fn sup_error_per_output(f: &VectorFn, g: &VectorFn, grid: &GridSpec) -> Result<Vec<f64>> {
    if grid.total() == 0 {
        return Err(UapError::EmptyGrid);
    }
    let acc = (0..grid.total())
        .into_par_iter()
        .map(|lin| {
            let x = grid.point(lin);
            let (a, b) = (f(&x), g(&x));
            if a.len() != b.len() {
                return Acc::Err(lin, UapError::DimensionMismatch { expected: a.len(), got: b.len() });
            }
            let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).collect();
            if diff.iter().any(|v| !v.is_finite()) {
                return Acc::Err(lin, UapError::Evaluation { point: x, message: "non-finite value".into() });
            }
            Acc::Ok(diff)
        })
        .reduce(|| Acc::Ok(Vec::new()), combine);
    match acc {
        Acc::Ok(v) => Ok(v),
        Acc::Err(_, e) => Err(e),
    }
}

/// Max over grid points and output coordinates of |f − g|.
pub fn sup_error(f: &VectorFn, g: &VectorFn, grid: &GridSpec) -> Result<f64> {
    Ok(sup_error_per_output(f, g, grid)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyOptions {
    /// Lower bound on per-axis resolution.
    pub min_resolution: usize,
    pub cap: usize,
    /// Stop after the coarse pass when it already shows an error ≥ ε.
    #[serde(default)]
    pub early_exit: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { min_resolution: GRID_FLOOR, cap: DEFAULT_GRID_CAP, early_exit: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub grid_error: Vec<f64>,
    pub slack: Vec<f64>,
    /// grid_error + slack per output.
    pub certified: Vec<f64>,
    /// Per-axis Lipschitz estimate of the error, per output (safety factor included).
    pub lipschitz: Vec<Vec<f64>>,
    pub resolution: Vec<usize>,
    pub points: usize,
}

impl Certificate {
    pub fn max_certified(&self) -> f64 {
        self.certified.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_grid_error(&self) -> f64 {
        self.grid_error.iter().cloned().fold(0.0, f64::max)
    }
}

/// Grid sup of |f − g| plus a Lipschitz slack, on a grid fine enough that the
/// slack is at most ε/6 whenever the point cap allows.
pub fn certify(f: &VectorFn, g: &VectorFn, domain: &BoxDomain, eps: f64, opts: CertifyOptions) -> Result<Certificate> {
    if !(eps > 0.0) {
        return Err(UapError::InvalidArgument("eps must be > 0".into()));
    }
    let n = domain.dim();
    let coarse_res: Vec<usize> = (0..n).map(|i| if domain.width(i) == 0.0 { 1 } else { GRID_FLOOR }).collect();
    let coarse = GridSpec::new(domain.clone(), coarse_res, usize::MAX)?;
    let err_fn = |x: &[f64]| -> Vec<f64> { f(x).iter().zip(g(x)).map(|(a, b)| a - b).collect() };
    let vals = coarse.evaluate(&err_fn)?;
    let m = vals[0].len();
    let lipschitz: Vec<Vec<f64>> = (0..m)
        .map(|t| {
            (0..n)
                .map(|ax| {
                    let h = coarse.spacing(ax);
                    if h == 0.0 {
                        return 0.0;
                    }
                    let stride: usize = coarse.resolution()[..ax].iter().product();
                    let mut best = 0.0f64;
                    for lin in 0..coarse.total() {
                        if coarse.unravel(lin)[ax] + 1 < coarse.resolution()[ax] {
                            best = best.max((vals[lin + stride][t] - vals[lin][t]).abs() / h);
                        }
                    }
                    LIPSCHITZ_SAFETY * best
                })
                .collect()
        })
        .collect();

    if opts.early_exit {
        let coarse_err: Vec<f64> =
            (0..m).map(|t| vals.iter().map(|v| v[t].abs()).fold(0.0, f64::max)).collect();
        if coarse_err.iter().any(|&e| e >= eps) {
            let slack: Vec<f64> = lipschitz
                .iter()
                .map(|l| (0..n).map(|ax| 0.5 * l[ax] * coarse.spacing(ax)).sum())
                .collect();
            let certified = coarse_err.iter().zip(&slack).map(|(e, s)| e + s).collect();
            return Ok(Certificate {
                grid_error: coarse_err,
                slack,
                certified,
                lipschitz,
                resolution: coarse.resolution().to_vec(),
                points: coarse.total(),
            });
        }
    }
    let lmax: Vec<f64> = (0..n).map(|ax| lipschitz.iter().map(|l| l[ax]).fold(0.0, f64::max)).collect();
    let active = (0..n).filter(|&i| domain.width(i) > 0.0).count().max(1) as f64;
    let mut res: Vec<usize> = (0..n)
        .map(|ax| {
            let w = domain.width(ax);
            if w == 0.0 {
                return 1;
            }
            // L·h/2 ≤ ε/(6·axes)
            let want = if lmax[ax] > 0.0 {
                let h = eps / (3.0 * active * lmax[ax]);
                ((w / h).ceil() as usize).saturating_add(1)
            } else {
                0
            };
            want.max(opts.min_resolution).max(GRID_FLOOR)
        })
        .collect();
    let total = |r: &[usize]| r.iter().fold(1f64, |a, &b| a * b as f64);
    if total(&res) > opts.cap as f64 {
        let shrink = (opts.cap as f64 / total(&res)).powf(1.0 / active);
        for (ax, r) in res.iter_mut().enumerate() {
            if domain.width(ax) > 0.0 {
                *r = ((*r as f64 * shrink).floor() as usize).max(2);
            }
        }
    }
    let grid = GridSpec::new(domain.clone(), res, opts.cap)?;
    let grid_error = sup_error_per_output(f, g, &grid)?;
    let slack: Vec<f64> = lipschitz
        .iter()
        .map(|l| (0..n).map(|ax| 0.5 * l[ax] * grid.spacing(ax)).sum())
        .collect();
    let certified = grid_error.iter().zip(&slack).map(|(e, s)| e + s).collect();
    Ok(Certificate {
        grid_error,
        slack,
        certified,
        lipschitz,
        resolution: grid.resolution().to_vec(),
        points: grid.total(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub singular: bool,
    /// Certified error for construction trials, σ_min/σ_max for density draws.
    pub metric: f64,
    pub hidden_units: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub successes: usize,
    pub singular_draws: usize,
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub rows: Vec<TrialRow>,
}

impl TrialSummary {
    pub fn from_rows(rows: Vec<TrialRow>) -> Self {
        TrialSummary {
            trials: rows.len(),
            successes: rows.iter().filter(|r| r.success).count(),
            singular_draws: rows.iter().filter(|r| r.singular).count(),
            seeds: rows.iter().map(|r| r.seed).collect(),
            errors: rows.iter().map(|r| r.metric).collect(),
            rows,
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    /// Concatenates two summaries, renumbering the second one's trials.
    pub fn merge(mut self, other: TrialSummary) -> TrialSummary {
        let offset = self.rows.len();
        self.rows.extend(other.rows.into_iter().map(|mut r| {
            r.trial += offset;
            r
        }));
        TrialSummary::from_rows(self.rows)
    }

    /// Columns: trial, seed, success, singular, metric, hidden_units, detail.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let ser = |e: csv::Error| UapError::Serialization(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["trial", "seed", "success", "singular", "metric", "hidden_units", "detail"])
            .map_err(ser)?;
        for r in &self.rows {
            wr.write_record([
                r.trial.to_string(),
                r.seed.to_string(),
                r.success.to_string(),
                r.singular.to_string(),
                format!("{:e}", r.metric),
                r.hidden_units.to_string(),
                r.detail.clone(),
            ])
            .map_err(ser)?;
        }
        wr.flush().map_err(|e| UapError::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum DrawLaw {
    /// Independent standard normal entries.
    Gaussian,
    /// Entries uniform on (−bound, bound).
    Bounded { bound: f64 },
    /// Gaussian with the last point copied from the first.
    Duplicate,
}

/// Nonsingularity of the non-bias Vandermonde over standard normal draws.
pub fn density_trial(n: usize, d: usize, draws: usize, seed: u64) -> Result<TrialSummary> {
    density_trial_with(n, d, draws, seed, DrawLaw::Gaussian, DEFAULT_NONSINGULAR_TOL)
}

/// Draw i uses ChaCha8 stream i of `seed`. Points are rescaled to unit
/// maximum norm before the test, which leaves singularity unchanged.
pub fn density_trial_with(n: usize, d: usize, draws: usize, seed: u64, law: DrawLaw, tol: f64) -> Result<TrialSummary> {
    if draws == 0 {
        return Err(UapError::InvalidArgument("draws must be ≥ 1".into()));
    }
    if let DrawLaw::Bounded { bound } = law {
        if !(bound > 0.0) {
            return Err(UapError::InvalidArgument("bound must be > 0".into()));
        }
    }
    let basis = std::sync::Arc::new(enumerate_basis(n, d)?);
    let size = binomial(n + d, d);
    let rows: Vec<TrialRow> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut pts: Vec<Vec<f64>> = (0..size)
                .map(|_| {
                    (0..n)
                        .map(|_| match law {
                            DrawLaw::Bounded { bound } => Uniform::new(-bound, bound).expect("bound > 0").sample(&mut rng),
                            _ => StandardNormal.sample(&mut rng),
                        })
                        .collect()
                })
                .collect();
            if law == DrawLaw::Duplicate {
                pts[size - 1] = pts[0].clone();
            }
            let scale = pts
                .iter()
                .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let unit: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| v / scale).collect()).collect();
            let chk = build_vandermonde(&unit, &basis).map(|q| is_nonsingular(&q, tol));
            let (ok, ratio) = match chk {
                Ok(c) => (c.nonsingular, if c.sigma_max > 0.0 { c.sigma_min / c.sigma_max } else { 0.0 }),
                Err(_) => (false, 0.0),
            };
            TrialRow {
                trial: i,
                seed,
                success: ok,
                singular: !ok,
                metric: ratio,
                hidden_units: size,
                detail: format!("stream {i}"),
            }
        })
        .collect();
    Ok(TrialSummary::from_rows(rows))
}

/// Runs the frozen-first-layer construction once per seed.
///
/// Failures are recorded as rows; singular draws are counted separately.
pub fn random_feature_study(template: &ConstructionRequest, seeds: &[u64]) -> Result<TrialSummary> {
    if seeds.len() < MIN_STUDY_SEEDS {
        return Err(UapError::InvalidArgument(format!(
            "random feature study needs ≥ {MIN_STUDY_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    let frozen = template
        .frozen
        .clone()
        .ok_or_else(|| UapError::InvalidArgument("template lacks a frozen first layer".into()))?;
    let rows: Vec<TrialRow> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut req = template.clone();
            req.frozen = Some(FrozenFirstLayer { seed, ..frozen.clone() });
            match construct_random_features(&req) {
                Ok(rep) => TrialRow {
                    trial: i,
                    seed,
                    success: rep.status.is_success(),
                    singular: false,
                    metric: rep.max_certified_error(),
                    hidden_units: rep.hidden_units,
                    detail: rep.diagnostics.route.clone().unwrap_or_default(),
                },
                Err(UapError::SingularDraw { margin }) => TrialRow {
                    trial: i,
                    seed,
                    success: false,
                    singular: true,
                    metric: f64::NAN,
                    hidden_units: 0,
                    detail: format!("singular draw (margin {margin:e})"),
                },
                Err(e) => TrialRow {
                    trial: i,
                    seed,
                    success: false,
                    singular: false,
                    metric: f64::NAN,
                    hidden_units: 0,
                    detail: e.to_string(),
                },
            }
        })
        .collect();
    Ok(TrialSummary::from_rows(rows))
}
