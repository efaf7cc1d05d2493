//! Synthesis pipelines for one-hidden-layer networks.
//!
//! Three entry points share one core: [`construct_polynomial`] realizes a
//! polynomial target exactly with `C(n+d, d)` units up to the activation's
//! minimax error, [`construct_continuous`] goes through a least-squares
//! polynomial surrogate, and [`construct_random_features`] keeps a sampled
//! first layer frozen and solves only for biases and output weights.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    build_vandermonde, is_nonsingular, least_squares, log_det, schur_seed_points, solve_coefficients, NonsingularityCheck,
    DEFAULT_NONSINGULAR_TOL, SOFT_CONDITION_LIMIT,
};
use crate::error::{Result, UapError};
use crate::minimax::{
    alternation_ratio_check, best_approximant, central_crossing, chebyshev_to_monomial, lobatto, modulus_search,
    ActivationSpec, AlternationCheck, Interval, MinimaxResult, ModulusSearch, DEFAULT_DEGREE_CAP, DEFAULT_GRID,
};
use crate::monomials::{binomial, enumerate_basis, recenter, ridge_coefficients, MonomialBasis, MultiIndex, MultiPoly};
use crate::network::NetworkWeights;
use crate::verify::{certify, BoxDomain, Certificate, CertifyOptions, GridSpec};

pub const MAX_SCALE_INDEX: usize = 40;
pub const REDRAW_CAP: usize = 16;
pub const PROBE_TOL: f64 = 1e-8;
pub const ZERO_SUM_TOL: f64 = 1e-8;
pub const ANCHOR_STEP: f64 = 0.25;
pub const ANCHOR_PROBE_HALF_WIDTH: f64 = 0.25;
pub const JITTER_SCALE: f64 = 1e-9;
pub const SURROGATE_DEGREE_CAP: usize = 16;
pub const RANDOM_FEATURE_ESCALATION: usize = 3;
const LEAST_SQUARES_POINTS: usize = 200_000;

pub type TargetFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Either explicit polynomials (one per output) or a black-box function.
#[derive(Clone)]
pub enum Target {
    Polynomial(Vec<MultiPoly>),
    Function { f: TargetFn, m: usize },
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Polynomial(ps) => f.debug_tuple("Polynomial").field(ps).finish(),
            Target::Function { m, .. } => f.debug_struct("Function").field("m", m).finish_non_exhaustive(),
        }
    }
}

impl Target {
    pub fn function(m: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Target::Function { f: Arc::new(f), m }
    }

    pub fn m(&self) -> usize {
        match self {
            Target::Polynomial(ps) => ps.len(),
            Target::Function { m, .. } => *m,
        }
    }

    pub fn as_fn(&self) -> TargetFn {
        match self {
            Target::Polynomial(ps) => poly_fn(ps.clone()),
            Target::Function { f, .. } => f.clone(),
        }
    }
}

fn poly_fn(ps: Vec<MultiPoly>) -> TargetFn {
    Arc::new(move |x: &[f64]| ps.iter().map(|p| p.eval(x).unwrap_or(f64::NAN)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Centering {
    /// Center Y_k on the last crossing that passed the ratio test.
    PreviousCrossing {
        #[serde(default)]
        initial: f64,
    },
    Fixed { center: f64 },
    /// Fixed center picked by [`select_anchor`] inside the window.
    Auto {
        #[serde(default = "default_window")]
        window: [f64; 2],
    },
}

fn default_window() -> [f64; 2] {
    [-3.0, 3.0]
}

/// Interval lengths λ_k = λ₀·growthᵏ and the centering rule for Y_k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSchedule {
    pub lambda0: f64,
    pub growth: f64,
    pub centering: Centering,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        ScaleSchedule { lambda0: 1.0, growth: 2.0, centering: Centering::PreviousCrossing { initial: 0.0 } }
    }
}

impl ScaleSchedule {
    pub fn expanding() -> Self {
        Self::default()
    }

    /// Halving intervals around an automatically chosen anchor.
    pub fn contracting() -> Self {
        ScaleSchedule { lambda0: 1.0, growth: 0.5, centering: Centering::Auto { window: default_window() } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(UapError::InvalidArgument(format!("lambda0 must be > 0, got {}", self.lambda0)));
        }
        if !(self.growth > 0.0 && self.growth.is_finite()) || self.growth == 1.0 {
            return Err(UapError::InvalidArgument(format!("growth must be > 0 and ≠ 1, got {}", self.growth)));
        }
        match self.centering {
            Centering::Auto { window: [lo, hi] } if !(lo < hi) => {
                Err(UapError::InvalidArgument(format!("anchor window [{lo}, {hi}] is empty")))
            }
            Centering::Fixed { center } | Centering::PreviousCrossing { initial: center } if !center.is_finite() => {
                Err(UapError::InvalidArgument("schedule center must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.lambda0 * self.growth.powi(k as i32)
    }

    pub fn is_expanding(&self) -> bool {
        self.growth > 1.0
    }

    /// Replaces an `Auto` rule by the fixed anchor it selects.
    pub fn resolve(&self, sigma: &ActivationSpec, d: usize) -> Result<(ScaleSchedule, Option<AnchorChoice>)> {
        self.validate()?;
        match self.centering {
            Centering::Auto { window } => {
                let choice = select_anchor(sigma, d, window)?;
                Ok((ScaleSchedule { centering: Centering::Fixed { center: choice.anchor }, ..*self }, Some(choice)))
            }
            _ => Ok((*self, None)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorChoice {
    pub anchor: f64,
    /// min over i ≤ d of |cᵢ| for the local power series about the anchor.
    pub score: f64,
    pub coeffs: Vec<f64>,
}

/// Scans the window in steps of 0.25 and keeps the point whose local degree-d
/// approximant has the largest smallest coefficient. Near-ties go to the
/// smallest |y|.
pub fn select_anchor(sigma: &ActivationSpec, d: usize, window: [f64; 2]) -> Result<AnchorChoice> {
    let [lo, hi] = window;
    if !(lo <= hi) {
        return Err(UapError::InvalidArgument(format!("anchor window [{lo}, {hi}] is empty")));
    }
    let steps = ((hi - lo) / ANCHOR_STEP).floor() as usize;
    let grid = DEFAULT_GRID.max(10 * (d + 2) + 1);
    let choices: Vec<Option<AnchorChoice>> = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let y = lo + ANCHOR_STEP * i as f64;
            let iv = Interval::centered(y, 2.0 * ANCHOR_PROBE_HALF_WIDTH).ok()?;
            let fit = best_approximant(sigma, iv, d, grid).ok()?;
            let coeffs = fit.power_coeffs_about(y);
            let score = coeffs.iter().fold(f64::INFINITY, |a, c| a.min(c.abs()));
            score.is_finite().then_some(AnchorChoice { anchor: y, score, coeffs })
        })
        .collect();
    let best = choices.iter().flatten().map(|c| c.score).fold(0.0, f64::max);
    if !(best > 0.0) {
        return Err(UapError::InvalidArgument(format!(
            "no anchor in [{lo}, {hi}] gives a degree-{d} local approximant with all coefficients non-zero"
        )));
    }
    choices
        .into_iter()
        .flatten()
        .filter(|c| c.score >= best * (1.0 - 1e-6))
        .min_by(|a, b| a.anchor.abs().total_cmp(&b.anchor.abs()).then(a.anchor.total_cmp(&b.anchor)))
        .ok_or(UapError::EmptyGrid)
}

#[derive(Debug, Clone)]
pub struct ScaleStep {
    pub k: usize,
    pub lambda: f64,
    pub interval: Interval,
    pub fit: MinimaxResult,
    /// Crossing between the second and third alternation points.
    pub check: Option<AlternationCheck>,
    /// Most central crossing over all alternation pairs.
    pub crossing: Option<AlternationCheck>,
}

/// Fits σ on each Y_k of the schedule. Scales before `scales.start` are still
/// walked so crossing-centered schedules follow the same path.
pub fn walk_schedule(
    sigma: &ActivationSpec,
    schedule: &ScaleSchedule,
    d: usize,
    scales: Range<usize>,
    grid: usize,
) -> Result<Vec<ScaleStep>> {
    let (schedule, _) = schedule.resolve(sigma, d)?;
    let mut prev = match schedule.centering {
        Centering::PreviousCrossing { initial } => initial,
        Centering::Fixed { center } => center,
        Centering::Auto { .. } => unreachable!("resolved above"),
    };
    let mut out = Vec::new();
    for k in 0..scales.end {
        let lambda = schedule.lambda(k);
        let interval = Interval::centered(prev, lambda)?;
        let fit = best_approximant(sigma, interval, d, grid)?;
        let check = alternation_ratio_check(&fit).ok();
        let crossing = central_crossing(&fit).ok();
        if let Centering::PreviousCrossing { .. } = schedule.centering {
            if let Some(c) = check.filter(|c| c.passes).or(crossing.filter(|c| c.passes)) {
                prev = c.crossing;
            }
        }
        if k >= scales.start {
            out.push(ScaleStep { k, lambda, interval, fit, check, crossing });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    /// Require every non-bias output weight below this bound in magnitude.
    #[serde(default)]
    pub small_output_weights: Option<f64>,
    /// Require every first-layer direction norm above this bound.
    #[serde(default)]
    pub large_input_norms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenFirstLayer {
    pub lambda: f64,
    pub seed: u64,
    /// Explicit directions used instead of sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructionOptions {
    /// `None` selects [`ScaleSchedule::contracting`].
    pub schedule: Option<ScaleSchedule>,
    pub max_k: usize,
    pub redraw_cap: usize,
    pub seed: u64,
    pub minimax_grid: usize,
    pub nonsingular_tol: f64,
    pub condition_limit: f64,
    pub certify: CertifyOptions,
    /// Working degree for polynomial targets; defaults to max(2, target degree).
    pub degree: Option<usize>,
    pub degree_cap: usize,
    pub surrogate_cap: usize,
    pub degree_escalation: usize,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        ConstructionOptions {
            schedule: None,
            max_k: MAX_SCALE_INDEX,
            redraw_cap: REDRAW_CAP,
            seed: 0,
            minimax_grid: DEFAULT_GRID,
            nonsingular_tol: DEFAULT_NONSINGULAR_TOL,
            condition_limit: SOFT_CONDITION_LIMIT,
            certify: CertifyOptions::default(),
            degree: None,
            degree_cap: DEFAULT_DEGREE_CAP,
            surrogate_cap: SURROGATE_DEGREE_CAP,
            degree_escalation: RANDOM_FEATURE_ESCALATION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstructionRequest {
    pub target: Target,
    pub domain: BoxDomain,
    /// x₀; defaults to the box center.
    pub anchor: Option<Vec<f64>>,
    pub sigma: ActivationSpec,
    pub eps: f64,
    pub constraints: Constraints,
    pub frozen: Option<FrozenFirstLayer>,
    pub options: ConstructionOptions,
}

impl ConstructionRequest {
    pub fn new(target: Target, domain: BoxDomain, sigma: ActivationSpec, eps: f64) -> Self {
        ConstructionRequest {
            target,
            domain,
            anchor: None,
            sigma,
            eps,
            constraints: Constraints::default(),
            frozen: None,
            options: ConstructionOptions::default(),
        }
    }

    pub fn x0(&self) -> Vec<f64> {
        self.anchor.clone().unwrap_or_else(|| self.domain.center())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(UapError::InvalidArgument(format!("eps must be > 0, got {}", self.eps)));
        }
        self.sigma.validate()?;
        let n = self.domain.dim();
        if let Some(a) = &self.anchor {
            if a.len() != n {
                return Err(UapError::DimensionMismatch { expected: n, got: a.len() });
            }
            if !self.domain.contains(a) {
                return Err(UapError::InvalidArgument("anchor x0 must lie in the domain".into()));
            }
        }
        match &self.target {
            Target::Polynomial(ps) => {
                if ps.is_empty() {
                    return Err(UapError::InvalidArgument("target needs ≥ 1 output".into()));
                }
                if let Some(p) = ps.iter().find(|p| p.n() != n) {
                    return Err(UapError::DimensionMismatch { expected: n, got: p.n() });
                }
            }
            Target::Function { m, .. } => {
                if *m == 0 {
                    return Err(UapError::InvalidArgument("target needs ≥ 1 output".into()));
                }
            }
        }
        for (name, v) in [
            ("small_output_weights", self.constraints.small_output_weights),
            ("large_input_norms", self.constraints.large_input_norms),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(UapError::InvalidArgument(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        if let Some(fr) = &self.frozen {
            if !(fr.lambda > 0.0 && fr.lambda.is_finite()) {
                return Err(UapError::InvalidArgument(format!("frozen lambda must be > 0, got {}", fr.lambda)));
            }
            if self.constraints.small_output_weights.is_some() || self.constraints.large_input_norms.is_some() {
                return Err(UapError::InvalidArgument(
                    "a frozen first layer cannot be combined with weight constraints".into(),
                ));
            }
        }
        if let Some(s) = &self.options.schedule {
            s.validate()?;
        }
        if let Some(d) = self.options.degree {
            if d < 2 {
                return Err(UapError::InvalidArgument(format!("degree must be ≥ 2, got {d}")));
            }
        }
        if !(self.options.nonsingular_tol > 0.0) {
            return Err(UapError::InvalidArgument("nonsingular_tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    ScaleCapReached,
}

impl Status {
    pub fn is_success(&self) -> bool {
        *self == Status::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Polynomial,
    Continuous,
    RandomFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionSource {
    SchurSeed,
    Redraw { attempt: usize },
    Frozen { seed: u64 },
    Injected,
}

/// One row per attempted scale (or per anchor/route for frozen layers).
#[derive(Debug, Clone, Serialize)]
pub struct ScaleRecord {
    pub k: usize,
    pub lambda: f64,
    pub lo: f64,
    pub hi: f64,
    pub crossing: f64,
    pub ratio: f64,
    pub minimax_error: f64,
    pub lambda_prime: f64,
    pub source: Option<DirectionSource>,
    pub condition: f64,
    pub coefficient_norm: f64,
    pub max_output_weight: f64,
    pub min_input_norm: f64,
    pub certified: f64,
    pub outcome: String,
}

impl ScaleRecord {
    fn new(k: usize, lambda: f64) -> Self {
        ScaleRecord {
            k,
            lambda,
            lo: f64::NAN,
            hi: f64::NAN,
            crossing: f64::NAN,
            ratio: f64::NAN,
            minimax_error: f64::NAN,
            lambda_prime: f64::NAN,
            source: None,
            condition: f64::NAN,
            coefficient_norm: f64::NAN,
            max_output_weight: f64::NAN,
            min_input_norm: f64::NAN,
            certified: f64::NAN,
            outcome: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintAudit {
    pub min_input_norm: f64,
    pub max_output_weight: f64,
    pub small_output_weights: Option<f64>,
    pub large_input_norms: Option<f64>,
    pub satisfied: bool,
}

/// Measured error against Σⱼ|aⱼ|·‖σ − σ_k‖ + surrogate error + rounding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub output: usize,
    pub grid_error: f64,
    pub certified: f64,
    pub unit_error: f64,
    pub surrogate_error: f64,
    pub rounding: f64,
    pub bound: f64,
    /// grid_error ≤ bound.
    pub holds: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub anchor: Option<AnchorChoice>,
    pub alternation_ratio: Option<f64>,
    /// Ratio at the crossing between the second and third alternation points.
    pub first_pair_ratio: Option<f64>,
    pub minimax_error: Option<f64>,
    pub barycentric_spread: Option<f64>,
    /// max over outputs of |Σⱼ aⱼ| / Σⱼ |aⱼ|.
    pub zero_sum_residual: Option<f64>,
    pub jittered: Vec<usize>,
    pub d_epsilon: Option<usize>,
    pub surrogate_degree: Option<usize>,
    pub surrogate_error: Option<f64>,
    pub modulus: Option<ModulusSearch>,
    pub route: Option<String>,
    pub notes: Vec<String>,
}

/// Everything needed to revisit the polynomial construction at other scales.
#[derive(Debug, Clone)]
pub struct PolyContext {
    pub sigma: ActivationSpec,
    pub schedule: ScaleSchedule,
    pub degree: usize,
    pub basis: Arc<MonomialBasis>,
    pub x0: Vec<f64>,
    pub radius: f64,
    pub nu_hat: Vec<Vec<f64>>,
    /// Accepted directions divided by λ′.
    pub unit_dirs: Vec<Vec<f64>>,
    pub grid: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstructionReport {
    pub status: Status,
    pub pipeline: Pipeline,
    #[serde(skip)]
    pub weights: NetworkWeights,
    pub sigma: ActivationSpec,
    pub n: usize,
    pub m: usize,
    pub degree: usize,
    pub hidden_units: usize,
    /// Units with non-zero output weights or needed for the span.
    pub active_units: usize,
    pub certified_error: Vec<f64>,
    pub certificate: Certificate,
    pub scale_index_used: Option<usize>,
    pub lambda: Option<f64>,
    pub interval: Option<Interval>,
    pub crossing: Option<f64>,
    pub lambda_prime: Option<f64>,
    pub vandermonde_condition: f64,
    pub vandermonde_margin: f64,
    pub solve_condition: f64,
    pub coefficient_norm: Vec<f64>,
    pub coefficient_sum: Vec<f64>,
    pub constraint_audit: ConstraintAudit,
    pub error_decomposition: Vec<ErrorDecomposition>,
    pub diagnostics: Diagnostics,
    pub history: Vec<ScaleRecord>,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub radius: f64,
    #[serde(skip)]
    pub context: Option<PolyContext>,
}

impl ConstructionReport {
    pub fn max_certified_error(&self) -> f64 {
        self.certified_error.iter().cloned().fold(0.0, f64::max)
    }

    pub fn directions(&self) -> Vec<Vec<f64>> {
        (0..self.weights.hidden()).map(|j| self.weights.direction(j)).collect()
    }
}

/// Fails when σ restricted to its probe interval is within 1e−8·scale of a
/// polynomial of degree d − 1.
pub fn non_polynomial_probe(sigma: &ActivationSpec, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(UapError::InvalidArgument(format!("degree must be ≥ 2, got {d}")));
    }
    let iv = sigma.domain_hint().unwrap_or(Interval { lo: -4.0, hi: 4.0 });
    let fit = best_approximant(sigma, iv, d - 1, 801.max(10 * (d + 1) + 1))?;
    let scale = (0..=800)
        .map(|i| sigma.eval(iv.lo + iv.length() * i as f64 / 800.0).abs())
        .fold(0.0, f64::max);
    let err = fit.error.max(fit.fine_error);
    if err <= PROBE_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(UapError::PolynomialActivation { degree: d - 1, error: err, lo: iv.lo, hi: iv.hi });
    }
    Ok(err)
}

/// Deterministic direction set with norms in (0.5·radius, radius].
///
/// For n ≥ 2 the points come from [`schur_seed_points`] with bases spread
/// over [0.5, 1.5], then each is rescaled to its own radius.
pub fn schur_directions(n: usize, d: usize, radius: f64) -> Result<Vec<Vec<f64>>> {
    let size = binomial(n + d, d);
    let frac = |j: usize| (j + 1) as f64 / size as f64;
    if n == 1 {
        return Ok((0..size).map(|j| vec![radius * (1.0 + frac(j)) / 2.0]).collect());
    }
    let base: Vec<f64> = (0..size).map(|j| 0.5 + j as f64 / (size - 1) as f64).collect();
    let pts = schur_seed_points(n, d, &base)?;
    Ok(pts
        .into_iter()
        .enumerate()
        .map(|(j, p)| {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = radius * (0.5 + 0.5 * frac(j));
            p.iter().map(|v| v / norm * r).collect()
        })
        .collect())
}

fn unit_gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.iter().map(|v| v / norm).collect();
        }
    }
}

fn annulus_draw(n: usize, count: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let u = unit_gaussian(n, rng);
            let r = radius * (0.5 + 0.5 * (1.0 - rng.random::<f64>()));
            u.iter().map(|v| v * r).collect()
        })
        .collect()
}

/// Directions uniform on the sphere with radius uniform on (λ, 2λ].
///
/// Draws are sequential, so the first k directions do not depend on `count`.
pub fn frozen_directions(n: usize, count: usize, lambda: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u = unit_gaussian(n, &mut rng);
            let r = lambda * (2.0 - rng.random::<f64>());
            u.iter().map(|v| v * r).collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit_check(dirs: &[Vec<f64>], basis: &Arc<MonomialBasis>, tol: f64) -> Result<NonsingularityCheck> {
    let scale = dirs.iter().map(|d| norm(d)).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Ok(NonsingularityCheck { nonsingular: false, sigma_min: 0.0, sigma_max: 0.0, margin: 0.0 });
    }
    let pts: Vec<Vec<f64>> = dirs.iter().map(|d| d.iter().map(|v| v / scale).collect()).collect();
    Ok(is_nonsingular(&build_vandermonde(&pts, basis)?, tol))
}

struct DirectionSet {
    dirs: Vec<Vec<f64>>,
    source: DirectionSource,
    check: NonsingularityCheck,
}

fn select_directions(basis: &Arc<MonomialBasis>, radius: f64, opts: &ConstructionOptions) -> Result<DirectionSet> {
    let (n, d) = (basis.n(), basis.d());
    let accept = |c: &NonsingularityCheck| c.nonsingular && c.condition() <= opts.condition_limit;
    let dirs = schur_directions(n, d, radius)?;
    let check = unit_check(&dirs, basis, opts.nonsingular_tol)?;
    if accept(&check) {
        return Ok(DirectionSet { dirs, source: DirectionSource::SchurSeed, check });
    }
    for attempt in 1..=opts.redraw_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(attempt as u64);
        let dirs = annulus_draw(n, basis.len(), radius, &mut rng);
        let check = unit_check(&dirs, basis, opts.nonsingular_tol)?;
        if accept(&check) {
            return Ok(DirectionSet { dirs, source: DirectionSource::Redraw { attempt }, check });
        }
    }
    Err(UapError::PersistentSingularity { attempts: opts.redraw_cap + 1 })
}

fn jitter_zeros(c: &mut [f64], fit: &MinimaxResult, seed: u64) -> Vec<usize> {
    let mag = JITTER_SCALE * fit.error.max(fit.noise_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, ci) in c.iter_mut().enumerate() {
        if *ci == 0.0 {
            *ci = if rng.random::<bool>() { mag } else { -mag };
            out.push(i);
        }
    }
    out
}

fn assemble(
    dirs: &[Vec<f64>],
    y: &[f64],
    x0: &[f64],
    a: &DMatrix<f64>,
    bias: &[f64],
) -> Result<NetworkWeights> {
    let n = x0.len();
    let size = dirs.len();
    let m = bias.len();
    let mut w1 = DMatrix::zeros(n + 1, size);
    for (j, w) in dirs.iter().enumerate() {
        let dot: f64 = w.iter().zip(x0).map(|(u, v)| u * v).sum();
        w1[(0, j)] = y[j] - dot;
        for i in 0..n {
            w1[(i + 1, j)] = w[i];
        }
    }
    let mut w2 = DMatrix::zeros(size + 1, m);
    for t in 0..m {
        w2[(0, t)] = bias[t];
        for j in 0..size {
            w2[(j + 1, t)] = a[(j, t)];
        }
    }
    NetworkWeights::new(w1, w2)
}

struct Realized {
    weights: NetworkWeights,
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    solve_condition: f64,
    residual: f64,
}

fn realize(
    basis: &MonomialBasis,
    c: &[f64],
    y: f64,
    dirs: &[Vec<f64>],
    x0: &[f64],
    rhs: &DMatrix<f64>,
    bias: &[f64],
) -> Result<Realized> {
    let size = basis.len();
    let mut g = DMatrix::zeros(size, size);
    for (j, w) in dirs.iter().enumerate() {
        let col = ridge_coefficients(basis, c, w)?;
        for (i, v) in col.into_iter().enumerate() {
            g[(i, j)] = v;
        }
    }
    let rep = solve_coefficients(&g, rhs)?;
    let weights = assemble(dirs, &vec![y; size], x0, &rep.solution, bias)?;
    Ok(Realized {
        weights,
        a: rep.solution,
        g,
        solve_condition: rep.condition_estimate,
        residual: rep.residual_norm,
    })
}

fn internal_certify(opts: &ConstructionOptions) -> CertifyOptions {
    CertifyOptions { early_exit: true, ..opts.certify }
}

fn certify_network(
    f: &TargetFn,
    weights: &NetworkWeights,
    sigma: &ActivationSpec,
    domain: &BoxDomain,
    eps: f64,
    opts: CertifyOptions,
) -> Result<Certificate> {
    let m = weights.m();
    let net = |x: &[f64]| weights.forward(sigma, x).unwrap_or_else(|_| vec![f64::NAN; m]);
    certify(&**f, &net, domain, eps, opts)
}

fn sigma_scale(sigma: &ActivationSpec, iv: Interval) -> f64 {
    (0..=64).map(|i| sigma.eval(iv.lo + iv.length() * i as f64 / 64.0).abs()).fold(0.0, f64::max)
}

fn constant_columns(a: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let norms = (0..a.ncols()).map(|t| a.column(t).iter().map(|v| v.abs()).sum()).collect();
    let sums = (0..a.ncols()).map(|t| a.column(t).iter().sum()).collect();
    (norms, sums)
}

/// Barycentric coordinates of ν̂(fₜ) and of the origin with respect to the
/// vertices ν̂(ĝⱼ) given as the trailing rows of `g`.
fn barycentric_pair(g: &DMatrix<f64>, nu_hat: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let size = g.nrows();
    let mut b = g.clone();
    b.row_mut(0).fill(1.0);
    let m = nu_hat.len();
    let mut rhs = DMatrix::zeros(size, m + 1);
    for t in 0..=m {
        rhs[(0, t)] = 1.0;
        if t < m {
            for i in 1..size {
                rhs[(i, t)] = nu_hat[t][i - 1];
            }
        }
    }
    let sol = solve_coefficients(&b, &rhs)?.solution;
    let coords = (0..m).map(|t| sol.column(t).iter().cloned().collect()).collect();
    let origin = sol.column(m).iter().cloned().collect();
    Ok((coords, origin))
}

struct Candidate {
    k: usize,
    lambda: f64,
    fit: MinimaxResult,
    first_pair: Option<AlternationCheck>,
    crossing: AlternationCheck,
    lambda_prime: f64,
    jittered: Vec<usize>,
    dirs: DirectionSet,
    realized: Realized,
    cert: Certificate,
}

struct PolyProblem<'a> {
    req: &'a ConstructionRequest,
    basis: Arc<MonomialBasis>,
    /// Target polynomials centered at x₀ on `basis`.
    polys: Vec<MultiPoly>,
    target: TargetFn,
    eps: f64,
    pipeline: Pipeline,
}

/// Realizes a polynomial target of degree ≤ d with exactly C(n+d, d) units.
pub fn construct_polynomial(req: &ConstructionRequest) -> Result<ConstructionReport> {
    req.validate()?;
    let ps = match &req.target {
        Target::Polynomial(ps) => ps.clone(),
        Target::Function { .. } => {
            return Err(UapError::InvalidArgument("polynomial pipeline needs polynomial targets".into()))
        }
    };
    let max_deg = ps.iter().map(|p| p.degree()).max().unwrap_or(0);
    let d = req.options.degree.unwrap_or(max_deg.max(2));
    if d < max_deg {
        return Err(UapError::InvalidArgument(format!("degree {d} below target degree {max_deg}")));
    }
    non_polynomial_probe(&req.sigma, d)?;
    let basis = Arc::new(enumerate_basis(req.domain.dim(), d)?);
    let polys = center_polys(&ps, &basis, &req.x0())?;
    let target = poly_fn(ps);
    poly_core(PolyProblem { req, basis, polys, target, eps: req.eps, pipeline: Pipeline::Polynomial })
}

fn center_polys(ps: &[MultiPoly], basis: &Arc<MonomialBasis>, x0: &[f64]) -> Result<Vec<MultiPoly>> {
    ps.iter().map(|p| recenter(&p.elevate(basis.clone())?, x0)).collect()
}

fn poly_core(prob: PolyProblem<'_>) -> Result<ConstructionReport> {
    let req = prob.req;
    let opts = &req.options;
    let basis = &prob.basis;
    let (n, d, size) = (basis.n(), basis.d(), basis.len());
    let m = prob.polys.len();
    let x0 = req.x0();
    let radius = req.domain.radius_from(&x0);
    let bias: Vec<f64> = prob.polys.iter().map(|p| p.coeffs()[0]).collect();
    let nu_hat: Vec<Vec<f64>> = prob.polys.iter().map(|p| p.coeffs()[1..].to_vec()).collect();
    let mut rhs = DMatrix::zeros(size, m);
    for t in 0..m {
        for i in 1..size {
            rhs[(i, t)] = nu_hat[t][i - 1];
        }
    }

    let schedule = opts.schedule.unwrap_or_else(ScaleSchedule::contracting);
    let (resolved, anchor) = schedule.resolve(&req.sigma, d)?;
    let constant = nu_hat.iter().all(|v| v.iter().all(|&c| c == 0.0));
    if radius == 0.0 || constant {
        return short_circuit(&prob, resolved, anchor, bias, nu_hat, x0, radius);
    }

    let mut history = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut prev = match resolved.centering {
        Centering::PreviousCrossing { initial } => initial,
        Centering::Fixed { center } => center,
        Centering::Auto { .. } => unreachable!("resolved above"),
    };
    for k in 0..=opts.max_k {
        let lambda = resolved.lambda(k);
        let mut rec = ScaleRecord::new(k, lambda);
        let outcome = (|| -> std::result::Result<Candidate, String> {
            let iv = Interval::centered(prev, lambda).map_err(|e| e.to_string())?;
            rec.lo = iv.lo;
            rec.hi = iv.hi;
            let fit = best_approximant(&req.sigma, iv, d, opts.minimax_grid).map_err(|e| e.to_string())?;
            rec.minimax_error = fit.error;
            let first_pair = alternation_ratio_check(&fit).ok();
            let crossing = central_crossing(&fit).map_err(|e| e.to_string())?;
            rec.crossing = crossing.crossing;
            rec.ratio = crossing.ratio;
            if !crossing.passes {
                return Err(format!("crossing ratio {:.4} ≤ 1/(d+2)", crossing.ratio));
            }
            if matches!(resolved.centering, Centering::PreviousCrossing { .. }) {
                prev = crossing.crossing;
            }
            let y = crossing.crossing;
            let lambda_prime = (y - iv.lo).min(iv.hi - y) / radius;
            rec.lambda_prime = lambda_prime;
            let mut c = fit.power_coeffs_about(y);
            let jittered = jitter_zeros(&mut c, &fit, opts.seed ^ (k as u64));
            let dirs = select_directions(basis, lambda_prime, opts).map_err(|e| e.to_string())?;
            rec.source = Some(dirs.source);
            rec.condition = dirs.check.condition();
            let realized = realize(basis, &c, y, &dirs.dirs, &x0, &rhs, &bias).map_err(|e| e.to_string())?;
            let (norms, _) = constant_columns(&realized.a);
            rec.coefficient_norm = norms.iter().cloned().fold(0.0, f64::max);
            rec.max_output_weight = realized.weights.max_output_weight();
            rec.min_input_norm = realized.weights.min_direction_norm();
            if let Some(bound) = req.constraints.small_output_weights {
                if !(rec.max_output_weight < bound) {
                    return Err(format!("max |a| = {:e} ≥ {bound}", rec.max_output_weight));
                }
            }
            if let Some(bound) = req.constraints.large_input_norms {
                if !(rec.min_input_norm > bound) {
                    return Err(format!("min ‖w‖ = {} ≤ {bound}", rec.min_input_norm));
                }
            }
            let cert = certify_network(
                &prob.target,
                &realized.weights,
                &req.sigma,
                &req.domain,
                prob.eps,
                internal_certify(opts),
            )
            .map_err(|e| e.to_string())?;
            rec.certified = cert.max_certified();
            Ok(Candidate {
                k,
                lambda,
                fit,
                first_pair,
                crossing,
                lambda_prime,
                jittered,
                dirs,
                realized,
                cert,
            })
        })();
        match outcome {
            Ok(cand) => {
                let ok = cand.cert.max_certified() < prob.eps;
                rec.outcome = if ok { "certified".into() } else { "error above tolerance".into() };
                history.push(rec);
                let better = best.as_ref().is_none_or(|b| cand.cert.max_certified() < b.cert.max_certified());
                if better {
                    best = Some(cand);
                }
                if ok {
                    break;
                }
            }
            Err(msg) => {
                if msg.contains("no nonsingular direction set") {
                    return Err(UapError::PersistentSingularity { attempts: opts.redraw_cap + 1 });
                }
                rec.outcome = msg;
                history.push(rec);
            }
        }
    }
    let cand = best.ok_or(UapError::NoConvergence { iterations: opts.max_k + 1 })?;

    // A coarse early-exit certificate is replaced by a full one for the report.
    let cert = if cand.cert.max_certified() < prob.eps {
        cand.cert.clone()
    } else {
        certify_network(&prob.target, &cand.realized.weights, &req.sigma, &req.domain, prob.eps, opts.certify)?
    };
    let status = if cert.max_certified() < prob.eps { Status::Success } else { Status::ScaleCapReached };
    let (norms, sums) = constant_columns(&cand.realized.a);
    let unit_error = cand.fit.error.max(cand.fit.fine_error);
    let s_scale = sigma_scale(&req.sigma, cand.fit.interval);
    let residual_term = cand.realized.residual * (size as f64).sqrt() * radius.max(1.0).powi(d as i32);
    let decomposition = (0..m)
        .map(|t| {
            let rounding = (norms[t] * s_scale + bias[t].abs()) * (size as f64 + 2.0) * 4.0 * f64::EPSILON
                + residual_term;
            let bound = norms[t] * unit_error + rounding;
            ErrorDecomposition {
                output: t,
                grid_error: cert.grid_error[t],
                certified: cert.certified[t],
                unit_error,
                surrogate_error: 0.0,
                rounding,
                bound,
                holds: cert.grid_error[t] <= bound,
            }
        })
        .collect();
    let zero_sum = norms
        .iter()
        .zip(&sums)
        .map(|(nrm, s)| if *nrm > 0.0 { s.abs() / nrm } else { 0.0 })
        .fold(0.0, f64::max);
    let spread = barycentric_pair(&cand.realized.g, &nu_hat).ok().map(|(coords, _)| {
        coords
            .iter()
            .flat_map(|b| b.iter().map(|v| (v - 1.0 / size as f64).abs()))
            .fold(0.0, f64::max)
    });
    let weights = cand.realized.weights.clone();
    let audit = audit(&weights, &req.constraints);
    let unit_dirs = cand.dirs.dirs.iter().map(|w| w.iter().map(|v| v / cand.lambda_prime).collect()).collect();
    let mut notes = Vec::new();
    if status == Status::ScaleCapReached {
        notes.push(format!("no scale up to k = {} certified below {}", opts.max_k, prob.eps));
    }
    Ok(ConstructionReport {
        status,
        pipeline: prob.pipeline,
        sigma: req.sigma.clone(),
        n,
        m,
        degree: d,
        hidden_units: size,
        active_units: size,
        certified_error: cert.certified.clone(),
        scale_index_used: Some(cand.k),
        lambda: Some(cand.lambda),
        interval: Some(cand.fit.interval),
        crossing: Some(cand.crossing.crossing),
        lambda_prime: Some(cand.lambda_prime),
        vandermonde_condition: cand.dirs.check.condition(),
        vandermonde_margin: cand.dirs.check.margin,
        solve_condition: cand.realized.solve_condition,
        coefficient_norm: norms,
        coefficient_sum: sums,
        constraint_audit: audit,
        error_decomposition: decomposition,
        diagnostics: Diagnostics {
            anchor,
            alternation_ratio: Some(cand.crossing.ratio),
            first_pair_ratio: cand.first_pair.map(|c| c.ratio),
            minimax_error: Some(cand.fit.error),
            barycentric_spread: spread,
            zero_sum_residual: Some(zero_sum),
            jittered: cand.jittered,
            route: Some("minimax".into()),
            notes,
            ..Diagnostics::default()
        },
        history,
        seed: opts.seed,
        x0: x0.clone(),
        radius,
        certificate: cert,
        context: Some(PolyContext {
            sigma: req.sigma.clone(),
            schedule: resolved,
            degree: d,
            basis: basis.clone(),
            x0,
            radius,
            nu_hat,
            unit_dirs,
            grid: opts.minimax_grid,
        }),
        weights,
    })
}

fn audit(w: &NetworkWeights, c: &Constraints) -> ConstraintAudit {
    let min_input_norm = w.min_direction_norm();
    let max_output_weight = w.max_output_weight();
    let satisfied = c.small_output_weights.is_none_or(|b| max_output_weight < b)
        && c.large_input_norms.is_none_or(|b| min_input_norm > b);
    ConstraintAudit {
        min_input_norm,
        max_output_weight,
        small_output_weights: c.small_output_weights,
        large_input_norms: c.large_input_norms,
        satisfied,
    }
}

/// Constant targets and single-point domains: output biases carry the values.
fn short_circuit(
    prob: &PolyProblem<'_>,
    resolved: ScaleSchedule,
    anchor: Option<AnchorChoice>,
    bias: Vec<f64>,
    nu_hat: Vec<Vec<f64>>,
    x0: Vec<f64>,
    radius: f64,
) -> Result<ConstructionReport> {
    let req = prob.req;
    let basis = &prob.basis;
    let (n, d, size, m) = (basis.n(), basis.d(), basis.len(), bias.len());
    let mut radius_dirs = 1.0;
    if let Some(b) = req.constraints.large_input_norms {
        radius_dirs = 2.0 * b + 1.0;
    }
    let dirs = schur_directions(n, d, radius_dirs)?;
    let check = unit_check(&dirs, basis, req.options.nonsingular_tol)?;
    let y = match resolved.centering {
        Centering::Fixed { center } => center,
        Centering::PreviousCrossing { initial } => initial,
        Centering::Auto { .. } => 0.0,
    };
    let a = DMatrix::zeros(size, m);
    let weights = assemble(&dirs, &vec![y; size], &x0, &a, &bias)?;
    let cert = certify_network(&prob.target, &weights, &req.sigma, &req.domain, prob.eps, req.options.certify)?;
    let status = if cert.max_certified() < prob.eps { Status::Success } else { Status::ScaleCapReached };
    let audit = audit(&weights, &req.constraints);
    let decomposition = (0..m)
        .map(|t| ErrorDecomposition {
            output: t,
            grid_error: cert.grid_error[t],
            certified: cert.certified[t],
            unit_error: 0.0,
            surrogate_error: 0.0,
            rounding: 0.0,
            bound: 0.0,
            holds: cert.grid_error[t] <= 0.0,
        })
        .collect();
    let note = if radius == 0.0 { "single-point domain" } else { "constant target" };
    Ok(ConstructionReport {
        status,
        pipeline: prob.pipeline,
        sigma: req.sigma.clone(),
        n,
        m,
        degree: d,
        hidden_units: size,
        active_units: size,
        certified_error: cert.certified.clone(),
        scale_index_used: None,
        lambda: None,
        interval: None,
        crossing: None,
        lambda_prime: None,
        vandermonde_condition: check.condition(),
        vandermonde_margin: check.margin,
        solve_condition: f64::NAN,
        coefficient_norm: vec![0.0; m],
        coefficient_sum: vec![0.0; m],
        constraint_audit: audit,
        error_decomposition: decomposition,
        diagnostics: Diagnostics {
            anchor,
            zero_sum_residual: Some(0.0),
            route: Some("output biases".into()),
            notes: vec![format!("{note}: matched by output biases")],
            ..Diagnostics::default()
        },
        history: Vec::new(),
        seed: req.options.seed,
        x0: x0.clone(),
        radius,
        certificate: cert,
        context: (radius > 0.0).then(|| PolyContext {
            sigma: req.sigma.clone(),
            schedule: resolved,
            degree: d,
            basis: basis.clone(),
            x0,
            radius,
            nu_hat,
            unit_dirs: dirs.iter().map(|w| w.iter().map(|v| v / radius_dirs).collect()).collect(),
            grid: req.options.minimax_grid,
        }),
        weights,
    })
}

fn chebyshev_values(k_max: usize, s: f64) -> Vec<f64> {
    let mut t = vec![1.0; k_max + 1];
    if k_max >= 1 {
        t[1] = s;
    }
    for k in 2..=k_max {
        t[k] = 2.0 * s * t[k - 1] - t[k - 2];
    }
    t
}

/// Degree-d least-squares surrogate in a tensor Chebyshev basis on a
/// Chebyshev–Lobatto grid, returned in the colex monomial basis about the
/// box center.
pub fn fit_surrogate(f: &TargetFn, m: usize, domain: &BoxDomain, d: usize) -> Result<Vec<MultiPoly>> {
    let n = domain.dim();
    let basis = Arc::new(enumerate_basis(n, d)?);
    let size = basis.len();
    let center = domain.center();
    let half: Vec<f64> = domain.widths().iter().map(|w| 0.5 * w).collect();
    let active = half.iter().filter(|&&h| h > 0.0).count().max(1);
    let per_axis = (4 * (d + 1))
        .max(16)
        .min((LEAST_SQUARES_POINTS as f64).powf(1.0 / active as f64).floor() as usize)
        .max(d + 2);
    let nodes = lobatto(per_axis);
    let res: Vec<usize> = half.iter().map(|&h| if h > 0.0 { per_axis } else { 1 }).collect();
    let total: usize = res.iter().product();
    let unravel = |mut lin: usize| -> Vec<f64> {
        res.iter()
            .map(|&r| {
                let k = lin % r;
                lin /= r;
                if r == 1 { 0.0 } else { nodes[k] }
            })
            .collect()
    };
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|lin| {
            let s = unravel(lin);
            let x: Vec<f64> = (0..n).map(|i| center[i] + half[i] * s[i]).collect();
            let row: Vec<f64> = {
                let tv: Vec<Vec<f64>> = s.iter().map(|&si| chebyshev_values(d, si)).collect();
                basis
                    .indices()
                    .iter()
                    .map(|beta| beta.exponents().iter().enumerate().map(|(i, &e)| tv[i][e as usize]).product())
                    .collect()
            };
            (row, f(&x))
        })
        .collect();
    if let Some((i, _)) = samples.iter().enumerate().find(|(_, (_, v))| v.len() != m || v.iter().any(|x| !x.is_finite())) {
        let s = unravel(i);
        return Err(UapError::Evaluation {
            point: (0..n).map(|k| center[k] + half[k] * s[k]).collect(),
            message: "target is not finite or has the wrong output count".into(),
        });
    }
    let a = DMatrix::from_fn(total, size, |r, c| samples[r].0[c]);
    let b = DMatrix::from_fn(total, m, |r, c| samples[r].1[c]);
    let gamma = least_squares(&a, &b)?;

    let t_mono: Vec<Vec<f64>> = (0..=d)
        .map(|k| {
            let mut e = vec![0.0; k + 1];
            e[k] = 1.0;
            chebyshev_to_monomial(&e)
        })
        .collect();
    let mut out = Vec::with_capacity(m);
    for t in 0..m {
        let mut coeffs = vec![0.0; size];
        for (col, beta) in basis.indices().iter().enumerate() {
            let g = gamma[(col, t)];
            if g == 0.0 {
                continue;
            }
            // Expand ∏ T_{βᵢ}(uᵢ/hᵢ) into monomials in u = x − center.
            let mut terms: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), g)];
            for (i, &bi) in beta.exponents().iter().enumerate() {
                let mut next = Vec::new();
                for (exps, c) in &terms {
                    if half[i] == 0.0 {
                        let mut e = exps.clone();
                        e.push(0);
                        next.push((e, c * chebyshev_values(bi as usize, 0.0)[bi as usize]));
                        continue;
                    }
                    for (p, &tc) in t_mono[bi as usize].iter().enumerate() {
                        if tc != 0.0 {
                            let mut e = exps.clone();
                            e.push(p as u32);
                            next.push((e, c * tc / half[i].powi(p as i32)));
                        }
                    }
                }
                terms = next;
            }
            for (exps, c) in terms {
                let pos = basis.position(&MultiIndex::new(exps)).expect("degree bounded by beta");
                coeffs[pos] += c;
            }
        }
        out.push(MultiPoly::new(basis.clone(), center.clone(), coeffs)?);
    }
    Ok(out)
}

fn pad_inert(w: &NetworkWeights, total: usize) -> Result<NetworkWeights> {
    let active = w.hidden();
    if total <= active {
        return Ok(w.clone());
    }
    let n = w.n();
    let m = w.m();
    let mut w1 = DMatrix::zeros(n + 1, total);
    let mut w2 = DMatrix::zeros(total + 1, m);
    for j in 0..total {
        let src = j % active;
        w1.set_column(j, &w.w1.column(src));
    }
    for r in 0..=active {
        w2.set_row(r, &w.w2.row(r));
    }
    NetworkWeights::new(w1, w2)
}

/// Continuous targets: modulus-driven d_ε, least-squares surrogate, then the
/// polynomial pipeline on the remaining budget.
///
/// Surrogate degrees are tried upwards from 2 and the first certified one is
/// kept; the network is padded with inert units to C(n + d_ε, d_ε).
pub fn construct_continuous(req: &ConstructionRequest) -> Result<ConstructionReport> {
    req.validate()?;
    let opts = &req.options;
    let f = req.target.as_fn();
    let m = req.target.m();
    let n = req.domain.dim();
    let search = modulus_search(&*f, &req.domain, req.eps, req.domain.diameter(), opts.degree_cap)?;
    let d_eps = search.d;
    let n_eps = binomial(n + d_eps, d_eps);
    let cap = d_eps.min(opts.surrogate_cap).max(2);
    let x0 = req.x0();
    let mut best: Option<ConstructionReport> = None;
    let mut notes = Vec::new();
    for d_s in 2..=cap {
        non_polynomial_probe(&req.sigma, d_s)?;
        let surrogate = fit_surrogate(&f, m, &req.domain, d_s)?;
        let sfn = poly_fn(surrogate.clone());
        let eps1 = certify(&*f, &*sfn, &req.domain, req.eps, opts.certify)?.max_certified();
        if eps1 >= req.eps {
            notes.push(format!("surrogate degree {d_s}: ε₁ = {eps1:e} ≥ ε"));
            continue;
        }
        let basis = Arc::new(enumerate_basis(n, d_s)?);
        let polys = center_polys(&surrogate, &basis, &x0)?;
        let prob = PolyProblem {
            req,
            basis,
            polys,
            target: sfn,
            eps: req.eps - eps1,
            pipeline: Pipeline::Continuous,
        };
        let mut rep = match poly_core(prob) {
            Ok(r) => r,
            Err(e) => {
                notes.push(format!("surrogate degree {d_s}: {e}"));
                continue;
            }
        };
        let padded = pad_inert(&rep.weights, n_eps)?;
        let cert = certify_network(&f, &padded, &req.sigma, &req.domain, req.eps, opts.certify)?;
        let ok = rep.status.is_success() && cert.max_certified() < req.eps;
        for (t, dec) in rep.error_decomposition.iter_mut().enumerate() {
            dec.grid_error = cert.grid_error[t];
            dec.certified = cert.certified[t];
            dec.surrogate_error = eps1;
            dec.bound += eps1;
            dec.holds = dec.grid_error <= dec.bound;
        }
        rep.status = if ok { Status::Success } else { Status::ScaleCapReached };
        rep.active_units = rep.hidden_units;
        rep.hidden_units = padded.hidden();
        rep.weights = padded;
        rep.certified_error = cert.certified.clone();
        rep.certificate = cert;
        rep.constraint_audit = audit(&rep.weights, &req.constraints);
        rep.diagnostics.d_epsilon = Some(d_eps);
        rep.diagnostics.surrogate_degree = Some(d_s);
        rep.diagnostics.surrogate_error = Some(eps1);
        rep.diagnostics.modulus = Some(search.clone());
        if ok {
            if d_s != d_eps {
                notes.push(format!("surrogate degree {d_s} used in place of d_ε = {d_eps}; {} inert units", n_eps - rep.active_units));
            }
            rep.diagnostics.notes.extend(notes);
            return Ok(rep);
        }
        notes.push(format!("surrogate degree {d_s}: construction not certified"));
        rep.diagnostics.notes.extend(notes.iter().cloned());
        if best.as_ref().is_none_or(|b| rep.max_certified_error() < b.max_certified_error()) {
            best = Some(rep);
        }
    }
    best.ok_or(UapError::DegreeCapExceeded { cap })
}

fn anchor_sweep() -> Vec<f64> {
    let mut ys = vec![0.0];
    for i in 1..=16 {
        let y = ANCHOR_STEP * i as f64;
        ys.push(y);
        ys.push(-y);
    }
    ys
}

fn least_squares_layer(
    f: &TargetFn,
    m: usize,
    domain: &BoxDomain,
    sigma: &ActivationSpec,
    dirs: &[Vec<f64>],
    y: f64,
    x0: &[f64],
) -> Result<NetworkWeights> {
    let n = domain.dim();
    let size = dirs.len();
    let active = (0..n).filter(|&i| domain.width(i) > 0.0).count().max(1);
    let per_axis = (8 * size)
        .max(64)
        .min((LEAST_SQUARES_POINTS as f64).powf(1.0 / active as f64).floor() as usize);
    let grid = GridSpec::uniform(domain.clone(), per_axis, usize::MAX)?;
    let total = grid.total();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|lin| {
            let x = grid.point(lin);
            let mut row = Vec::with_capacity(size + 1);
            row.push(1.0);
            for w in dirs {
                let pre: f64 = y + w.iter().zip(x.iter().zip(x0)).map(|(wi, (xi, ci))| wi * (xi - ci)).sum::<f64>();
                row.push(sigma.eval(pre));
            }
            (row, f(&x))
        })
        .collect();
    let a = DMatrix::from_fn(total, size + 1, |r, c| rows[r].0[c]);
    let b = DMatrix::from_fn(total, m, |r, c| rows[r].1.get(c).copied().unwrap_or(f64::NAN));
    if b.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
        return Err(UapError::Evaluation { point: x0.to_vec(), message: "non-finite least-squares data".into() });
    }
    let sol = least_squares(&a, &b)?;
    let coeffs = sol.rows(1, size).into_owned();
    let intercept: Vec<f64> = (0..m).map(|t| sol[(0, t)]).collect();
    assemble(dirs, &vec![y; size], x0, &coeffs, &intercept)
}

/// Frozen first layer: directions are sampled once and never modified.
///
/// For each degree level the first C(n+d′, d′) directions of the sampled
/// stream are used. A shared bias y is swept over a fixed list; at each y the
/// minimax route is tried first and then a least-squares fit of the output
/// layer on the same features.
pub fn construct_random_features(req: &ConstructionRequest) -> Result<ConstructionReport> {
    req.validate()?;
    let frozen = req
        .frozen
        .clone()
        .ok_or_else(|| UapError::InvalidArgument("random-feature pipeline needs a frozen first layer".into()))?;
    let opts = &req.options;
    let n = req.domain.dim();
    let m = req.target.m();
    let x0 = req.x0();
    let radius = req.domain.radius_from(&x0);
    let f = req.target.as_fn();
    let mut notes = Vec::new();

    let (base_d, polys) = match &req.target {
        Target::Polynomial(ps) => {
            let max_deg = ps.iter().map(|p| p.degree()).max().unwrap_or(0);
            (opts.degree.unwrap_or(max_deg.max(2)).max(max_deg), Some(ps.clone()))
        }
        Target::Function { .. } => {
            let mut chosen = None;
            for d_s in 2..=opts.surrogate_cap.max(2) {
                let s = fit_surrogate(&f, m, &req.domain, d_s)?;
                let e1 = certify(&*f, &*poly_fn(s), &req.domain, req.eps, opts.certify)?.max_certified();
                if e1 < 0.5 * req.eps {
                    chosen = Some(d_s);
                    break;
                }
            }
            let d = chosen.ok_or(UapError::DegreeCapExceeded { cap: opts.surrogate_cap })?;
            notes.push(format!("base degree {d} from surrogate search"));
            (d, None)
        }
    };
    non_polynomial_probe(&req.sigma, base_d)?;

    let levels = if frozen.directions.is_some() { 0 } else { opts.degree_escalation };
    let base_size = binomial(n + base_d, base_d);
    let (stream, source) = match &frozen.directions {
        Some(ds) => {
            if ds.len() != base_size {
                return Err(UapError::DimensionMismatch { expected: base_size, got: ds.len() });
            }
            if let Some(w) = ds.iter().find(|w| w.len() != n) {
                return Err(UapError::DimensionMismatch { expected: n, got: w.len() });
            }
            if ds.iter().any(|w| !(norm(w) > frozen.lambda)) {
                return Err(UapError::InvalidArgument(format!("injected directions must have norm > {}", frozen.lambda)));
            }
            (ds.clone(), DirectionSource::Injected)
        }
        None => {
            let total = binomial(n + base_d + levels, base_d + levels);
            (frozen_directions(n, total, frozen.lambda, frozen.seed), DirectionSource::Frozen { seed: frozen.seed })
        }
    };

    let constant = polys
        .as_ref()
        .map(|ps| ps.iter().all(|p| p.degree() == 0 || p.truncated().iter().all(|&c| c == 0.0)))
        .unwrap_or(false);

    let mut history = Vec::new();
    let mut best: Option<(NetworkWeights, Certificate, usize, f64, String, NonsingularityCheck, usize)> = None;
    let mut attempt = 0usize;
    'levels: for level in 0..=levels {
        let d = base_d + level;
        let size = binomial(n + d, d);
        let dirs = stream[..size].to_vec();
        let basis = Arc::new(enumerate_basis(n, d)?);
        let check = unit_check(&dirs, &basis, opts.nonsingular_tol)?;
        if !check.nonsingular {
            return Err(UapError::SingularDraw { margin: check.margin });
        }
        let max_norm = dirs.iter().map(|w| norm(w)).fold(0.0, f64::max);
        let reach = max_norm * radius;

        if constant || radius == 0.0 {
            let bias: Vec<f64> = f(&x0);
            let w = assemble(&dirs, &vec![0.0; size], &x0, &DMatrix::zeros(size, m), &bias)?;
            let cert = certify_network(&f, &w, &req.sigma, &req.domain, req.eps, opts.certify)?;
            best = Some((w, cert, d, 0.0, "output biases".into(), check, attempt));
            break;
        }

        let rhs_polys = match &polys {
            Some(ps) if ps.iter().all(|p| p.degree() <= d) => Some(center_polys(ps, &basis, &x0)?),
            _ => None,
        };
        for y in anchor_sweep() {
            let mut routes: Vec<(&str, Result<NetworkWeights>)> = Vec::new();
            if let Some(cp) = &rhs_polys {
                let iv = Interval::new(y - reach * (1.0 + 1e-9), y + reach * (1.0 + 1e-9));
                let w = iv.and_then(|iv| best_approximant(&req.sigma, iv, d, opts.minimax_grid)).and_then(|fit| {
                    let mut c = fit.power_coeffs_about(y);
                    jitter_zeros(&mut c, &fit, opts.seed);
                    let bias: Vec<f64> = cp.iter().map(|p| p.coeffs()[0]).collect();
                    let mut rhs = DMatrix::zeros(size, m);
                    for (t, p) in cp.iter().enumerate() {
                        for i in 1..size {
                            rhs[(i, t)] = p.coeffs()[i];
                        }
                    }
                    realize(&basis, &c, y, &dirs, &x0, &rhs, &bias).map(|r| r.weights)
                });
                routes.push(("minimax", w));
            }
            routes.push(("least_squares", least_squares_layer(&f, m, &req.domain, &req.sigma, &dirs, y, &x0)));
            for (route, w) in routes {
                let mut rec = ScaleRecord::new(attempt, 2.0 * reach);
                rec.lo = y - reach;
                rec.hi = y + reach;
                rec.crossing = y;
                rec.source = Some(source);
                rec.condition = check.condition();
                let w = match w {
                    Ok(w) => w,
                    Err(e) => {
                        rec.outcome = format!("degree {d}, {route}: {e}");
                        history.push(rec);
                        attempt += 1;
                        continue;
                    }
                };
                rec.max_output_weight = w.max_output_weight();
                rec.min_input_norm = w.min_direction_norm();
                let cert = match certify_network(&f, &w, &req.sigma, &req.domain, req.eps, internal_certify(opts)) {
                    Ok(c) => c,
                    Err(e) => {
                        rec.outcome = format!("degree {d}, {route}: {e}");
                        history.push(rec);
                        attempt += 1;
                        continue;
                    }
                };
                rec.certified = cert.max_certified();
                let ok = cert.max_certified() < req.eps;
                rec.outcome = format!("degree {d}, {route}: {}", if ok { "certified" } else { "error above tolerance" });
                history.push(rec);
                if best.as_ref().is_none_or(|b| cert.max_certified() < b.1.max_certified()) {
                    best = Some((w, cert, d, y, route.to_string(), check, attempt));
                }
                attempt += 1;
                if ok {
                    break 'levels;
                }
            }
        }
        if level < levels {
            notes.push(format!("degree {d} with frozen directions not certified; escalating"));
        }
    }

    let (weights, cert, d, y, route, check, used) = best.ok_or(UapError::NoConvergence { iterations: attempt })?;
    let cert = if cert.max_certified() < req.eps {
        cert
    } else {
        certify_network(&f, &weights, &req.sigma, &req.domain, req.eps, opts.certify)?
    };
    let status = if cert.max_certified() < req.eps { Status::Success } else { Status::ScaleCapReached };
    let size = weights.hidden();
    let a = weights.w2.rows(1, size).into_owned();
    let (norms, sums) = constant_columns(&a);
    if d > base_d {
        notes.push(format!("frozen directions needed degree {d} > {base_d}"));
    }
    let audit = audit(&weights, &req.constraints);
    let decomposition = (0..m)
        .map(|t| ErrorDecomposition {
            output: t,
            grid_error: cert.grid_error[t],
            certified: cert.certified[t],
            unit_error: f64::NAN,
            surrogate_error: 0.0,
            rounding: 0.0,
            bound: f64::NAN,
            holds: true,
        })
        .collect();
    let reach = (0..size).map(|j| norm(&weights.direction(j))).fold(0.0, f64::max) * radius;
    Ok(ConstructionReport {
        status,
        pipeline: Pipeline::RandomFeatures,
        sigma: req.sigma.clone(),
        n,
        m,
        degree: d,
        hidden_units: size,
        active_units: size,
        certified_error: cert.certified.clone(),
        scale_index_used: Some(used),
        lambda: Some(2.0 * reach),
        interval: Interval::new(y - reach, y + reach).ok(),
        crossing: Some(y),
        lambda_prime: None,
        vandermonde_condition: check.condition(),
        vandermonde_margin: check.margin,
        solve_condition: f64::NAN,
        coefficient_norm: norms,
        coefficient_sum: sums,
        constraint_audit: audit,
        error_decomposition: decomposition,
        diagnostics: Diagnostics { route: Some(route), notes, ..Diagnostics::default() },
        history,
        seed: frozen.seed,
        x0,
        radius,
        certificate: cert,
        context: None,
        weights,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BarycentricRow {
    pub k: usize,
    pub lambda: f64,
    pub crossing: f64,
    pub lambda_prime: f64,
    /// max over outputs and units of |bⱼ − 1/N|.
    pub spread: f64,
    /// max over units of |b′ⱼ − 1/N|.
    pub origin_spread: f64,
    /// max over outputs and units of |bⱼ − b′ⱼ| = max |aⱼ|.
    pub max_coordinate_gap: f64,
    /// max over outputs of Σⱼ |bⱼ − b′ⱼ| = ‖a‖₁.
    pub coefficient_norm: f64,
    pub c_f: f64,
    pub min_height: f64,
    /// |bⱼ − b′ⱼ| ≤ c_f / hⱼ for every unit and output.
    pub bound_holds: bool,
    pub degenerate: Option<String>,
}

/// Barycentric coordinates of ν̂(f) and of the origin with respect to the
/// simplex of ν̂(ĝⱼ), recomputed at each scale with the report's direction
/// geometry rescaled to λ′_k.
pub fn barycentric_diagnostic(report: &ConstructionReport, ks: Range<usize>) -> Result<Vec<BarycentricRow>> {
    let ctx = report
        .context
        .as_ref()
        .ok_or_else(|| UapError::InvalidArgument("barycentric diagnostic needs a polynomial-path report".into()))?;
    let steps = walk_schedule(&ctx.sigma, &ctx.schedule, ctx.degree, ks, ctx.grid)?;
    let size = ctx.basis.len();
    let inv_n = 1.0 / size as f64;
    let c_f = ctx.nu_hat.iter().map(|v| norm(v)).fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(steps.len());
    for step in steps {
        let mut row = BarycentricRow {
            k: step.k,
            lambda: step.lambda,
            crossing: f64::NAN,
            lambda_prime: f64::NAN,
            spread: f64::NAN,
            origin_spread: f64::NAN,
            max_coordinate_gap: f64::NAN,
            coefficient_norm: f64::NAN,
            c_f,
            min_height: f64::NAN,
            bound_holds: false,
            degenerate: None,
        };
        let res = (|| -> Result<()> {
            let chk = step.crossing.ok_or(UapError::NoSignChange { a1: step.interval.lo, a2: step.interval.hi })?;
            let y = chk.crossing;
            row.crossing = y;
            let lam_p = (y - step.interval.lo).min(step.interval.hi - y) / ctx.radius;
            row.lambda_prime = lam_p;
            let c = step.fit.power_coeffs_about(y);
            let mut g = DMatrix::zeros(size, size);
            for (j, u) in ctx.unit_dirs.iter().enumerate() {
                let w: Vec<f64> = u.iter().map(|v| v * lam_p).collect();
                for (i, v) in ridge_coefficients(&ctx.basis, &c, &w)?.into_iter().enumerate() {
                    g[(i, j)] = v;
                }
            }
            let (coords, origin) = barycentric_pair(&g, &ctx.nu_hat)?;
            row.origin_spread = origin.iter().map(|b| (b - inv_n).abs()).fold(0.0, f64::max);
            row.spread = coords.iter().flat_map(|b| b.iter().map(|v| (v - inv_n).abs())).fold(0.0, f64::max);
            row.max_coordinate_gap = coords
                .iter()
                .flat_map(|b| b.iter().zip(&origin).map(|(u, v)| (u - v).abs()))
                .fold(0.0, f64::max);
            row.coefficient_norm = coords
                .iter()
                .map(|b| b.iter().zip(&origin).map(|(u, v)| (u - v).abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let vertices: Vec<Vec<f64>> = (0..size).map(|j| g.column(j).iter().skip(1).cloned().collect()).collect();
            let heights = (0..size).map(|j| simplex_height_diagnostic(&vertices, j)).collect::<Result<Vec<f64>>>()?;
            row.min_height = heights.iter().cloned().fold(f64::INFINITY, f64::min);
            row.bound_holds = coords.iter().all(|b| {
                b.iter()
                    .zip(&origin)
                    .zip(&heights)
                    .all(|((u, v), h)| (u - v).abs() <= (c_f / h) * (1.0 + 1e-6) + 1e-12)
            });
            Ok(())
        })();
        if let Err(e) = res {
            row.degenerate = Some(e.to_string());
        }
        rows.push(row);
    }
    Ok(rows)
}

fn cayley_menger(points: &[&Vec<f64>]) -> DMatrix<f64> {
    let k = points.len();
    let mut cm = DMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        cm[(0, i + 1)] = 1.0;
        cm[(i + 1, 0)] = 1.0;
        for j in 0..k {
            if i != j {
                cm[(i + 1, j + 1)] = points[i].iter().zip(points[j]).map(|(a, b)| (a - b).powi(2)).sum();
            }
        }
    }
    cm
}

fn check_points(points: &[Vec<f64>], apex: usize) -> Result<()> {
    if points.len() < 2 {
        return Err(UapError::InvalidArgument("a simplex needs ≥ 2 points".into()));
    }
    if apex >= points.len() {
        return Err(UapError::InvalidArgument(format!("apex {apex} out of range")));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(UapError::DimensionMismatch { expected: dim, got: p.len() });
    }
    if points.len() - 1 > dim {
        return Err(UapError::InvalidArgument(format!("{} points cannot span a simplex in ℝ^{dim}", points.len())));
    }
    Ok(())
}

/// Height of the simplex over the facet opposite `apex`, from the ratio of
/// Cayley–Menger determinants h² = −det(CM)/(2·det(CM′)).
pub fn simplex_height_diagnostic(points: &[Vec<f64>], apex: usize) -> Result<f64> {
    check_points(points, apex)?;
    let all: Vec<&Vec<f64>> = points.iter().collect();
    let facet: Vec<&Vec<f64>> = points.iter().enumerate().filter(|(j, _)| *j != apex).map(|(_, p)| p).collect();
    let full = log_det(&cayley_menger(&all));
    let sub = log_det(&cayley_menger(&facet));
    let det = full.value();
    if full.sign == 0.0 || sub.sign == 0.0 || -full.sign * sub.sign <= 0.0 {
        return Err(UapError::DegenerateSimplex { det });
    }
    let h = ((full.log_abs - sub.log_abs - std::f64::consts::LN_2) / 2.0).exp();
    let max_edge = all
        .iter()
        .flat_map(|p| all.iter().map(move |q| norm(&p.iter().zip(q.iter()).map(|(a, b)| a - b).collect::<Vec<_>>())))
        .fold(0.0, f64::max);
    if !(h.is_finite() && h > 1e-12 * max_edge) {
        return Err(UapError::DegenerateSimplex { det });
    }
    Ok(h)
}

fn gram_volume(points: &[&Vec<f64>]) -> f64 {
    let k = points.len() - 1;
    if k == 0 {
        return 1.0;
    }
    let dim = points[0].len();
    let e = DMatrix::from_fn(dim, k, |r, c| points[c + 1][r] - points[0][r]);
    let gram = e.transpose() * &e;
    let ld = log_det(&gram);
    if ld.sign <= 0.0 {
        return 0.0;
    }
    let log_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    (0.5 * ld.log_abs - log_fact).exp()
}

/// Height as s·V(Δ)/V(facet) for an s-simplex, with Gram-determinant volumes.
pub fn volume_ratio_height(points: &[Vec<f64>], apex: usize) -> Result<f64> {
    check_points(points, apex)?;
    let all: Vec<&Vec<f64>> = points.iter().collect();
    let facet: Vec<&Vec<f64>> = points.iter().enumerate().filter(|(j, _)| *j != apex).map(|(_, p)| p).collect();
    let v = gram_volume(&all);
    let vf = gram_volume(&facet);
    if !(v > 0.0 && vf > 0.0) {
        return Err(UapError::DegenerateSimplex { det: 0.0 });
    }
    Ok((points.len() - 1) as f64 * v / vf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> Vec<MultiPoly> {
        let b = Arc::new(enumerate_basis(2, 2).unwrap());
        vec![MultiPoly::from_terms(b, vec![0.0, 0.0], &[(1.0, vec![2, 0]), (-1.0, vec![1, 1]), (2.0, vec![0, 1])]).unwrap()]
    }

    fn square_req(sigma: ActivationSpec, eps: f64) -> ConstructionRequest {
        ConstructionRequest::new(
            Target::Polynomial(quadratic()),
            BoxDomain::cube(2, -1.0, 1.0).unwrap(),
            sigma,
            eps,
        )
    }

    #[test]
    fn logistic_quadratic_six_units() {
        let rep = construct_polynomial(&square_req(ActivationSpec::Logistic, 1e-2)).unwrap();
        assert!(rep.status.is_success(), "{:?}", rep.history);
        assert_eq!(rep.hidden_units, 6);
        assert_eq!(rep.weights.hidden(), 6);
        assert!(rep.max_certified_error() < 1e-2);
        assert!(rep.diagnostics.zero_sum_residual.unwrap() <= ZERO_SUM_TOL);
        assert!(rep.error_decomposition.iter().all(|e| e.holds));
    }

    #[test]
    fn constant_target_uses_biases() {
        let b = Arc::new(enumerate_basis(2, 0).unwrap());
        let p = MultiPoly::new(b, vec![0.0, 0.0], vec![3.5]).unwrap();
        let req = ConstructionRequest::new(
            Target::Polynomial(vec![p]),
            BoxDomain::cube(2, -1.0, 1.0).unwrap(),
            ActivationSpec::Tanh,
            1e-6,
        );
        let rep = construct_polynomial(&req).unwrap();
        assert!(rep.status.is_success());
        assert_eq!(rep.max_certified_error(), 0.0);
        assert_eq!(rep.weights.output_bias(0), 3.5);
        assert_eq!(rep.weights.max_output_weight(), 0.0);
        assert_eq!(rep.hidden_units, 6);
    }

    #[test]
    fn single_point_domain() {
        let req = ConstructionRequest {
            domain: BoxDomain::new(vec![0.3, -0.2], vec![0.3, -0.2]).unwrap(),
            ..square_req(ActivationSpec::Tanh, 1e-9)
        };
        let rep = construct_polynomial(&req).unwrap();
        assert!(rep.status.is_success());
        let want = 0.09 + 0.06 - 0.4;
        assert!((rep.weights.output_bias(0) - want).abs() < 1e-15);
    }

    #[test]
    fn polynomial_activation_rejected() {
        let sigma = ActivationSpec::Polynomial { coeffs: vec![0.5, 2.0] };
        match construct_polynomial(&square_req(sigma, 1e-2)) {
            Err(UapError::PolynomialActivation { degree: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn request_validation() {
        assert!(construct_polynomial(&square_req(ActivationSpec::Tanh, 0.0)).is_err());
        let mut r = square_req(ActivationSpec::Tanh, 0.1);
        r.frozen = Some(FrozenFirstLayer { lambda: 1.0, seed: 0, directions: None });
        r.constraints.small_output_weights = Some(1.0);
        assert!(r.validate().is_err());
        let mut r = square_req(ActivationSpec::Tanh, 0.1);
        r.anchor = Some(vec![2.0, 0.0]);
        assert!(r.validate().is_err());
    }

    #[test]
    fn schur_directions_in_annulus() {
        for (n, d) in [(1, 2), (2, 2), (3, 2), (2, 3)] {
            let dirs = schur_directions(n, d, 3.0).unwrap();
            assert_eq!(dirs.len(), binomial(n + d, d));
            assert!(dirs.iter().all(|w| norm(w) > 1.5 && norm(w) <= 3.0 * (1.0 + 1e-15)));
        }
    }

    #[test]
    fn frozen_directions_prefix_stable() {
        let a = frozen_directions(2, 6, 1.0, 11);
        let b = frozen_directions(2, 15, 1.0, 11);
        assert_eq!(a[..], b[..6]);
        assert!(b.iter().all(|w| norm(w) > 1.0 && norm(w) <= 2.0 + 1e-12));
    }

    #[test]
    fn anchor_avoids_vanishing_coefficients() {
        let c = select_anchor(&ActivationSpec::Tanh, 2, [-3.0, 3.0]).unwrap();
        assert!(c.anchor != 0.0);
        assert!(c.coeffs.iter().all(|v| v.abs() >= c.score));
    }

    #[test]
    fn height_examples() {
        let tri = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((simplex_height_diagnostic(&tri, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((simplex_height_diagnostic(&tri, 0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        let reg = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]];
        for apex in 0..3 {
            assert!((simplex_height_diagnostic(&reg, apex).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-12);
            assert!((volume_ratio_height(&reg, apex).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-12);
        }
        let flat = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        assert!(matches!(simplex_height_diagnostic(&flat, 0), Err(UapError::DegenerateSimplex { .. })));
    }

    #[test]
    fn surrogate_recovers_polynomial() {
        let target = Target::Polynomial(quadratic());
        let f = target.as_fn();
        let s = fit_surrogate(&f, 1, &BoxDomain::cube(2, -1.0, 1.0).unwrap(), 2).unwrap();
        for x in [[0.3, -0.7], [1.0, 1.0], [-0.2, 0.9]] {
            assert!((s[0].eval(&x).unwrap() - f(&x)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn injected_duplicate_directions_are_singular() {
        let b = Arc::new(enumerate_basis(1, 2).unwrap());
        let p = MultiPoly::from_terms(b, vec![0.0], &[(1.0, vec![2])]).unwrap();
        let mut req = ConstructionRequest::new(
            Target::Polynomial(vec![p]),
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
            ActivationSpec::Tanh,
            0.05,
        );
        req.frozen = Some(FrozenFirstLayer { lambda: 1.0, seed: 0, directions: Some(vec![vec![1.5], vec![1.5], vec![1.8]]) });
        assert!(matches!(construct_random_features(&req), Err(UapError::SingularDraw { .. })));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn heights_agree_with_volume_ratio(
            pts in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 4),
            apex in 0usize..4,
        ) {
            if let (Ok(a), Ok(b)) = (simplex_height_diagnostic(&pts, apex), volume_ratio_height(&pts, apex)) {
                if a > 1e-3 {
                    proptest::prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
                }
            }
        }
    }
}
