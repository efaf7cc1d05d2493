//! TOML run configurations and their conversion into construction requests.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use uap_core::constructor::{ConstructionOptions, Constraints, FrozenFirstLayer, ScaleSchedule};
use uap_core::monomials::enumerate_basis;
use uap_core::verify::DrawLaw;
use uap_core::{ActivationSpec, BoxDomain, ConstructionRequest, MultiPoly, Target};

use crate::expr::ExpressionTarget;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineName {
    #[serde(alias = "polynomial")]
    Poly,
    Continuous,
    #[serde(alias = "random_features")]
    RandomFeatures,
}

impl PipelineName {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineName::Poly => "poly",
            PipelineName::Continuous => "continuous",
            PipelineName::RandomFeatures => "random-features",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// One term list per output coordinate, expanded about `center` (default 0).
    Polynomial {
        outputs: Vec<Vec<Term>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// One evalexpr expression per output in the variables x1..xn.
    Expression { outputs: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Pass threshold; defaults to eps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Plain uniform grid per axis instead of the certification grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    pub pipeline: PipelineName,
    pub eps: f64,
    pub sigma: ActivationSpec,
    pub domain: DomainConfig,
    pub target: TargetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<FrozenFirstLayer>,
    #[serde(default)]
    pub options: ConstructionOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid_res: Option<usize>,
    pub max_k: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut BuildConfig) {
        if let Some(seed) = self.seed {
            cfg.options.seed = seed;
            if let Some(fr) = &mut cfg.frozen {
                fr.seed = seed;
            }
        }
        if let Some(r) = self.grid_res {
            cfg.options.certify.min_resolution = r;
        }
        if let Some(k) = self.max_k {
            cfg.options.max_k = k;
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

impl BuildConfig {
    /// Field-level checks that do not need a constructed request.
    pub fn check(&self) -> Result<(), CliError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(usage(format!("eps: must be a finite number > 0, got {}", self.eps)));
        }
        let n = self.domain.lo.len();
        if n == 0 || self.domain.hi.len() != n {
            return Err(usage(format!(
                "domain: lo and hi must be non-empty and of equal length, got {} and {}",
                n,
                self.domain.hi.len()
            )));
        }
        if let Some(t) = self.verify.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(usage(format!("verify.tolerance: must be > 0, got {t}")));
            }
        }
        if self.verify.resolution == Some(0) {
            return Err(usage("verify.resolution: must be ≥ 1"));
        }
        if self.options.certify.min_resolution < 2 {
            return Err(usage("options.certify.min_resolution: must be ≥ 2"));
        }
        if matches!(self.target, TargetConfig::Expression { .. }) && self.pipeline == PipelineName::Poly {
            return Err(usage("target: the poly pipeline needs a polynomial target"));
        }
        if self.pipeline == PipelineName::RandomFeatures && self.frozen.is_none() {
            return Err(usage("frozen: the random-features pipeline needs a [frozen] table"));
        }
        if self.pipeline != PipelineName::RandomFeatures && self.frozen.is_some() {
            return Err(usage("frozen: only the random-features pipeline uses a frozen first layer"));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain, CliError> {
        BoxDomain::new(self.domain.lo.clone(), self.domain.hi.clone()).map_err(|e| usage(format!("domain: {e}")))
    }

    pub fn target(&self) -> Result<Target, CliError> {
        let n = self.domain.lo.len();
        match &self.target {
            TargetConfig::Polynomial { outputs, center } => {
                if outputs.is_empty() {
                    return Err(usage("target.outputs: needs at least one output"));
                }
                let center = center.clone().unwrap_or_else(|| vec![0.0; n]);
                if center.len() != n {
                    return Err(usage(format!("target.center: expected {n} coordinates, got {}", center.len())));
                }
                let mut degree = 1;
                for (t, terms) in outputs.iter().enumerate() {
                    for term in terms {
                        if term.exponents.len() != n {
                            return Err(usage(format!(
                                "target.outputs[{t}]: exponents {:?} have length {}, expected {n}",
                                term.exponents,
                                term.exponents.len()
                            )));
                        }
                        if !term.coeff.is_finite() {
                            return Err(usage(format!("target.outputs[{t}]: non-finite coefficient")));
                        }
                        degree = degree.max(term.exponents.iter().sum::<u32>() as usize);
                    }
                }
                let basis = Arc::new(enumerate_basis(n, degree).map_err(|e| usage(format!("target: {e}")))?);
                let polys = outputs
                    .iter()
                    .enumerate()
                    .map(|(t, terms)| {
                        let terms: Vec<(f64, Vec<u32>)> = terms.iter().map(|tm| (tm.coeff, tm.exponents.clone())).collect();
                        MultiPoly::from_terms(basis.clone(), center.clone(), &terms)
                            .map_err(|e| usage(format!("target.outputs[{t}]: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Target::Polynomial(polys))
            }
            TargetConfig::Expression { outputs } => {
                let target = ExpressionTarget::parse(outputs, n)?;
                target.probe(&self.domain()?)?;
                Ok(target.into_target())
            }
        }
    }

    pub fn request(&self) -> Result<ConstructionRequest, CliError> {
        self.check()?;
        let mut req = ConstructionRequest::new(self.target()?, self.domain()?, self.sigma.clone(), self.eps);
        req.anchor = self.anchor.clone();
        req.constraints = self.constraints;
        req.frozen = self.frozen.clone();
        req.options = self.options.clone();
        req.validate().map_err(|e| usage(e.to_string()))?;
        Ok(req)
    }

    pub fn tolerance(&self) -> f64 {
        self.verify.tolerance.unwrap_or(self.eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityStudy {
    pub n: usize,
    pub d: usize,
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<DrawLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomFeatureStudy {
    pub seeds: Vec<u64>,
    pub build: BuildConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycentricStudy {
    pub k_min: usize,
    pub k_max: usize,
    pub build: BuildConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternationStudy {
    pub sigma: ActivationSpec,
    pub d: usize,
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default)]
    pub schedule: ScaleSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthStudy {
    pub sigma: ActivationSpec,
    pub d: usize,
    pub gamma: f64,
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default)]
    pub schedule: ScaleSchedule,
}

/// Exactly one study table per file, e.g. `[density]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum StudyConfig {
    Density(DensityStudy),
    RandomFeatures(RandomFeatureStudy),
    Barycentric(BarycentricStudy),
    Alternation(AlternationStudy),
    Growth(GrowthStudy),
}

fn check_k_range(k_min: usize, k_max: usize) -> Result<(), CliError> {
    if k_min > k_max {
        return Err(usage(format!("k_min: must be ≤ k_max, got {k_min} > {k_max}")));
    }
    Ok(())
}

impl StudyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StudyConfig::Density(_) => "density",
            StudyConfig::RandomFeatures(_) => "random_features",
            StudyConfig::Barycentric(_) => "barycentric",
            StudyConfig::Alternation(_) => "alternation",
            StudyConfig::Growth(_) => "growth",
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        match self {
            StudyConfig::Density(s) => {
                if let Some(seed) = o.seed {
                    s.seed = seed;
                }
            }
            StudyConfig::RandomFeatures(s) => o.apply(&mut s.build),
            StudyConfig::Barycentric(s) => o.apply(&mut s.build),
            StudyConfig::Alternation(_) | StudyConfig::Growth(_) => {}
        }
    }

    pub fn check(&self) -> Result<(), CliError> {
        match self {
            StudyConfig::Density(s) => {
                if s.n == 0 || s.d == 0 || s.draws == 0 {
                    return Err(usage("density: n, d and draws must all be ≥ 1"));
                }
                if let Some(t) = s.tol {
                    if !(t > 0.0) {
                        return Err(usage(format!("density.tol: must be > 0, got {t}")));
                    }
                }
                Ok(())
            }
            StudyConfig::RandomFeatures(s) => {
                if s.seeds.is_empty() {
                    return Err(usage("random-features.seeds: the seed list is empty"));
                }
                if s.seeds.len() < uap_core::verify::MIN_STUDY_SEEDS {
                    return Err(usage(format!(
                        "random-features.seeds: need at least {} seeds, got {}",
                        uap_core::verify::MIN_STUDY_SEEDS,
                        s.seeds.len()
                    )));
                }
                if s.build.pipeline != PipelineName::RandomFeatures {
                    return Err(usage("random-features.build.pipeline: must be \"random-features\""));
                }
                s.build.request().map(|_| ())
            }
            StudyConfig::Barycentric(s) => {
                check_k_range(s.k_min, s.k_max)?;
                if s.build.pipeline != PipelineName::Poly {
                    return Err(usage("barycentric.build.pipeline: must be \"poly\""));
                }
                s.build.request().map(|_| ())
            }
            StudyConfig::Alternation(s) => {
                check_k_range(s.k_min, s.k_max)?;
                s.sigma.validate().map_err(|e| usage(format!("alternation.sigma: {e}")))?;
                s.schedule.validate().map_err(|e| usage(format!("alternation.schedule: {e}")))
            }
            StudyConfig::Growth(s) => {
                check_k_range(s.k_min, s.k_max)?;
                if !(s.gamma > 0.0) {
                    return Err(usage(format!("growth.gamma: must be > 0, got {}", s.gamma)));
                }
                s.sigma.validate().map_err(|e| usage(format!("growth.sigma: {e}")))?;
                s.schedule.validate().map_err(|e| usage(format!("growth.schedule: {e}")))
            }
        }
    }
}
