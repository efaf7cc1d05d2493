//! Subcommand bodies. Each returns whether the run counts as a success.

use std::path::{Path, PathBuf};

use serde::Serialize;
use uap_core::algebra::DEFAULT_NONSINGULAR_TOL;
use uap_core::constructor::{
    barycentric_diagnostic, construct_continuous, construct_polynomial, construct_random_features, walk_schedule, Pipeline,
};
use uap_core::minimax::{approx_growth_diagnostic, DEFAULT_GRID};
use uap_core::scenarios;
use uap_core::verify::{
    certify, density_trial_with, random_feature_study, sup_error_per_output, DrawLaw, GridSpec, TrialSummary,
};
use uap_core::{ConstructionReport, ConstructionRequest, NetworkDocument, UapError};

use crate::config::{read_toml, BuildConfig, Overrides, PipelineName, StudyConfig};
use crate::output::{self, Provenance};
use crate::CliError;

pub struct Common {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
}

impl Common {
    fn config_path(&self, command: &str) -> Result<&Path, CliError> {
        self.config.as_deref().ok_or_else(|| CliError::Usage(format!("{command} needs --config <path>")))
    }
}

fn failure(e: UapError) -> CliError {
    CliError::Failure(e.to_string())
}

fn run(pipeline: Pipeline, req: &ConstructionRequest) -> uap_core::Result<ConstructionReport> {
    match pipeline {
        Pipeline::Polynomial => construct_polynomial(req),
        Pipeline::Continuous => construct_continuous(req),
        Pipeline::RandomFeatures => construct_random_features(req),
    }
}

fn core_pipeline(p: PipelineName) -> Pipeline {
    match p {
        PipelineName::Poly => Pipeline::Polynomial,
        PipelineName::Continuous => Pipeline::Continuous,
        PipelineName::RandomFeatures => Pipeline::RandomFeatures,
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("  wrote {}", f.display());
    }
}

pub fn build(c: &Common) -> Result<bool, CliError> {
    let mut cfg: BuildConfig = read_toml(c.config_path("build")?)?;
    c.overrides.apply(&mut cfg);
    let prov = Provenance::of(&cfg);
    let req = cfg.request()?;
    match run(core_pipeline(cfg.pipeline), &req) {
        Ok(report) => {
            let files = output::write_build(&c.out, &report, &prov)?;
            print!("{}", output::summary(cfg.pipeline.as_str(), &report));
            println!("  config hash           {}", prov.config_hash);
            print_files(&files);
            Ok(report.status.is_success())
        }
        Err(e) => {
            let files = output::write_failure(&c.out, &e.to_string(), &prov)?;
            print_files(&files);
            Err(failure(e))
        }
    }
}

#[derive(Serialize)]
struct VerifyRow<'a> {
    output: usize,
    grid_error: f64,
    certified: f64,
    resolution: String,
    points: usize,
    tolerance: f64,
    pass: bool,
    config_hash: &'a str,
    tool_version: &'a str,
}

pub fn verify(c: &Common, network: &Path) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(network)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", network.display())))?;
    let doc = NetworkDocument::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", network.display())))?;
    let weights = doc.weights().map_err(|e| CliError::Usage(format!("{}: {e}", network.display())))?;
    let cfg: BuildConfig = read_toml(c.config_path("verify")?)?;
    let req = cfg.request()?;
    if doc.n != req.domain.dim() || doc.m != req.target.m() {
        return Err(CliError::Usage(format!(
            "network maps ℝ^{} → ℝ^{} but the config describes ℝ^{} → ℝ^{}",
            doc.n,
            doc.m,
            req.domain.dim(),
            req.target.m()
        )));
    }
    let resolution = c.overrides.grid_res.or(cfg.verify.resolution);
    let prov = Provenance::of(&(&cfg, &doc, resolution));
    let built_from = Provenance::of(&{
        let mut b = cfg.clone();
        c.overrides.apply(&mut b);
        b
    });
    if doc.config_hash.as_deref().is_some_and(|h| h != built_from.config_hash) {
        eprintln!("note: the network records a different config hash than this configuration");
    }

    let sigma = doc.sigma_kind.clone();
    let f = req.target.as_fn();
    let g = move |x: &[f64]| weights.forward(&sigma, x).unwrap_or_else(|_| vec![f64::NAN; doc.m]);
    let tol = cfg.tolerance();
    let (grid_error, certified, res, points) = match resolution {
        Some(r) => {
            let grid = GridSpec::uniform(req.domain.clone(), r, req.options.certify.cap).map_err(|e| CliError::Usage(e.to_string()))?;
            let errs = sup_error_per_output(&*f, &g, &grid).map_err(failure)?;
            let certified = vec![f64::NAN; errs.len()];
            (errs, certified, grid.resolution().to_vec(), grid.total())
        }
        None => {
            let cert = certify(&*f, &g, &req.domain, req.eps, req.options.certify).map_err(failure)?;
            (cert.grid_error, cert.certified, cert.resolution, cert.points)
        }
    };
    let judged: Vec<f64> = if resolution.is_some() { grid_error.clone() } else { certified.clone() };
    let rows: Vec<VerifyRow> = (0..grid_error.len())
        .map(|t| VerifyRow {
            output: t,
            grid_error: grid_error[t],
            certified: certified[t],
            resolution: format!("{res:?}"),
            points,
            tolerance: tol,
            pass: judged[t] < tol,
            config_hash: &prov.config_hash,
            tool_version: &prov.tool_version,
        })
        .collect();
    output::ensure_dir(&c.out)?;
    let file = output::write_csv(&c.out.join("verify.csv"), &rows)?;
    let pass = rows.iter().all(|r| r.pass);
    println!("verify: {}", if pass { "PASS" } else { "FAIL" });
    println!("  grid {res:?} ({points} points), tolerance {tol:e}");
    for r in &rows {
        println!("  output {}: grid error {:.12e}, certified {:.12e}", r.output, r.grid_error, r.certified);
    }
    print_files(&[file]);
    Ok(pass)
}

#[derive(Serialize)]
struct TrialCsvRow<'a> {
    trial: usize,
    seed: u64,
    success: bool,
    singular: bool,
    metric: f64,
    hidden_units: usize,
    detail: &'a str,
    config_hash: &'a str,
    tool_version: &'a str,
}

#[derive(Serialize)]
struct TrialSummaryRow<'a> {
    study: &'a str,
    trials: usize,
    successes: usize,
    singular_draws: usize,
    success_fraction: f64,
    config_hash: &'a str,
    tool_version: &'a str,
}

fn write_trials(dir: &Path, name: &str, s: &TrialSummary, prov: &Provenance) -> Result<Vec<PathBuf>, CliError> {
    let rows: Vec<TrialCsvRow> = s
        .rows
        .iter()
        .map(|r| TrialCsvRow {
            trial: r.trial,
            seed: r.seed,
            success: r.success,
            singular: r.singular,
            metric: r.metric,
            hidden_units: r.hidden_units,
            detail: &r.detail,
            config_hash: &prov.config_hash,
            tool_version: &prov.tool_version,
        })
        .collect();
    let summary = [TrialSummaryRow {
        study: name,
        trials: s.trials,
        successes: s.successes,
        singular_draws: s.singular_draws,
        success_fraction: s.fraction(),
        config_hash: &prov.config_hash,
        tool_version: &prov.tool_version,
    }];
    println!("{name}: {}/{} successes, {} singular, fraction {}", s.successes, s.trials, s.singular_draws, s.fraction());
    Ok(vec![
        output::write_csv(&dir.join(format!("{name}.csv")), &rows)?,
        output::write_csv(&dir.join(format!("{name}_summary.csv")), &summary)?,
    ])
}

#[derive(Serialize)]
struct BarycentricCsvRow<'a> {
    k: usize,
    lambda: f64,
    crossing: f64,
    lambda_prime: f64,
    spread: f64,
    origin_spread: f64,
    max_coordinate_gap: f64,
    coefficient_norm: f64,
    c_f: f64,
    min_height: f64,
    bound_holds: bool,
    degenerate: String,
    config_hash: &'a str,
    tool_version: &'a str,
}

#[derive(Serialize)]
struct AlternationCsvRow<'a> {
    k: usize,
    lambda: f64,
    lo: f64,
    hi: f64,
    minimax_error: f64,
    ratio: f64,
    crossing: f64,
    passes: bool,
    central_ratio: f64,
    central_crossing: f64,
    config_hash: &'a str,
    tool_version: &'a str,
}

#[derive(Serialize)]
struct GrowthCsvRow<'a> {
    k: usize,
    lambda: f64,
    minimax_error: f64,
    ratio: f64,
    config_hash: &'a str,
    tool_version: &'a str,
}

pub fn study(c: &Common) -> Result<bool, CliError> {
    let mut cfg: StudyConfig = read_toml(c.config_path("study")?)?;
    cfg.apply(&c.overrides);
    cfg.check()?;
    let prov = Provenance::of(&cfg);
    output::ensure_dir(&c.out)?;
    let dir = c.out.as_path();
    let name = cfg.name();
    let files = match &cfg {
        StudyConfig::Density(s) => {
            let law = s.law.unwrap_or(DrawLaw::Gaussian);
            let tol = s.tol.unwrap_or(DEFAULT_NONSINGULAR_TOL);
            let summary = density_trial_with(s.n, s.d, s.draws, s.seed, law, tol).map_err(failure)?;
            write_trials(dir, name, &summary, &prov)?
        }
        StudyConfig::RandomFeatures(s) => {
            let req = s.build.request()?;
            let summary = random_feature_study(&req, &s.seeds).map_err(failure)?;
            write_trials(dir, name, &summary, &prov)?
        }
        StudyConfig::Barycentric(s) => {
            let req = s.build.request()?;
            let report = construct_polynomial(&req).map_err(failure)?;
            let rows = barycentric_diagnostic(&report, s.k_min..s.k_max + 1).map_err(failure)?;
            let rows: Vec<BarycentricCsvRow> = rows
                .into_iter()
                .map(|r| BarycentricCsvRow {
                    k: r.k,
                    lambda: r.lambda,
                    crossing: r.crossing,
                    lambda_prime: r.lambda_prime,
                    spread: r.spread,
                    origin_spread: r.origin_spread,
                    max_coordinate_gap: r.max_coordinate_gap,
                    coefficient_norm: r.coefficient_norm,
                    c_f: r.c_f,
                    min_height: r.min_height,
                    bound_holds: r.bound_holds,
                    degenerate: r.degenerate.unwrap_or_default(),
                    config_hash: &prov.config_hash,
                    tool_version: &prov.tool_version,
                })
                .collect();
            for r in &rows {
                println!("k={} lambda'={:.4e} spread={:.4e} bound_holds={}", r.k, r.lambda_prime, r.spread, r.bound_holds);
            }
            vec![output::write_csv(&dir.join("barycentric.csv"), &rows)?]
        }
        StudyConfig::Alternation(s) => {
            let steps = walk_schedule(&s.sigma, &s.schedule, s.d, s.k_min..s.k_max + 1, s.grid.unwrap_or(DEFAULT_GRID))
                .map_err(failure)?;
            let rows: Vec<AlternationCsvRow> = steps
                .iter()
                .map(|st| AlternationCsvRow {
                    k: st.k,
                    lambda: st.lambda,
                    lo: st.interval.lo,
                    hi: st.interval.hi,
                    minimax_error: st.fit.error,
                    ratio: st.check.map_or(f64::NAN, |c| c.ratio),
                    crossing: st.check.map_or(f64::NAN, |c| c.crossing),
                    passes: st.check.is_some_and(|c| c.passes),
                    central_ratio: st.crossing.map_or(f64::NAN, |c| c.ratio),
                    central_crossing: st.crossing.map_or(f64::NAN, |c| c.crossing),
                    config_hash: &prov.config_hash,
                    tool_version: &prov.tool_version,
                })
                .collect();
            for r in &rows {
                println!("k={} E={:.4e} ratio={:.4} passes={}", r.k, r.minimax_error, r.ratio, r.passes);
            }
            vec![output::write_csv(&dir.join("alternation.csv"), &rows)?]
        }
        StudyConfig::Growth(s) => {
            if s.k_max - s.k_min + 1 < 3 {
                return Err(CliError::Usage("growth: needs at least 3 scales (k_max - k_min ≥ 2)".into()));
            }
            let g = approx_growth_diagnostic(&s.sigma, &s.schedule, s.d, s.gamma, s.k_min..s.k_max + 1).map_err(failure)?;
            let rows: Vec<GrowthCsvRow> = (0..g.ratios.len())
                .map(|i| GrowthCsvRow {
                    k: s.k_min + i,
                    lambda: g.lambdas[i],
                    minimax_error: g.errors[i],
                    ratio: g.ratios[i],
                    config_hash: &prov.config_hash,
                    tool_version: &prov.tool_version,
                })
                .collect();
            println!("growth: tail strictly decreasing = {}", g.tail_strictly_decreasing);
            vec![output::write_csv(&dir.join("growth.csv"), &rows)?]
        }
    };
    print_files(&files);
    Ok(true)
}

fn apply_to_request(o: &Overrides, req: &mut ConstructionRequest) {
    if let Some(seed) = o.seed {
        req.options.seed = seed;
        if let Some(fr) = &mut req.frozen {
            fr.seed = seed;
        }
    }
    if let Some(r) = o.grid_res {
        req.options.certify.min_resolution = r;
    }
    if let Some(k) = o.max_k {
        req.options.max_k = k;
    }
}

pub fn demo(c: &Common) -> Result<bool, CliError> {
    let mut all_ok = true;
    let mut table = Vec::new();
    for mut sc in scenarios::all() {
        apply_to_request(&c.overrides, &mut sc.request);
        let req = &sc.request;
        let prov = Provenance::of(&serde_json::json!({
            "scenario": sc.name,
            "description": sc.description,
            "pipeline": sc.pipeline,
            "sigma": req.sigma,
            "eps": req.eps,
            "domain": req.domain,
            "anchor": req.anchor,
            "constraints": req.constraints,
            "frozen": req.frozen,
            "options": req.options,
        }));
        let dir = c.out.join(sc.name);
        match run(sc.pipeline, req) {
            Ok(report) => {
                let files = output::write_build(&dir, &report, &prov)?;
                print!("{}", output::summary(sc.name, &report));
                print_files(&files);
                all_ok &= report.status.is_success();
                table.push(format!(
                    "{:<22} {:<8} N={:<5} certified={:.3e} eps={:e}",
                    sc.name,
                    if report.status.is_success() { "success" } else { "FAILED" },
                    report.hidden_units,
                    report.max_certified_error(),
                    req.eps
                ));
            }
            Err(e) => {
                let files = output::write_failure(&dir, &e.to_string(), &prov)?;
                print_files(&files);
                all_ok = false;
                table.push(format!("{:<22} error: {e}", sc.name));
            }
        }
    }
    println!("\nscenario summary");
    for line in table {
        println!("  {line}");
    }
    Ok(all_ok)
}
