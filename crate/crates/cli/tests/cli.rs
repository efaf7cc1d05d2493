use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn uap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uap")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    path_str(&p)
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_column(p: &Path, column: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap_or_else(|| panic!("no column {column}"));
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

fn build_quadratic(out: &Path, extra: &[&str]) -> Output {
    let cfg = config("quadratic.toml");
    let out = path_str(out);
    let mut args = vec!["build", "--config", cfg.as_str(), "--out", out.as_str()];
    args.extend_from_slice(extra);
    uap(&args)
}

const QUADRATIC_BODY: &str = r#"
domain = { lo = [-1.0, -1.0], hi = [1.0, 1.0] }

[target]
kind = "polynomial"
outputs = [[
    { coeff = 1.0, exponents = [2, 0] },
    { coeff = -1.0, exponents = [1, 1] },
    { coeff = 2.0, exponents = [0, 1] },
]]
"#;

#[test]
fn build_quadratic_reports_six_units() {
    let dir = TempDir::new().unwrap();
    let o = build_quadratic(dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = read_json(dir.path().join("network.json"));
    assert_eq!(doc["N"], 6);
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["report"]["hidden_units"], 6);
    assert_eq!(report["report"]["status"], "success");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("hidden units N        6"), "{stdout}");
}

#[test]
fn non_positive_eps_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &format!("pipeline = \"poly\"\neps = -0.5\nsigma = {{ kind = \"tanh\" }}\n{QUADRATIC_BODY}"));
    let o = uap(&["build", "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("eps"), "{}", stderr(&o));
}

#[test]
fn linear_table_activation_fails_the_probe() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "pipeline = \"poly\"\neps = 0.01\nsigma = {{ kind = \"table\", points = [[-100.0, -50.0], [100.0, 50.0]] }}\n{QUADRATIC_BODY}"
    );
    let cfg = write_config(&dir, "linear.toml", &text);
    let o = uap(&["build", "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("activation fails non-polynomial probe"), "{}", stderr(&o));
    let report = read_json(dir.path().join("report.json"));
    assert!(report["error"].as_str().unwrap().contains("non-polynomial probe"));
    assert!(report["config_hash"].as_str().is_some());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let text = format!("pipeline = \"poly\"\neps = 0.01\ncolour = 3\nsigma = {{ kind = \"tanh\" }}\n{QUADRATIC_BODY}");
    let cfg = write_config(&dir, "unknown.toml", &text);
    let o = uap(&["build", "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&uap(&["build", "--out", &path_str(dir.path())])), 2);
    assert_eq!(code(&uap(&["build", "--config", "/nonexistent/cfg.toml"])), 2);
}

#[test]
fn verify_matches_build_and_catches_tampering() {
    let dir = TempDir::new().unwrap();
    let build_dir = dir.path().join("build");
    assert_eq!(code(&build_quadratic(&build_dir, &[])), 0);
    let report = read_json(build_dir.join("report.json"));
    let built_grid = report["report"]["certificate"]["grid_error"][0].as_f64().unwrap();
    let built_cert = report["report"]["certified_error"][0].as_f64().unwrap();

    let net = path_str(&build_dir.join("network.json"));
    let vdir = dir.path().join("verify");
    let cfg = config("quadratic.toml");
    let o = uap(&["verify", "--network", &net, "--config", &cfg, "--out", &path_str(&vdir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let grid: f64 = csv_column(&vdir.join("verify.csv"), "grid_error")[0].parse().unwrap();
    let cert: f64 = csv_column(&vdir.join("verify.csv"), "certified")[0].parse().unwrap();
    assert!((grid - built_grid).abs() <= 1e-12, "{grid} vs {built_grid}");
    assert!((cert - built_cert).abs() <= 1e-12, "{cert} vs {built_cert}");

    let mut doc = read_json(build_dir.join("network.json"));
    let w = doc["W2"][3][0].as_f64().unwrap();
    doc["W2"][3][0] = Value::from(w + 1.0);
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let o = uap(&["verify", "--network", &path_str(&tampered), "--config", &cfg, "--out", &path_str(&vdir)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn verify_rejects_version_mismatch_and_garbage() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&build_quadratic(dir.path(), &[])), 0);
    let cfg = config("quadratic.toml");
    let mut doc = read_json(dir.path().join("network.json"));
    doc["version"] = Value::from(99);
    let bad = dir.path().join("v99.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let o = uap(&["verify", "--network", &path_str(&bad), "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));

    let junk = dir.path().join("junk.json");
    fs::write(&junk, "{ not json").unwrap();
    let o = uap(&["verify", "--network", &path_str(&junk), "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 2);
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[test]
fn finer_verify_grid_never_reports_less_error() {
    let dir = TempDir::new().unwrap();
    let build_dir = dir.path().join("build");
    assert_eq!(code(&build_quadratic(&build_dir, &["--grid-res", "17"])), 0);
    let report = read_json(build_dir.join("report.json"));
    let cert = &report["report"]["certificate"];
    let built = cert["grid_error"][0].as_f64().unwrap();
    let res: Vec<usize> = cert["resolution"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    // Every build axis grid is a subset of a uniform grid with R − 1 = lcm of the intervals.
    let lcm = res.iter().fold(1, |acc, &r| acc / gcd(acc, r - 1) * (r - 1));
    let fine = (lcm + 1).to_string();
    let o = uap(&[
        "verify",
        "--network",
        &path_str(&build_dir.join("network.json")),
        "--config",
        &config("quadratic.toml"),
        "--grid-res",
        &fine,
        "--out",
        &path_str(dir.path()),
    ]);
    assert!(code(&o) == 0 || code(&o) == 1, "{}", stderr(&o));
    let v: f64 = csv_column(&dir.path().join("verify.csv"), "grid_error")[0].parse().unwrap();
    assert!(v >= built, "fine {v} < build {built} (grid {res:?} -> {fine})");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&build_quadratic(&a, &["--seed", "7"])), 0);
    assert_eq!(code(&build_quadratic(&b, &["--seed", "7"])), 0);
    for f in ["network.json", "report.csv", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn every_file_carries_hash_and_version() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&build_quadratic(dir.path(), &[])), 0);
    let doc = read_json(dir.path().join("network.json"));
    let hash = doc["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert!(doc["tool_version"].as_str().unwrap().starts_with("uap "));
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["config_hash"].as_str().unwrap(), hash);
    let hashes = csv_column(&dir.path().join("report.csv"), "config_hash");
    assert!(!hashes.is_empty() && hashes.iter().all(|h| *h == hash));
    assert!(csv_column(&dir.path().join("report.csv"), "tool_version").iter().all(|v| v.starts_with("uap ")));

    let other = dir.path().join("other");
    assert_eq!(code(&build_quadratic(&other, &["--seed", "3"])), 0);
    assert_ne!(read_json(other.join("network.json"))["config_hash"].as_str().unwrap(), hash);
}

#[test]
fn expression_target_on_continuous_pipeline() {
    let dir = TempDir::new().unwrap();
    let text = r#"
pipeline = "continuous"
eps = 0.5
sigma = { kind = "tanh" }
domain = { lo = [0.0], hi = [1.0] }

[target]
kind = "expression"
outputs = ["abs(x1 - 0.5)"]
"#;
    let cfg = write_config(&dir, "lip.toml", text);
    let o = uap(&["build", "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(dir.path().join("report.json"));
    assert!(report["report"]["diagnostics"]["d_epsilon"].as_u64().unwrap() <= 6);
}

#[test]
fn expression_target_is_refused_by_poly_pipeline() {
    let dir = TempDir::new().unwrap();
    let text = "pipeline = \"poly\"\neps = 0.1\nsigma = { kind = \"tanh\" }\ndomain = { lo = [0.0], hi = [1.0] }\n[target]\nkind = \"expression\"\noutputs = [\"x1^2\"]\n";
    let cfg = write_config(&dir, "e.toml", text);
    assert_eq!(code(&uap(&["build", "--config", &cfg, "--out", &path_str(dir.path())])), 2);
}

#[test]
fn density_study_has_unit_fraction() {
    let dir = TempDir::new().unwrap();
    let o = uap(&["study", "--config", &config("density.toml"), "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let frac = csv_column(&dir.path().join("density_summary.csv"), "success_fraction");
    assert_eq!(frac, vec!["1.0"]);
    assert_eq!(csv_column(&dir.path().join("density.csv"), "success").len(), 1000);
}

#[test]
fn barycentric_sweep_spread_is_non_increasing_on_the_tail() {
    let dir = TempDir::new().unwrap();
    let o = uap(&["study", "--config", &config("barycentric.toml"), "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = dir.path().join("barycentric.csv");
    let ks: Vec<usize> = csv_column(&p, "k").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(ks, (2..=8).collect::<Vec<_>>());
    let spread: Vec<f64> = csv_column(&p, "spread").iter().map(|v| v.parse().unwrap()).collect();
    let tail = &spread[spread.len() / 2..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{spread:?}");
}

#[test]
fn empty_seed_list_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[random-features]
seeds = []

[random-features.build]
pipeline = "random-features"
eps = 0.05
sigma = { kind = "tanh" }
domain = { lo = [-1.0], hi = [1.0] }
target = { kind = "polynomial", outputs = [[{ coeff = 1.0, exponents = [2] }]] }
frozen = { lambda = 1.0, seed = 0 }
"#;
    let cfg = write_config(&dir, "rf.toml", text);
    let o = uap(&["study", "--config", &cfg, "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn alternation_study_reaches_one_half() {
    let dir = TempDir::new().unwrap();
    let o = uap(&["study", "--config", &config("alternation.toml"), "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ratios: Vec<f64> = csv_column(&dir.path().join("alternation.csv"), "ratio").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(ratios.len(), 9);
    assert!(ratios.iter().any(|&r| r > 0.25));
    assert!(ratios[6..].iter().all(|r| (r - 0.5).abs() <= 0.05));
}

#[test]
fn two_study_tables_are_rejected() {
    let dir = TempDir::new().unwrap();
    let text = "[density]\nn = 1\nd = 2\ndraws = 5\n\n[growth]\nsigma = { kind = \"tanh\" }\nd = 2\ngamma = 0.5\nk_min = 1\nk_max = 6\n";
    let cfg = write_config(&dir, "two.toml", text);
    assert_eq!(code(&uap(&["study", "--config", &cfg, "--out", &path_str(dir.path())])), 2);
}

#[test]
fn demo_runs_every_scenario() {
    let dir = TempDir::new().unwrap();
    let o = uap(&["demo", "--out", &path_str(dir.path())]);
    assert_eq!(code(&o), 0, "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    for name in ["quadratic-logistic", "quadratic-tanh", "small-output-weights", "large-input-norms", "sine-continuous", "random-features"] {
        assert!(dir.path().join(name).join("network.json").exists(), "{name}");
    }
}
