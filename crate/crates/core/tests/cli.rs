use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glip::harness::{self, ResultRow};
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn glip(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glip"));
    cmd.args(args).env_remove("GLIP_SEED");
    if let Some(s) = seed_env {
        cmd.env("GLIP_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const BOUNDARY: &str = r#"{"scenario":{"name":"boundary_poisson"},"taus":[0.01,0.001],
    "replicates":20,"inner_draws":200,"bootstrap":20,"seed":5}"#;

const WELL_POSED: &str = r#"{"scenario":{"name":"well_posed_gaussian"},"taus":[0.001],
    "replicates":20,"inner_draws":200,"seed":3}"#;

#[test]
fn run_boundary_poisson_has_exact_data() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "boundary_poisson.json", BOUNDARY);
    let out = dir.path().join("r.csv");
    let o = glip(&["run", "--config", s(&cfg), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = harness::read_csv(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.kf_data_empirical == 0.0 && r.seed == 5));
    let side: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.sidecar.json")).unwrap()).unwrap();
    assert_eq!(side["rows"].as_array().unwrap().len(), 2);
    assert_eq!(side["config"]["seed"], 5);
}

#[test]
fn run_config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    let bad = write(&dir, "bad.json", "{ not json");
    assert_eq!(glip(&["run", "--config", s(&bad), "--out", s(&out)], None).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    let o = glip(&["run", "--config", s(&missing), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let unknown = write(&dir, "u.json", r#"{"scenario":{"name":"boundary_poisson"},"taus":[0.01],"replicate":5}"#);
    assert_eq!(glip(&["run", "--config", s(&unknown), "--out", s(&out)], None).status.code(), Some(2));
    let increasing = write(&dir, "i.json", r#"{"scenario":{"name":"boundary_poisson"},"taus":[0.001,0.01]}"#);
    assert_eq!(glip(&["run", "--config", s(&increasing), "--out", s(&out)], None).status.code(), Some(2));
    assert_eq!(glip(&["run", "--config", s(&unknown)], None).status.code(), Some(2));
}

#[test]
fn run_is_reproducible_across_parallelism() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", WELL_POSED);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert_eq!(glip(&["run", "--config", s(&cfg), "--out", s(&a), "--seed", "9"], None).status.code(), Some(0));
    assert_eq!(
        glip(&["run", "--config", s(&cfg), "--out", s(&b), "--seed", "9", "--parallel", "1"], None).status.code(),
        Some(0)
    );
    assert_eq!(
        glip(&["run", "--config", s(&cfg), "--out", s(&c), "--seed", "9", "--parallel", "3"], None).status.code(),
        Some(0)
    );
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(bytes, fs::read(&c).unwrap());
    assert_eq!(
        fs::read(dir.path().join("b.sidecar.json")).unwrap(),
        fs::read(dir.path().join("c.sidecar.json")).unwrap()
    );
}

#[test]
fn seed_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        r#"{"scenario":{"name":"boundary_poisson"},"taus":[0.01],"replicates":5,"inner_draws":100}"#,
    );
    let out = dir.path().join("r.csv");
    let seed_of = |o: &Path| harness::read_csv(fs::File::open(o).unwrap()).unwrap()[0].seed;
    assert_eq!(glip(&["run", "--config", s(&cfg), "--out", s(&out)], Some("41")).status.code(), Some(0));
    assert_eq!(seed_of(&out), 41);
    assert_eq!(glip(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "7"], Some("41")).status.code(), Some(0));
    assert_eq!(seed_of(&out), 7);
    assert_eq!(glip(&["run", "--config", s(&cfg), "--out", s(&out)], None).status.code(), Some(0));
    assert_eq!(seed_of(&out), 0);
    assert_eq!(glip(&["run", "--config", s(&cfg), "--out", s(&out)], Some("x")).status.code(), Some(2));
}

#[test]
fn dump_config_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", WELL_POSED);
    let first = glip(&["run", "--config", s(&cfg), "--dump-config", "--replicates", "30"], None);
    assert_eq!(first.status.code(), Some(0));
    let dumped = write(&dir, "d.json", &String::from_utf8(first.stdout.clone()).unwrap());
    let second = glip(&["run", "--config", s(&dumped), "--dump-config"], None);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    let v: Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(v["replicates"], 30);
    assert_eq!(v["gamma_rule"]["rule"], "constant");
}

#[test]
fn bound_gaussian_random_bias_coefficient() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", WELL_POSED);
    let o = glip(&["bound", "--config", s(&cfg), "--tau", "1e-4", "--delta", "0.1"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();

    // || H_nu^-1 A^T Sigma^-1 || with Sigma = I, B = I, nu = tau
    let a = DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
    let h = a.transpose() * &a + DMatrix::identity(4, 4) * 1e-4;
    let m = h.try_inverse().unwrap() * a.transpose();
    let norm = m.singular_values().max();
    let got = v["random_bias_coeff"].as_f64().unwrap();
    assert!((got - norm).abs() <= 1e-9 * norm, "{got} vs {norm}");
    assert_eq!(v["valid"], true);
    assert_eq!(v["delta"], 0.1);
}

#[test]
fn bound_matches_library_and_delta_auto() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", WELL_POSED);
    let o = glip(&["bound", "--config", s(&cfg), "--tau", "1e-4", "--delta-auto", "1", "2"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let delta = glip::bounds::delta_schedule(1e-4, 2.0, 1.0).unwrap();
    assert_eq!(v["delta"].as_f64().unwrap(), delta);

    let config = harness::ScenarioConfig::from_json(WELL_POSED).unwrap();
    let problem = config.build_problem(1e-4).unwrap();
    let rho = harness::analytic_data_bound(&problem, 1.0);
    let lib = harness::evaluate_bound(&config, &problem, 0, rho, delta).unwrap();
    assert_eq!(v, serde_json::to_value(&lib).unwrap());

    let bad = glip(&["bound", "--config", s(&cfg), "--tau", "1e-4", "--delta-auto", "1", "3.5"], None);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bound_invalid_report_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "p.json",
        r#"{"scenario":{"name":"well_posed_poisson"},"taus":[0.01],"replicates":10,"inner_draws":100}"#,
    );
    let o = glip(&["bound", "--config", s(&cfg), "--tau", "0.01", "--delta", "0.2"], None);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], false);
    assert!(v["diagnostics"]["lambda_tilde"].as_f64().unwrap() >= 1.0);
}

fn power_law_rows(exponent: f64) -> Vec<ResultRow> {
    harness::ScenarioConfig::log_grid(1e-2, 1e-5, 6)
        .into_iter()
        .map(|tau| ResultRow {
            scenario: "fixture".into(),
            tau,
            gamma: 1.0,
            nu: tau,
            n: 1,
            p: 1,
            replicates: 50,
            inner_draws: 100,
            kf_data_empirical: f64::NAN,
            kf_data_bound: f64::NAN,
            kf_posterior_empirical: 2.0 * (tau * (1.0 / tau).ln()).powf(exponent),
            bound_overall: f64::NAN,
            bound_bias_random: f64::NAN,
            bound_bias_prior: f64::NAN,
            bound_variance: f64::NAN,
            x_star_offset: 0.0,
            failed: false,
            wall_ms: 0,
            seed: 0,
        })
        .collect()
}

#[test]
fn slope_verdicts_and_errors() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("fixture.csv");
    harness::write_csv(&power_law_rows(1.0 / 3.0), fs::File::create(&csv).unwrap()).unwrap();

    let o = glip(&["slope", "--in", s(&csv), "--predicted", "0.3333333333333333", "--tol", "0.01"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["fit"]["slope"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-10);
    assert_eq!(v["verdict"]["pass"], true);

    let o = glip(&["slope", "--in", s(&csv), "--predicted", "ill-posed-interior", "--tol", "0.01"], None);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"]["predicted"].as_f64().unwrap(), 1.0 / 3.0);

    assert_eq!(glip(&["slope", "--in", s(&csv), "--predicted", "well-posed-interior", "--tol", "0.08"], None).status.code(), Some(1));
    assert_eq!(glip(&["slope", "--in", s(&csv), "--predicted", "0.33", "--tol", "-0.1"], None).status.code(), Some(2));
    let junk = write(&dir, "junk.csv", "scenario,tau\nx,notanumber\n");
    assert_eq!(glip(&["slope", "--in", s(&junk), "--predicted", "0.5", "--tol", "0.1"], None).status.code(), Some(2));
}

#[test]
fn full_pipeline_run_then_slope() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        r#"{"scenario":{"name":"ill_posed_gaussian"},"taus":[0.01,0.0025118864315095794,0.00063095734448019288,0.00015848931924611139,3.9810717055349688e-5,1e-5],
            "replicates":60,"inner_draws":300,"seed":11}"#,
    );
    let out = dir.path().join("r.csv");
    assert_eq!(glip(&["run", "--config", s(&cfg), "--out", s(&out)], None).status.code(), Some(0));
    let o = glip(&["slope", "--in", s(&out), "--predicted", "ill-posed-interior", "--tol", "0.1"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
