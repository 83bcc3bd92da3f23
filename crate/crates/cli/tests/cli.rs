//! End-to-end CLI checks: dispatch, exit codes, schema validity of every
//! report, and manifest reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rror() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rror"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rror-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

fn validate(schema_name: &str, instance: &serde_json::Value) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(format!("{schema_name}.schema.json"));
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&schema_path).unwrap()).unwrap();
    let compiled = jsonschema::validator_for(&schema).expect("valid schema");
    let errors: Vec<String> = compiled
        .iter_errors(instance)
        .map(|e| format!("{e} at {}", e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{schema_name} schema violations: {errors:#?}");
}

fn write_geometric_csv(dir: &Path) -> PathBuf {
    let path = dir.join("geo.csv");
    std::fs::write(&path, "price,dividend\n100,\n105,5\n110.25,5.25\n").unwrap();
    path
}

fn write_private_csv(dir: &Path) -> PathBuf {
    let path = dir.join("private.csv");
    let mut body = String::from("growth,div_to_book\n");
    for t in 0..40 {
        let delta = 0.02 + 0.0015 * (t as f64);
        let noise = 0.002 * ((t * 37 % 11) as f64 / 11.0 - 0.5);
        let growth = 0.1 - 0.5 * delta + noise;
        body.push_str(&format!("{growth},{delta}\n"));
    }
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn estimate_ddm_reports_exact_geometric_rate() {
    let dir = workdir("est");
    let input = write_geometric_csv(&dir);
    let out = rror()
        .args(["estimate", "--model", "ddm", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    let report = stdout_json(&out);
    validate("estimate", &report);
    let k = report["result"]["fit"]["coeffs"][0].as_f64().unwrap();
    assert!((k - 0.10).abs() < 1e-12);
    assert_eq!(report["manifest"]["command"], "estimate");
}

#[test]
fn estimate_private_reports_delta_and_m() {
    let dir = workdir("estp");
    let input = write_private_csv(&dir);
    let out = rror()
        .args(["estimate", "--model", "private", "--paying", "--book-value", "150", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    let report = stdout_json(&out);
    validate("estimate", &report);
    let delta = report["result"]["delta_hat"].as_f64().unwrap();
    let m = report["result"]["m_hat"].as_f64().unwrap();
    assert!((delta - 0.5).abs() < 0.05, "delta {delta}");
    assert!((m - 2.0).abs() < 0.2, "m {m}");
    assert!(report["result"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_file_exits_two() {
    let out = rror()
        .args(["estimate", "--model", "ddm", "--input", "/nonexistent/input.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exact_fit_test_statistics_exit_one() {
    let dir = workdir("exact");
    let input = write_geometric_csv(&dir);
    let out = rror()
        .args(["test", "--model", "ddm", "--restrict", "k1=0.1", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exact fit"));
}

#[test]
fn test_command_reports_all_statistics() {
    let dir = workdir("test");
    let input = write_private_csv(&dir);
    let out = rror()
        .args(["test", "--model", "private", "--paying", "--restrict", "delta=0.5", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    let report = stdout_json(&out);
    validate("test", &report);
    let r = &report["result"]["report"];
    let (w, lr, lm) = (
        r["w_stat"].as_f64().unwrap(),
        r["lr_stat"].as_f64().unwrap(),
        r["lm_stat"].as_f64().unwrap(),
    );
    assert!(w >= lr && lr >= lm);
    assert!(r["t_stat"].is_number(), "single-coefficient restriction exposes t");
}

#[test]
fn bayes_same_seed_gives_identical_digest() {
    let dir = workdir("bayes");
    let input = write_private_csv(&dir);
    let run = || {
        let out = rror()
            .args(["bayes", "--paying", "--draws", "10000", "--seed", "7", "--input"])
            .arg(&input)
            .output()
            .unwrap();
        stdout_json(&out)
    };
    let a = run();
    let b = run();
    validate("bayes", &a);
    assert_eq!(
        a["manifest"]["output_digest"], b["manifest"]["output_digest"],
        "same seed must reproduce the digest bit-exactly"
    );
    let c = {
        let out = rror()
            .args(["bayes", "--paying", "--draws", "10000", "--seed", "8", "--input"])
            .arg(&input)
            .output()
            .unwrap();
        stdout_json(&out)
    };
    assert_ne!(a["manifest"]["output_digest"], c["manifest"]["output_digest"]);
}

#[test]
fn simulate_feeds_regimes_and_n1_matches_estimate() {
    let dir = workdir("roundtrip");
    let data = dir.join("sim.csv");
    let sim = rror()
        .args([
            "simulate", "--family", "regime-ddm", "--seed", "1", "--t-len", "300",
            "--k", "0.10", "--k=-0.04", "--sigma", "2", "--p0", "1000",
            "--payout", "0.005", "--out",
        ])
        .arg(&data)
        .output()
        .unwrap();
    let sim_report = stdout_json(&sim);
    validate("simulate", &sim_report);
    assert!(data.exists());
    assert!(dir.join("sim.csv.truth.csv").exists());

    // deterministic: same seed, same data digest
    let again = rror()
        .args([
            "simulate", "--family", "regime-ddm", "--seed", "1", "--t-len", "300",
            "--k", "0.10", "--k=-0.04", "--sigma", "2", "--p0", "1000",
            "--payout", "0.005", "--out",
        ])
        .arg(dir.join("sim2.csv"))
        .output()
        .unwrap();
    let again_report = stdout_json(&again);
    assert_eq!(
        sim_report["result"]["data_sha256"],
        again_report["result"]["data_sha256"]
    );

    // 2-regime fit consumes the simulated file
    let probs = dir.join("probs.csv");
    let reg = rror()
        .args(["regimes", "--model", "ddm", "--n-regimes", "2", "--seed", "3", "--probs-out"])
        .arg(&probs)
        .arg("--input")
        .arg(&data)
        .output()
        .unwrap();
    let reg_report = stdout_json(&reg);
    validate("regimes", &reg_report);
    let coeffs = reg_report["result"]["fit"]["coeffs_per_regime"].as_array().unwrap();
    assert!((coeffs[0][0].as_f64().unwrap() - 0.10).abs() < 0.03);
    assert!((coeffs[1][0].as_f64().unwrap() + 0.04).abs() < 0.03);

    // probabilities CSV pairs the realized-return series with one column
    // per regime
    let probs_body = std::fs::read_to_string(&probs).unwrap();
    assert_eq!(probs_body.lines().next().unwrap(), "observed,regime1,regime2");
    assert_eq!(probs_body.lines().count(), 301);

    // N = 1 report matches the plain estimate numbers
    let reg1 = rror()
        .args(["regimes", "--model", "ddm", "--n-regimes", "1", "--seed", "3", "--input"])
        .arg(&data)
        .output()
        .unwrap();
    let reg1_report = stdout_json(&reg1);
    let est = rror()
        .args(["estimate", "--model", "ddm", "--input"])
        .arg(&data)
        .output()
        .unwrap();
    let est_report = stdout_json(&est);
    let k_regimes = reg1_report["result"]["fit"]["coeffs_per_regime"][0][0].as_f64().unwrap();
    let k_estimate = est_report["result"]["fit"]["coeffs"][0].as_f64().unwrap();
    assert!((k_regimes - k_estimate).abs() < 1e-10);
    let sigma2_regimes = reg1_report["result"]["fit"]["sigma2"].as_f64().unwrap();
    let sigma2_estimate = est_report["result"]["fit"]["sigma2_ml"].as_f64().unwrap();
    assert!((sigma2_regimes - sigma2_estimate).abs() < 1e-10 * sigma2_estimate.max(1.0));
}

#[test]
fn kalman_nonpaying_writes_state_band_csv() {
    let dir = workdir("kalman");
    let data = dir.join("ssm.csv");
    let sim = rror()
        .args([
            "simulate", "--family", "ssm-nonpaying", "--seed", "5", "--t-len", "200",
            "--k", "0.02", "--phi0", "0.07", "--phi1", "0.9", "--mu0", "0.7",
            "--sigma0-sq", "0.01", "--sigma-u-sq", "1e-4", "--sigma-v-sq", "1e-2",
            "--out",
        ])
        .arg(&data)
        .output()
        .unwrap();
    stdout_json(&sim);

    let states = dir.join("states.csv");
    let out = rror()
        .args(["kalman", "--model", "nonpaying", "--state-out"])
        .arg(&states)
        .args(["--horizon", "4", "--input"])
        .arg(&data)
        .output()
        .unwrap();
    let report = stdout_json(&out);
    validate("kalman", &report);
    assert_eq!(report["result"]["forecast"]["horizon"], 4);

    let body = std::fs::read_to_string(&states).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next().unwrap(), "t,state_mean,state_var");
    // T+1 state rows follow the header
    assert_eq!(lines.count(), 201);
}

#[test]
fn covariate_model_accepts_composite_restriction() {
    let dir = workdir("cov");
    let input = dir.join("cov.csv");
    let mut body = String::from("price,dividend,gdp,infl\n100,,,\n");
    let mut price = 100.0f64;
    for t in 0..60 {
        let gdp = (0.4 * t as f64).sin();
        let infl = ((t % 5) as f64 - 2.0) / 10.0;
        let k = 0.03 + 0.01 * gdp - 0.01 * infl;
        let noise = 0.3 * (((t * 13 % 17) as f64) / 17.0 - 0.5);
        let d = 0.01 * price;
        let next = (1.0 + k) * price - d + noise;
        body.push_str(&format!("{next},{d},{gdp},{infl}\n"));
        price = next;
    }
    std::fs::write(&input, body).unwrap();

    let out = rror()
        .args([
            "test", "--model", "ddm", "--restrict", "k2+k3=0.1",
            "--covariate", "gdp", "--covariate", "infl", "--input",
        ])
        .arg(&input)
        .output()
        .unwrap();
    let report = stdout_json(&out);
    validate("test", &report);
    // composite restrictions have no t statistic
    assert!(report["result"]["report"]["t_stat"].is_null());
    assert!(report["result"]["report"]["f_stat"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["result"]["unrestricted"]["coeffs"].as_array().unwrap().len(), 3);
}

#[test]
fn regimes_requires_seed() {
    let dir = workdir("seed");
    let input = write_geometric_csv(&dir);
    let out = rror()
        .args(["regimes", "--model", "ddm", "--n-regimes", "2", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "missing --seed must be a usage error");
}
