//! Command-surface tests: exit codes, output schemas, determinism and the
//! effective-config echo.

use std::path::PathBuf;
use std::process::Command;

fn oms_raw(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_oms"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CONFIG: &str = r#"
[candidates]
degrees = [1]
lambdas = [0.0, 1.0]
fqi_iterations = 5
q_star_rollouts = 200
q_star_horizon = 20

[sbv]
degrees = [1]
lambdas = [0.0, 1.0]

[fqe]
iterations = 5

[eval]
episodes = 50
horizon = 20
"#;

#[test]
fn unknown_flag_fails_without_partial_outputs() {
    let dir = tmp("cli-unknown-flag");
    let out_dir = dir.join("out");
    let out = oms_raw(&["sweep", "--bogus-flag", "--out-dir", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out_dir.exists(), "failed invocation must not leave outputs");

    let out = oms_raw(&["not-a-subcommand"]);
    assert!(!out.status.success());
}

#[test]
fn gen_data_is_byte_deterministic_and_validates_env() {
    let dir = tmp("cli-gen-data");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for path in [&a, &b] {
        let out = oms_raw(&[
            "gen-data", "--env", "toy", "--phi", "0.1", "--n", "6", "--t", "4", "--seed", "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let lines = std::fs::read_to_string(&a).unwrap().lines().count();
    assert_eq!(lines, 1 + 6 * 4);

    let out = oms_raw(&["gen-data", "--env", "mars", "--phi", "0.1", "--seed", "1", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // Out-of-range stochasticity is rejected.
    let out =
        oms_raw(&["gen-data", "--phi", "0.4", "--seed", "1", "--out", a.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tmp("cli-bad-config");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[env]\nphie = 0.1\n").unwrap();
    let out = oms_raw(&[
        "rank",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn sweep_emits_the_expected_grid_and_echoes_the_config() {
    let dir = tmp("cli-sweep");
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let out_dir = dir.join("out");
    let out = oms_raw(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--phi",
        "0,0.25",
        "--seeds",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let aggregate = std::fs::read_to_string(out_dir.join("sweep_aggregate.csv")).unwrap();
    // One aggregate row per (phi, method): 2 x 4 plus the header.
    assert_eq!(aggregate.lines().count(), 1 + 2 * 4);
    let rows = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 4);

    // The echo re-parses to the overridden effective config.
    let echoed =
        oms_core::config::parse_config(&out_dir.join("effective-config.toml")).unwrap();
    assert_eq!(echoed.sweep.phis, vec![0.0, 0.25]);
    assert_eq!(echoed.sweep.num_seeds, 2);
    assert_eq!(echoed.candidates.degrees, vec![1]);
    assert_eq!(echoed.eval.episodes, 50);
}

#[test]
fn rank_honors_method_selection_and_writes_schemas() {
    let dir = tmp("cli-rank");
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let data = dir.join("data.csv");
    let out = oms_raw(&[
        "gen-data", "--phi", "0.2", "--n", "10", "--t", "8", "--seed", "3", "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out_dir = dir.join("out");
    let out = oms_raw(&[
        "rank",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--method",
        "wis,emsbe",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let scores = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next().unwrap(), "method,candidate_id,score,flag,aux_backup_mse,aux_ess");
    // 2 poly grid points + zero + qstar = 4 candidates, two methods.
    assert_eq!(lines.count(), 2 * 4);
    assert!(scores.contains("wis,"));
    assert!(scores.contains("emsbe,"));
    assert!(!scores.contains("sbv,"));

    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(
        manifest.lines().next().unwrap(),
        "id,algorithm,degree,lambda,n_min,m_try,iterations,notes"
    );

    let out = oms_raw(&[
        "rank",
        "--method",
        "bvft",
        "--out-dir",
        dir.join("out2").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_writes_truth_records() {
    let dir = tmp("cli-evaluate");
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let out_dir = dir.join("out");
    let out = oms_raw(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let truth = std::fs::read_to_string(out_dir.join("truth.csv")).unwrap();
    let mut lines = truth.lines();
    assert_eq!(lines.next().unwrap(), "candidate_id,value,std_error");
    assert_eq!(lines.count(), 4);
}

#[test]
fn verify_props_accepts_an_explicit_mdp_file() {
    let dir = tmp("cli-verify-props");
    let path = dir.join("chain.txt");
    std::fs::write(&path, oms_core::fixtures::chain2().to_text()).unwrap();
    let out = oms_raw(&["verify-props", "--seeds", "20", "--mdp", path.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bellman-contraction"));
    assert!(stdout.contains("recovery-exactness"));
    assert!(!stdout.contains("FAIL"), "{stdout}");

    // A corrupt file is a clean error.
    std::fs::write(&path, "not an mdp").unwrap();
    let out = oms_raw(&["verify-props", "--seeds", "5", "--mdp", path.to_str().unwrap()]);
    assert!(!out.status.success());
}
