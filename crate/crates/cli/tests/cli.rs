use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polyfeat::FeatureMap;

fn polyfeat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyfeat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"{
  "experiment": {"n_x": [10], "realizations": 2, "n_test": 100, "methods": ["SUR"]},
  "output": {"pencil": "pencil.json", "cv_table": "cv.csv"}
}"#;

#[test]
fn bench_writes_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), SMALL).unwrap();
    let out = polyfeat(
        &[
            "bench",
            "--config",
            "config.json",
            "--out",
            "run",
            "--threads",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let results = fs::read_to_string(run.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,a,m,n_train,realization,J_hat_train,J_test,e_hat_train,e_test,eps_m,wall_ms"
    );
    assert_eq!(lines.count(), 2);
    let quantiles = fs::read_to_string(run.join("quantiles.csv")).unwrap();
    assert!(quantiles.starts_with("method,n_train,metric,q50,q90,q100\n"));
    assert_eq!(quantiles.lines().count(), 1 + 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], "1");
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["experiment"]["n_x"][0], 10);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), SMALL).unwrap();
    for (name, seed) in [("a", "0"), ("b", "5")] {
        let out = polyfeat(
            &[
                "bench",
                "--config",
                "config.json",
                "--out",
                name,
                "--seed-override",
                seed,
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
    }
    let a = fs::read(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read(dir.path().join("b/results.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn features_writes_a_reloadable_map() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), SMALL).unwrap();
    let out = polyfeat(
        &[
            "features",
            "--config",
            "config.json",
            "--out",
            "maps/g.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let g =
        FeatureMap::<f64>::from_json(&fs::read_to_string(dir.path().join("maps/g.json")).unwrap())
            .unwrap();
    assert_eq!(g.m(), 3);
    let gram = g.basis().gram_matrix().unwrap();
    assert!(g.orthonormality_defect(&gram) < 1e-8);
    assert!(dir.path().join("maps/pencil.json").exists());
    let cv = fs::read_to_string(dir.path().join("maps/cv.csv")).unwrap();
    assert!(cv.starts_with("gamma,alpha,fold,mse\n"));
    assert_eq!(cv.lines().count(), 1 + 30 * 40 * 10);
}

#[test]
fn demo_reports_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = polyfeat(&["demo-feature-rank", "--out", "demo.json"], dir.path());
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("PASS").count(), 3);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("demo.json")).unwrap()).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 3);
}

#[test]
fn tensor_commands() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.json"),
        r#"{"dims": [2, 3], "data": [3, 0, 0, 0, 2, 0]}"#,
    )
    .unwrap();
    let out = polyfeat(
        &["svd2", "--tensor", "t.json", "--m", "1", "--out", "s.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert!((s["singular_values"][0].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!((s["tail_energy"].as_f64().unwrap() - 4.0).abs() < 1e-12);

    let out = polyfeat(
        &[
            "hosvd", "--tensor", "t.json", "--ranks", "1,1", "--out", "h.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let h: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("h.json")).unwrap()).unwrap();
    assert!((h["error_sq"].as_f64().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("unknown.json"), r#"{"experiment": {"bogus": 1}}"#).unwrap();
    fs::write(p.join("too_many.json"), r#"{"experiment": {"m": 45}}"#).unwrap();
    fs::write(
        p.join("t.json"),
        r#"{"dims": [2, 2, 2], "data": [1, 2, 3, 4, 5, 6, 7, 8]}"#,
    )
    .unwrap();
    let cases: [&[&str]; 7] = [
        &["bench", "--config", "missing.json"],
        &["bench", "--config", "unknown.json"],
        &["features", "--config", "too_many.json"],
        &["hosvd", "--tensor", "t.json", "--ranks", "1,3,1"],
        &["hosvd", "--tensor", "t.json", "--ranks", "1,1"],
        &["svd2", "--tensor", "t.json", "--m", "0"],
        &["bench", "--no-such-flag"],
    ];
    for args in cases {
        let out = polyfeat(args, p);
        assert_eq!(
            code(&out),
            1,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), SMALL).unwrap();
    fs::write(dir.path().join("occupied"), "not a directory").unwrap();
    let out = polyfeat(
        &["bench", "--config", "config.json", "--out", "occupied"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn help_exits_with_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = polyfeat(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("bench"));
}
