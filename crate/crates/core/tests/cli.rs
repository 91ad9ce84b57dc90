use std::path::Path;
use std::process::Command;

fn dbmh(args: &[&str], env: &[(&str, &str)]) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dbmh"));
    cmd.args(args).env_remove("DBMH_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn dbmh").status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const PDE: &str = r#"{"experiment": "pde-check", "seed": 1, "n_list": [100], "t_list": [0.5], "trials": 2}"#;

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let out = out.to_str().unwrap();
    let good = write_config(dir.path(), "good.json", PDE);
    let strict = write_config(
        dir.path(),
        "strict.json",
        r#"{"experiment": "pde-check", "seed": 1, "n_list": [100], "t_list": [0.5], "trials": 2,
            "thresholds": {"pde_relative": 1e-300}}"#,
    );
    let typo = write_config(dir.path(), "typo.json", r#"{"experiment": "pde-check", "seed": 1, "trails": 3}"#);

    assert_eq!(dbmh(&["pde-check", "--config", &good, "--out", out], &[]), 0);
    assert_eq!(dbmh(&["pde-check", "--config", &strict, "--out", out], &[]), 1);
    assert_eq!(dbmh(&["pde-check", "--config", &typo, "--out", out], &[]), 2);
    assert_eq!(dbmh(&["regularity", "--config", &good, "--out", out], &[]), 2);
    assert_eq!(dbmh(&["no-such-experiment", "--config", &good, "--out", out], &[]), 2);
    assert_eq!(dbmh(&["pde-check", "--config", "/nonexistent.json", "--out", out], &[]), 2);
    assert_eq!(dbmh(&["pde-check", "--config", &good, "--out", out, "--workers", "0"], &[]), 2);
    assert_eq!(dbmh(&["pde-check", "--config", &good, "--out", out], &[("DBMH_WORKERS", "many")]), 2);
    assert_eq!(dbmh(&["pde-check", "--config", &good, "--out", out], &[("DBMH_WORKERS", "2")]), 0);
}

#[test]
fn seed_override_changes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = write_config(dir.path(), "c.json", PDE);
    for seed in ["1", "2"] {
        assert_eq!(dbmh(&["pde-check", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed], &[]), 0);
    }
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
}
