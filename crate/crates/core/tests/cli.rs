use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rbrhc::cli::{self, MANIFEST_JSON, OUT_DIR_ENV, STEPS_CSV, SUMMARY_JSON, TRIALS_CSV};
use rbrhc::scenario::builtin_scenarios;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rbrhc"));
    c.env_remove(OUT_DIR_ENV);
    c
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not json ({e}): {text}"))
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"clear_road\"\ntrials = 3\n");
    let out = dir.path().join("out");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--algorithms", "rb-rhc,pcl-rhc", "--seed", "9", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [TRIALS_CSV, STEPS_CSV, SUMMARY_JSON, MANIFEST_JSON] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let trials = fs::read_to_string(out.join(TRIALS_CSV)).unwrap();
    // header plus 3 seeds x 2 algorithms
    assert_eq!(trials.lines().count(), 7);
    assert!(trials.lines().nth(1).unwrap().starts_with("9,rb-rhc,"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(summary["trials"], 3);
    assert_eq!(summary["algorithms"].as_array().unwrap().len(), 2);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"clear_road\"\ntrials = 1\n");
    let out = dir.path().join("from-env");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .env(OUT_DIR_ENV, &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join(SUMMARY_JSON).is_file());
}

#[test]
fn flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"clear_road\"\ntrials = 1\n");
    let (env_out, flag_out) = (dir.path().join("env"), dir.path().join("flag"));
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_out)
        .env(OUT_DIR_ENV, &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_out.join(SUMMARY_JSON).is_file());
    assert!(!env_out.exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"clear_road\"\ntrails = 3\n");
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("trials"));
}

#[test]
fn bad_values_and_missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"clear_road\"\nrho0 = -1.0\n");
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["field"], "rho0");

    let o = bin().args(["run", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["kind"], "io");

    let cfg = write_config(dir.path(), "scenario = \"no_such_scenario\"\n");
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin().output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["frobnicate"]).output().unwrap().status.code(), Some(2));
    let o = bin()
        .args(["run", "--config", "x.toml", "--algorithms", "rb-rhx"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let o = bin().arg("verify").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn scenarios_list_names_every_builtin() {
    let o = bin().args(["scenarios", "list"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for s in builtin_scenarios() {
        assert!(text.contains(&s.name), "{} not listed", s.name);
    }
}

#[test]
fn shipped_scenario_files_match_builtins() {
    for spec in builtin_scenarios() {
        let path = manifest_dir().join("scenarios").join(format!("{}.toml", spec.name));
        let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let parsed = cli::parse_scenario_str(&text, &path.display().to_string()).unwrap();
        assert_eq!(parsed, spec, "{} differs from the builtin", path.display());
    }
}

#[test]
fn shipped_configs_resolve() {
    let dir = manifest_dir().join("configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            cli::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
