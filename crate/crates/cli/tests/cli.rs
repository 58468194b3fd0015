//! Drives the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn lmagent(args: &[&str], runs: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmagent"))
        .args(args)
        .env("LMAGENT_RUNS", runs)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_tasks_names_methods_and_unseen_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lmagent(&["list-tasks"], tmp.path());
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("twosome_word food_preparation"));
    assert!(s.contains("ppo_mlp tomato_salad"));
    assert!(s.contains("laundry (from food_preparation)"));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = lmagent(&["train", "--set", "ppo.learning_rate=1"], tmp.path());
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("learning_rate"));
    let no_lm = lmagent(&["train", "--set", "run.method=twosome_word"], tmp.path());
    assert_eq!(no_lm.status.code(), Some(2));
    let missing = lmagent(&["train", "--config", "/nonexistent/run.toml"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));
    let no_run = lmagent(&["eval", tmp.path().join("nope").to_str().unwrap()], tmp.path());
    assert_eq!(no_run.status.code(), Some(2));
}

#[test]
fn mlp_train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mlp");
    let cfg = tmp.path().join("mlp.toml");
    std::fs::write(&cfg, "[run]\nmethod = \"ppo_mlp\"\ntask = \"tomato_salad\"\neval_episodes = 4\n\n[ppo]\ntotal_steps = 128\n")
        .unwrap();
    let o = lmagent(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["train"]["global_step"], 128);
    let o = lmagent(&["eval", out.to_str().unwrap(), "--episodes", "5", "--sequential"], tmp.path());
    assert!(o.status.success());
    let eval: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval["episodes"], 5);
    assert_eq!(eval["task"], "tomato_salad");
}

#[test]
fn runs_land_under_the_runs_root_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lmagent(&["train", "--set", "run.method=ppo_mlp", "--set", "ppo.total_steps=128", "--set", "run.eval_episodes=0"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].to_string_lossy().starts_with("ppo_mlp-tomato_salad-s1-"));
}
