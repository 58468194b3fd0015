//! End-to-end runs through the harness with a tiny model.

use std::fs;
use std::path::Path;

use lmagent::harness::{self, read_metrics, Config, RunManifest, METRICS, METRIC_KEYS, SUMMARY};
use lmagent::ExecMode;

fn tiny_pretrain(dir: &Path) -> Config {
    let cfg = Config::load(
        None,
        &[
            "corpus.tasks=[\"tomato_salad\", \"food_preparation\"]".into(),
            "corpus.samples=60".into(),
            "corpus.vocab_size=200".into(),
            "model.embed_dim=16".into(),
            "model.n_heads=2".into(),
            "model.n_layers=1".into(),
            "model.context_length=512".into(),
            "model.critic_hidden=[8, 8]".into(),
            "pretrain.epochs=1".into(),
        ],
    )
    .unwrap();
    harness::run_pretrain(&cfg, dir, ExecMode::Sequential).unwrap();
    cfg
}

fn train_cfg(lm: &Path, method: &str, extra: &[&str]) -> Config {
    let mut o = vec![
        format!("run.lm=\"{}\"", lm.display()),
        format!("run.method={method}"),
        "run.task=food_preparation".into(),
        "run.eval_episodes=4".into(),
        "ppo.n_envs=2".into(),
        "ppo.rollout_steps=8".into(),
        "ppo.policy_minibatches=4".into(),
        "ppo.critic_minibatches=2".into(),
        "ppo.total_steps=48".into(),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    Config::load(None, &o).unwrap()
}

#[test]
fn pretrain_train_eval_explain() {
    let tmp = tempfile::tempdir().unwrap();
    let lm = tmp.path().join("pt");
    tiny_pretrain(&lm);
    for f in ["manifest.json", "config.toml", "corpus.txt", "summary.json", "checkpoint"] {
        assert!(lm.join(f).exists(), "{f}");
    }
    let m = RunManifest::load(&lm).unwrap();
    assert_eq!(m.kind, "pretrain");
    assert!(m.corpus_hash.is_some());

    let run = tmp.path().join("word");
    let cfg = train_cfg(&lm, "twosome_word", &["run.checkpoint_every=1"]);
    let report = harness::run_train(&cfg, &run).unwrap();
    assert_eq!(report.train.global_step, 48);
    assert_eq!(report.train.updates, 3);
    assert_eq!(report.eval.as_ref().unwrap().episodes, 4);

    let recs = read_metrics(&run.join(METRICS)).unwrap();
    assert_eq!(recs.iter().map(|r| r.global_step).collect::<Vec<_>>(), [16, 32, 48]);
    assert!(recs.iter().all(|r| r.policy_loss.is_some() && r.sps.is_some()));
    let first: serde_json::Value = serde_json::from_str(fs::read_to_string(run.join(METRICS)).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first.as_object().unwrap().len(), METRIC_KEYS.len());
    for u in ["update_000001", "update_000002", "update_000003", "final"] {
        assert!(run.join("checkpoints").join(u).exists(), "{u}");
    }
    let manifest = RunManifest::load(&run).unwrap();
    assert_eq!(manifest.corpus_hash, m.corpus_hash);
    assert_eq!(manifest.content_hash, harness::content_hash());

    // A finished run is never overwritten.
    assert!(harness::run_train(&cfg, &run).unwrap_err().is_config());

    let e = harness::run_eval(&run, Some("cheese"), 3, true, 0, ExecMode::Sequential).unwrap();
    assert_eq!((e.task.as_str(), e.episodes), ("cheese", 3));

    let ex = harness::run_explain(&run, "food_preparation", &["walk_food".into()]).unwrap();
    let table = ex.to_table();
    assert!(table.contains("grab the pancake"), "{table}");
    assert_eq!(ex.to_jsonl().unwrap().lines().count(), ex.rows.len());
}

#[test]
fn frozen_runs_log_no_updates_and_save_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let lm = tmp.path().join("pt");
    tiny_pretrain(&lm);
    let run = tmp.path().join("frozen");
    harness::run_train(&train_cfg(&lm, "twosome_frozen", &[]), &run).unwrap();
    let recs = read_metrics(&run.join(METRICS)).unwrap();
    assert!(recs.iter().all(|r| r.policy_loss.is_none() && r.early_stopped.is_none()));
    assert!(!run.join("checkpoints").exists());
    harness::run_eval(&run, None, 2, false, 0, ExecMode::Sequential).unwrap();
}

#[test]
fn mlp_run_round_trips_its_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("mlp");
    let cfg = Config::load(
        None,
        &["run.method=ppo_mlp".into(), "run.task=tomato_salad".into(), "ppo.total_steps=256".into(), "run.eval_episodes=8".into()],
    )
    .unwrap();
    let report = harness::run_train(&cfg, &run).unwrap();
    let again = harness::run_eval(&run, None, 8, false, cfg.ppo.seed + 1_000_003, cfg.ppo.exec).unwrap();
    assert_eq!(Some(again), report.eval);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join(SUMMARY)).unwrap()).unwrap();
    assert!(summary["train"]["global_step"].as_u64().unwrap() >= 256);
}

#[test]
fn misconfigured_runs_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let no_lm = Config::load(None, &["run.method=twosome_token".into()]).unwrap();
    assert!(harness::run_train(&no_lm, &tmp.path().join("a")).unwrap_err().is_config());
    let unseen = Config::load(None, &["run.method=ppo_mlp".into(), "run.task=pizza".into()]).unwrap();
    assert!(harness::run_train(&unseen, &tmp.path().join("b")).unwrap_err().is_config());
    assert!(Config::load(None, &["run.method=sarsa".into()]).unwrap_err().is_config());
    assert!(!tmp.path().join("a").exists() && !tmp.path().join("b").exists());
}
