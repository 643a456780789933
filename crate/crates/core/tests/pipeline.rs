mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use common::synthetic_setup;
use llmser::arv::ValidationRecord;
use llmser::catalog::{leave_one_out_split, read_records, Catalog};
use llmser::pipeline::{sha256_file, LlmProvider, PipelineConfig, Runner, Stage, StageManifest, TrainMode};
use llmser::sia::AugmentationRecord;
use llmser::Error;

const UPSTREAM: [Stage; 6] = [
    Stage::Ingest,
    Stage::Stats,
    Stage::PretrainCcg,
    Stage::PretrainRcs,
    Stage::Augment,
    Stage::Validate,
];

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn fast(mut cfg: PipelineConfig) -> PipelineConfig {
    cfg.backbone.epochs = 10;
    cfg
}

#[test]
fn identical_seeds_give_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = Runner::new(fast(synthetic_setup(a.path(), 3, LlmProvider::MockOracle))).unwrap();
    let rb = Runner::new(fast(synthetic_setup(b.path(), 3, LlmProvider::MockOracle))).unwrap();
    ra.run_pipeline().unwrap();
    rb.run_pipeline().unwrap();
    for mode in [TrainMode::None, TrainMode::Llmser] {
        assert_eq!(read(&ra.artifacts.metrics(mode)), read(&rb.artifacts.metrics(mode)));
    }
    for name in ["augmentation.jsonl", "validation.jsonl", "alpha.json", "manifests/evaluate-llmser.json"] {
        assert_eq!(read(&ra.artifacts.path(name)), read(&rb.artifacts.path(name)), "{name}");
    }
}

#[test]
fn warm_cache_rerun_is_byte_identical_without_remote_calls() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast(synthetic_setup(dir.path(), 4, LlmProvider::MockOracle));
    cfg.llm.cache_path = Some(dir.path().join("llm_cache.jsonl"));
    let cold = Runner::new(cfg.clone()).unwrap();
    for s in UPSTREAM {
        cold.run_stage(s, TrainMode::Llmser).unwrap();
    }
    assert!(cold.llm_client().unwrap().remote_attempts() > 0);
    let aug = read(&cold.artifacts.augmentation());
    let val = read(&cold.artifacts.validation());

    let warm = Runner::new(cfg).unwrap();
    warm.run_stage(Stage::Augment, TrainMode::Llmser).unwrap();
    warm.run_stage(Stage::Validate, TrainMode::Llmser).unwrap();
    let client = warm.llm_client().unwrap();
    assert_eq!(client.remote_attempts(), 0);
    assert!(client.cache_hits() > 0);
    assert_eq!(read(&warm.artifacts.augmentation()), aug);
    assert_eq!(read(&warm.artifacts.validation()), val);
}

#[test]
fn deleted_downstream_artifacts_are_reproduced_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let runner = Runner::new(fast(synthetic_setup(dir.path(), 5, LlmProvider::MockOracle))).unwrap();
    runner.run_pipeline().unwrap();
    let names = ["augmentation.jsonl", "validation.jsonl", "alpha.json", "model_llmser.ckpt.json", "metrics_llmser.json"];
    let before: Vec<Vec<u8>> = names.iter().map(|n| read(&runner.artifacts.path(n))).collect();
    for n in names {
        fs::remove_file(runner.artifacts.path(n)).unwrap();
    }
    for s in [Stage::Augment, Stage::Validate, Stage::Train, Stage::Evaluate] {
        runner.run_stage(s, TrainMode::Llmser).unwrap();
    }
    for (n, b) in names.iter().zip(before) {
        assert_eq!(read(&runner.artifacts.path(n)), b, "{n}");
    }
}

#[test]
fn missing_upstream_artifact_names_the_stage_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let runner = Runner::new(synthetic_setup(dir.path(), 6, LlmProvider::MockOracle)).unwrap();
    let stage_named = |s: Stage, mode: TrainMode| match runner.run_stage(s, mode) {
        Err(Error::MissingArtifact { stage, .. }) => stage,
        other => panic!("{s}: expected missing artifact, got {other:?}"),
    };
    assert_eq!(stage_named(Stage::Augment, TrainMode::Llmser), "ingest");
    runner.run_stage(Stage::Ingest, TrainMode::Llmser).unwrap();
    assert_eq!(stage_named(Stage::Augment, TrainMode::Llmser), "pretrain-ccg");
    assert_eq!(stage_named(Stage::Validate, TrainMode::Llmser), "pretrain-rcs");
    assert_eq!(stage_named(Stage::Train, TrainMode::Llmser), "augment");
    assert_eq!(stage_named(Stage::Evaluate, TrainMode::None), "train --mode none");
}

#[test]
fn manifests_hash_inputs_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let runner = Runner::new(fast(synthetic_setup(dir.path(), 7, LlmProvider::MockOracle))).unwrap();
    runner.run_pipeline().unwrap();
    for stage in ["ingest", "stats", "pretrain-ccg", "pretrain-rcs", "augment", "validate", "train-none", "train-llmser", "evaluate-none", "evaluate-llmser"] {
        let text = fs::read_to_string(runner.artifacts.manifest(stage)).unwrap();
        let m: StageManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m.stage, stage);
        assert_eq!(m.config_hash, runner.cfg.hash());
        assert!(!m.inputs.is_empty() && !m.outputs.is_empty(), "{stage}");
        for (name, hash) in &m.outputs {
            assert_eq!(&sha256_file(&runner.artifacts.path(name)).unwrap(), hash, "{stage}: {name}");
        }
    }
    let augment: StageManifest =
        serde_json::from_str(&fs::read_to_string(runner.artifacts.manifest("augment")).unwrap()).unwrap();
    let ccg: StageManifest =
        serde_json::from_str(&fs::read_to_string(runner.artifacts.manifest("pretrain-ccg")).unwrap()).unwrap();
    assert_eq!(augment.inputs["ccg.ckpt.json"], ccg.outputs["ccg.ckpt.json"]);
}

fn alphas(runner: &Runner) -> BTreeMap<String, f64> {
    serde_json::from_str(&fs::read_to_string(runner.artifacts.alpha()).unwrap()).unwrap()
}

fn run_through_train(cfg: PipelineConfig) -> Runner {
    let runner = Runner::new(cfg).unwrap();
    for s in UPSTREAM {
        runner.run_stage(s, TrainMode::Llmser).unwrap();
    }
    runner.run_stage(Stage::Train, TrainMode::Llmser).unwrap();
    runner
}

#[test]
fn no_arv_sets_every_alpha_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast(synthetic_setup(dir.path(), 8, LlmProvider::MockAdversarial));
    cfg.ablation.no_arv = true;
    let runner = run_through_train(cfg);
    assert!(alphas(&runner).values().all(|&a| a == 1.0));
}

#[test]
fn no_wd_sets_alpha_to_omega_and_decay_applies_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast(synthetic_setup(dir.path(), 9, LlmProvider::MockOracle));
    cfg.ablation.no_wd = true;
    let runner = run_through_train(cfg.clone());
    let records: Vec<ValidationRecord> = read_records(&runner.artifacts.validation()).unwrap();
    let a = alphas(&runner);
    for r in &records {
        assert_eq!(a[&r.user_id], r.omega);
    }

    cfg.ablation.no_wd = false;
    let runner = run_through_train(cfg);
    let catalog = Catalog::load(&runner.artifacts.catalog()).unwrap();
    let lengths = catalog.lengths();
    let a = alphas(&runner);
    for r in &records {
        let expected = if lengths[r.user_id.as_str()] > 3 { 0.5 * r.omega } else { r.omega };
        assert_eq!(a[&r.user_id], expected);
    }
}

#[test]
fn ablations_change_the_expected_stage_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast(synthetic_setup(dir.path(), 10, LlmProvider::MockOracle));
    cfg.ablation.no_snf = true;
    cfg.ablation.no_reason = true;
    let runner = run_through_train(cfg.clone());
    let aug: Vec<AugmentationRecord> = read_records(&runner.artifacts.augmentation()).unwrap();
    for r in &aug {
        assert_eq!(r.pseudo_items[..], r.pool[..r.pseudo_items.len()]);
    }
    assert!(runner.llm_client().is_none(), "no LLM needed when both LLM steps are ablated");

    cfg.ablation = Default::default();
    cfg.ablation.no_ccg = true;
    cfg.ablation.no_rcs = true;
    let runner = run_through_train(cfg);
    let random: Vec<AugmentationRecord> = read_records(&runner.artifacts.augmentation()).unwrap();
    assert_ne!(random.iter().map(|r| &r.pool).collect::<Vec<_>>(), aug.iter().map(|r| &r.pool).collect::<Vec<_>>());
    let catalog = Catalog::load(&runner.artifacts.catalog()).unwrap();
    let split = leave_one_out_split(&catalog);
    for r in &random {
        let history = &split.entry(&r.user_id).unwrap().train.items;
        assert!(r.pool.iter().all(|i| !history.contains(i)));
    }
}

#[test]
fn comparison_lists_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let runner = Runner::new(fast(synthetic_setup(dir.path(), 11, LlmProvider::MockOracle))).unwrap();
    let cmp = runner.run_pipeline().unwrap();
    assert_eq!(cmp.baseline.provenance.label, "none");
    assert_eq!(cmp.llmser.provenance.label, "llmser");
    assert!(cmp.t_test.is_some());
    let table = cmp.to_string();
    assert!(table.contains("overall") && table.contains("short") && table.contains("HR@10"));
    assert!(runner.artifacts.comparison().exists());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_llmser"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = cli(&["synth", "--out", data.to_str().unwrap(), "--seed", "2", "--users", "60"]);
    assert!(out.status.success());
    let config = dir.path().join("cfg.toml");
    fs::write(
        &config,
        "output_dir = \"run\"\nllm_provider = \"mock-oracle\"\n[data]\ninteractions = \"data/interactions.jsonl\"\nitems = \"data/items.jsonl\"\ntruth = \"data/truth.json\"\n[augment]\nnum_pseudo = 6\n[backbone]\nepochs = 5\n",
    )
    .unwrap();
    let c = config.to_str().unwrap();

    let missing = cli(&["evaluate", "--config", c, "--mode", "none"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ingest"));

    assert_eq!(cli(&["ingest", "--config", c, "--set", "augment.num_pseudo=99"]).status.code(), Some(2));
    assert_eq!(cli(&["ingest", "--config", c, "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(cli(&["ingest", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));

    let run = cli(&["run", "--config", c, "--no-arv", "--emit-csv"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("HR@10"));
    let run_dir = dir.path().join("run");
    assert!(run_dir.join("metrics_llmser.csv").exists());
    let alphas: BTreeMap<String, f64> =
        serde_json::from_str(&fs::read_to_string(run_dir.join("alpha.json")).unwrap()).unwrap();
    assert!(alphas.values().all(|&a| a == 1.0));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("training_llmser.json")).unwrap()).unwrap();
    assert_eq!(manifest["per_user_alpha"], "alpha.json");
}
