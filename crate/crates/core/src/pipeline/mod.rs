//! Staged, resumable pipeline runs. Each stage reads its inputs from the
//! output directory, writes its artifacts there and records a manifest with
//! the SHA-256 of everything it read and wrote.

pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{Ablation, LlmProvider, PipelineConfig};

use crate::arv::{run_arv, ArvOptions, ValidationRecord};
use crate::backbone::{train_backbone, BackboneConfig, Direction, TrainedBackbone, Vocab};
use crate::catalog::{
    group_users, leave_one_out_split, length_histogram, read_records, write_jsonl, Catalog,
    DatasetSplit, HistogramBucket, IngestOptions, UserSequence,
};
use crate::dct::{attach_weights, compute_alphas, train_dual_channel, TrainingManifest};
use crate::embed::TitleEmbedder;
use crate::error::{Error, Result};
use crate::eval::{evaluate, paired_t_test, MetricsReport, Provenance, TTest, UserAugmentation};
use crate::llmio::{mock, LlmClient, RetryPolicy};
use crate::seed::derive_seed;
use crate::sia::{augment_sequence, run_sia, AugmentationRecord, AugmentedSequence, SiaOptions};
use crate::synthetic::{truth_fn, GroundTruth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Stats,
    PretrainCcg,
    PretrainRcs,
    Augment,
    Validate,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Stats,
        Stage::PretrainCcg,
        Stage::PretrainRcs,
        Stage::Augment,
        Stage::Validate,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::PretrainCcg => "pretrain-ccg",
            Stage::PretrainRcs => "pretrain-rcs",
            Stage::Augment => "augment",
            Stage::Validate => "validate",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Which recommender `train` and `evaluate` operate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Original sequences only.
    None,
    /// Dual-channel training on original and augmented sequences.
    Llmser,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::None => "none",
            TrainMode::Llmser => "llmser",
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TrainMode::None),
            "llmser" => Ok(TrainMode::Llmser),
            _ => Err(Error::Config(format!("unknown mode `{s}`; expected none or llmser"))),
        }
    }
}

/// Artifact locations inside the output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
    pub fn catalog(&self) -> PathBuf {
        self.path("catalog.json")
    }
    pub fn stats(&self) -> PathBuf {
        self.path("stats.json")
    }
    pub fn ccg(&self) -> PathBuf {
        self.path("ccg.ckpt.json")
    }
    pub fn rcs(&self) -> PathBuf {
        self.path("rcs.ckpt.json")
    }
    pub fn augmentation(&self) -> PathBuf {
        self.path("augmentation.jsonl")
    }
    pub fn validation(&self) -> PathBuf {
        self.path("validation.jsonl")
    }
    pub fn alpha(&self) -> PathBuf {
        self.path("alpha.json")
    }
    pub fn model(&self, mode: TrainMode) -> PathBuf {
        self.path(&format!("model_{}.ckpt.json", mode.name()))
    }
    pub fn training_manifest(&self, mode: TrainMode) -> PathBuf {
        self.path(&format!("training_{}.json", mode.name()))
    }
    pub fn metrics(&self, mode: TrainMode) -> PathBuf {
        self.path(&format!("metrics_{}.json", mode.name()))
    }
    pub fn metrics_csv(&self, mode: TrainMode) -> PathBuf {
        self.path(&format!("metrics_{}.csv", mode.name()))
    }
    pub fn comparison(&self) -> PathBuf {
        self.path("comparison.json")
    }
    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.dir.join("manifests").join(format!("{stage}.json"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    /// File name to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub dropped_interactions: usize,
    pub evaluable_users: usize,
    pub histogram: Vec<HistogramBucket>,
    pub groups: BTreeMap<String, usize>,
}

/// Baseline and augmented reports side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Paired test on per-user NDCG at the first cutoff.
    pub t_test: Option<TTest>,
    pub baseline: MetricsReport,
    pub llmser: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scope: String,
    pub users: usize,
    pub metric: String,
    pub baseline: f64,
    pub llmser: f64,
}

impl Comparison {
    pub fn new(baseline: MetricsReport, llmser: MetricsReport) -> Self {
        let mut rows = Vec::new();
        for (m, b) in &baseline.overall {
            rows.push(ComparisonRow {
                scope: "overall".into(),
                users: baseline.user_count,
                metric: m.clone(),
                baseline: *b,
                llmser: llmser.overall.get(m).copied().unwrap_or(f64::NAN),
            });
        }
        for (g, gm) in &baseline.groups {
            for (m, b) in &gm.metrics {
                rows.push(ComparisonRow {
                    scope: g.clone(),
                    users: gm.user_count,
                    metric: m.clone(),
                    baseline: *b,
                    llmser: llmser
                        .groups
                        .get(g)
                        .and_then(|x| x.metrics.get(m))
                        .copied()
                        .unwrap_or(f64::NAN),
                });
            }
        }
        let k = baseline.ks.first().copied().unwrap_or(10);
        let t_test = if baseline.ranks.keys().eq(llmser.ranks.keys()) {
            paired_t_test(&llmser.per_user("NDCG", k), &baseline.per_user("NDCG", k)).ok()
        } else {
            None
        };
        Self {
            rows,
            t_test,
            baseline,
            llmser,
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>6} {:<9} {:>9} {:>9} {:>9}", "scope", "users", "metric", "none", "llmser", "delta")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>6} {:<9} {:>9.4} {:>9.4} {:>+9.4}",
                r.scope,
                r.users,
                r.metric,
                r.baseline,
                r.llmser,
                r.llmser - r.baseline
            )?;
        }
        if let Some(t) = &self.t_test {
            writeln!(f, "paired t-test on per-user NDCG: t = {:.4}, df = {}, p = {:.4}", t.t, t.df, t.p_value)?;
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Executes stages for one configuration.
pub struct Runner {
    pub cfg: PipelineConfig,
    pub artifacts: Artifacts,
    llm: OnceLock<LlmClient>,
    embedder: OnceLock<Box<dyn TitleEmbedder>>,
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let artifacts = Artifacts {
            dir: cfg.output_dir.clone(),
        };
        Ok(Self {
            cfg,
            artifacts,
            llm: OnceLock::new(),
            embedder: OnceLock::new(),
        })
    }

    /// Uses `llm` instead of building one from the configured provider.
    pub fn with_llm(self, llm: LlmClient) -> Self {
        let _ = self.llm.set(llm);
        self
    }

    pub fn with_embedder(self, embedder: Box<dyn TitleEmbedder>) -> Self {
        let _ = self.embedder.set(embedder);
        self
    }

    /// The LLM client, once a stage has needed it.
    pub fn llm_client(&self) -> Option<&LlmClient> {
        self.llm.get()
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.cfg.llm.max_retries,
            backoff_base: self.cfg.llm.backoff_base,
        }
    }

    fn llm(&self) -> Result<&LlmClient> {
        if let Some(l) = self.llm.get() {
            return Ok(l);
        }
        let cfg = self.cfg.llm.clone();
        let client = match self.cfg.llm_provider {
            LlmProvider::Http => LlmClient::http(cfg)?,
            LlmProvider::MockFirstK => mock::mock_first_k_with(cfg)?,
            LlmProvider::MockOracle | LlmProvider::MockAdversarial => {
                let path = self.cfg.data.truth.as_ref().ok_or_else(|| {
                    Error::Config("oracle providers need data.truth".into())
                })?;
                let truth = GroundTruth::load(path)?;
                let catalog = self.catalog()?;
                let split = leave_one_out_split(&catalog);
                let mut f = truth_fn(&truth, &catalog, &split);
                if self.cfg.llm_provider == LlmProvider::MockAdversarial {
                    f = mock::negate(f);
                }
                mock::mock_oracle_with(cfg, f)?
            }
        };
        Ok(self.llm.get_or_init(|| client))
    }

    fn embedder(&self) -> Result<&dyn TitleEmbedder> {
        if self.embedder.get().is_none() {
            let e = self.cfg.embedder.build(self.retry_policy())?;
            let _ = self.embedder.set(e);
        }
        Ok(self.embedder.get().expect("set above").as_ref())
    }

    fn require(&self, path: &Path, stage: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                stage: stage.to_string(),
            })
        }
    }

    fn catalog(&self) -> Result<Catalog> {
        let p = self.artifacts.catalog();
        self.require(&p, "ingest")?;
        Catalog::load(&p)
    }

    fn backbone_config(&self, stage: &str) -> BackboneConfig {
        BackboneConfig {
            seed: derive_seed(self.cfg.seed, stage),
            ..self.cfg.backbone.clone()
        }
    }

    fn write_manifest(&self, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let hashes = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    let name = p
                        .strip_prefix(&self.artifacts.dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned();
                    Ok((name, sha256_file(p)?))
                })
                .collect()
        };
        let m = StageManifest {
            stage: stage.to_string(),
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
            inputs: hashes(inputs)?,
            outputs: hashes(outputs)?,
        };
        let path = self.artifacts.manifest(stage);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_json(&path, &m)
    }

    /// Runs one stage. `mode` selects the model for `train` and `evaluate`.
    pub fn run_stage(&self, stage: Stage, mode: TrainMode) -> Result<()> {
        fs::create_dir_all(&self.artifacts.dir).map_err(|e| Error::io(&self.artifacts.dir, e))?;
        log::info!("stage {stage}");
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Stats => self.stats(),
            Stage::PretrainCcg => self.pretrain(Direction::Reverse),
            Stage::PretrainRcs => self.pretrain(Direction::Forward),
            Stage::Augment => self.augment(),
            Stage::Validate => self.validate(),
            Stage::Train => self.train(mode),
            Stage::Evaluate => self.evaluate(mode).map(|_| ()),
        }
    }

    fn ingest(&self) -> Result<()> {
        let d = &self.cfg.data;
        for p in [&d.interactions, &d.items] {
            if !p.exists() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                });
            }
        }
        let catalog = Catalog::ingest(
            &d.interactions,
            &d.items,
            &IngestOptions {
                min_interactions: d.min_interactions,
            },
        )?;
        if catalog.dropped_interactions() > 0 {
            log::warn!("dropped {} interactions with unknown items", catalog.dropped_interactions());
        }
        let out = self.artifacts.catalog();
        catalog.save(&out)?;
        self.write_manifest("ingest", &[d.interactions.clone(), d.items.clone()], &[out])
    }

    fn stats(&self) -> Result<()> {
        let catalog = self.catalog()?;
        let split = leave_one_out_split(&catalog);
        let report = StatsReport {
            users: catalog.sequences().len(),
            items: catalog.num_items(),
            interactions: catalog.num_interactions(),
            dropped_interactions: catalog.dropped_interactions(),
            evaluable_users: split.entries.iter().filter(|e| e.is_evaluable()).count(),
            histogram: length_histogram(&catalog, &self.cfg.eval.histogram_edges),
            groups: group_users(&catalog, &self.cfg.grouping)?
                .into_iter()
                .map(|(g, users)| (g, users.len()))
                .collect(),
        };
        let out = self.artifacts.stats();
        write_json(&out, &report)?;
        self.write_manifest("stats", &[self.artifacts.catalog()], &[out])
    }

    fn pretrain(&self, direction: Direction) -> Result<()> {
        let (stage, out) = match direction {
            Direction::Reverse => ("pretrain-ccg", self.artifacts.ccg()),
            Direction::Forward => ("pretrain-rcs", self.artifacts.rcs()),
        };
        let catalog = self.catalog()?;
        let split = leave_one_out_split(&catalog);
        let vocab = Vocab::from_catalog(&catalog);
        let model = train_backbone(
            &vocab,
            &split.train_sequences(),
            &self.backbone_config(stage),
            direction,
            None,
        )?;
        model.save(&out)?;
        self.write_manifest(stage, &[self.artifacts.catalog()], &[out])
    }

    fn load_model(&self, path: &Path, stage: &str) -> Result<TrainedBackbone> {
        self.require(path, stage)?;
        TrainedBackbone::load(path)
    }

    fn augment(&self) -> Result<()> {
        let catalog = self.catalog()?;
        let ccg = self.load_model(&self.artifacts.ccg(), "pretrain-ccg")?;
        let split = leave_one_out_split(&catalog);
        let opts = SiaOptions {
            pool_size: self.cfg.augment.pool_size,
            num_pseudo: self.cfg.augment.num_pseudo,
            no_ccg: self.cfg.ablation.no_ccg,
            no_snf: self.cfg.ablation.no_snf,
            seed: derive_seed(self.cfg.seed, "augment"),
        };
        let llm = if opts.no_snf { None } else { Some(self.llm()?) };
        let records = match llm {
            Some(llm) => run_sia(&ccg, llm, &catalog, &split.train_sequences(), &opts)?,
            None => run_sia(&ccg, &mock::mock_first_k(), &catalog, &split.train_sequences(), &opts)?,
        };
        let out = self.artifacts.augmentation();
        write_jsonl(&out, &records)?;
        self.write_manifest("augment", &[self.artifacts.catalog(), self.artifacts.ccg()], &[out])
    }

    fn augmented(&self, catalog: &Catalog, split: &DatasetSplit) -> Result<Vec<AugmentedSequence>> {
        let p = self.artifacts.augmentation();
        self.require(&p, "augment")?;
        let records: Vec<AugmentationRecord> = read_records(&p)?;
        let by_user: HashMap<&str, &AugmentationRecord> =
            records.iter().map(|r| (r.user_id.as_str(), r)).collect();
        split
            .entries
            .iter()
            .map(|e| {
                let r = by_user.get(e.user_id.as_str()).ok_or_else(|| {
                    Error::Config(format!("no augmentation record for user {}; rerun `augment`", e.user_id))
                })?;
                augment_sequence(catalog, &e.train, &r.pseudo_items)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let catalog = self.catalog()?;
        let rcs = self.load_model(&self.artifacts.rcs(), "pretrain-rcs")?;
        let split = leave_one_out_split(&catalog);
        let augmented = self.augmented(&catalog, &split)?;
        let opts = ArvOptions {
            pool_size: self.cfg.validate.pool_size,
            no_rcs: self.cfg.ablation.no_rcs,
            no_reason: self.cfg.ablation.no_reason,
            seed: derive_seed(self.cfg.seed, "validate"),
        };
        let first_k;
        let llm = if opts.no_reason {
            first_k = mock::mock_first_k();
            &first_k
        } else {
            self.llm()?
        };
        let records = run_arv(&rcs, llm, self.embedder()?, &catalog, &augmented, &opts)?;
        let out = self.artifacts.validation();
        write_jsonl(&out, &records)?;
        self.write_manifest(
            "validate",
            &[self.artifacts.catalog(), self.artifacts.rcs(), self.artifacts.augmentation()],
            &[out],
        )
    }

    fn alphas(&self, catalog: &Catalog) -> Result<(Vec<ValidationRecord>, BTreeMap<String, f64>)> {
        let p = self.artifacts.validation();
        self.require(&p, "validate")?;
        let records: Vec<ValidationRecord> = read_records(&p)?;
        let alphas = compute_alphas(&records, &catalog.lengths(), &self.cfg.dct(), self.cfg.ablation.no_arv)?;
        Ok((records, alphas))
    }

    fn train(&self, mode: TrainMode) -> Result<()> {
        let catalog = self.catalog()?;
        let split = leave_one_out_split(&catalog);
        let vocab = Vocab::from_catalog(&catalog);
        let cfg = self.backbone_config("train");
        let out = self.artifacts.model(mode);
        let mut inputs = vec![self.artifacts.catalog()];
        let mut outputs = vec![out.clone()];
        let dct = self.cfg.dct();
        let per_user_alpha = match mode {
            TrainMode::None => {
                let model = train_backbone(&vocab, &split.train_sequences(), &cfg, Direction::Forward, None)?;
                model.save(&out)?;
                None
            }
            TrainMode::Llmser => {
                let mut augmented = self.augmented(&catalog, &split)?;
                let (records, alphas) = self.alphas(&catalog)?;
                attach_weights(&mut augmented, &records, &alphas)?;
                let model = train_dual_channel(&vocab, &augmented, &crate::dct::DctConfig { backbone: cfg.clone(), ..dct.clone() })?;
                model.save(&out)?;
                write_json(&self.artifacts.alpha(), &alphas)?;
                inputs.push(self.artifacts.augmentation());
                inputs.push(self.artifacts.validation());
                outputs.push(self.artifacts.alpha());
                Some("alpha.json".to_string())
            }
        };
        let manifest = TrainingManifest {
            mode: mode.name().into(),
            beta: dct.beta,
            tail_threshold: dct.tail_threshold,
            per_user_alpha,
            seed: cfg.seed,
            final_checkpoints: vec![out.file_name().expect("file name").to_string_lossy().into_owned()],
        };
        let mpath = self.artifacts.training_manifest(mode);
        write_json(&mpath, &manifest)?;
        outputs.push(mpath);
        self.write_manifest(&format!("train-{}", mode.name()), &inputs, &outputs)
    }

    /// Evaluates one trained model and writes its report.
    pub fn evaluate(&self, mode: TrainMode) -> Result<MetricsReport> {
        let catalog = self.catalog()?;
        let split = leave_one_out_split(&catalog);
        let model_path = self.artifacts.model(mode);
        let train_hint = format!("train --mode {}", mode.name());
        let model = self.load_model(&model_path, &train_hint)?;
        let provenance = Provenance {
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
            label: mode.name().into(),
        };
        let mut inputs = vec![self.artifacts.catalog(), model_path];
        let aug_map;
        let augmentation = match mode {
            TrainMode::None => None,
            TrainMode::Llmser => {
                let alpha_path = self.artifacts.alpha();
                self.require(&alpha_path, &train_hint)?;
                let alphas: BTreeMap<String, f64> = read_json(&alpha_path)?;
                let records: Vec<AugmentationRecord> = read_records(&self.artifacts.augmentation())?;
                aug_map = records
                    .into_iter()
                    .map(|r| {
                        let alpha = alphas.get(&r.user_id).copied().unwrap_or(0.0);
                        (
                            r.user_id,
                            UserAugmentation {
                                pseudo_items: r.pseudo_items,
                                alpha,
                            },
                        )
                    })
                    .collect::<HashMap<_, _>>();
                inputs.push(alpha_path);
                inputs.push(self.artifacts.augmentation());
                Some((&aug_map, self.cfg.eval.inference))
            }
        };
        let report = evaluate(&model, &split, &self.cfg.grouping, &self.cfg.eval.ks, augmentation, provenance)?;
        let out = self.artifacts.metrics(mode);
        report.save(&out)?;
        let mut outputs = vec![out];
        if self.cfg.eval.emit_csv {
            let csv = self.artifacts.metrics_csv(mode);
            fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
            outputs.push(csv);
        }
        self.write_manifest(&format!("evaluate-{}", mode.name()), &inputs, &outputs)?;
        Ok(report)
    }

    fn failure(&self, stage: &str, manifest: &str, e: Error) -> Error {
        match e {
            Error::Config(_) | Error::MissingArtifact { .. } => e,
            other => Error::Stage {
                stage: stage.to_string(),
                manifest: self.artifacts.manifest(manifest),
                message: other.to_string(),
            },
        }
    }

    /// Every stage in order for both modes, then the comparison.
    pub fn run_pipeline(&self) -> Result<Comparison> {
        for stage in [
            Stage::Ingest,
            Stage::Stats,
            Stage::PretrainCcg,
            Stage::PretrainRcs,
            Stage::Augment,
            Stage::Validate,
        ] {
            self.run_stage(stage, TrainMode::Llmser)
                .map_err(|e| self.failure(stage.name(), stage.name(), e))?;
        }
        for mode in [TrainMode::None, TrainMode::Llmser] {
            let name = format!("train-{}", mode.name());
            self.run_stage(Stage::Train, mode)
                .map_err(|e| self.failure(&format!("train --mode {}", mode.name()), &name, e))?;
        }
        let baseline = self
            .evaluate(TrainMode::None)
            .map_err(|e| self.failure("evaluate --mode none", "evaluate-none", e))?;
        let llmser = self
            .evaluate(TrainMode::Llmser)
            .map_err(|e| self.failure("evaluate --mode llmser", "evaluate-llmser", e))?;
        let cmp = Comparison::new(baseline, llmser);
        write_json(&self.artifacts.comparison(), &cmp)?;
        Ok(cmp)
    }
}

/// The sequences a run trains on, exposed for tests.
pub fn training_sequences(catalog: &Catalog) -> Vec<UserSequence> {
    leave_one_out_split(catalog).train_sequences()
}
