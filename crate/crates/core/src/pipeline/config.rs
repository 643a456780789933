use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::catalog::GroupingConfig;
use crate::dct::DctConfig;
use crate::embed::EmbedderConfig;
use crate::error::{Error, Result};
use crate::eval::InferenceContext;
use crate::llmio::LlmConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub interactions: PathBuf,
    pub items: PathBuf,
    pub min_interactions: usize,
    /// Ground-truth file for the oracle mock providers.
    pub truth: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            interactions: "interactions.jsonl".into(),
            items: "items.jsonl".into(),
            min_interactions: 1,
            truth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Candidate pool size N.
    pub pool_size: usize,
    /// Pseudo-prior items per user M.
    pub num_pseudo: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pool_size: 20,
            num_pseudo: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Reason pool size H.
    pub pool_size: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { pool_size: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub beta: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            beta: DctConfig::default().beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub inference: InferenceContext,
    pub emit_csv: bool,
    /// Inclusive upper edges of the length histogram buckets.
    pub histogram_edges: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            inference: InferenceContext::default(),
            emit_csv: false,
            histogram_edges: vec![1, 2, 3, 5, 10, 20],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_ccg: bool,
    pub no_snf: bool,
    pub no_arv: bool,
    pub no_rcs: bool,
    pub no_reason: bool,
    pub no_wd: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmProvider {
    #[default]
    Http,
    MockFirstK,
    MockOracle,
    MockAdversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub llm_provider: LlmProvider,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub augment: AugmentConfig,
    pub validate: ValidateConfig,
    pub weights: WeightConfig,
    pub llm: LlmConfig,
    pub embedder: EmbedderConfig,
    pub grouping: GroupingConfig,
    pub eval: EvalConfig,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: "runs/default".into(),
            llm_provider: LlmProvider::default(),
            data: DataConfig::default(),
            backbone: BackboneConfig::default(),
            augment: AugmentConfig::default(),
            validate: ValidateConfig::default(),
            weights: WeightConfig::default(),
            llm: LlmConfig::default(),
            embedder: EmbedderConfig::default(),
            grouping: GroupingConfig::default(),
            eval: EvalConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key.path=value` to a TOML table. Values are read as TOML
/// literals and fall back to plain strings.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text with overrides applied on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.interactions);
        fix(&mut self.data.items);
        if let Some(t) = self.data.truth.as_mut() {
            fix(t);
        }
        if let Some(c) = self.llm.cache_path.as_mut() {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.llm.validate()?;
        self.grouping.validate()?;
        self.dct().validate()?;
        if self.augment.num_pseudo > self.augment.pool_size {
            return Err(Error::Config(format!(
                "augment.num_pseudo ({}) exceeds augment.pool_size ({})",
                self.augment.num_pseudo, self.augment.pool_size
            )));
        }
        if self.augment.pool_size == 0 || self.validate.pool_size == 0 {
            return Err(Error::Config("pool sizes must be positive".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty positive cutoffs".into()));
        }
        Ok(())
    }

    /// Weighting parameters with the decay ablation applied. The tail
    /// threshold is shared with the grouping.
    pub fn dct(&self) -> DctConfig {
        DctConfig {
            beta: if self.ablation.no_wd { 1.0 } else { self.weights.beta },
            tail_threshold: self.grouping.tail_threshold,
            backbone: self.backbone.clone(),
        }
    }

    /// Hash of every setting that influences results; locations of inputs
    /// and outputs are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.data.interactions = PathBuf::new();
        c.data.items = PathBuf::new();
        c.data.truth = None;
        c.llm.cache_path = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(PipelineConfig::from_toml("", &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = PipelineConfig::from_toml(
            "seed = 1\n[augment]\nnum_pseudo = 4\n",
            &[
                "seed=9".into(),
                "weights.beta=0.25".into(),
                "ablation.no_arv=true".into(),
                "llm_provider=mock-oracle".into(),
                "eval.ks=[5, 10]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.augment.num_pseudo, 4);
        assert_eq!(cfg.weights.beta, 0.25);
        assert!(cfg.ablation.no_arv);
        assert_eq!(cfg.llm_provider, LlmProvider::MockOracle);
        assert_eq!(cfg.eval.ks, vec![5, 10]);
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        for bad in [
            "augment.num_pseudo=30",
            "weights.beta=0",
            "nonsense=1",
            "backbone.embedding_dim=0",
            "llm.concurrency_limit=0",
        ] {
            let r = PipelineConfig::from_toml("", &[bad.into()]);
            assert!(matches!(r, Err(Error::Config(_))), "{bad}: {r:?}");
        }
        assert!(matches!(PipelineConfig::from_toml("seed = [", &[]), Err(Error::Config(_))));
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn no_wd_sets_beta_to_one() {
        let cfg = PipelineConfig::from_toml("", &["ablation.no_wd=true".into()]).unwrap();
        assert_eq!(cfg.dct().beta, 1.0);
    }

    #[test]
    fn hash_ignores_locations() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
