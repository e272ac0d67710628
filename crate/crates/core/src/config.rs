//! Typed configuration plus the flat `key = value` config-file format used
//! by the CLI. Defaults are desk-scale; the sizes the reference systems use
//! (768-wide, 12-layer encoders, 6-layer decoders) remain expressible.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DependencyDirection, DependencyScope, GraphConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Model width d, shared by every component.
    pub d: usize,
    pub text_layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub max_seq_len: usize,
    pub dropout: f32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 64,
            text_layers: 2,
            heads: 4,
            ff: 256,
            gat_layers: 2,
            gat_heads: 4,
            max_seq_len: 256,
            dropout: 0.0,
        }
    }
}

/// Pooling applied to the contrastive encoder output sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub tau: f32,
    pub pooling: Pooling,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            layers: 2,
            heads: 4,
            ff: 256,
            tau: 1.0,
            pooling: Pooling::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_out_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 2,
            heads: 4,
            ff: 256,
            max_out_len: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub decoder: DecoderConfig,
    pub graph: GraphConfig,
}

impl ModelConfig {
    pub fn d(&self) -> usize {
        self.encoder.d
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.d == 0 || e.text_layers == 0 || e.max_seq_len == 0 {
            return Err(Error::InvalidConfig("zero-sized encoder dimension".into()));
        }
        if e.d % e.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d = {} not divisible by heads = {}",
                e.d, e.heads
            )));
        }
        if e.d % e.gat_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d = {} not divisible by gat_heads = {}",
                e.d, e.gat_heads
            )));
        }
        if e.gat_layers < 1 {
            return Err(Error::InvalidConfig("gat_layers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&e.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.contrastive.tau <= 0.0 {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        if self.decoder.layers == 0 || self.decoder.max_out_len == 0 {
            return Err(Error::InvalidConfig("zero-sized decoder dimension".into()));
        }
        if e.d % self.decoder.heads != 0 || e.d % self.contrastive.heads != 0 {
            return Err(Error::InvalidConfig(
                "d must be divisible by every head count".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the contrastive term in the joint loss.
    pub lambda: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub clip_norm: f32,
    pub val_interval: u64,
    pub use_graph: bool,
    pub use_contrastive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            lr: 1e-3,
            batch_size: 8,
            max_steps: 300,
            seed: 0,
            clip_norm: 1.0,
            val_interval: 50,
            use_graph: true,
            use_contrastive: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::InvalidConfig("clip_norm must be > 0".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub beam: usize,
    pub max_len: usize,
    /// Length-normalization exponent: candidate score = logprob / len^exp.
    pub len_norm: f32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            beam: 4,
            max_len: 32,
            len_norm: 1.0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidConfig("beam must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the CLI reads from one flat config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenerationParams,
    /// Fraction of the corpus held out for evaluation by `ablate`.
    pub eval_holdout: f32,
    /// Findings-length bucket edges for the per-length report.
    pub bucket_edges: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gen: GenerationParams::default(),
            eval_holdout: 0.2,
            bucket_edges: vec![25, 45, 65, 85, 105, 125],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.gen.validate()?;
        if !(0.0..1.0).contains(&self.eval_holdout) {
            return Err(Error::InvalidConfig("eval_holdout must be in [0, 1)".into()));
        }
        if self.bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "bucket_edges must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    /// Parse `key = value` lines ('#' starts a comment). Unknown keys and
    /// unparsable values are errors naming the line.
    pub fn from_str_named(text: &str, name: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                path: name.to_string(),
                line: lineno + 1,
                reason: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigParse {
                    path: name.to_string(),
                    line: lineno + 1,
                    reason: format!("duplicate key {key}"),
                });
            }
            cfg.apply(key, value).map_err(|reason| Error::ConfigParse {
                path: name.to_string(),
                line: lineno + 1,
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(v: &str, key: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "d" => self.model.encoder.d = parse(value, key)?,
            "text_layers" => self.model.encoder.text_layers = parse(value, key)?,
            "heads" => self.model.encoder.heads = parse(value, key)?,
            "ff" => self.model.encoder.ff = parse(value, key)?,
            "gat_layers" => self.model.encoder.gat_layers = parse(value, key)?,
            "gat_heads" => self.model.encoder.gat_heads = parse(value, key)?,
            "max_seq_len" => self.model.encoder.max_seq_len = parse(value, key)?,
            "dropout" => self.model.encoder.dropout = parse(value, key)?,
            "ce_layers" => self.model.contrastive.layers = parse(value, key)?,
            "ce_heads" => self.model.contrastive.heads = parse(value, key)?,
            "ce_ff" => self.model.contrastive.ff = parse(value, key)?,
            "tau" => self.model.contrastive.tau = parse(value, key)?,
            "pooling" => {
                self.model.contrastive.pooling = match value {
                    "mean" => Pooling::Mean,
                    "first" => Pooling::First,
                    _ => return Err(format!("pooling must be mean or first, got {value:?}")),
                }
            }
            "dec_layers" => self.model.decoder.layers = parse(value, key)?,
            "dec_heads" => self.model.decoder.heads = parse(value, key)?,
            "dec_ff" => self.model.decoder.ff = parse(value, key)?,
            "max_out_len" => self.model.decoder.max_out_len = parse(value, key)?,
            "dependency_scope" => {
                self.model.graph.dependency_scope = match value {
                    "entity_touching" => DependencyScope::EntityTouching,
                    "all" => DependencyScope::All,
                    _ => {
                        return Err(format!(
                            "dependency_scope must be entity_touching or all, got {value:?}"
                        ))
                    }
                }
            }
            "dependency_direction" => {
                self.model.graph.dependency_direction = match value {
                    "head_to_dep" => DependencyDirection::HeadToDep,
                    "dep_to_head" => DependencyDirection::DepToHead,
                    _ => {
                        return Err(format!(
                            "dependency_direction must be head_to_dep or dep_to_head, got {value:?}"
                        ))
                    }
                }
            }
            "lambda" => self.train.lambda = parse(value, key)?,
            "lr" => self.train.lr = parse(value, key)?,
            "batch_size" => self.train.batch_size = parse(value, key)?,
            "max_steps" => self.train.max_steps = parse(value, key)?,
            "seed" => self.train.seed = parse(value, key)?,
            "clip_norm" => self.train.clip_norm = parse(value, key)?,
            "val_interval" => self.train.val_interval = parse(value, key)?,
            "use_graph" => self.train.use_graph = parse(value, key)?,
            "use_contrastive" => self.train.use_contrastive = parse(value, key)?,
            "beam" => self.gen.beam = parse(value, key)?,
            "len_norm" => self.gen.len_norm = parse(value, key)?,
            "eval_holdout" => self.eval_holdout = parse(value, key)?,
            "bucket_edges" => {
                self.bucket_edges = value
                    .split(',')
                    .map(|v| parse(v.trim(), key))
                    .collect::<std::result::Result<_, _>>()?;
            }
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }
}
