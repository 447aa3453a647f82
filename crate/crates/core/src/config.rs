//! Run configuration: TOML file over a named preset, then `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seq2seq::{Decoding, ModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected `mlee-ge11` or `phee`)")]
    UnknownPreset(String),
    #[error("config {path}: {message}")]
    File { path: String, message: String },
    #[error("override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    /// 1 is greedy decoding; larger values run beam search.
    pub beam_size: usize,
}

impl DecodeConfig {
    pub fn mode(&self) -> Decoding {
        if self.beam_size <= 1 {
            Decoding::Greedy
        } else {
            Decoding::Beam(self.beam_size)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    pub min_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub vocab: VocabConfig,
}

pub const PRESETS: [&str; 2] = ["mlee-ge11", "phee"];

impl Config {
    pub fn preset(name: &str) -> Result<Self> {
        let epochs = match name {
            "mlee-ge11" => 80,
            "phee" => 50,
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            preset: name.to_string(),
            model: ModelConfig::default(),
            train: TrainConfig { epochs, ..TrainConfig::default() },
            decode: DecodeConfig { beam_size: 1 },
            vocab: VocabConfig { min_count: 1 },
        })
    }

    /// Parse TOML text. A top-level `preset` key picks the base; every
    /// other key overrides it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| invalid(&e))?;
        let name = match user.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(ConfigError::Invalid("`preset` must be a string".into())),
            None => PRESETS[0].to_string(),
        };
        let mut base = toml::Table::try_from(Self::preset(&name)?).map_err(|e| invalid(&e))?;
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e| invalid(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key=value` overrides; values are TOML literals, and
    /// bare words are taken as strings.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let value = parse_literal(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut cur = &mut table;
            for seg in &path[..path.len() - 1] {
                cur = cur
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(o.to_string()))?;
            }
            cur.insert(path[path.len() - 1].to_string(), value);
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("train.batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `(key, description)` for every configuration key.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("preset", "base preset: mlee-ge11 (80 epochs) or phee (50 epochs)"),
    ("model.d_model", "hidden size of the encoder-decoder"),
    ("model.layers_enc", "encoder layers"),
    ("model.layers_dec", "decoder layers"),
    ("model.heads", "attention heads (must divide d_model)"),
    ("model.ffn", "feed-forward width"),
    ("model.max_source_len", "maximum encoder input tokens"),
    ("model.max_target_len", "maximum generated tokens after <BOS>, counting <EOS>"),
    ("model.prefix_len", "prefix length l"),
    ("model.per_layer_prefix", "one prefix block per attention site instead of one shared block"),
    ("model.use_prefix", "enable the structure-aware prefix branch"),
    ("model.prompt_encoder.layers", "prompt encoder layers"),
    ("model.prompt_encoder.heads", "prompt encoder attention heads"),
    ("model.prompt_encoder.d_enc", "prompt encoder hidden size"),
    ("model.prompt_encoder.ffn", "prompt encoder feed-forward width"),
    ("model.prompt_encoder.max_len", "maximum structural sequence tokens"),
    ("train.epochs", "training epochs"),
    ("train.batch_size", "subtasks per optimizer step"),
    ("train.lr_seq2seq", "learning rate of the encoder-decoder"),
    ("train.lr_prompt_encoder", "learning rate of the prompt encoder"),
    ("train.lr_prefix_ffnn", "learning rate of the prefix FFNN (defaults to lr_seq2seq)"),
    ("train.negative_ratio", "negative subtasks sampled per positive subtask each epoch"),
    ("train.clip_norm", "global gradient-norm clip (unset: no clipping)"),
    ("train.seed", "seed for initialization and shuffling"),
    ("train.workers", "data-parallel worker threads per batch"),
    ("decode.beam_size", "1 for greedy decoding, k for beam search"),
    ("vocab.min_count", "minimum token count for the vocabulary"),
];

/// Help text listing every key with its value in each preset.
pub fn describe_keys() -> String {
    let presets: Vec<toml::Table> = PRESETS
        .iter()
        .map(|p| toml::Table::try_from(Config::preset(p).expect("preset")).expect("table"))
        .collect();
    let lookup = |t: &toml::Table, key: &str| -> String {
        let mut cur = toml::Value::Table(t.clone());
        for seg in key.split('.') {
            match cur.get(seg) {
                Some(v) => cur = v.clone(),
                None => return "unset".to_string(),
            }
        }
        cur.to_string()
    };
    let mut s = String::from("Configuration keys (defaults per preset: mlee-ge11 / phee):\n");
    for (key, doc) in KEY_DOCS {
        let a = lookup(&presets[0], key);
        let b = lookup(&presets[1], key);
        let def = if a == b { a } else { format!("{a} / {b}") };
        s.push_str(&format!("  {key:<32} {doc} [default: {def}]\n"));
    }
    s
}
