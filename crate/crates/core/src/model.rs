//! The full extraction model: vocabulary, ontology, event prompts, the
//! prefix branch, and the seq2seq network, with self-contained checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use genbee_numerics::{checkpoint, Graph, Initializer, NumericsError, ParamStore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Ontology;
use crate::prefix::{Prefix, PrefixLearner, PrefixShape, PrefixVars};
use crate::prompt::{build_all_prompts, build_input, build_structural_sequence, EventPrompt, PromptError, TemplateStore};
use crate::seq2seq::{Decoding, ModelConfig, ModelError, PrefixArg, Seq2Seq};
use crate::tokenizer::{Vocab, VocabError};

pub const CHECKPOINT_FORMAT: &str = "genbee-model";

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error("event type `{0}` is not in the model's ontology")]
    UnknownEventType(String),
}

impl From<crate::prefix::PrefixError> for Error {
    fn from(e: crate::prefix::PrefixError) -> Self {
        Error::Model(e.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Serialize, Deserialize)]
struct Metadata {
    format: String,
    config: ModelConfig,
    vocab: serde_json::Value,
    ontology: Ontology,
    templates: TemplateStore,
    #[serde(default)]
    training: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct GenBeeModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub ontology: Ontology,
    pub templates: TemplateStore,
    pub prompts: Vec<EventPrompt>,
    pub store: ParamStore,
    pub seq2seq: Seq2Seq,
    pub prefix: PrefixLearner,
    structural: BTreeMap<String, Vec<usize>>,
}

impl GenBeeModel {
    /// Fresh model with parameters drawn from `seed`. Fails if any ontology
    /// type lacks a valid template.
    pub fn new(config: ModelConfig, vocab: Vocab, ontology: Ontology, templates: TemplateStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let prompts = build_all_prompts(&ontology, &templates)?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let seq2seq = Seq2Seq::new(&mut store, &mut init, config.clone(), vocab.len())?;
        let shape = PrefixShape {
            length: config.prefix_len,
            d_model: config.d_model,
            blocks: config.prefix_blocks(),
        };
        let prefix = PrefixLearner::new(&mut store, &mut init, config.prompt_encoder.clone(), vocab.len(), shape)?;
        let structural = ontology
            .type_names()
            .map(|t| (t.to_string(), vocab.encode(&build_structural_sequence(t)).ids))
            .collect();
        Ok(Self { config, vocab, ontology, templates, prompts, store, seq2seq, prefix, structural })
    }

    pub fn prompt(&self, event_type: &str) -> Result<&EventPrompt> {
        self.prompts
            .iter()
            .find(|p| p.event_type == event_type)
            .ok_or_else(|| Error::UnknownEventType(event_type.to_string()))
    }

    /// Token ids of the encoder input for `(event_type, context)`.
    pub fn source_ids(&self, event_type: &str, context: &str) -> Result<Vec<usize>> {
        Ok(self.vocab.encode(&build_input(self.prompt(event_type)?, context)).ids)
    }

    pub fn structural_ids(&self, event_type: &str) -> Result<&[usize]> {
        self.structural
            .get(event_type)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownEventType(event_type.to_string()))
    }

    /// Prefix blocks for `event_type` recorded in `g`, or `None` when the prefix branch is off.
    pub fn prefix_vars(&self, g: &mut Graph<'_>, event_type: &str) -> Result<Option<PrefixVars>> {
        if !self.config.use_prefix {
            return Ok(None);
        }
        let ids = self.structural_ids(event_type)?;
        Ok(Some(self.prefix.prefix(g, event_type, ids)?))
    }

    /// Detached prefix for inference.
    pub fn prefix_value(&self, event_type: &str) -> Result<Option<Prefix>> {
        let mut g = Graph::inference(&self.store);
        Ok(self.prefix_vars(&mut g, event_type)?.map(|p| p.to_prefix(&g)))
    }

    pub fn prefix_arg<'p>(p: &'p Option<PrefixVars>) -> PrefixArg<'p> {
        p.as_ref().map_or(PrefixArg::None, PrefixArg::Vars)
    }

    /// Generated ids for one subtask, `<BOS>` first.
    pub fn generate_ids(&self, event_type: &str, context: &str, mode: Decoding, prefix: Option<&Prefix>) -> Result<Vec<usize>> {
        let src = self.source_ids(event_type, context)?;
        Ok(self.seq2seq.generate(&self.store, &src, prefix, mode)?)
    }

    /// Generated text for one subtask.
    pub fn generate_text(&self, event_type: &str, context: &str, mode: Decoding) -> Result<String> {
        let prefix = self.prefix_value(event_type)?;
        let ids = self.generate_ids(event_type, context, mode, prefix.as_ref())?;
        Ok(self.vocab.decode_generated(&ids))
    }

    fn metadata(&self, training: serde_json::Value) -> String {
        let meta = Metadata {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            vocab: serde_json::from_str(&self.vocab.to_json()).expect("vocab json"),
            ontology: self.ontology.clone(),
            templates: self.templates.clone(),
            training,
        };
        serde_json::to_string(&meta).expect("metadata serializes")
    }

    pub fn to_bytes(&self, training: serde_json::Value) -> Vec<u8> {
        checkpoint::encode(&self.store, &self.metadata(training))
    }

    pub fn save(&self, path: impl AsRef<Path>, training: serde_json::Value) -> Result<()> {
        Ok(checkpoint::save(path, &self.store, &self.metadata(training))?)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<(Self, serde_json::Value)> {
        let (store, meta) = checkpoint::decode(buf)?;
        Self::from_parts(store, &meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let (store, meta) = checkpoint::load(path)?;
        Self::from_parts(store, &meta)
    }

    fn from_parts(store: ParamStore, meta: &str) -> Result<(Self, serde_json::Value)> {
        let meta: Metadata = serde_json::from_str(meta).map_err(|e| Error::Metadata(e.to_string()))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Metadata(format!("unexpected format `{}`", meta.format)));
        }
        let vocab = Vocab::from_json(&meta.vocab.to_string())?;
        let mut model = Self::new(meta.config, vocab, meta.ontology, meta.templates, 0)?;
        if model.store.len() != store.len() {
            return Err(Error::Metadata(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                model.store.len()
            )));
        }
        model.store.load_from(&store)?;
        Ok((model, meta.training))
    }
}

/// Every text a model vocabulary must cover: contexts, prompt assets, and
/// the structural sequences of each event type.
pub fn vocab_sources<'a>(
    contexts: impl IntoIterator<Item = &'a str>,
    ontology: &Ontology,
    templates: &TemplateStore,
) -> Vec<String> {
    let mut out: Vec<String> = contexts.into_iter().map(str::to_string).collect();
    out.extend(templates.texts().map(str::to_string));
    for t in ontology.type_names() {
        out.push(t.to_string());
        out.push(build_structural_sequence(t));
    }
    out
}

/// Vocabulary over [`vocab_sources`], with a placeholder for every ontology role.
pub fn build_vocab<'a>(
    contexts: impl IntoIterator<Item = &'a str>,
    ontology: &Ontology,
    templates: &TemplateStore,
    min_count: usize,
) -> Vocab {
    let sources = vocab_sources(contexts, ontology, templates);
    Vocab::build(sources.iter().map(String::as_str), &ontology.all_roles(), min_count)
}
