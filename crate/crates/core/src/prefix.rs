//! Structure-aware prefixes: a small encoder-only transformer reads the
//! structural prompt sequence, and an FFNN maps its `[CLS]` state to an
//! `l x d_model` matrix used as extra attention keys and values.

use genbee_numerics::{Graph, Initializer, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{embed, embed_std, EncoderLayer, Linear, Norm};
use crate::tokenizer::CLS_ID;

/// Parameter-name namespaces reserved in checkpoints.
pub const PROMPT_ENCODER_NS: &str = "prompt_encoder.";
pub const PREFIX_FFNN_NS: &str = "prefix_ffnn.";

#[derive(Debug, Error)]
pub enum PrefixError {
    #[error("structural sequence has {len} tokens; the prompt encoder accepts at most {max}")]
    TooLong { len: usize, max: usize },
    #[error("structural sequence must start with [CLS]")]
    MissingCls,
    #[error("invalid prompt encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] genbee_numerics::NumericsError),
}

pub type Result<T, E = PrefixError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_enc: usize,
    pub ffn: usize,
    pub max_len: usize,
}

impl Default for PromptEncoderConfig {
    fn default() -> Self {
        Self { layers: 1, heads: 2, d_enc: 32, ffn: 64, max_len: 192 }
    }
}

impl PromptEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_enc == 0 || self.d_enc % self.heads != 0 {
            return Err(PrefixError::Config(format!(
                "d_enc {} must be a positive multiple of heads {}",
                self.d_enc, self.heads
            )));
        }
        if self.max_len == 0 || self.ffn == 0 {
            return Err(PrefixError::Config("max_len and ffn must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shape of the prefix consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefixShape {
    pub length: usize,
    pub d_model: usize,
    /// Number of distinct prefix blocks: 1 when shared, else one per attention site.
    pub blocks: usize,
}

#[derive(Debug, Clone)]
pub struct PromptEncoder {
    pub config: PromptEncoderConfig,
    tokens: genbee_numerics::ParamId,
    positions: genbee_numerics::ParamId,
    layers: Vec<EncoderLayer>,
    final_norm: Norm,
}

impl PromptEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, config: PromptEncoderConfig, vocab: usize) -> Result<Self> {
        config.validate()?;
        let d = config.d_enc;
        let ns = PROMPT_ENCODER_NS;
        let tokens = store.add(format!("{ns}tokens"), init.normal(&[vocab, d], embed_std(d)))?;
        let positions = store.add(format!("{ns}positions"), init.normal(&[config.max_len, d], embed_std(d)))?;
        let layers = (0..config.layers)
            .map(|i| EncoderLayer::new(store, init, &format!("{ns}layer{i}"), d, config.heads, config.ffn, false))
            .collect::<Result<Vec<_>, _>>()?;
        let final_norm = Norm::new(store, &format!("{ns}ln_final"), d)?;
        Ok(Self { config, tokens, positions, layers, final_norm })
    }

    /// Per-token states `[n, d_enc]` and the `[CLS]` row `[1, d_enc]`.
    pub fn encode(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<(Var, Var)> {
        if ids.first() != Some(&CLS_ID) {
            return Err(PrefixError::MissingCls);
        }
        if ids.len() > self.config.max_len {
            return Err(PrefixError::TooLong { len: ids.len(), max: self.config.max_len });
        }
        let mut x = embed(g, self.tokens, self.positions, ids, 0)?;
        for layer in &self.layers {
            x = layer.forward(g, x, None)?;
        }
        let x = self.final_norm.forward(g, x)?;
        let cls = g.slice(x, 0, 0, 1)?;
        Ok((x, cls))
    }
}

/// Two-layer tanh FFNN from `d_enc` to `blocks * l * d_model`.
#[derive(Debug, Clone)]
pub struct PrefixProjector {
    pub shape: PrefixShape,
    hidden: Linear,
    out: Linear,
}

impl PrefixProjector {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, d_enc: usize, shape: PrefixShape) -> Result<Self> {
        let ns = PREFIX_FFNN_NS;
        let width = 4 * shape.d_model;
        Ok(Self {
            shape,
            hidden: Linear::new(store, init, &format!("{ns}hidden"), d_enc, width)?,
            out: Linear::new(store, init, &format!("{ns}out"), width, shape.blocks * shape.length * shape.d_model)?,
        })
    }

    /// One `[l, d_model]` var per block. With `l = 0` the blocks are empty.
    pub fn project(&self, g: &mut Graph<'_>, h_cls: Var) -> Result<Vec<Var>> {
        let PrefixShape { length, d_model, blocks } = self.shape;
        let h = self.hidden.forward(g, h_cls)?;
        let h = g.tanh(h);
        let flat = self.out.forward(g, h)?;
        let mut out = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let part = g.slice(flat, 1, b * length * d_model, (b + 1) * length * d_model)?;
            out.push(g.reshape(part, &[length, d_model])?);
        }
        Ok(out)
    }
}

/// Prompt encoder plus projector.
#[derive(Debug, Clone)]
pub struct PrefixLearner {
    pub encoder: PromptEncoder,
    pub projector: PrefixProjector,
}

/// Prefix blocks for one event type inside a graph.
#[derive(Debug, Clone)]
pub struct PrefixVars {
    pub event_type: String,
    pub length: usize,
    pub blocks: Vec<Var>,
}

impl PrefixVars {
    /// Block for attention site `site`; shared prefixes return the same block everywhere.
    pub fn at(&self, site: usize) -> Var {
        if self.blocks.len() == 1 {
            self.blocks[0]
        } else {
            self.blocks[site]
        }
    }

    pub fn to_prefix(&self, g: &Graph<'_>) -> Prefix {
        Prefix {
            event_type: self.event_type.clone(),
            length: self.length,
            blocks: self.blocks.iter().map(|&b| g.value(b).clone()).collect(),
        }
    }
}

/// Materialized prefix, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Prefix {
    pub event_type: String,
    pub length: usize,
    pub blocks: Vec<Tensor>,
}

impl Prefix {
    pub fn rows(&self) -> usize {
        self.length
    }

    pub fn vectors(&self) -> &Tensor {
        &self.blocks[0]
    }
}

impl PrefixLearner {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        config: PromptEncoderConfig,
        vocab: usize,
        shape: PrefixShape,
    ) -> Result<Self> {
        let d_enc = config.d_enc;
        let encoder = PromptEncoder::new(store, init, config, vocab)?;
        let projector = PrefixProjector::new(store, init, d_enc, shape)?;
        Ok(Self { encoder, projector })
    }

    /// Run the whole prefix branch for one structural sequence.
    pub fn prefix(&self, g: &mut Graph<'_>, event_type: &str, structural_ids: &[usize]) -> Result<PrefixVars> {
        let (_, cls) = self.encoder.encode(g, structural_ids)?;
        let blocks = self.projector.project(g, cls)?;
        Ok(PrefixVars { event_type: event_type.to_string(), length: self.projector.shape.length, blocks })
    }
}
