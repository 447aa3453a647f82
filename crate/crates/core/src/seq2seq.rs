//! Encoder-decoder transformer with prefix-augmented attention.
//!
//! The prefix is prepended to the keys and values of every encoder
//! self-attention and every decoder cross-attention; decoder self-attention
//! never sees it. Output logits reuse the token embedding table.

use genbee_numerics::{Graph, Initializer, ParamId, ParamStore, Reduction, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{attend_with_prefix, embed, embed_std, AttentionSite, EncoderLayer, FeedForward, Mask, Norm};
use crate::prefix::{Prefix, PrefixVars, PromptEncoderConfig};
use crate::tokenizer::{BOS_ID, EOS_ID, PAD_ID};

pub const SEQ2SEQ_NS: &str = "seq2seq.";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("source has {len} tokens; the model accepts at most {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("target has {len} tokens; the model accepts at most {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("decoder input must start with <BOS>")]
    MissingBos,
    #[error("prefix has {got} blocks of shape {shape:?}; expected {blocks} of [{length}, {d_model}]")]
    PrefixShape { got: usize, shape: Vec<usize>, blocks: usize, length: usize, d_model: usize },
    #[error(transparent)]
    Prefix(#[from] crate::prefix::PrefixError),
    #[error(transparent)]
    Numerics(#[from] genbee_numerics::NumericsError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_source_len: usize,
    /// Maximum generated tokens after `<BOS>`, counting `<EOS>`.
    pub max_target_len: usize,
    pub prefix_len: usize,
    /// Give each attention site its own prefix block instead of sharing one.
    #[serde(default)]
    pub per_layer_prefix: bool,
    /// Disable the prefix branch entirely (ablation).
    #[serde(default = "yes")]
    pub use_prefix: bool,
    pub prompt_encoder: PromptEncoderConfig,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers_enc: 2,
            layers_dec: 2,
            heads: 4,
            ffn: 256,
            max_source_len: 256,
            max_target_len: 128,
            prefix_len: 40,
            per_layer_prefix: false,
            use_prefix: true,
            prompt_encoder: PromptEncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.max_source_len == 0 || self.max_target_len == 0 || self.ffn == 0 {
            return err("max_source_len, max_target_len and ffn must be at least 1".into());
        }
        self.prompt_encoder.validate()?;
        Ok(())
    }

    /// Attention sites that receive a prefix: encoder layers then decoder cross-attention.
    pub fn prefix_sites(&self) -> usize {
        self.layers_enc + self.layers_dec
    }

    pub fn prefix_blocks(&self) -> usize {
        if self.per_layer_prefix {
            self.prefix_sites()
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: AttentionSite,
    norm_cross: Norm,
    cross: AttentionSite,
    norm_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub vocab_size: usize,
    tokens: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc_layers: Vec<EncoderLayer>,
    enc_norm: Norm,
    dec_layers: Vec<DecoderLayer>,
    dec_norm: Norm,
}

/// Prefix blocks indexed by attention site, inside one graph.
#[derive(Debug, Clone, Copy)]
pub enum PrefixArg<'p> {
    None,
    Vars(&'p PrefixVars),
}

impl PrefixArg<'_> {
    fn at(&self, site: usize) -> Option<Var> {
        match self {
            PrefixArg::None => None,
            PrefixArg::Vars(p) => Some(p.at(site)),
        }
    }
}

/// Encoder output with the decoder's cross-attention keys and values cached.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub memory: Tensor,
    /// Per decoder layer: keys and values with the prefix rows prepended.
    cross_kv: Vec<(Tensor, Tensor)>,
}

/// Incremental decoding state.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub tokens: Vec<usize>,
    self_kv: Vec<(Tensor, Tensor)>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Beam(usize),
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - lse).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Seq2Seq {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ns = SEQ2SEQ_NS;
        let tokens = store.add(format!("{ns}tokens"), init.normal(&[vocab_size, d], embed_std(d)))?;
        let enc_pos = store.add(format!("{ns}enc_positions"), init.normal(&[config.max_source_len, d], embed_std(d)))?;
        let dec_pos = store.add(format!("{ns}dec_positions"), init.normal(&[config.max_target_len, d], embed_std(d)))?;
        let enc_layers = (0..config.layers_enc)
            .map(|i| EncoderLayer::new(store, init, &format!("{ns}enc{i}"), d, config.heads, config.ffn, true))
            .collect::<Result<Vec<_>, _>>()?;
        let enc_norm = Norm::new(store, &format!("{ns}enc_ln_final"), d)?;
        let mut dec_layers = Vec::with_capacity(config.layers_dec);
        for i in 0..config.layers_dec {
            let name = format!("{ns}dec{i}");
            dec_layers.push(DecoderLayer {
                norm_self: Norm::new(store, &format!("{name}.ln_self"), d)?,
                self_attn: AttentionSite::new(store, init, &format!("{name}.self"), d, config.heads, false)?,
                norm_cross: Norm::new(store, &format!("{name}.ln_cross"), d)?,
                cross: AttentionSite::new(store, init, &format!("{name}.cross"), d, config.heads, true)?,
                norm_ffn: Norm::new(store, &format!("{name}.ln_ffn"), d)?,
                ffn: FeedForward::new(store, init, &format!("{name}.ffn"), d, config.ffn)?,
            });
        }
        let dec_norm = Norm::new(store, &format!("{ns}dec_ln_final"), d)?;
        Ok(Self { config, vocab_size, tokens, enc_pos, dec_pos, enc_layers, enc_norm, dec_layers, dec_norm })
    }

    fn check_prefix_vars(&self, g: &Graph<'_>, prefix: PrefixArg<'_>) -> Result<()> {
        if let PrefixArg::Vars(p) = prefix {
            let blocks = self.config.prefix_blocks();
            let ok = p.blocks.len() == blocks
                && p.blocks.iter().all(|&b| g.shape(b) == [p.length, self.config.d_model]);
            if !ok {
                return Err(ModelError::PrefixShape {
                    got: p.blocks.len(),
                    shape: p.blocks.first().map(|&b| g.shape(b).to_vec()).unwrap_or_default(),
                    blocks,
                    length: p.length,
                    d_model: self.config.d_model,
                });
            }
        }
        Ok(())
    }

    /// Encoder hidden states `[n, d_model]` for source ids.
    pub fn encode(&self, g: &mut Graph<'_>, ids: &[usize], prefix: PrefixArg<'_>) -> Result<Var> {
        if ids.len() > self.config.max_source_len {
            return Err(ModelError::SourceTooLong { len: ids.len(), max: self.config.max_source_len });
        }
        self.check_prefix_vars(g, prefix)?;
        let mut x = embed(g, self.tokens, self.enc_pos, ids, 0)?;
        for (i, layer) in self.enc_layers.iter().enumerate() {
            x = layer.forward(g, x, prefix.at(i))?;
        }
        Ok(self.enc_norm.forward(g, x)?)
    }

    fn output_logits(&self, g: &mut Graph<'_>, h: Var) -> Result<Var> {
        let h = self.dec_norm.forward(g, h)?;
        let table = g.param(self.tokens);
        let t = g.transpose(table)?;
        Ok(g.matmul(h, t)?)
    }

    /// Teacher-forced decoder logits `[n, V]` for decoder input ids (starting with `<BOS>`).
    pub fn decode(&self, g: &mut Graph<'_>, memory: Var, input: &[usize], prefix: PrefixArg<'_>) -> Result<Var> {
        if input.first() != Some(&BOS_ID) {
            return Err(ModelError::MissingBos);
        }
        if input.len() > self.config.max_target_len {
            return Err(ModelError::TargetTooLong { len: input.len(), max: self.config.max_target_len });
        }
        self.check_prefix_vars(g, prefix)?;
        let mut x = embed(g, self.tokens, self.dec_pos, input, 0)?;
        for (j, layer) in self.dec_layers.iter().enumerate() {
            let h = layer.norm_self.forward(g, x)?;
            let a = layer.self_attn.forward(g, h, h, None, Mask::Causal)?;
            x = g.add(x, a)?;
            let h = layer.norm_cross.forward(g, x)?;
            let c = layer.cross.forward(g, h, memory, prefix.at(self.config.layers_enc + j), Mask::None)?;
            x = g.add(x, c)?;
            let h = layer.norm_ffn.forward(g, x)?;
            let f = layer.ffn.forward(g, h)?;
            x = g.add(x, f)?;
        }
        self.output_logits(g, x)
    }

    /// Token-mean negative log-likelihood of `target` (ending in `<EOS>`)
    /// under teacher forcing. Padding positions are ignored.
    pub fn sequence_loss(
        &self,
        g: &mut Graph<'_>,
        source: &[usize],
        target: &[usize],
        prefix: PrefixArg<'_>,
    ) -> Result<Var> {
        let memory = self.encode(g, source, prefix)?;
        let input = decoder_input(target);
        let logits = self.decode(g, memory, &input, prefix)?;
        Ok(g.cross_entropy(logits, target, Some(PAD_ID), Reduction::Mean)?)
    }

    fn prefix_consts(&self, g: &mut Graph<'_>, prefix: Option<&Prefix>) -> Result<Option<PrefixVars>> {
        let Some(p) = prefix else { return Ok(None) };
        let vars = PrefixVars {
            event_type: p.event_type.clone(),
            length: p.length,
            blocks: p.blocks.iter().map(|b| g.constant(b.clone())).collect(),
        };
        self.check_prefix_vars(g, PrefixArg::Vars(&vars))?;
        Ok(Some(vars))
    }

    /// Run the encoder once and cache cross-attention keys/values.
    pub fn encode_source(&self, store: &ParamStore, ids: &[usize], prefix: Option<&Prefix>) -> Result<EncodedSource> {
        let mut g = Graph::inference(store);
        let pv = self.prefix_consts(&mut g, prefix)?;
        let parg = pv.as_ref().map_or(PrefixArg::None, PrefixArg::Vars);
        let memory = self.encode(&mut g, ids, parg)?;
        let mut cross_kv = Vec::with_capacity(self.dec_layers.len());
        for (j, layer) in self.dec_layers.iter().enumerate() {
            let (mut k, mut v) = layer.cross.project_kv(&mut g, memory)?;
            if let Some(p) = parg.at(self.config.layers_enc + j) {
                k = g.concat(&[p, k], 0)?;
                v = g.concat(&[p, v], 0)?;
            }
            cross_kv.push((g.value(k).clone(), g.value(v).clone()));
        }
        Ok(EncodedSource { memory: g.value(memory).clone(), cross_kv })
    }

    pub fn start_state(&self) -> DecoderState {
        let d = self.config.d_model;
        DecoderState {
            tokens: vec![BOS_ID],
            self_kv: vec![(Tensor::zeros(&[0, d]), Tensor::zeros(&[0, d])); self.dec_layers.len()],
            log_prob: 0.0,
        }
    }

    /// Next-token probabilities after the last token of `state`, plus the
    /// state's caches extended by that token.
    pub fn decode_step(&self, store: &ParamStore, src: &EncodedSource, state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        let (logp, next) = self.decode_step_log(store, src, state)?;
        Ok((logp.iter().map(|v| v.exp()).collect(), next))
    }

    fn decode_step_log(&self, store: &ParamStore, src: &EncodedSource, state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        if state.tokens.first() != Some(&BOS_ID) {
            return Err(ModelError::MissingBos);
        }
        let pos = state.tokens.len() - 1;
        if pos >= self.config.max_target_len {
            return Err(ModelError::TargetTooLong { len: pos + 1, max: self.config.max_target_len });
        }
        let last = state.tokens[pos];
        let mut g = Graph::inference(store);
        let mut x = embed(&mut g, self.tokens, self.dec_pos, &[last], pos)?;
        let mut self_kv = Vec::with_capacity(self.dec_layers.len());
        for (j, layer) in self.dec_layers.iter().enumerate() {
            let h = layer.norm_self.forward(&mut g, x)?;
            let (k_new, v_new) = layer.self_attn.project_kv(&mut g, h)?;
            let (pk, pv) = &state.self_kv[j];
            let pk = g.constant(pk.clone());
            let pv = g.constant(pv.clone());
            let k = g.concat(&[pk, k_new], 0)?;
            let v = g.concat(&[pv, v_new], 0)?;
            let a = layer.self_attn.attend(&mut g, h, k, v, None, Mask::None)?;
            self_kv.push((g.value(k).clone(), g.value(v).clone()));
            x = g.add(x, a)?;
            let h = layer.norm_cross.forward(&mut g, x)?;
            let ck = g.constant(src.cross_kv[j].0.clone());
            let cv = g.constant(src.cross_kv[j].1.clone());
            let q = layer.cross.q.forward(&mut g, h)?;
            let ctx = attend_with_prefix(&mut g, q, ck, cv, None, layer.cross.heads, Mask::None)?;
            let c = layer.cross.o.forward(&mut g, ctx)?;
            x = g.add(x, c)?;
            let h = layer.norm_ffn.forward(&mut g, x)?;
            let f = layer.ffn.forward(&mut g, h)?;
            x = g.add(x, f)?;
        }
        let logits = self.output_logits(&mut g, x)?;
        let logp = log_softmax(g.value(logits).data());
        let next = DecoderState { tokens: state.tokens.clone(), self_kv, log_prob: state.log_prob };
        Ok((logp, next))
    }

    /// Generate `<BOS> ... <EOS>`; at most `max_target_len` tokens follow `<BOS>`.
    pub fn generate(
        &self,
        store: &ParamStore,
        source: &[usize],
        prefix: Option<&Prefix>,
        mode: Decoding,
    ) -> Result<Vec<usize>> {
        let src = self.encode_source(store, source, prefix)?;
        match mode {
            Decoding::Greedy => self.greedy(store, &src),
            Decoding::Beam(k) => self.beam(store, &src, k.max(1)),
        }
    }

    fn greedy(&self, store: &ParamStore, src: &EncodedSource) -> Result<Vec<usize>> {
        let mut state = self.start_state();
        for _ in 0..self.config.max_target_len {
            let (logp, mut next) = self.decode_step_log(store, src, &state)?;
            let t = argmax(&logp);
            next.tokens.push(t);
            next.log_prob += logp[t];
            state = next;
            if t == EOS_ID {
                break;
            }
        }
        Ok(state.tokens)
    }

    /// Beam search over summed log-probabilities. Hypotheses that emit
    /// `<EOS>` leave the beam; the winner maximizes log-probability divided
    /// by the number of generated tokens.
    fn beam(&self, store: &ParamStore, src: &EncodedSource, k: usize) -> Result<Vec<usize>> {
        let mut alive = vec![self.start_state()];
        let mut finished: Vec<DecoderState> = Vec::new();
        for _ in 0..self.config.max_target_len {
            if alive.is_empty() {
                break;
            }
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            let mut stepped = Vec::with_capacity(alive.len());
            for (h, state) in alive.iter().enumerate() {
                let (logp, next) = self.decode_step_log(store, src, state)?;
                for (t, lp) in logp.iter().enumerate() {
                    candidates.push((state.log_prob + lp, h, t));
                }
                stepped.push(next);
            }
            // Stable sort keeps (hypothesis, token) order on ties, matching greedy argmax.
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            let width = k.saturating_sub(finished.len()).max(1).min(k);
            let mut next_alive = Vec::new();
            for &(score, h, t) in candidates.iter().take(width) {
                let mut s = stepped[h].clone();
                s.tokens.push(t);
                s.log_prob = score;
                if t == EOS_ID {
                    finished.push(s);
                } else {
                    next_alive.push(s);
                }
            }
            alive = next_alive;
            if finished.len() >= k {
                break;
            }
        }
        finished.extend(alive);
        let norm = |s: &DecoderState| s.log_prob / (s.tokens.len() - 1).max(1) as f64;
        let mut best = 0;
        for (i, s) in finished.iter().enumerate() {
            if norm(s) > norm(&finished[best]) {
                best = i;
            }
        }
        Ok(finished.swap_remove(best).tokens)
    }
}

/// `<BOS>` followed by the target without its final token.
pub fn decoder_input(target: &[usize]) -> Vec<usize> {
    let mut input = Vec::with_capacity(target.len());
    input.push(BOS_ID);
    input.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    input
}

/// Target ids for generation: encoded text followed by `<EOS>`.
pub fn target_ids(mut ids: Vec<usize>) -> Vec<usize> {
    ids.push(EOS_ID);
    ids
}
