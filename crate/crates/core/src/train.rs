//! Subtask construction and the training loop.

use std::collections::HashMap;
use std::fmt::Write as _;

use genbee_numerics::{Adam, AdamConfig, Gradients, Graph, ParamStore, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EventMention, Instance};
use crate::model::{Error, GenBeeModel, Result};
use crate::prefix::{PREFIX_FFNN_NS, PROMPT_ENCODER_NS};
use crate::prompt::{build_target, EventTemplate};
use crate::seq2seq::{target_ids, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_seq2seq: f64,
    pub lr_prompt_encoder: f64,
    /// Learning rate of the prefix FFNN; the seq2seq rate when absent.
    #[serde(default)]
    pub lr_prefix_ffnn: Option<f64>,
    /// Negative subtasks kept per positive subtask in each epoch.
    pub negative_ratio: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Data-parallel workers per batch. Results depend on this count but are
    /// reproducible for a fixed value.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 16,
            lr_seq2seq: 1e-5,
            lr_prompt_encoder: 1e-6,
            lr_prefix_ffnn: None,
            negative_ratio: 1.0,
            clip_norm: None,
            seed: 42,
            workers: 1,
        }
    }
}

/// One (instance, event type) training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtask {
    pub instance_id: String,
    pub event_type: String,
    pub positive: bool,
    pub target_text: String,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Target text for `(instance, event_type)`: filled templates of its events, or the bare template.
pub fn subtask_target(template: &EventTemplate, inst: &Instance, event_type: &str) -> Result<String> {
    let events: Vec<&EventMention> = inst.events.iter().filter(|e| e.event_type == event_type).collect();
    Ok(build_target(template, &events, &inst.context)?)
}

/// Every (instance, type) pair in instance-major, ontology order.
pub fn build_subtasks(model: &GenBeeModel, instances: &[Instance]) -> Result<Vec<Subtask>> {
    let mut out = Vec::new();
    for inst in instances {
        for prompt in &model.prompts {
            let t = &prompt.event_type;
            let target_text = subtask_target(&prompt.template, inst, t)?;
            let source = model.source_ids(t, &inst.context)?;
            let target = target_ids(model.vocab.encode(&target_text).ids);
            if source.len() > model.config.max_source_len {
                return Err(ModelError::SourceTooLong { len: source.len(), max: model.config.max_source_len }.into());
            }
            if target.len() > model.config.max_target_len {
                return Err(ModelError::TargetTooLong { len: target.len(), max: model.config.max_target_len }.into());
            }
            out.push(Subtask {
                instance_id: inst.id.clone(),
                event_type: t.clone(),
                positive: inst.events.iter().any(|e| &e.event_type == t),
                target_text,
                source,
                target,
            });
        }
    }
    Ok(out)
}

/// Positives plus a seeded sample of `ratio * positives` negatives, shuffled.
pub fn epoch_order(subtasks: &[Subtask], ratio: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (pos, mut neg): (Vec<usize>, Vec<usize>) = (0..subtasks.len()).partition(|&i| subtasks[i].positive);
    neg.shuffle(rng);
    let keep = ((pos.len() as f64) * ratio.max(0.0)).round() as usize;
    neg.truncate(keep.min(neg.len()));
    let mut order: Vec<usize> = pos.into_iter().chain(neg).collect();
    order.shuffle(rng);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub curve: Vec<LossPoint>,
    /// Mean batch loss per epoch (NaN for an epoch with no steps).
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,loss\n");
        for p in &self.curve {
            let _ = writeln!(s, "{},{},{}", p.epoch, p.step, p.loss);
        }
        s
    }
}

pub fn learning_rate_for(config: &TrainConfig, name: &str) -> f64 {
    if name.starts_with(PROMPT_ENCODER_NS) {
        config.lr_prompt_encoder
    } else if name.starts_with(PREFIX_FFNN_NS) {
        config.lr_prefix_ffnn.unwrap_or(config.lr_seq2seq)
    } else {
        config.lr_seq2seq
    }
}

/// Summed loss over `items` divided by `denom`, with gradients.
/// Prefixes are computed once per event type in the graph.
pub fn batch_gradients(
    model: &GenBeeModel,
    store: &ParamStore,
    items: &[&Subtask],
    denom: f64,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(store);
    let mut prefixes = HashMap::new();
    let mut total: Option<Var> = None;
    for s in items {
        if !prefixes.contains_key(&s.event_type) {
            let p = model.prefix_vars(&mut g, &s.event_type)?;
            prefixes.insert(s.event_type.clone(), p);
        }
        let p = &prefixes[&s.event_type];
        let loss = model
            .seq2seq
            .sequence_loss(&mut g, &s.source, &s.target, GenBeeModel::prefix_arg(p))?;
        total = Some(match total {
            Some(t) => g.add(t, loss).map_err(ModelError::from)?,
            None => loss,
        });
    }
    let Some(total) = total else {
        return Ok((0.0, Gradients::new(store.len())));
    };
    let scaled = g.scale(total, 1.0 / denom);
    let grads = g.backward(scaled).map_err(ModelError::from)?;
    Ok((g.value(scaled).data()[0], grads))
}

fn parallel_gradients(model: &GenBeeModel, batch: &[&Subtask], workers: usize) -> Result<(f64, Gradients)> {
    let denom = batch.len() as f64;
    if workers <= 1 || batch.len() < 2 {
        return batch_gradients(model, &model.store, batch, denom);
    }
    let chunk = batch.len().div_ceil(workers);
    let results: Vec<Result<(f64, Gradients)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| scope.spawn(move || batch_gradients(model, &model.store, part, denom)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut loss = 0.0;
    let mut grads = Gradients::new(model.store.len());
    for r in results {
        let (l, gr) = r?;
        loss += l;
        grads.accumulate(gr);
    }
    Ok((loss, grads))
}

/// Train `model` in place. `on_epoch` sees (epoch index, mean loss).
pub fn train(
    model: &mut GenBeeModel,
    instances: &[Instance],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if config.batch_size == 0 {
        return Err(Error::Metadata("batch_size must be at least 1".into()));
    }
    let subtasks = build_subtasks(model, instances)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adam_cfg = AdamConfig { clip_norm: config.clip_norm, ..AdamConfig::default() };
    let mut adam = Adam::new(&model.store, adam_cfg, |name| learning_rate_for(config, name));
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let order = epoch_order(&subtasks, config.negative_ratio, &mut rng);
        let mut sum = 0.0;
        let mut n = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Subtask> = idx.iter().map(|&i| &subtasks[i]).collect();
            let (loss, grads) = parallel_gradients(model, &batch, config.workers)?;
            adam.step(&mut model.store, &grads);
            report.steps += 1;
            report.curve.push(LossPoint { epoch, step: report.steps, loss });
            sum += loss;
            n += 1;
        }
        let mean = if n == 0 { f64::NAN } else { sum / n as f64 };
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}
