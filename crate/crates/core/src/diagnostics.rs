//! Self-checks shared by the CLI and the test suites.

use genbee_numerics::{grad_check, GradCheckOptions, GradCheckReport};

use crate::assets;
use crate::model::{build_vocab, GenBeeModel};
use crate::prefix::PromptEncoderConfig;
use crate::seq2seq::ModelConfig;
use crate::train::build_subtasks;

/// Small prefix-injected model over the bundled mini ontology:
/// 2+2 layers, d_model 16, prefix length 4.
pub fn tiny_model(seed: u64) -> crate::model::Result<GenBeeModel> {
    let onto = assets::mini_ontology();
    let templates = assets::mini_templates();
    let corpus = assets::mini_corpus();
    let vocab = build_vocab(corpus.instances.iter().map(|i| i.context.as_str()), &onto, &templates, 1);
    let config = ModelConfig {
        d_model: 16,
        layers_enc: 2,
        layers_dec: 2,
        heads: 2,
        ffn: 32,
        max_source_len: 64,
        max_target_len: 48,
        prefix_len: 4,
        per_layer_prefix: false,
        use_prefix: true,
        prompt_encoder: PromptEncoderConfig { layers: 1, heads: 2, d_enc: 8, ffn: 16, max_len: 160 },
    };
    GenBeeModel::new(config, vocab, onto, templates, seed)
}

/// Finite-difference check of the full sequence loss (prompt encoder,
/// prefix FFNN, encoder, decoder) on one positive subtask of the mini corpus.
pub fn model_grad_check(seed: u64) -> anyhow::Result<GradCheckReport> {
    model_grad_check_with(seed, Some(4))
}

pub fn model_grad_check_with(seed: u64, coords_per_param: Option<usize>) -> anyhow::Result<GradCheckReport> {
    let mut model = tiny_model(seed)?;
    let corpus = assets::mini_corpus();
    let subtasks = build_subtasks(&model, &corpus.instances[..1])?;
    let task = subtasks.into_iter().find(|s| s.positive).expect("first instance has events");
    let mut store = std::mem::take(&mut model.store);
    let opts = GradCheckOptions { max_coords_per_param: coords_per_param, seed, ..GradCheckOptions::default() };
    let report = grad_check(
        &mut store,
        &[],
        |g| {
            let p = model.prefix_vars(g, &task.event_type).map_err(numerics_err)?;
            model
                .seq2seq
                .sequence_loss(g, &task.source, &task.target, GenBeeModel::prefix_arg(&p))
                .map_err(|e| numerics_err(e.into()))
        },
        &opts,
    )?;
    model.store = store;
    Ok(report)
}

fn numerics_err(e: crate::model::Error) -> genbee_numerics::NumericsError {
    match e {
        crate::model::Error::Numerics(n) => n,
        crate::model::Error::Model(crate::seq2seq::ModelError::Numerics(n)) => n,
        other => genbee_numerics::NumericsError::Checkpoint(other.to_string()),
    }
}
