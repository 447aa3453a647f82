#![allow(dead_code)]

use genbee::assets;
use genbee::corpus::{Argument, EventMention, Instance, Span};
use genbee::model::{build_vocab, GenBeeModel};
use genbee::prefix::PromptEncoderConfig;
use genbee::seq2seq::ModelConfig;

pub fn small_config(prefix_len: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        layers_enc: 1,
        layers_dec: 1,
        heads: 2,
        ffn: 32,
        max_source_len: 64,
        max_target_len: 24,
        prefix_len,
        per_layer_prefix: false,
        use_prefix: true,
        prompt_encoder: PromptEncoderConfig { layers: 1, heads: 2, d_enc: 8, ffn: 16, max_len: 160 },
    }
}

pub fn mini_model(config: ModelConfig, seed: u64) -> GenBeeModel {
    let corpus = assets::mini_corpus();
    let onto = assets::mini_ontology();
    let templates = assets::mini_templates();
    let vocab = build_vocab(corpus.instances.iter().map(|i| i.context.as_str()), &onto, &templates, 1);
    GenBeeModel::new(config, vocab, onto, templates, seed).unwrap()
}

/// Event located by surface strings; panics if a surface is absent.
pub fn event(context: &str, event_type: &str, trigger: &str, args: &[(&str, &str)]) -> EventMention {
    EventMention {
        event_type: event_type.into(),
        trigger: find(context, trigger),
        arguments: args.iter().map(|(r, s)| Argument { role: r.to_string(), span: find(context, s) }).collect(),
    }
}

pub fn find(context: &str, surface: &str) -> Span {
    let b = context.find(surface).unwrap_or_else(|| panic!("`{surface}` not in `{context}`"));
    let start = context[..b].chars().count();
    Span::new(start, start + surface.chars().count())
}

pub fn instance(id: &str, context: &str, events: Vec<EventMention>) -> Instance {
    Instance { id: id.into(), context: context.into(), events, entities: vec![] }
}

use genbee::prompt::{build_all_prompts, EventPrompt};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Event prompts of every bundled asset set.
pub fn all_bundled_prompts() -> Vec<EventPrompt> {
    let mut out = build_all_prompts(&assets::mini_ontology(), &assets::mini_templates()).unwrap();
    out.extend(build_all_prompts(&assets::ge11_ontology(), &assets::ge11_templates()).unwrap());
    out
}

/// Words for random contexts, including ones that occur in template literals.
pub const WORDS: &[&str] = &[
    "STAT3", "IL-6", "TCF-1", "alpha", "promoter", "kinase", "Tyr705", "cells", "expression", "gene", "at", "on",
    "of", "and", "binds", "site", "phosphate", "the", "to", "by", "in", "complex", ".", ",", "(", ")", "κB",
];

/// Random context of `n` words plus a random event of `prompt`'s type whose
/// trigger and arguments are 1-3 word spans of it.
pub fn random_event(rng: &mut impl Rng, prompt: &EventPrompt) -> (String, EventMention) {
    let n = rng.random_range(4..16);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let context = words.join(" ");
    let mut starts = Vec::with_capacity(n);
    let mut c = 0;
    for w in &words {
        starts.push(c);
        c += w.chars().count() + 1;
    }
    let span = |rng: &mut dyn rand::RngCore| {
        let len = rng.random_range(1..=3usize.min(n));
        let i = rng.random_range(0..=n - len);
        let last = i + len - 1;
        Span::new(starts[i], starts[last] + words[last].chars().count())
    };
    let trigger = span(rng);
    let mut arguments = Vec::new();
    for r in prompt.template.roles() {
        if rng.random_bool(0.7) {
            arguments.push(Argument { role: r.to_string(), span: span(rng) });
        }
    }
    (context, EventMention { event_type: prompt.event_type.clone(), trigger, arguments })
}

use genbee::prefix::{Prefix, PrefixVars};
use genbee::seq2seq::Seq2Seq;
use genbee_numerics::{Graph, Initializer, ParamStore};

/// Stand-alone encoder-decoder with its own parameter store.
pub fn seq2seq(config: ModelConfig, vocab: usize, seed: u64) -> (ParamStore, Seq2Seq) {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let m = Seq2Seq::new(&mut store, &mut init, config, vocab).unwrap();
    (store, m)
}

pub fn random_prefix(config: &ModelConfig, seed: u64) -> Prefix {
    let mut init = Initializer::new(seed);
    let l = config.prefix_len;
    Prefix {
        event_type: "X".into(),
        length: l,
        blocks: (0..config.prefix_blocks()).map(|_| init.normal(&[l, config.d_model], 0.5)).collect(),
    }
}

/// `prefix` as graph constants.
pub fn prefix_consts(g: &mut Graph<'_>, prefix: &Prefix) -> PrefixVars {
    PrefixVars {
        event_type: prefix.event_type.clone(),
        length: prefix.length,
        blocks: prefix.blocks.iter().map(|b| g.constant(b.clone())).collect(),
    }
}

pub fn random_ids(rng: &mut impl Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(6..vocab)).collect()
}
