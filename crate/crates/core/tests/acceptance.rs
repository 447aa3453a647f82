//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Pinned tolerances:
//! - prefix reduction: bitwise equality
//! - gradient checks: worst relative error < 1e-4 (h = 1e-4, floor 1e-6)
//! - attention oracle: max abs difference <= 1e-12
//! - overfitting: <= 500 optimizer steps, Trg-C F1 == 1.0, Arg-C F1 >= 0.9
//! - metric oracle: exact f64 equality
//! - determinism: byte equality

mod common;

use std::path::Path;
use std::time::Instant;

use genbee::assets;
use genbee::corpus::{
    instance_stats, read_instances, reference_stats, Argument, EventMention, Instance, Span, Split,
};
use genbee::evaluator::{score, Prf};
use genbee::extractor::{extract_all, match_span};
use genbee::model::{build_vocab, GenBeeModel};
use genbee::nn::{attend_with_prefix, Mask};
use genbee::prefix::{Prefix, PrefixProjector, PrefixShape, PromptEncoderConfig};
use genbee::prompt::{event_slot_values, fill_template, literal_collision, parse_output};
use genbee::seq2seq::{decoder_input, target_ids, Decoding, ModelConfig, PrefixArg};
use genbee::train::{build_subtasks, train, TrainConfig};
use genbee_numerics::{grad_check, GradCheckOptions, Graph, Initializer, ParamStore, Reduction, Tensor, Var};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{all_bundled_prompts, prefix_consts, random_event, random_ids, seq2seq};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// 1. Prefix reduction ------------------------------------------------------

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = rng.random_range(1..=3);
    let d_model = heads * rng.random_range(2..=6);
    ModelConfig {
        d_model,
        layers_enc: rng.random_range(1..=2),
        layers_dec: rng.random_range(1..=2),
        heads,
        ffn: rng.random_range(4..=24),
        max_source_len: 16,
        max_target_len: rng.random_range(1..=8),
        prefix_len: 0,
        per_layer_prefix: rng.random_bool(0.5),
        use_prefix: true,
        prompt_encoder: PromptEncoderConfig { layers: 1, heads: 1, d_enc: 4, ffn: 8, max_len: 160 },
    }
}

fn prefix_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for case in 0..100 {
        let cfg = random_config(&mut rng);
        let vocab = rng.random_range(8..40);
        let (store, m) = seq2seq(cfg.clone(), vocab, rng.random());
        let empty = Prefix {
            event_type: "X".into(),
            length: 0,
            blocks: vec![Tensor::zeros(&[0, cfg.d_model]); cfg.prefix_blocks()],
        };
        let n_src = rng.random_range(1..=16);
        let src = random_ids(&mut rng, n_src, vocab);
        let n_tgt = rng.random_range(0..cfg.max_target_len);
        let tgt = target_ids(random_ids(&mut rng, n_tgt, vocab));
        let input = decoder_input(&tgt);

        // Graph path: encoder states, decoder logits, loss and gradients.
        let run = |with: bool| {
            let mut g = Graph::new(&store);
            let pv = prefix_consts(&mut g, &empty);
            let arg = if with { PrefixArg::Vars(&pv) } else { PrefixArg::None };
            let mem = m.encode(&mut g, &src, arg).unwrap();
            let logits = m.decode(&mut g, mem, &input, arg).unwrap();
            let loss = m.sequence_loss(&mut g, &src, &tgt, arg).unwrap();
            let grads = g.backward(loss).unwrap();
            let grads: Vec<Tensor> = grads.iter().map(|(_, t)| t.clone()).collect();
            (g.value(mem).clone(), g.value(logits).clone(), g.value(loss).clone(), grads)
        };
        let (a, b) = (run(true), run(false));
        let graph_same = a.0.bitwise_eq(&b.0)
            && a.1.bitwise_eq(&b.1)
            && a.2.bitwise_eq(&b.2)
            && a.3.len() == b.3.len()
            && a.3.iter().zip(&b.3).all(|(x, y)| x.bitwise_eq(y));

        // Incremental path and generation.
        let ea = m.encode_source(&store, &src, Some(&empty)).unwrap();
        let eb = m.encode_source(&store, &src, None).unwrap();
        let (pa, _) = m.decode_step(&store, &ea, &m.start_state()).unwrap();
        let (pb, _) = m.decode_step(&store, &eb, &m.start_state()).unwrap();
        let step_same = ea.memory.bitwise_eq(&eb.memory) && pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits());
        let gen_same = [Decoding::Greedy, Decoding::Beam(3)].iter().all(|&mode| {
            m.generate(&store, &src, Some(&empty), mode).unwrap() == m.generate(&store, &src, None, mode).unwrap()
        });
        if !(graph_same && step_same && gen_same) {
            failures.push(format!("case {case} graph={graph_same} step={step_same} generate={gen_same}"));
        }
    }

    // Whole model: l = 0 against the branch switched off, same seed.
    let corpus = assets::mini_corpus();
    let mut cfg = common::small_config(0);
    let on = common::mini_model(cfg.clone(), 3);
    cfg.use_prefix = false;
    let off = common::mini_model(cfg, 3);
    let model_same = corpus.instances.iter().all(|inst| {
        on.prompts.iter().all(|p| {
            on.generate_text(&p.event_type, &inst.context, Decoding::Beam(2)).unwrap()
                == off.generate_text(&p.event_type, &inst.context, Decoding::Beam(2)).unwrap()
        })
    });
    if !model_same {
        failures.push("full model generation differs".into());
    }
    outcome(failures.is_empty(), format!("100 configurations + full model; failures: {failures:?}"))
}

// 2. Gradient fidelity -----------------------------------------------------

type Op = Box<dyn Fn(&mut Graph<'_>, &[Var]) -> genbee_numerics::Result<Var>>;

fn weighted(g: &mut Graph<'_>, x: Var, seed: u64) -> genbee_numerics::Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = g.constant(Initializer::new(seed).uniform(&shape, 1.0));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn op_check(name: &str, shapes: &[&[usize]], op: Op) -> (String, f64) {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(name.len() as u64);
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("x{i}"), init.uniform(s, 1.0)).unwrap())
        .collect();
    let report = grad_check(
        &mut store,
        &[],
        |g| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let y = op(g, &vars)?;
            weighted(g, y, 77)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    (name.to_string(), report.max_rel_error)
}

fn gradient_fidelity() -> Outcome {
    let ops: Vec<(&str, Vec<&[usize]>, Op)> = vec![
        ("matmul", vec![&[3, 4], &[4, 2]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("add", vec![&[3, 4], &[3, 4]], Box::new(|g, v| g.add(v[0], v[1]))),
        ("add_row_broadcast", vec![&[3, 4], &[1, 4]], Box::new(|g, v| g.add(v[0], v[1]))),
        ("mul", vec![&[3, 4], &[3, 4]], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![&[2, 3]], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("softmax", vec![&[3, 5]], Box::new(|g, v| g.softmax(v[0], 1))),
        ("layer_norm", vec![&[3, 6], &[1, 6], &[1, 6]], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("embedding", vec![&[6, 3]], Box::new(|g, v| g.embedding(v[0], &[1, 4, 1, 0]))),
        ("concat_rows", vec![&[2, 3], &[1, 3]], Box::new(|g, v| g.concat(&[v[0], v[1]], 0))),
        ("concat_cols", vec![&[2, 3], &[2, 2]], Box::new(|g, v| g.concat(&[v[0], v[1]], 1))),
        ("slice", vec![&[4, 5]], Box::new(|g, v| g.slice(v[0], 1, 1, 4))),
        ("tanh", vec![&[3, 3]], Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("gelu", vec![&[3, 3]], Box::new(|g, v| Ok(g.gelu(v[0])))),
        ("transpose", vec![&[2, 5]], Box::new(|g, v| g.transpose(v[0]))),
        ("reshape", vec![&[2, 6]], Box::new(|g, v| g.reshape(v[0], &[3, 4]))),
        ("sum", vec![&[3, 2]], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("cross_entropy_mean", vec![&[4, 5]], Box::new(|g, v| g.cross_entropy(v[0], &[1, 0, 4, 2], Some(0), Reduction::Mean))),
        ("cross_entropy_sum", vec![&[4, 5]], Box::new(|g, v| g.cross_entropy(v[0], &[1, 3, 4, 2], None, Reduction::Sum))),
        (
            "attention_prefix_causal",
            vec![&[3, 4], &[3, 4], &[3, 4], &[2, 4]],
            Box::new(|g, v| {
                attend_with_prefix(g, v[0], v[1], v[2], Some(v[3]), 2, Mask::Causal)
                    .map_err(|e| genbee_numerics::NumericsError::Checkpoint(e.to_string()))
            }),
        ),
    ];
    let mut results: Vec<(String, f64)> = ops.into_iter().map(|(n, s, op)| op_check(n, &s, op)).collect();

    // Prefix FFNN on its own.
    let mut store = ParamStore::new();
    let mut init = Initializer::new(5);
    let proj = PrefixProjector::new(&mut store, &mut init, 6, PrefixShape { length: 4, d_model: 16, blocks: 1 }).unwrap();
    let h = init.uniform(&[1, 6], 1.0);
    let r = grad_check(
        &mut store,
        &[],
        |g| {
            let hv = g.constant(h.clone());
            let blocks = proj.project(g, hv).expect("projection");
            weighted(g, blocks[0], 3)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    results.push(("prefix_ffnn".into(), r.max_rel_error));

    // Full 2+2 layer, d_model 16, l 4 model, every coordinate.
    let t = Instant::now();
    let full = genbee::diagnostics::model_grad_check_with(0, None).unwrap();
    results.push((format!("full_model({} coords, {:.0?})", full.coords_checked, t.elapsed()), full.max_rel_error));

    let worst = results.iter().cloned().fold((String::new(), 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let pass = results.iter().all(|(_, e)| *e < 1e-4);
    let summary: Vec<String> = results.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    outcome(pass, format!("worst {} {:.2e}; {}", worst.0, worst.1, summary.join(" ")))
}

// 3. Attention oracle ------------------------------------------------------

/// Direct per-query, per-head loops over explicit key lists.
fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor, prefix: Option<&Tensor>, heads: usize, causal: bool) -> Vec<f64> {
    let (n, d) = q.dims2().unwrap();
    let m = k.dims2().unwrap().0;
    let l = prefix.map_or(0, |p| p.dims2().unwrap().0);
    let dh = d / heads;
    let key = |j: usize| if j < l { prefix.unwrap().row(j) } else { k.row(j - l) };
    let val = |j: usize| if j < l { prefix.unwrap().row(j) } else { v.row(j - l) };
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let visible: Vec<usize> = (0..l + m).filter(|&j| !causal || j < l || j - l <= i).collect();
            let scores: Vec<f64> = visible
                .iter()
                .map(|&j| {
                    let dot: f64 = cols.clone().map(|c| q.row(i)[c] * key(j)[c]).sum();
                    dot / (dh as f64).sqrt()
                })
                .collect();
            let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in cols.clone() {
                out[i * d + c] = visible.iter().zip(&w).map(|(&j, wj)| wj / z * val(j)[c]).sum();
            }
        }
    }
    out
}

fn attention_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let (mut empty_prefix, mut no_prefix, mut causal) = (0, 0, 0);
    for _ in 0..1000 {
        let heads = rng.random_range(1..=3);
        let d = heads * rng.random_range(1..=4);
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=6);
        let mut init = Initializer::new(rng.random());
        let q = init.uniform(&[n, d], 2.0);
        let k = init.uniform(&[m, d], 2.0);
        let v = init.uniform(&[m, d], 2.0);
        let prefix = match rng.random_range(0..4) {
            0 => None,
            1 => Some(Tensor::zeros(&[0, d])),
            _ => Some(init.uniform(&[rng.random_range(1..=4), d], 2.0)),
        };
        let is_causal = rng.random_bool(0.5);
        no_prefix += usize::from(prefix.is_none());
        empty_prefix += usize::from(prefix.as_ref().is_some_and(|p| p.shape()[0] == 0));
        causal += usize::from(is_causal);
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let pv = prefix.as_ref().map(|p| g.constant(p.clone()));
        let mask = if is_causal { Mask::Causal } else { Mask::None };
        let out = attend_with_prefix(&mut g, qv, kv, vv, pv, heads, mask).unwrap();
        let reference = naive_attention(&q, &k, &v, prefix.as_ref(), heads, is_causal);
        let diff = g.value(out).data().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    outcome(
        worst <= 1e-12,
        format!("1000 cases ({no_prefix} without prefix, {empty_prefix} empty, {causal} causal); max abs diff {worst:.2e}"),
    )
}

// 4. Overfitting oracle ----------------------------------------------------

fn overfitting() -> Outcome {
    let t = Instant::now();
    let corpus = assets::mini_corpus();
    let onto = assets::mini_ontology();
    let templates = assets::mini_templates();
    let vocab = build_vocab(corpus.instances.iter().map(|i| i.context.as_str()), &onto, &templates, 1);
    let cfg = ModelConfig {
        d_model: 64,
        layers_enc: 2,
        layers_dec: 2,
        heads: 4,
        ffn: 128,
        max_source_len: 64,
        max_target_len: 48,
        prefix_len: 8,
        per_layer_prefix: false,
        use_prefix: true,
        prompt_encoder: PromptEncoderConfig { layers: 1, heads: 2, d_enc: 32, ffn: 64, max_len: 160 },
    };
    let mut model = GenBeeModel::new(cfg, vocab, onto, templates, 7).unwrap();
    let subtasks = build_subtasks(&model, &corpus.instances).unwrap();
    let batch_size = 8;
    let positives = subtasks.iter().filter(|s| s.positive).count();
    let per_epoch = (2 * positives).div_ceil(batch_size);
    let tc = TrainConfig {
        epochs: 400 / per_epoch,
        batch_size,
        lr_seq2seq: 1e-3,
        lr_prompt_encoder: 1e-3,
        lr_prefix_ffnn: None,
        negative_ratio: 1.0,
        clip_norm: Some(1.0),
        seed: 7,
        workers: 1,
    };
    let report = train(&mut model, &corpus.instances, &tc, |_, _| {}).unwrap();
    let preds = extract_all(&model, &corpus.instances, Decoding::Greedy, 1).unwrap();
    let r = score(&corpus.instances, &preds).unwrap();
    let pass = report.steps <= 500 && r.trg_c.f1 == 1.0 && r.arg_c.f1 >= 0.9;
    let by: Vec<String> = r
        .by_structure
        .iter()
        .map(|(k, s)| format!("{k} {:.3}/{:.3}", s.trg_c.f1, s.arg_c.f1))
        .collect();
    outcome(
        pass,
        format!(
            "{} steps, {:.0?}; Trg-C F1 {:.4}, Arg-C F1 {:.4}; by structure {}",
            report.steps,
            t.elapsed(),
            r.trg_c.f1,
            r.arg_c.f1,
            by.join(", ")
        ),
    )
}

// 5. Template round trip ---------------------------------------------------

fn template_round_trip() -> Outcome {
    let prompts = all_bundled_prompts();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut collisions, mut failures, mut checked) = (0, 0, 0);
    let mut first_failure = None;
    for _ in 0..1000 {
        let p = prompts.choose(&mut rng).unwrap();
        let (ctx, ev) = random_event(&mut rng, p);
        let vals = event_slot_values(&p.template, &ev, &ctx).unwrap();
        if literal_collision(&p.template, &vals).is_some() {
            collisions += 1;
            continue;
        }
        checked += 1;
        let filled = fill_template(&p.template, Some(&ev), &ctx).unwrap();
        let parsed = parse_output(&p.template, &filled);
        let ok = parsed.len() == 1 && parsed[0].trigger == vals.trigger && parsed[0].arguments == vals.roles;
        if !ok {
            failures += 1;
            first_failure.get_or_insert(filled);
        }
    }
    outcome(
        failures == 0,
        format!("{checked} recovered checks, {failures} failures, {collisions} literal collisions excluded{}",
            first_failure.map(|f| format!("; first failure: {f}")).unwrap_or_default()),
    )
}

// 6. Metric oracle ---------------------------------------------------------

/// Context `w0 w1 ... w9`; word `i` covers chars `[3i, 3i + 2)`.
fn w(i: usize) -> Span {
    Span::new(3 * i, 3 * i + 2)
}

fn ev(t: &str, trig: Span, args: &[(&str, usize)]) -> EventMention {
    EventMention {
        event_type: t.into(),
        trigger: trig,
        arguments: args.iter().map(|&(r, i)| Argument { role: r.into(), span: w(i) }).collect(),
    }
}

fn docs(per_doc: Vec<Vec<EventMention>>) -> Vec<Instance> {
    per_doc
        .into_iter()
        .enumerate()
        .map(|(i, events)| Instance {
            id: format!("d{i}"),
            context: "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9".into(),
            events,
            entities: vec![],
        })
        .collect()
}

type Expect = ((usize, usize, usize), (f64, f64, f64));

struct MetricCase {
    gold: Vec<Vec<EventMention>>,
    pred: Vec<Vec<EventMention>>,
    trg: Expect,
    arg: Expect,
}

fn metric_cases() -> Vec<MetricCase> {
    let b = |t: usize, a: &[(&str, usize)]| ev("Binding", w(t), a);
    let p = |t: usize, a: &[(&str, usize)]| ev("Phosphorylation", w(t), a);
    let r = |t: usize, a: &[(&str, usize)]| ev("Positive_regulation", w(t), a);
    let one = ((1, 1, 1), (1.0, 1.0, 1.0));
    let zero = |g, p| ((g, p, 0), (0.0, 0.0, 0.0));
    let c = |gold, pred, trg, arg| MetricCase { gold, pred, trg, arg };
    vec![
        c(vec![vec![b(1, &[("Theme", 2)])]], vec![vec![b(1, &[("Theme", 2)])]], one, one),
        c(vec![vec![b(1, &[("Theme", 2)])]], vec![vec![]], zero(1, 0), zero(1, 0)),
        c(vec![vec![]], vec![vec![b(1, &[("Theme", 2)])]], zero(0, 1), zero(0, 1)),
        c(vec![vec![]], vec![vec![]], zero(0, 0), zero(0, 0)),
        c(vec![vec![b(1, &[("Theme", 2)])]], vec![vec![b(3, &[("Theme", 2)])]], zero(1, 1), one),
        c(vec![vec![b(1, &[("Theme", 2)])]], vec![vec![p(1, &[("Theme", 2)])]], zero(1, 1), zero(1, 1)),
        c(vec![vec![b(1, &[("Theme", 2)])]], vec![vec![b(1, &[("Site", 2)])]], one, zero(1, 1)),
        c(
            vec![vec![b(1, &[("Theme", 2)])]],
            vec![vec![b(1, &[("Theme", 2), ("Site", 3)])]],
            one,
            ((1, 2, 1), (1.0 / 2.0, 1.0, 2.0 / 3.0)),
        ),
        c(
            vec![vec![b(1, &[("Theme", 2), ("Site", 3)])]],
            vec![vec![b(1, &[("Theme", 2)])]],
            one,
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
        ),
        c(
            vec![vec![b(1, &[("Theme", 2)]), p(4, &[("Theme", 5)])]],
            vec![vec![b(1, &[("Theme", 2)])]],
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
        ),
        c(
            vec![vec![b(1, &[("Theme", 2)])]],
            vec![vec![b(1, &[("Theme", 2)]), b(1, &[("Theme", 2)])]],
            one,
            one,
        ),
        c(
            vec![vec![b(1, &[("Theme", 2)]), r(1, &[("Theme", 3)])]],
            vec![vec![b(1, &[("Theme", 2)])]],
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
        ),
        c(
            vec![vec![b(1, &[("Theme", 2)]), b(1, &[("Theme", 3)])]],
            vec![vec![b(1, &[("Theme", 2), ("Theme", 3)])]],
            one,
            ((2, 2, 2), (1.0, 1.0, 1.0)),
        ),
        c(
            vec![vec![r(1, &[("Theme", 4), ("Cause", 0)]), p(4, &[("Theme", 5)])]],
            vec![vec![r(1, &[("Theme", 4)]), p(4, &[("Theme", 6)])]],
            ((2, 2, 2), (1.0, 1.0, 1.0)),
            ((3, 2, 1), (1.0 / 2.0, 1.0 / 3.0, 2.0 / 5.0)),
        ),
        c(
            vec![vec![b(1, &[]), p(4, &[]), r(7, &[])]],
            vec![vec![b(1, &[]), p(4, &[]), r(8, &[])]],
            ((3, 3, 2), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)),
            zero(0, 0),
        ),
        c(
            vec![vec![b(1, &[("Theme", 2)])], vec![p(2, &[("Theme", 3)])]],
            vec![vec![b(1, &[("Theme", 2)])], vec![]],
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
            ((2, 1, 1), (1.0, 1.0 / 2.0, 2.0 / 3.0)),
        ),
        c(vec![vec![b(1, &[])], vec![]], vec![vec![], vec![b(1, &[])]], zero(1, 1), zero(0, 0)),
        c(
            vec![vec![ev("Binding", Span::new(3, 8), &[])]],
            vec![vec![ev("Binding", Span::new(3, 5), &[])]],
            zero(1, 1),
            zero(0, 0),
        ),
        c(
            vec![vec![b(1, &[("Theme", 2), ("Site", 3)])]],
            vec![vec![b(1, &[("Theme", 2), ("Site", 3), ("Theme", 4), ("Site", 5)])]],
            one,
            ((2, 4, 2), (1.0 / 2.0, 1.0, 2.0 / 3.0)),
        ),
        c(
            vec![vec![r(1, &[("Theme", 2), ("Cause", 3), ("Site", 4)])]],
            vec![vec![r(1, &[("Theme", 2), ("Cause", 3), ("Theme", 5), ("Cause", 6), ("Site", 7)])]],
            one,
            ((3, 5, 2), (2.0 / 5.0, 2.0 / 3.0, 1.0 / 2.0)),
        ),
    ]
}

fn metric_oracle() -> Outcome {
    let cases = metric_cases();
    let same = |m: &Prf, e: &Expect| {
        (m.gold, m.predicted, m.matched) == e.0 && (m.precision, m.recall, m.f1) == e.1
    };
    let mut bad = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let r = score(&docs(c.gold.clone()), &docs(c.pred.clone())).unwrap();
        if !same(&r.trg_c, &c.trg) || !same(&r.arg_c, &c.arg) {
            bad.push(format!("case {}: trg {:?} arg {:?}", i + 1, r.trg_c, r.arg_c));
        }
    }
    outcome(bad.is_empty() && cases.len() == 20, format!("{} cases, mismatches: {bad:?}", cases.len()))
}

// 7. Span matching oracle --------------------------------------------------

fn span_oracle() -> Outcome {
    const POOL: &[&str] = &["a", "b", "c", "IL-6", "κB", ".", "(", "x1"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();
    let (mut anchored, mut absent) = (0, 0);
    for case in 0..1000 {
        let n = rng.random_range(1..12);
        let words: Vec<&str> = (0..n).map(|_| *POOL.choose(&mut rng).unwrap()).collect();
        let context = words.join(" ");
        let mut starts = Vec::new();
        let mut c = 0;
        for word in &words {
            starts.push(c);
            c += word.chars().count() + 1;
        }
        let k = rng.random_range(1..=3);
        let needle: Vec<&str> = if rng.random_bool(0.7) && k <= n {
            let i = rng.random_range(0..=n - k);
            words[i..i + k].to_vec()
        } else {
            (0..k).map(|_| *POOL.choose(&mut rng).unwrap()).collect()
        };
        let sep = if rng.random_bool(0.5) { " " } else { "  " };
        let surface = needle.join(sep);
        let anchor = rng.random_bool(0.6).then(|| {
            let i = rng.random_range(0..n);
            Span::new(starts[i], starts[i] + words[i].chars().count())
        });
        // Every occurrence, in order.
        let occ: Vec<Span> = (0..n)
            .filter(|&i| i + k <= n && words[i..i + k] == needle[..])
            .map(|i| Span::new(starts[i], starts[i + k - 1] + words[i + k - 1].chars().count()))
            .collect();
        let expected = match anchor {
            None => occ.first().copied(),
            Some(a) => {
                let best = occ.iter().map(|s| s.start.abs_diff(a.start)).min();
                best.and_then(|d| occ.iter().find(|s| s.start.abs_diff(a.start) == d).copied())
            }
        };
        anchored += usize::from(anchor.is_some() && occ.len() > 1);
        absent += usize::from(occ.is_empty());
        let got = match_span(&surface, &context, anchor);
        if got != expected {
            bad.push(format!("case {case}: `{surface}` in `{context}` anchor {anchor:?}: {got:?} vs {expected:?}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("1000 triples ({anchored} anchored with several occurrences, {absent} absent); disagreements: {}{}",
            bad.len(), bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()),
    )
}

// 8. Determinism -----------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let asset = |rel: &str| Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(rel);
    let data = asset("mini/mini.jsonl");
    let templates = asset("mini/templates.json");
    let sets = [
        "model.d_model=32", "model.heads=2", "model.ffn=64", "model.layers_enc=2", "model.layers_dec=2",
        "model.prefix_len=4", "model.max_source_len=64", "model.max_target_len=48", "model.prompt_encoder.d_enc=16",
        "train.epochs=3", "train.batch_size=8", "train.lr_seq2seq=1e-3", "train.workers=2",
    ];
    let cli = |args: Vec<String>| {
        let mut argv = vec!["genbee".to_string()];
        argv.extend(args);
        genbee::cli::run(argv, &mut Vec::new()).unwrap();
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let train_once = |name: &str| {
        let ck = dir.path().join(name);
        let mut args: Vec<String> = ["--seed", "7", "train", "--quiet", "--train"].map(String::from).to_vec();
        args.extend([s(&data), "--templates".into(), s(&templates), "--out".into(), s(&ck)]);
        for kv in sets {
            args.extend(["--set".to_string(), kv.to_string()]);
        }
        cli(args);
        std::fs::read(ck).unwrap()
    };
    let (a, b) = (train_once("a.ckpt"), train_once("b.ckpt"));
    let predict_once = |name: &str| {
        let out = dir.path().join(name);
        cli(vec![
            "--threads".into(), "2".into(), "predict".into(), "--checkpoint".into(), s(&dir.path().join("a.ckpt")),
            "--input".into(), s(&data), "--out".into(), s(&out), "--beam".into(), "2".into(),
        ]);
        std::fs::read(out).unwrap()
    };
    let (p, q) = (predict_once("p.jsonl"), predict_once("q.jsonl"));
    outcome(
        a == b && p == q,
        format!("checkpoints {} bytes identical={}; predictions {} bytes identical={}", a.len(), a == b, p.len(), p == q),
    )
}

// 9. Dataset statistics (optional) -----------------------------------------

fn dataset_statistics() -> Option<Outcome> {
    let dir = std::env::var_os("GENBEE_DATASETS")?;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut found = 0;
    for ds in ["mlee", "ge11", "phee"] {
        for split in [Split::Train, Split::Dev, Split::Test] {
            let path = Path::new(&dir).join(format!("{ds}_{split}.jsonl"));
            let (Some(reference), true) = (reference_stats(ds, split), path.exists()) else { continue };
            found += 1;
            let f = std::fs::File::open(&path).unwrap();
            let inst: Vec<Instance> =
                read_instances(std::io::BufReader::new(f)).unwrap().into_iter().map(|(_, i)| i).collect();
            let s = instance_stats(&inst);
            let ok = s.n_events == reference.events && s.n_arguments == reference.arguments;
            pass &= ok;
            lines.push(format!(
                "{ds} {split}: events {}/{} arguments {}/{} nested-or-overlapping {}/{} (not asserted)",
                s.n_events, reference.events, s.n_arguments, reference.arguments,
                s.n_nested_or_overlapping, reference.nested_or_overlapping
            ));
        }
    }
    Some(outcome(pass && found > 0, format!("{found} files; {}", lines.join("; "))))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 prefix reduction", prefix_reduction),
        ("2 gradient fidelity", gradient_fidelity),
        ("3 attention oracle", attention_oracle),
        ("4 overfitting oracle", overfitting),
        ("5 template round trip", template_round_trip),
        ("6 metric oracle", metric_oracle),
        ("7 span matching oracle", span_oracle),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!("{} [{name}] ({:.1?}) {}", if o.pass { "PASS" } else { "FAIL" }, t.elapsed(), o.detail);
    }
    match dataset_statistics() {
        Some(o) => {
            failed += usize::from(!o.pass);
            println!("{} [9 dataset statistics] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        None => println!("SKIP [9 dataset statistics] set GENBEE_DATASETS to a directory of <dataset>_<split>.jsonl files"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
