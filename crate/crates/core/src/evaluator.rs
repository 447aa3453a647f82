//! Trigger and argument classification micro-F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{detect_structures, Instance, Span, StructureTags};
use crate::tokenizer::pretokenize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("instance ids differ between gold and predictions; only in gold: {only_gold:?}; only in predictions: {only_pred:?}")]
    IdMismatch { only_gold: Vec<String>, only_pred: Vec<String> },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl Prf {
    /// Ratios from counts; a zero denominator gives 0.
    pub fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            precision: ratio(matched, predicted),
            recall: ratio(matched, gold),
            f1: ratio(2 * matched, gold + predicted),
            gold,
            predicted,
            matched,
        }
    }

    fn from_sets<T: Ord>(gold: &BTreeSet<T>, pred: &BTreeSet<T>) -> Self {
        Self::from_counts(gold.len(), pred.len(), gold.intersection(pred).count())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagScores {
    pub trg_c: Prf,
    pub arg_c: Prf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trg_c: Prf,
    pub arg_c: Prf,
    /// Scores restricted to events carrying each structure tag
    /// (`general`, `nested`, `overlapping`), tags computed per corpus.
    pub by_structure: BTreeMap<String, TagScores>,
}

type TrgKey = (String, Span, String);
type ArgKey = (String, Span, String, String);

#[derive(Default)]
struct Keys {
    trg: BTreeSet<TrgKey>,
    arg: BTreeSet<ArgKey>,
    by_tag: BTreeMap<&'static str, (BTreeSet<TrgKey>, BTreeSet<ArgKey>)>,
}

const TAGS: [&str; 3] = ["general", "nested", "overlapping"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Compare spans by their head word (last token) instead of exact offsets.
    pub head_match: bool,
}

/// Span of the last token inside `span`, or `span` itself if it holds none.
fn head_span(context: &str, span: Span) -> Span {
    pretokenize(context)
        .into_iter()
        .filter(|t| t.span.start >= span.start && t.span.end <= span.end)
        .last()
        .map_or(span, |t| t.span)
}

fn tag_names(t: StructureTags) -> impl Iterator<Item = &'static str> {
    [t.general(), t.nested, t.overlapping]
        .into_iter()
        .zip(TAGS)
        .filter_map(|(on, name)| on.then_some(name))
}

fn collect(instances: &[Instance], opts: ScoreOptions) -> Keys {
    let mut k = Keys::default();
    for name in TAGS {
        k.by_tag.insert(name, Default::default());
    }
    for inst in instances {
        let tags = detect_structures(inst);
        let key = |sp: Span| if opts.head_match { head_span(&inst.context, sp) } else { sp };
        for (ev, tag) in inst.events.iter().zip(tags) {
            let trg = (inst.id.clone(), key(ev.trigger), ev.event_type.clone());
            let args: Vec<ArgKey> = ev
                .arguments
                .iter()
                .map(|a| (inst.id.clone(), key(a.span), ev.event_type.clone(), a.role.clone()))
                .collect();
            for name in tag_names(tag) {
                let entry = k.by_tag.get_mut(name).expect("tag present");
                entry.0.insert(trg.clone());
                entry.1.extend(args.iter().cloned());
            }
            k.trg.insert(trg);
            k.arg.extend(args);
        }
    }
    k
}

fn ids(instances: &[Instance]) -> Result<BTreeSet<&str>, EvalError> {
    let mut s = BTreeSet::new();
    for i in instances {
        if !s.insert(i.id.as_str()) {
            return Err(EvalError::DuplicateId(i.id.clone()));
        }
    }
    Ok(s)
}

/// Score predictions against gold with exact span matching.
/// Both sides must cover the same instance ids.
pub fn score(gold: &[Instance], predicted: &[Instance]) -> Result<EvalReport, EvalError> {
    score_with(gold, predicted, ScoreOptions::default())
}

pub fn score_with(gold: &[Instance], predicted: &[Instance], opts: ScoreOptions) -> Result<EvalReport, EvalError> {
    let g_ids = ids(gold)?;
    let p_ids = ids(predicted)?;
    if g_ids != p_ids {
        return Err(EvalError::IdMismatch {
            only_gold: g_ids.difference(&p_ids).map(|s| s.to_string()).collect(),
            only_pred: p_ids.difference(&g_ids).map(|s| s.to_string()).collect(),
        });
    }
    let g = collect(gold, opts);
    let p = collect(predicted, opts);
    let by_structure = TAGS
        .iter()
        .map(|&name| {
            let (gt, ga) = &g.by_tag[name];
            let (pt, pa) = &p.by_tag[name];
            (name.to_string(), TagScores { trg_c: Prf::from_sets(gt, pt), arg_c: Prf::from_sets(ga, pa) })
        })
        .collect();
    Ok(EvalReport {
        trg_c: Prf::from_sets(&g.trg, &p.trg),
        arg_c: Prf::from_sets(&g.arg, &p.arg),
        by_structure,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}", "metric", "P", "R", "F1", "gold", "pred", "match");
        let mut row = |name: &str, m: &Prf| {
            let _ = writeln!(
                s,
                "{:<24} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6} {:>6}",
                name, m.precision, m.recall, m.f1, m.gold, m.predicted, m.matched
            );
        };
        row("Trg-C", &self.trg_c);
        row("Arg-C", &self.arg_c);
        for (tag, t) in &self.by_structure {
            row(&format!("Trg-C [{tag}]"), &t.trg_c);
            row(&format!("Arg-C [{tag}]"), &t.arg_c);
        }
        s
    }
}
