//! Inference: enumerate event types, generate, parse, and resolve spans.

use std::collections::BTreeSet;

use crate::corpus::{Argument, EventMention, Instance, Span};
use crate::model::{GenBeeModel, Result};
use crate::prompt::{parse_output, EventPrompt};
use crate::seq2seq::Decoding;
use crate::tokenizer::pretokenize;

/// Produces generated text for one `(event type, context)` subtask.
pub trait Generator {
    fn generate(&self, prompt: &EventPrompt, context: &str) -> Result<String>;
}

/// A model paired with a decoding mode.
pub struct ModelGenerator<'m> {
    pub model: &'m GenBeeModel,
    pub mode: Decoding,
}

impl Generator for ModelGenerator<'_> {
    fn generate(&self, prompt: &EventPrompt, context: &str) -> Result<String> {
        self.model.generate_text(&prompt.event_type, context, self.mode)
    }
}

/// Locate `surface` in `context` on token boundaries.
///
/// Both strings are compared as token sequences, so whitespace differences
/// introduced by detokenization do not matter. Without an anchor the first
/// occurrence wins; with one, the occurrence whose start is nearest the
/// anchor's start, ties going to the leftmost.
pub fn match_span(surface: &str, context: &str, anchor: Option<Span>) -> Option<Span> {
    let needle: Vec<&str> = pretokenize(surface).into_iter().map(|t| t.text).collect();
    if needle.is_empty() {
        return None;
    }
    let hay = pretokenize(context);
    if hay.len() < needle.len() {
        return None;
    }
    let occurrences = (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()].iter().zip(&needle).all(|(t, n)| t.text == *n))
        .map(|i| Span::new(hay[i].span.start, hay[i + needle.len() - 1].span.end));
    match anchor {
        None => occurrences.into_iter().next(),
        Some(a) => {
            let mut best: Option<Span> = None;
            for s in occurrences {
                let d = s.start.abs_diff(a.start);
                if best.is_none_or(|b| d < b.start.abs_diff(a.start)) {
                    best = Some(s);
                }
            }
            best
        }
    }
}

/// Events for one event type from generated text.
pub fn resolve_events(prompt: &EventPrompt, generated: &str, context: &str) -> Vec<EventMention> {
    let mut out = Vec::new();
    for parsed in parse_output(&prompt.template, generated) {
        let Some(trigger) = parsed.trigger.as_deref().and_then(|t| match_span(t, context, None)) else {
            continue;
        };
        // Template role order, not map order.
        let arguments = prompt
            .template
            .roles()
            .into_iter()
            .filter_map(|role| {
                let surface = parsed.arguments.get(role)?;
                match_span(surface, context, Some(trigger)).map(|span| Argument { role: role.to_string(), span })
            })
            .collect();
        out.push(EventMention { event_type: prompt.event_type.clone(), trigger, arguments });
    }
    out
}

/// All events in `context`, one generation call per event type.
/// Repeated `(trigger span, type)` pairs keep their first occurrence.
pub fn extract_events(generator: &dyn Generator, prompts: &[EventPrompt], context: &str) -> Result<Vec<EventMention>> {
    let mut seen = BTreeSet::new();
    let mut events = Vec::new();
    for prompt in prompts {
        let text = generator.generate(prompt, context)?;
        for ev in resolve_events(prompt, &text, context) {
            if seen.insert((ev.trigger, ev.event_type.clone())) {
                events.push(ev);
            }
        }
    }
    Ok(events)
}

/// Prediction for one instance: same id, context and entities, predicted events.
pub fn extract(model: &GenBeeModel, instance: &Instance, mode: Decoding) -> Result<Instance> {
    let generator = ModelGenerator { model, mode };
    Ok(Instance {
        id: instance.id.clone(),
        context: instance.context.clone(),
        events: extract_events(&generator, &model.prompts, &instance.context)?,
        entities: instance.entities.clone(),
    })
}

/// Predictions for many instances, spread over `workers` threads; output order matches input.
pub fn extract_all(model: &GenBeeModel, instances: &[Instance], mode: Decoding, workers: usize) -> Result<Vec<Instance>> {
    if workers <= 1 || instances.len() < 2 {
        return instances.iter().map(|i| extract(model, i, mode)).collect();
    }
    let chunk = instances.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Instance>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = instances
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|i| extract(model, i, mode)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(instances.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
