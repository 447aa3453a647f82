//! Event prompts, structural prompts, and the template grammar used both to
//! build generation targets and to parse generated text back into roles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EventMention, Ontology};
use crate::tokenizer::{pretokenize, role_placeholder, PreToken, EVT, SEP, TEMPLATE_SEP, TRIGGER_PLACEHOLDER};

/// Joins filled templates when a context holds several events of one type.
pub const INSTANCE_DELIMITER: &str = " <EVT> ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template for `{event_type}`: {message}")]
    InvalidTemplate { event_type: String, message: String },
    #[error("no template for event type `{0}`; run `genbee gen-templates` or add it to the template store")]
    MissingTemplate(String),
    #[error("event type `{0}` is not in the ontology")]
    UnknownEventType(String),
    #[error("event of type `{event}` cannot fill the `{template}` template")]
    TypeMismatch { event: String, template: String },
    #[error("role `{role}` has no placeholder in the `{event_type}` template")]
    RoleNotInTemplate { event_type: String, role: String },
    #[error("role `{role}` appears more than once in an event of type `{event_type}`")]
    DuplicateRole { event_type: String, role: String },
    #[error("span {0} is outside the context")]
    SpanOutOfBounds(String),
    #[error("template store {path}: {message}")]
    Store { path: String, message: String },
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Trigger,
    Role(String),
}

/// Parsed event template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTemplate {
    event_type: String,
    segments: Vec<Segment>,
    text: String,
}

/// Rewrite `{ROLE_x}` spellings to `{Role_x}`.
pub fn canonicalize_placeholders(text: &str) -> String {
    text.replace("{ROLE_", "{Role_")
}

impl EventTemplate {
    /// Parse a template. `roles`, when given, restricts the allowed role placeholders.
    pub fn parse(event_type: &str, text: &str, roles: Option<&[String]>) -> Result<Self> {
        let invalid = |message: String| PromptError::InvalidTemplate {
            event_type: event_type.to_string(),
            message,
        };
        let text = canonicalize_placeholders(text.trim());
        let mut segments = Vec::new();
        let mut rest = text.as_str();
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| invalid("unterminated `{`".into()))?;
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            let body = &rest[open + 1..close];
            if body == "Trigger" {
                segments.push(Segment::Trigger);
            } else if let Some(role) = body.strip_prefix("Role_") {
                if role.is_empty() {
                    return Err(invalid("empty role placeholder".into()));
                }
                segments.push(Segment::Role(role.to_string()));
            } else {
                return Err(invalid(format!("unknown placeholder `{{{body}}}`")));
            }
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_string()));
        }

        let triggers = segments.iter().filter(|s| **s == Segment::Trigger).count();
        if triggers != 1 {
            return Err(invalid(format!("expected exactly one {{Trigger}}, found {triggers}")));
        }
        let mut seen = Vec::new();
        for s in &segments {
            if let Segment::Role(r) = s {
                if seen.contains(r) {
                    return Err(invalid(format!("role `{r}` appears more than once")));
                }
                if let Some(allowed) = roles {
                    if !allowed.contains(r) {
                        return Err(invalid(format!("role `{r}` is not defined for this event type")));
                    }
                }
                seen.push(r.clone());
            }
        }
        for pair in segments.windows(2) {
            let adjacent = !matches!(pair[0], Segment::Literal(_)) && !matches!(pair[1], Segment::Literal(_));
            if adjacent {
                return Err(invalid("placeholders must be separated by literal text".into()));
            }
        }
        for (i, s) in segments.iter().enumerate() {
            if let Segment::Literal(l) = s {
                if pretokenize(l).is_empty() && i > 0 && i + 1 < segments.len() {
                    return Err(invalid("placeholders must be separated by literal text".into()));
                }
            }
        }
        let trig = segments.iter().position(|s| *s == Segment::Trigger).unwrap();
        let sep_follows = match segments.get(trig + 1) {
            Some(Segment::Literal(l)) => pretokenize(l).first().map(|t| t.text) == Some(TEMPLATE_SEP),
            _ => false,
        };
        if !sep_follows {
            return Err(invalid(format!("`{TEMPLATE_SEP}` must follow {{Trigger}}")));
        }
        Ok(Self {
            event_type: event_type.to_string(),
            segments,
            text,
        })
    }

    pub fn event_type(&self) -> &str {
        &self.event_type
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Canonical template text with placeholders.
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Roles in order of appearance.
    pub fn roles(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Role(r) => Some(r.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Literal segments around the slots: `literals()[i]` precedes slot `i`,
    /// and the last entry follows the final slot. Missing literals are empty.
    fn literals_and_slots(&self) -> (Vec<&str>, Vec<&Segment>) {
        let mut lits = vec![""];
        let mut slots = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Literal(l) => *lits.last_mut().unwrap() = l.as_str(),
                other => {
                    slots.push(other);
                    lits.push("");
                }
            }
        }
        (lits, slots)
    }
}

/// Surface strings for each template slot; `None` keeps the placeholder.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotValues {
    pub trigger: Option<String>,
    pub roles: BTreeMap<String, String>,
}

fn placeholder_text(seg: &Segment) -> String {
    match seg {
        Segment::Trigger => TRIGGER_PLACEHOLDER.to_string(),
        Segment::Role(r) => role_placeholder(r),
        Segment::Literal(l) => l.clone(),
    }
}

/// Render the template with the given slot values.
pub fn render_slots(template: &EventTemplate, values: &SlotValues) -> String {
    let mut out = String::new();
    for s in &template.segments {
        match s {
            Segment::Literal(l) => out.push_str(l),
            Segment::Trigger => match &values.trigger {
                Some(t) => out.push_str(t),
                None => out.push_str(TRIGGER_PLACEHOLDER),
            },
            Segment::Role(r) => match values.roles.get(r) {
                Some(v) => out.push_str(v),
                None => out.push_str(&role_placeholder(r)),
            },
        }
    }
    out
}

/// Slot values an event produces, read from the context through its spans.
pub fn event_slot_values(
    template: &EventTemplate,
    event: &EventMention,
    context: &str,
) -> Result<SlotValues> {
    if event.event_type != template.event_type {
        return Err(PromptError::TypeMismatch {
            event: event.event_type.clone(),
            template: template.event_type.clone(),
        });
    }
    let roles = template.roles();
    let text = |span| {
        crate::corpus::span_text(context, span)
            .filter(|_| span.start < span.end)
            .map(str::to_string)
            .ok_or_else(|| PromptError::SpanOutOfBounds(span.to_string()))
    };
    let mut values = SlotValues {
        trigger: Some(text(event.trigger)?),
        roles: BTreeMap::new(),
    };
    for a in &event.arguments {
        if !roles.contains(&a.role.as_str()) {
            return Err(PromptError::RoleNotInTemplate {
                event_type: event.event_type.clone(),
                role: a.role.clone(),
            });
        }
        if values.roles.insert(a.role.clone(), text(a.span)?).is_some() {
            return Err(PromptError::DuplicateRole {
                event_type: event.event_type.clone(),
                role: a.role.clone(),
            });
        }
    }
    Ok(values)
}

/// Fill a template from a gold event; with no event every placeholder stays literal.
pub fn fill_template(template: &EventTemplate, event: Option<&EventMention>, context: &str) -> Result<String> {
    match event {
        None => Ok(template.text.clone()),
        Some(ev) => Ok(render_slots(template, &event_slot_values(template, ev, context)?)),
    }
}

/// Generation target for one (event type, context) subtask: the filled
/// templates of all given events in trigger-span order, or the bare template.
pub fn build_target(template: &EventTemplate, events: &[&EventMention], context: &str) -> Result<String> {
    if events.is_empty() {
        return fill_template(template, None, context);
    }
    let mut sorted: Vec<&EventMention> = events.to_vec();
    sorted.sort_by_key(|e| (e.trigger.start, e.trigger.end));
    let filled = sorted
        .into_iter()
        .map(|e| fill_template(template, Some(e), context))
        .collect::<Result<Vec<_>>>()?;
    Ok(filled.join(INSTANCE_DELIMITER))
}

/// One event instance recovered from generated text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedEvent {
    pub trigger: Option<String>,
    pub arguments: BTreeMap<String, String>,
}

fn find_tokens(hay: &[PreToken<'_>], needle: &[&str], from: usize) -> Option<usize> {
    if needle.is_empty() {
        return Some(from);
    }
    if hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len())
        .find(|&i| hay[i..i + needle.len()].iter().zip(needle).all(|(t, n)| t.text == *n))
}

fn is_placeholder_token(seg: &Segment, tokens: &[PreToken<'_>]) -> bool {
    tokens.len() == 1 && canonicalize_placeholders(tokens[0].text) == placeholder_text(seg)
}

/// Greedy alignment of one `<EVT>`-free group of tokens against the template.
/// Returns `None` when the trigger slot cannot be located.
fn align_group(template: &EventTemplate, text: &str, toks: &[PreToken<'_>]) -> Option<ParsedEvent> {
    let (lits, slots) = template.literals_and_slots();
    let lit_tokens: Vec<Vec<&str>> = lits
        .iter()
        .map(|l| pretokenize(l).into_iter().map(|t| t.text).collect())
        .collect();

    let mut pos = if lit_tokens[0].is_empty() {
        0
    } else {
        find_tokens(toks, &lit_tokens[0], 0)? + lit_tokens[0].len()
    };
    let mut out = ParsedEvent::default();
    let last = slots.len() - 1;
    for (i, slot) in slots.iter().enumerate() {
        let next = &lit_tokens[i + 1];
        let (end, resume) = if next.is_empty() {
            (toks.len(), toks.len())
        } else {
            match find_tokens(toks, next, pos) {
                Some(m) => (m, m + next.len()),
                None if i == last => (toks.len(), toks.len()),
                None if **slot == Segment::Trigger => return None,
                None => break,
            }
        };
        let value = &toks[pos..end];
        if !value.is_empty() && !is_placeholder_token(slot, value) {
            let surface = text[value[0].bytes.0..value[value.len() - 1].bytes.1].to_string();
            match slot {
                Segment::Trigger => out.trigger = Some(surface),
                Segment::Role(r) => {
                    out.arguments.insert(r.clone(), surface);
                }
                Segment::Literal(_) => unreachable!(),
            }
        }
        pos = resume;
    }
    Some(out)
}

/// Parse generated text into event instances.
///
/// Instances are split on `<EVT>`; each is aligned against the template by
/// anchoring on the earliest occurrence of each literal segment in turn.
/// Slots left empty or holding their own placeholder are "no prediction".
/// Groups whose trigger slot cannot be located are dropped, so text sharing
/// no literals with the template yields an empty result.
pub fn parse_output(template: &EventTemplate, generated: &str) -> Vec<ParsedEvent> {
    let toks = pretokenize(generated);
    toks.split(|t| t.text == EVT)
        .filter_map(|group| align_group(template, generated, group))
        .collect()
}

/// Detects gold events whose fill cannot be recovered by [`parse_output`]:
/// some slot value is empty, spells its own placeholder, contains the
/// instance delimiter or the literal that should terminate it, or fuses
/// with its neighbours into different tokens. Returns the offending slot name.
pub fn literal_collision(template: &EventTemplate, values: &SlotValues) -> Option<String> {
    let (lits, slots) = template.literals_and_slots();
    let texts = |s: &str| -> Vec<String> { pretokenize(s).into_iter().map(|t| t.text.to_string()).collect() };
    for (i, slot) in slots.iter().enumerate() {
        let (name, value) = match slot {
            Segment::Trigger => ("Trigger".to_string(), values.trigger.as_deref()),
            Segment::Role(r) => (r.clone(), values.roles.get(r).map(String::as_str)),
            Segment::Literal(_) => unreachable!(),
        };
        let Some(value) = value else { continue };
        let vt = pretokenize(value);
        if vt.is_empty() || vt.iter().any(|t| t.text == EVT) || is_placeholder_token(slot, &vt) {
            return Some(name);
        }
        let (prev, next) = (lits[i], lits[i + 1]);
        let mut expected = texts(prev);
        expected.extend(vt.iter().map(|t| t.text.to_string()));
        expected.extend(texts(next));
        if texts(&format!("{prev}{value}{next}")) != expected {
            return Some(name);
        }
        if next.is_empty() {
            continue;
        }
        // The earliest literal match must start right after the value.
        let joined = format!("{value}{next}");
        let jt = pretokenize(&joined);
        let nt: Vec<&str> = pretokenize(next).into_iter().map(|t| t.text).collect();
        if find_tokens(&jt, &nt, 0) != Some(vt.len()) {
            return Some(name);
        }
    }
    None
}

/// Event prompt: type name, description, and template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPrompt {
    pub event_type: String,
    pub description: String,
    pub template: EventTemplate,
}

impl EventPrompt {
    /// `"<type> . <description> . <template>"`.
    pub fn render(&self) -> String {
        format!("{} . {} . {}", self.event_type, self.description, self.template.text())
    }
}

/// Encoder input: rendered prompt, `[SEP]`, then the context.
pub fn build_input(prompt: &EventPrompt, context: &str) -> String {
    format!("{} {SEP} {}", prompt.render(), context)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub description: String,
    pub template: String,
}

/// Hand-editable map from event type to description and template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStore {
    pub ontology: String,
    pub templates: BTreeMap<String, TemplateEntry>,
}

impl TemplateStore {
    pub fn new(ontology: impl Into<String>) -> Self {
        Self {
            ontology: ontology.into(),
            templates: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| PromptError::Store {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("store serializes") + "\n";
        std::fs::write(path, text).map_err(|e| PromptError::Store {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn get(&self, event_type: &str) -> Option<&TemplateEntry> {
        self.templates.get(event_type)
    }

    pub fn insert(&mut self, event_type: impl Into<String>, entry: TemplateEntry) {
        self.templates.insert(event_type.into(), entry);
    }

    /// Every string a vocabulary should cover: descriptions and templates.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.templates
            .values()
            .flat_map(|e| [e.description.as_str(), e.template.as_str()])
    }
}

pub fn build_event_prompt(event_type: &str, ontology: &Ontology, store: &TemplateStore) -> Result<EventPrompt> {
    let roles = ontology
        .roles(event_type)
        .ok_or_else(|| PromptError::UnknownEventType(event_type.to_string()))?;
    let entry = store
        .get(event_type)
        .ok_or_else(|| PromptError::MissingTemplate(event_type.to_string()))?;
    if entry.description.trim().is_empty() {
        return Err(PromptError::InvalidTemplate {
            event_type: event_type.to_string(),
            message: "description must not be empty".into(),
        });
    }
    Ok(EventPrompt {
        event_type: event_type.to_string(),
        description: entry.description.trim().to_string(),
        template: EventTemplate::parse(event_type, &entry.template, Some(roles))?,
    })
}

/// Prompts for every type of the ontology, in ontology order.
pub fn build_all_prompts(ontology: &Ontology, store: &TemplateStore) -> Result<Vec<EventPrompt>> {
    ontology
        .type_names()
        .map(|t| build_event_prompt(t, ontology, store))
        .collect()
}

const TYPE_SLOT: &str = "<T>";

/// Structural prompt texts; `<T>` marks where the event-type name goes.
/// Order: general co-occurrence, overlapping triggers, nested multi-role,
/// nested trigger-as-role.
pub const STRUCTURAL_PROMPTS: [&str; 4] = [
    "Explore events that frequently co-occur with <T> events, aiming to identify and analyze the interactions and dependencies among these events to enhance understanding of their interrelationships.",
    "Explore entities that serve as triggers in both <T> events and other event types, aiming to clarify the overlap in trigger roles across different contexts to better understand trigger versatility.",
    "Explore entities acting in multiple roles, including as roles in <T> events and differently in other events, highlighting the dynamics of role versatility and their implications for event structure.",
    "Explore entities where the trigger of <T> events also acts as a role in other events, or vice versa, highlighting these complex inter-event relationships to identify patterns of event interaction.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralPromptSet {
    pub event_type: String,
    pub prompts: [String; 4],
}

impl StructuralPromptSet {
    pub fn for_type(event_type: &str) -> Self {
        Self {
            event_type: event_type.to_string(),
            prompts: STRUCTURAL_PROMPTS.map(|p| p.replace(TYPE_SLOT, event_type)),
        }
    }

    /// `[CLS] S1 [SEP] S2 [SEP] S3 [SEP] S4 [SEP]`.
    pub fn sequence(&self) -> String {
        let mut s = String::from("[CLS]");
        for p in &self.prompts {
            s.push(' ');
            s.push_str(p);
            s.push(' ');
            s.push_str(SEP);
        }
        s
    }
}

pub fn build_structural_sequence(event_type: &str) -> String {
    StructuralPromptSet::for_type(event_type).sequence()
}
