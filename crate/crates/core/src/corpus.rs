//! Event-extraction corpora: the line-delimited interchange format, span
//! validation against an ontology, and nested/overlapping structure statistics.
//!
//! Each line of a corpus file is one JSON object:
//!
//! ```json
//! {"id": "s1", "context": "TCF-1 alpha can bind to promoters .",
//!  "entities": [{"label": "Protein", "start": 0, "end": 11}],
//!  "events": [{"event_type": "Binding",
//!              "trigger": {"start": 16, "end": 20, "text": "bind"},
//!              "arguments": [{"role": "Theme", "start": 0, "end": 11}]}]}
//! ```
//!
//! Offsets count Unicode scalar values, end-exclusive. The optional `text`
//! fields are checked against the context when present.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("instance `{id}` (line {line}): {message}")]
    Validation {
        id: String,
        line: usize,
        message: String,
    },
    #[error("ontology: {0}")]
    Ontology(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Character interval `[start, end)` into a context string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Byte offset of every char boundary in `text`, plus `text.len()` at the end.
pub fn char_boundaries(text: &str) -> Vec<usize> {
    let mut b: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    b.push(text.len());
    b
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring addressed by a character span, or `None` when out of bounds.
pub fn span_text(text: &str, span: Span) -> Option<&str> {
    if span.start > span.end {
        return None;
    }
    let mut it = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let start = it.nth(span.start)?;
    let end = if span.end == span.start {
        start
    } else {
        it.nth(span.end - span.start - 1)?
    };
    Some(&text[start..end])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Argument {
    pub role: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventMention {
    pub event_type: String,
    pub trigger: Span,
    pub arguments: Vec<Argument>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub label: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub context: String,
    pub events: Vec<EventMention>,
    pub entities: Vec<Entity>,
}

impl Instance {
    pub fn text(&self, span: Span) -> Option<&str> {
        span_text(&self.context, span)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTypeDef {
    pub name: String,
    pub roles: Vec<String>,
}

/// Event-type inventory with per-type role lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub id: String,
    pub event_types: Vec<EventTypeDef>,
}

impl Ontology {
    pub fn new(id: impl Into<String>, event_types: Vec<EventTypeDef>) -> Result<Self> {
        let o = Self {
            id: id.into(),
            event_types,
        };
        o.check()?;
        Ok(o)
    }

    fn check(&self) -> Result<()> {
        if self.event_types.is_empty() {
            return Err(CorpusError::Ontology("at least one event type required".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.event_types {
            if t.name.trim().is_empty() || t.name.chars().any(char::is_whitespace) {
                return Err(CorpusError::Ontology(format!(
                    "event type name `{}` must be a single non-empty word",
                    t.name
                )));
            }
            if !seen.insert(&t.name) {
                return Err(CorpusError::Ontology(format!("duplicate event type `{}`", t.name)));
            }
            let mut roles = BTreeSet::new();
            for r in &t.roles {
                if !r.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') || r.is_empty() {
                    return Err(CorpusError::Ontology(format!(
                        "role `{r}` of `{}` must be alphanumeric",
                        t.name
                    )));
                }
                if !roles.insert(r) {
                    return Err(CorpusError::Ontology(format!(
                        "duplicate role `{r}` for `{}`",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let o: Ontology = serde_json::from_str(&text)
            .map_err(|e| CorpusError::Ontology(format!("{}: {e}", path.display())))?;
        o.check()?;
        Ok(o)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("ontology serializes");
        std::fs::write(path, text + "\n").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Smallest ontology covering every event type and role used in `instances`.
    pub fn infer<'a>(id: &str, instances: impl IntoIterator<Item = &'a Instance>) -> Result<Self> {
        let mut types: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for inst in instances {
            for ev in &inst.events {
                let roles = types.entry(ev.event_type.clone()).or_default();
                for a in &ev.arguments {
                    if !roles.contains(&a.role) {
                        roles.push(a.role.clone());
                    }
                }
            }
        }
        if types.is_empty() {
            types.insert("Event".into(), Vec::new());
        }
        Self::new(
            id,
            types
                .into_iter()
                .map(|(name, roles)| EventTypeDef { name, roles })
                .collect(),
        )
    }

    pub fn get(&self, event_type: &str) -> Option<&EventTypeDef> {
        self.event_types.iter().find(|t| t.name == event_type)
    }

    pub fn contains(&self, event_type: &str) -> bool {
        self.get(event_type).is_some()
    }

    pub fn roles(&self, event_type: &str) -> Option<&[String]> {
        self.get(event_type).map(|t| t.roles.as_slice())
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.event_types.iter().map(|t| t.name.as_str())
    }

    /// Every role name across all types, sorted and deduplicated.
    pub fn all_roles(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.event_types.iter().flat_map(|t| &t.roles).collect();
        set.into_iter().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Guess the split from a file name (`*train*`, `*dev*`/`*valid*`, `*test*`).
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_string_lossy().to_lowercase();
        if name.contains("train") {
            Some(Self::Train)
        } else if name.contains("dev") || name.contains("valid") {
            Some(Self::Dev)
        } else if name.contains("test") {
            Some(Self::Test)
        } else {
            None
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub ontology: Ontology,
    pub instances: Vec<Instance>,
    pub split: Split,
}

// Wire records.

#[derive(Debug, Serialize, Deserialize)]
struct SpanRecord {
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArgumentRecord {
    role: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntityRecord {
    label: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    event_type: String,
    trigger: SpanRecord,
    #[serde(default)]
    arguments: Vec<ArgumentRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    context: String,
    #[serde(default)]
    entities: Vec<EntityRecord>,
    #[serde(default)]
    events: Vec<EventRecord>,
}

fn check_span(
    context: &str,
    clen: usize,
    span: Span,
    text: Option<&str>,
    what: &str,
) -> std::result::Result<(), String> {
    if span.start >= span.end || span.end > clen {
        return Err(format!(
            "{what} span {span} out of bounds for context of {clen} characters"
        ));
    }
    if let Some(t) = text {
        let actual = span_text(context, span).unwrap_or_default();
        if actual != t {
            return Err(format!("{what} span {span} covers `{actual}` but text says `{t}`"));
        }
    }
    Ok(())
}

fn instance_from_record(rec: InstanceRecord, line: usize) -> Result<Instance> {
    let clen = char_len(&rec.context);
    let id = rec.id.clone();
    let invalid = |message: String| CorpusError::Validation {
        id: id.clone(),
        line,
        message,
    };
    let mut entities = Vec::with_capacity(rec.entities.len());
    for e in rec.entities {
        let span = Span::new(e.start, e.end);
        check_span(&rec.context, clen, span, e.text.as_deref(), "entity").map_err(&invalid)?;
        entities.push(Entity {
            label: e.label,
            span,
        });
    }
    let mut events = Vec::with_capacity(rec.events.len());
    for ev in rec.events {
        let trigger = Span::new(ev.trigger.start, ev.trigger.end);
        check_span(&rec.context, clen, trigger, ev.trigger.text.as_deref(), "trigger")
            .map_err(&invalid)?;
        let mut arguments = Vec::with_capacity(ev.arguments.len());
        for a in ev.arguments {
            let span = Span::new(a.start, a.end);
            check_span(
                &rec.context,
                clen,
                span,
                a.text.as_deref(),
                &format!("argument `{}`", a.role),
            )
            .map_err(&invalid)?;
            arguments.push(Argument { role: a.role, span });
        }
        events.push(EventMention {
            event_type: ev.event_type,
            trigger,
            arguments,
        });
    }
    Ok(Instance {
        id: rec.id,
        context: rec.context,
        events,
        entities,
    })
}

fn record_from_instance(inst: &Instance) -> InstanceRecord {
    let text = |s: Span| inst.text(s).map(str::to_string);
    InstanceRecord {
        id: inst.id.clone(),
        context: inst.context.clone(),
        entities: inst
            .entities
            .iter()
            .map(|e| EntityRecord {
                label: e.label.clone(),
                start: e.span.start,
                end: e.span.end,
                text: text(e.span),
            })
            .collect(),
        events: inst
            .events
            .iter()
            .map(|ev| EventRecord {
                event_type: ev.event_type.clone(),
                trigger: SpanRecord {
                    start: ev.trigger.start,
                    end: ev.trigger.end,
                    text: text(ev.trigger),
                },
                arguments: ev
                    .arguments
                    .iter()
                    .map(|a| ArgumentRecord {
                        role: a.role.clone(),
                        start: a.span.start,
                        end: a.span.end,
                        text: text(a.span),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Parse instances, validating spans but not event types. Blank lines are skipped.
pub fn read_instances(reader: impl BufRead) -> Result<Vec<(usize, Instance)>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let inst = instance_from_record(rec, line_no)?;
        if !ids.insert(inst.id.clone()) {
            return Err(CorpusError::Validation {
                id: inst.id,
                line: line_no,
                message: "duplicate instance id".into(),
            });
        }
        out.push((line_no, inst));
    }
    Ok(out)
}

fn validate_types(ontology: &Ontology, line: usize, inst: &Instance) -> Result<()> {
    for ev in &inst.events {
        let Some(roles) = ontology.roles(&ev.event_type) else {
            return Err(CorpusError::Validation {
                id: inst.id.clone(),
                line,
                message: format!(
                    "unknown event type `{}` (ontology `{}`)",
                    ev.event_type, ontology.id
                ),
            });
        };
        for a in &ev.arguments {
            if !roles.contains(&a.role) {
                return Err(CorpusError::Validation {
                    id: inst.id.clone(),
                    line,
                    message: format!("unknown role `{}` for event type `{}`", a.role, ev.event_type),
                });
            }
        }
    }
    Ok(())
}

/// Parse and fully validate a corpus from a reader.
pub fn parse_corpus(reader: impl BufRead, ontology: &Ontology, split: Split) -> Result<Corpus> {
    let records = read_instances(reader)?;
    let mut instances = Vec::with_capacity(records.len());
    for (line, inst) in records {
        validate_types(ontology, line, &inst)?;
        instances.push(inst);
    }
    Ok(Corpus {
        ontology: ontology.clone(),
        instances,
        split,
    })
}

/// Load a corpus file. The split is taken from the file name, defaulting to train.
pub fn load_corpus(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Corpus> {
    let path = path.as_ref();
    let split = Split::from_path(path).unwrap_or(Split::Train);
    load_corpus_split(path, ontology, split)
}

pub fn load_corpus_split(path: &Path, ontology: &Ontology, split: Split) -> Result<Corpus> {
    let f = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(f), ontology, split)
}

pub fn instance_to_json(inst: &Instance) -> String {
    serde_json::to_string(&record_from_instance(inst)).expect("records serialize")
}

/// Interchange-format text, one instance per line.
pub fn to_jsonl(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&instance_to_json(inst));
        out.push('\n');
    }
    out
}

pub fn write_instances(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(to_jsonl(instances).as_bytes()).map_err(io_err)
}

/// Structure tags for one event. `general` holds exactly when neither flag is set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StructureTags {
    pub nested: bool,
    pub overlapping: bool,
}

impl StructureTags {
    pub fn general(&self) -> bool {
        !self.nested && !self.overlapping
    }
}

fn argument_set(ev: &EventMention) -> BTreeSet<(&str, Span)> {
    ev.arguments.iter().map(|a| (a.role.as_str(), a.span)).collect()
}

/// Tag each event of an instance, in event order.
///
/// Nested: one of its argument spans is another event's trigger span, or its
/// trigger span is another event's argument span. Overlapping: another event
/// shares its trigger span with a different type or a different argument set.
pub fn detect_structures(instance: &Instance) -> Vec<StructureTags> {
    let events = &instance.events;
    let trigger_spans: Vec<Span> = events.iter().map(|e| e.trigger).collect();
    let arg_sets: Vec<_> = events.iter().map(argument_set).collect();
    events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let mut tags = StructureTags::default();
            for (j, other) in events.iter().enumerate() {
                if i == j {
                    continue;
                }
                if ev.arguments.iter().any(|a| a.span == trigger_spans[j])
                    || other.arguments.iter().any(|a| a.span == ev.trigger)
                {
                    tags.nested = true;
                }
                if ev.trigger == other.trigger
                    && (ev.event_type != other.event_type || arg_sets[i] != arg_sets[j])
                {
                    tags.overlapping = true;
                }
            }
            tags
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureStats {
    pub n_instances: usize,
    pub n_events: usize,
    pub n_arguments: usize,
    pub n_nested: usize,
    pub n_overlapping: usize,
    pub n_nested_or_overlapping: usize,
}

pub fn compute_stats(corpus: &Corpus) -> StructureStats {
    instance_stats(&corpus.instances)
}

pub fn instance_stats(instances: &[Instance]) -> StructureStats {
    let mut s = StructureStats {
        n_instances: instances.len(),
        ..Default::default()
    };
    for inst in instances {
        s.n_events += inst.events.len();
        s.n_arguments += inst.events.iter().map(|e| e.arguments.len()).sum::<usize>();
        for t in detect_structures(inst) {
            s.n_nested += usize::from(t.nested);
            s.n_overlapping += usize::from(t.overlapping);
            s.n_nested_or_overlapping += usize::from(!t.general());
        }
    }
    s
}

/// Published per-split dataset statistics, for side-by-side reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceStats {
    pub dataset: &'static str,
    pub split: Split,
    pub documents: Option<usize>,
    pub sentences: usize,
    pub events: usize,
    pub nested_or_overlapping: usize,
    pub arguments: usize,
}

pub const REFERENCE_STATS: &[ReferenceStats] = &[
    ReferenceStats { dataset: "mlee", split: Split::Train, documents: Some(131), sentences: 1294, events: 3121, nested_or_overlapping: 773, arguments: 2887 },
    ReferenceStats { dataset: "mlee", split: Split::Dev, documents: Some(44), sentences: 467, events: 670, nested_or_overlapping: 397, arguments: 1065 },
    ReferenceStats { dataset: "mlee", split: Split::Test, documents: Some(87), sentences: 885, events: 1894, nested_or_overlapping: 315, arguments: 1887 },
    ReferenceStats { dataset: "ge11", split: Split::Train, documents: Some(908), sentences: 7926, events: 10310, nested_or_overlapping: 2843, arguments: 6823 },
    ReferenceStats { dataset: "ge11", split: Split::Dev, documents: Some(259), sentences: 2483, events: 3250, nested_or_overlapping: 658, arguments: 1533 },
    ReferenceStats { dataset: "phee", split: Split::Train, documents: None, sentences: 2897, events: 3003, nested_or_overlapping: 69, arguments: 15482 },
    ReferenceStats { dataset: "phee", split: Split::Dev, documents: None, sentences: 965, events: 1011, nested_or_overlapping: 26, arguments: 5123 },
    ReferenceStats { dataset: "phee", split: Split::Test, documents: None, sentences: 965, events: 1005, nested_or_overlapping: 29, arguments: 5155 },
];

pub fn reference_stats(dataset: &str, split: Split) -> Option<&'static ReferenceStats> {
    let d = dataset.to_lowercase();
    REFERENCE_STATS.iter().find(|r| r.dataset == d && r.split == split)
}
