//! Template elicitation from a chat-completion model, with an on-disk cache.
//!
//! A [`TemplateClient`] sends an instruction plus a basic template to a
//! [`ChatProvider`], validates the reply against the template grammar, and
//! stores accepted templates under a content-addressed cache key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Ontology;
use crate::prompt::{canonicalize_placeholders, EventTemplate, PromptError, TemplateEntry, TemplateStore};
use crate::tokenizer::{role_placeholder, TEMPLATE_SEP, TRIGGER_PLACEHOLDER};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("network error talking to {provider}: {message}")]
    Network { provider: String, message: String },
    #[error("authentication failed for {provider}: {message}")]
    Auth { provider: String, message: String },
    #[error("{provider} rejected the request: {message}")]
    Provider { provider: String, message: String },
    #[error("template for `{event_type}` is missing the placeholder for role `{role}`")]
    MissingPlaceholder { event_type: String, role: String },
    #[error("template for `{event_type}` repeats the placeholder for `{slot}`")]
    RepeatedPlaceholder { event_type: String, slot: String },
    #[error("template for `{event_type}` has no {{Trigger}} placeholder")]
    MissingTrigger { event_type: String },
    #[error(transparent)]
    Invalid(#[from] PromptError),
    #[error("offline mode: no cached or fixture template for `{event_type}` (cache key {key})")]
    OfflineMiss { event_type: String, key: String },
    #[error("no provider configured for `{0}`")]
    NoProvider(String),
    #[error("event type `{0}` is not in the ontology")]
    UnknownEventType(String),
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl LlmError {
    /// Whether another attempt might succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            LlmError::Network { .. }
                | LlmError::Auth { .. }
                | LlmError::MissingPlaceholder { .. }
                | LlmError::RepeatedPlaceholder { .. }
                | LlmError::MissingTrigger { .. }
                | LlmError::Invalid(_)
        )
    }
}

pub type Result<T, E = LlmError> = std::result::Result<T, E>;

/// Instruction used when none is configured. `<T>` is replaced by the type name.
pub const DEFAULT_INSTRUCTION: &str = "You write templates for generative biomedical event extraction. \
Rewrite the basic template below for <T> events into one fluent sentence that explains how the \
argument roles relate to each other and to the trigger. Keep the prefix \"Event trigger {Trigger} <SEP>\" \
unchanged and use every role placeholder from the basic template exactly once, written exactly as given. \
Also write a one-sentence description of <T> events. \
Answer with two lines: \"Description: ...\" and \"Template: ...\".";

/// `Event trigger {Trigger} <SEP>` followed by each role placeholder.
pub fn basic_template(roles: &[String]) -> String {
    let mut s = format!("Event trigger {TRIGGER_PLACEHOLDER} {TEMPLATE_SEP}");
    for (i, r) in roles.iter().enumerate() {
        s.push_str(if i == 0 { " " } else { ", " });
        s.push_str(&role_placeholder(r));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRequest {
    pub ontology_id: String,
    pub event_type: String,
    pub role_list: Vec<String>,
    pub instruction: String,
    pub basic_template: String,
}

impl TemplateRequest {
    pub fn new(ontology: &Ontology, event_type: &str, instruction: Option<&str>) -> Result<Self> {
        let roles = ontology
            .roles(event_type)
            .ok_or_else(|| LlmError::UnknownEventType(event_type.to_string()))?
            .to_vec();
        Ok(Self {
            ontology_id: ontology.id.clone(),
            event_type: event_type.to_string(),
            basic_template: basic_template(&roles),
            role_list: roles,
            instruction: instruction.unwrap_or(DEFAULT_INSTRUCTION).replace("<T>", event_type),
        })
    }

    /// Hex SHA-256 over the fields that determine the answer.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.ontology_id, &self.event_type, &self.instruction, &self.basic_template] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(&h.finalize()[..])
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::new("system", "You are an expert in biomedical information extraction."),
            ChatMessage::new(
                "user",
                format!("Instruction: {}\n\nBasic Template: {}", self.instruction, self.basic_template),
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> Self {
        Self { role: role.into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateResponse {
    pub event_type: String,
    pub template_text: String,
    pub description: Option<String>,
    pub provider_id: String,
    pub cached: bool,
}

impl TemplateResponse {
    pub fn to_entry(&self) -> TemplateEntry {
        TemplateEntry {
            description: self
                .description
                .clone()
                .unwrap_or_else(|| format!("{} events.", self.event_type.replace('_', " "))),
            template: self.template_text.clone(),
        }
    }
}

/// Something that answers a chat-completion request.
pub trait ChatProvider: Send + Sync {
    fn id(&self) -> String;
    /// Whether calls leave the machine. Offline mode refuses networked providers.
    fn is_networked(&self) -> bool;
    fn complete(&self, request: &TemplateRequest, messages: &[ChatMessage]) -> Result<String>;
}

/// Canned replies keyed by event type.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    pub name: String,
    pub replies: BTreeMap<String, String>,
}

impl FixtureProvider {
    pub fn new(name: impl Into<String>, replies: BTreeMap<String, String>) -> Self {
        Self { name: name.into(), replies }
    }

    /// JSON object mapping event type to reply text.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| LlmError::Cache { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let replies = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(format!("fixture:{}", path.display()), replies))
    }

    /// Fixture replies built from an existing template store.
    pub fn from_store(name: impl Into<String>, store: &TemplateStore) -> Self {
        let replies = store
            .templates
            .iter()
            .map(|(t, e)| (t.clone(), format!("Description: {}\nTemplate: {}", e.description, e.template)))
            .collect();
        Self::new(name, replies)
    }
}

impl ChatProvider for FixtureProvider {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn is_networked(&self) -> bool {
        false
    }

    fn complete(&self, request: &TemplateRequest, _messages: &[ChatMessage]) -> Result<String> {
        self.replies
            .get(&request.event_type)
            .cloned()
            .ok_or_else(|| LlmError::Provider {
                provider: self.name.clone(),
                message: format!("no fixture reply for `{}`", request.event_type),
            })
    }
}

/// OpenAI-style `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct OpenAiCompatible {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
    pub temperature: f64,
}

impl OpenAiCompatible {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            timeout: Duration::from_secs(120),
            temperature: 0.0,
        }
    }
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

impl ChatProvider for OpenAiCompatible {
    fn id(&self) -> String {
        format!("{}@{}", self.model, self.base_url)
    }

    fn is_networked(&self) -> bool {
        true
    }

    fn complete(&self, _request: &TemplateRequest, messages: &[ChatMessage]) -> Result<String> {
        let provider = self.id();
        let key = std::env::var(&self.api_key_env).map_err(|_| LlmError::Auth {
            provider: provider.clone(),
            message: format!("environment variable {} is not set", self.api_key_env),
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        });
        let mut resp = agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| LlmError::Network { provider: provider.clone(), message: e.to_string() })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Network { provider: provider.clone(), message: e.to_string() })?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth { provider, message: format!("HTTP {status}: {text}") }),
            408 | 429 | 500..=599 => {
                return Err(LlmError::Network { provider, message: format!("HTTP {status}: {text}") })
            }
            _ => return Err(LlmError::Provider { provider, message: format!("HTTP {status}: {text}") }),
        }
        let reply: CompletionReply = serde_json::from_str(&text)
            .map_err(|e| LlmError::Provider { provider: provider.clone(), message: format!("bad reply: {e}") })?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Provider { provider, message: "reply has no choices".into() })
    }
}

/// Pull `(description, template)` out of a reply. Labelled lines win; otherwise
/// the first line containing `{Trigger}` is taken as the template.
pub fn parse_reply(reply: &str) -> (Option<String>, Option<String>) {
    let clean = |s: &str| s.trim().trim_matches('`').trim().trim_matches('"').trim().to_string();
    let mut description = None;
    let mut template = None;
    for line in reply.lines() {
        let l = line.trim().trim_start_matches(['*', '-', '#', ' ']);
        let l = l.replace("**", "");
        if let Some(rest) = strip_label(&l, "description") {
            description.get_or_insert(clean(rest));
        } else if let Some(rest) = strip_label(&l, "template") {
            template.get_or_insert(clean(rest));
        }
    }
    if template.is_none() {
        template = reply
            .lines()
            .find(|l| canonicalize_placeholders(l).contains(TRIGGER_PLACEHOLDER))
            .map(clean);
    }
    (description.filter(|d| !d.is_empty()), template.filter(|t| !t.is_empty()))
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    line[label.len()..].trim_start().strip_prefix(':')
}

/// Accept a template only if it names the trigger and every requested role
/// exactly once and parses under the template grammar.
pub fn validate_template(request: &TemplateRequest, text: &str) -> Result<String> {
    let canon = canonicalize_placeholders(text.trim());
    let event_type = request.event_type.clone();
    match canon.matches(TRIGGER_PLACEHOLDER).count() {
        0 => return Err(LlmError::MissingTrigger { event_type }),
        1 => {}
        _ => return Err(LlmError::RepeatedPlaceholder { event_type, slot: "Trigger".into() }),
    }
    for role in &request.role_list {
        match canon.matches(&role_placeholder(role)).count() {
            0 => return Err(LlmError::MissingPlaceholder { event_type, role: role.clone() }),
            1 => {}
            _ => return Err(LlmError::RepeatedPlaceholder { event_type, slot: role.clone() }),
        }
    }
    EventTemplate::parse(&request.event_type, &canon, Some(&request.role_list))?;
    Ok(canon)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    ontology_id: String,
    event_type: String,
    instruction: String,
    basic_template: String,
    provider_id: String,
    description: Option<String>,
    template: String,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    /// Total attempts per request, counting the first.
    pub max_attempts: usize,
    pub retry_delay: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self { cache_dir: None, offline: false, max_attempts: 3, retry_delay: Duration::from_millis(500) }
    }
}

pub struct TemplateClient {
    provider: Option<Box<dyn ChatProvider>>,
    config: ClientConfig,
    cache_lock: Mutex<()>,
}

impl TemplateClient {
    pub fn new(provider: Option<Box<dyn ChatProvider>>, config: ClientConfig) -> Self {
        Self { provider, config, cache_lock: Mutex::new(()) }
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.config.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn read_cache(&self, request: &TemplateRequest, key: &str) -> Result<Option<TemplateResponse>> {
        let Some(path) = self.cache_path(key) else { return Ok(None) };
        let _guard = self.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
        if !path.exists() {
            return Ok(None);
        }
        let err = |message: String| LlmError::Cache { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
        let rec: CacheRecord = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if rec.key != key {
            return Err(err(format!("stored key {} does not match", rec.key)));
        }
        validate_template(request, &rec.template)?;
        Ok(Some(TemplateResponse {
            event_type: rec.event_type,
            template_text: rec.template,
            description: rec.description,
            provider_id: rec.provider_id,
            cached: true,
        }))
    }

    fn write_cache(&self, request: &TemplateRequest, key: &str, resp: &TemplateResponse) -> Result<()> {
        let Some(path) = self.cache_path(key) else { return Ok(()) };
        let err = |message: String| LlmError::Cache { path: path.display().to_string(), message };
        let rec = CacheRecord {
            key: key.to_string(),
            ontology_id: request.ontology_id.clone(),
            event_type: request.event_type.clone(),
            instruction: request.instruction.clone(),
            basic_template: request.basic_template.clone(),
            provider_id: resp.provider_id.clone(),
            description: resp.description.clone(),
            template: resp.template_text.clone(),
        };
        let text = serde_json::to_string_pretty(&rec).expect("record serializes") + "\n";
        let _guard = self.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let tmp = path.with_extension(format!("json.tmp{}", std::process::id()));
        std::fs::write(&tmp, text).map_err(|e| err(e.to_string()))?;
        std::fs::rename(&tmp, &path).map_err(|e| err(e.to_string()))
    }

    pub fn gen_template(&self, request: &TemplateRequest) -> Result<TemplateResponse> {
        let key = request.cache_key();
        if let Some(hit) = self.read_cache(request, &key)? {
            return Ok(hit);
        }
        let provider = match &self.provider {
            Some(p) if !(self.config.offline && p.is_networked()) => p,
            _ if self.config.offline => {
                return Err(LlmError::OfflineMiss { event_type: request.event_type.clone(), key })
            }
            _ => return Err(LlmError::NoProvider(request.event_type.clone())),
        };
        let messages = request.messages();
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 && !self.config.retry_delay.is_zero() {
                std::thread::sleep(self.config.retry_delay);
            }
            let outcome = provider.complete(request, &messages).and_then(|reply| {
                let (description, template) = parse_reply(&reply);
                let template = template.ok_or(LlmError::MissingTrigger { event_type: request.event_type.clone() })?;
                Ok((description, validate_template(request, &template)?))
            });
            match outcome {
                Ok((description, template_text)) => {
                    let resp = TemplateResponse {
                        event_type: request.event_type.clone(),
                        template_text,
                        description,
                        provider_id: provider.id(),
                        cached: false,
                    };
                    self.write_cache(request, &key, &resp)?;
                    return Ok(resp);
                }
                Err(e) if e.is_retriable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Fill `store` with templates for every ontology type it lacks (or all
    /// types when `overwrite`). Returns the responses in ontology order.
    pub fn populate_store(
        &self,
        ontology: &Ontology,
        store: &mut TemplateStore,
        instruction: Option<&str>,
        overwrite: bool,
    ) -> Result<Vec<TemplateResponse>> {
        let mut out = Vec::new();
        for t in ontology.type_names() {
            if !overwrite && store.get(t).is_some() {
                continue;
            }
            let resp = self.gen_template(&TemplateRequest::new(ontology, t, instruction)?)?;
            store.insert(t, resp.to_entry());
            out.push(resp);
        }
        store.ontology = ontology.id.clone();
        Ok(out)
    }
}
