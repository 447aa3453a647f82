//! Deterministic word-level tokenizer with character offsets.
//!
//! Text is split on whitespace; the punctuation characters in
//! [`is_split_punct`] become single-character tokens, while hyphens, slashes,
//! apostrophes and underscores stay inside words (`TCF-1`, `IL-2/IL-4`).
//! Reserved markers (`[SEP]`, `<EOS>`, `{Trigger}`, `{Role_Theme}`, ...) are
//! always kept whole. Decoding joins tokens with single spaces, so
//! `decode(encode(t))` is `t` up to whitespace placement around punctuation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Span;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
pub const TEMPLATE_SEP: &str = "<SEP>";
pub const EVT: &str = "<EVT>";
pub const TRIGGER_PLACEHOLDER: &str = "{Trigger}";

/// Fixed-id reserved tokens, in id order.
pub const RESERVED: [&str; 9] = [PAD, UNK, CLS, SEP, BOS, EOS, TEMPLATE_SEP, EVT, TRIGGER_PLACEHOLDER];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const BOS_ID: usize = 4;
pub const EOS_ID: usize = 5;

const VOCAB_FORMAT: &str = "genbee-vocab";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocab file: {0}")]
    Format(String),
}

/// Canonical placeholder for a role.
pub fn role_placeholder(role: &str) -> String {
    format!("{{Role_{role}}}")
}

pub fn is_split_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}' | '"' | '<' | '>' | '='
            | '`'
    )
}

fn is_placeholder_body(s: &str) -> bool {
    if s == "Trigger" {
        return true;
    }
    let rest = s
        .strip_prefix("Role_")
        .or_else(|| s.strip_prefix("ROLE_"));
    matches!(rest, Some(r) if !r.is_empty() && r.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-'))
}

/// Length in bytes of a reserved marker starting at the beginning of `s`.
fn reserved_prefix(s: &str) -> Option<usize> {
    for m in [PAD, UNK, CLS, SEP, BOS, EOS, TEMPLATE_SEP, EVT] {
        if s.starts_with(m) {
            return Some(m.len());
        }
    }
    if s.starts_with('{') {
        let close = s.find('}')?;
        if is_placeholder_body(&s[1..close]) {
            return Some(close + 1);
        }
    }
    None
}

/// A pre-token: its text plus char span and byte range in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreToken<'a> {
    pub text: &'a str,
    pub span: Span,
    pub bytes: (usize, usize),
}

/// Split text into word-level pieces without consulting a vocabulary.
pub fn pretokenize<'a>(text: &'a str) -> Vec<PreToken<'a>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().enumerate().peekable();
    // (char index, byte index) of the open word, if any.
    let mut word: Option<(usize, usize)> = None;
    let close_word = |out: &mut Vec<PreToken<'a>>, word: &mut Option<(usize, usize)>, ci: usize, bi: usize| {
        if let Some((cs, bs)) = word.take() {
            out.push(PreToken {
                text: &text[bs..bi],
                span: Span::new(cs, ci),
                bytes: (bs, bi),
            });
        }
    };
    while let Some((ci, (bi, c))) = chars.next() {
        if c.is_whitespace() {
            close_word(&mut out, &mut word, ci, bi);
            continue;
        }
        if let Some(len) = reserved_prefix(&text[bi..]) {
            close_word(&mut out, &mut word, ci, bi);
            let marker = &text[bi..bi + len];
            let nchars = marker.chars().count();
            out.push(PreToken {
                text: marker,
                span: Span::new(ci, ci + nchars),
                bytes: (bi, bi + len),
            });
            for _ in 1..nchars {
                chars.next();
            }
            continue;
        }
        if is_split_punct(c) {
            close_word(&mut out, &mut word, ci, bi);
            out.push(PreToken {
                text: &text[bi..bi + c.len_utf8()],
                span: Span::new(ci, ci + 1),
                bytes: (bi, bi + c.len_utf8()),
            });
            continue;
        }
        if word.is_none() {
            word = Some((ci, bi));
        }
    }
    close_word(&mut out, &mut word, text.chars().count(), text.len());
    out
}

/// Whitespace normalization implied by the tokenizer: tokens joined by one space.
pub fn normalize(text: &str) -> String {
    let toks: Vec<&str> = pretokenize(text).into_iter().map(|t| t.text).collect();
    toks.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<usize>,
    pub spans: Vec<Span>,
}

/// Token <-> id mapping. Ids are dense from 0 and the reserved tokens come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    tokens: Vec<String>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Format(format!("duplicate token `{t}`")));
            }
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if index.get(*r) != Some(&i) {
                return Err(VocabError::Format(format!("reserved token `{r}` must have id {i}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Build a vocabulary from text sources.
    ///
    /// Reserved tokens and one placeholder per role in `roles` come first;
    /// the remaining tokens with at least `min_count` occurrences follow,
    /// ordered by descending count then lexicographically.
    pub fn build<'a>(
        sources: impl IntoIterator<Item = &'a str>,
        roles: &[String],
        min_count: usize,
    ) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut placeholders: Vec<String> = roles.iter().map(|r| role_placeholder(r)).collect();
        placeholders.sort();
        placeholders.dedup();
        tokens.extend(placeholders);
        let reserved: std::collections::BTreeSet<String> = tokens.iter().cloned().collect();

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for text in sources {
            for t in pretokenize(text) {
                *counts.entry(t.text).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !reserved.contains(*t) && !t.starts_with("{ROLE_"))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens).expect("built vocab is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn lookup(&self, piece: &str) -> usize {
        if let Some(id) = self.id(piece) {
            return id;
        }
        // `{ROLE_X}` is an accepted spelling of `{Role_X}`.
        if let Some(rest) = piece.strip_prefix("{ROLE_") {
            if let Some(id) = self.id(&format!("{{Role_{rest}")) {
                return id;
            }
        }
        UNK_ID
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let pieces = pretokenize(text);
        Encoding {
            ids: pieces.iter().map(|p| self.lookup(p.text)).collect(),
            spans: pieces.iter().map(|p| p.span).collect(),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids.iter().map(|&i| self.token(i)).collect();
        toks.join(" ")
    }

    /// Decode generated ids, dropping `<BOS>`, `[PAD]`, and everything from `<EOS>` on.
    pub fn decode_generated(&self, ids: &[usize]) -> String {
        let body: Vec<usize> = ids
            .iter()
            .copied()
            .take_while(|&i| i != EOS_ID)
            .filter(|&i| i != BOS_ID && i != PAD_ID)
            .collect();
        self.decode(&body)
    }

    pub fn to_json(&self) -> String {
        let f = VocabFile {
            format: VOCAB_FORMAT.into(),
            version: VOCAB_VERSION,
            tokens: self.tokens.clone(),
        };
        serde_json::to_string_pretty(&f).expect("vocab serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let f: VocabFile =
            serde_json::from_str(text).map_err(|e| VocabError::Format(e.to_string()))?;
        if f.format != VOCAB_FORMAT {
            return Err(VocabError::Format(format!("unexpected format `{}`", f.format)));
        }
        if f.version != VOCAB_VERSION {
            return Err(VocabError::Format(format!("unsupported version {}", f.version)));
        }
        Self::from_tokens(f.tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
