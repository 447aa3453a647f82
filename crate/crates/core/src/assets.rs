//! Bundled data files.

/// Ten-instance synthetic corpus with nested and overlapping events.
pub const MINI_CORPUS: &str = include_str!("../assets/mini/mini.jsonl");
pub const MINI_ONTOLOGY: &str = include_str!("../assets/mini/ontology.json");
pub const MINI_TEMPLATES: &str = include_str!("../assets/mini/templates.json");

pub const GE11_ONTOLOGY: &str = include_str!("../assets/ge11/ontology.json");
pub const GE11_TEMPLATES: &str = include_str!("../assets/ge11/templates.json");
/// Canned chat replies for every GE11 type, in the reply format the template client parses.
pub const GE11_LLM_FIXTURE: &str = include_str!("../assets/ge11/llm_fixture.json");

use crate::corpus::{parse_corpus, Corpus, Ontology, Split};
use crate::prompt::TemplateStore;

pub fn mini_ontology() -> Ontology {
    serde_json::from_str(MINI_ONTOLOGY).expect("bundled ontology parses")
}

pub fn mini_templates() -> TemplateStore {
    serde_json::from_str(MINI_TEMPLATES).expect("bundled templates parse")
}

pub fn mini_corpus() -> Corpus {
    parse_corpus(MINI_CORPUS.as_bytes(), &mini_ontology(), Split::Train).expect("bundled corpus parses")
}

pub fn ge11_ontology() -> Ontology {
    serde_json::from_str(GE11_ONTOLOGY).expect("bundled ontology parses")
}

pub fn ge11_templates() -> TemplateStore {
    serde_json::from_str(GE11_TEMPLATES).expect("bundled templates parse")
}
