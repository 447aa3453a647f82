//! Structure-aware generative biomedical event extraction.

pub mod assets;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod evaluator;
pub mod extractor;
pub mod llm;
pub mod model;
pub mod nn;
pub mod prefix;
pub mod prompt;
pub mod seq2seq;
pub mod tokenizer;
pub mod train;
