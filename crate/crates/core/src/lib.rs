//! Keyword-driven natural-language-to-SQL pipeline.
//!
//! Three stages turn a question into SQL: question understanding
//! ([`uqu`]) produces a task decomposition and keywords; entity retrieval
//! ([`retrieval`]) maps keywords onto columns, values and descriptions of a
//! [`catalog::DatabaseCatalog`]; generation ([`generation`]) prompts a model
//! for SQL, executes it and revises on errors. [`evaluation`] holds the
//! metrics used to score each stage.

pub mod bm25;
pub mod catalog;
pub mod config;
pub mod evaluation;
pub mod exec;
pub mod generation;
pub mod llm;
pub mod minhash;
pub mod retrieval;
pub mod template;
pub mod text;
pub mod uqu;
