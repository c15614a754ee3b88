//! Personality-conditioned dialogue agents with nonverbal behavior markup.
//!
//! The crate covers the whole pipeline: a fixed action schema and its markup,
//! persona prompt construction, a chat-completion gateway, agent-to-agent
//! simulation with resumable on-disk corpora, lexicon-based feature scoring,
//! the statistics used to compare personality groups, and the report writer.

pub mod analysis;
pub mod catalog;
pub mod cli;
pub mod lexicon;
pub mod llm;
pub mod prompt;
pub mod report;
pub mod schema;
pub mod sim;
pub mod stats;
