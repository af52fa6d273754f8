//! Persona-conditioned classification runs against OpenAI-compatible chat
//! endpoints: prompt rendering, verdict validation, a resumable runner, an
//! append-only record store and a deterministic mock server.

pub mod client;
pub mod mock;
pub mod prompt;
pub mod records;
pub mod runner;

pub use client::{ChatClient, ClientSettings};
pub use mock::{MockConfig, MockServer, PatternRule};
pub use prompt::{render_prompt, validate_response};
pub use records::RecordStore;
pub use runner::{run_experiment, RunOptions, RunSummary};
