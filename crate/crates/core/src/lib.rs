//! Unidirectional-convergence multi-agent deliberation for medical visual
//! question answering.
//!
//! The [`protocol`] module runs one case through the three tiers over any
//! [`backend::ChatBackend`]. [`prompts`] holds the templates and output
//! grammars, [`metrics`] the entropy, usage and route statistics, and
//! [`harness`] the dataset runner behind the `ucagents` CLI.

pub mod backend;
pub mod harness;
pub mod metrics;
pub mod prompts;
pub mod protocol;
