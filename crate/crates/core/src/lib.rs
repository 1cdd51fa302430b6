//! Schema-constrained knowledge graph construction: hierarchical LLM
//! extraction, RotatE-based validation with semantic initialization, and a
//! dual-channel feedback loop.

pub mod corpus;
pub mod extraction;
pub mod llm;
pub mod ontology;
pub mod util;
pub mod container;
pub mod kge;
pub mod semantic;
pub mod validation;
pub mod feedback;
pub mod pipeline;
pub mod evaluation;

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
