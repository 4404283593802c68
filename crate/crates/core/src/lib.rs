//! Knowledge-graph enhanced retrieval-augmented question answering.
//!
//! The crate is organised along the pipeline:
//!
//! - [`ingest`]: documents to ordered, traceable chunks.
//! - [`embed_index`]: the embedding function and exact top-k vector search.
//! - [`kg_store`] / [`kg_builder`]: the weighted knowledge graph and the four
//!   extraction agents that populate it.
//! - [`retrieval`]: query decomposition, graph traversal, graph-aware rewrite,
//!   vector search and score fusion.
//! - [`generation`]: staged naive / refine / condense answering with citations,
//!   abstention and follow-up questions.
//! - [`evalkit`]: answer relevancy, contextual recall, contextual precision@K,
//!   faithfulness and the composite score.
//! - [`pipeline`]: a file-backed [`pipeline::Engine`] tying everything together.
//!
//! All model calls go through [`llm_gateway`], which also provides a scripted
//! transcript mock so the whole pipeline runs deterministically offline.

pub mod config;
pub mod digest;
pub mod embed_index;
pub mod evalkit;
pub mod generation;
pub mod ingest;
pub mod kg_builder;
pub mod kg_store;
pub mod llm_gateway;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod session;
pub mod trace;

pub use config::Config;
pub use pipeline::{Engine, EngineError};
