//! Dense dual-encoder retrieval for dialogue response selection.
//!
//! The crate covers the whole offline/online loop:
//!
//! * [`corpus`] loads dialogue sessions and cuts them into fine-grained
//!   context/response training pairs.
//! * [`encoder`] holds the two decoupled towers that map contexts and
//!   responses into a shared inner-product space.
//! * [`training`] optimizes the towers with in-batch contrastive loss (or a
//!   hardest-negative triplet loss) under AdamW.
//! * [`index`] stores response embeddings for exact and approximate maximum
//!   inner product search (flat, IVF, LSH) with a binary on-disk format.
//! * [`retrieval`] wires encoders and indexes into the end-to-end searcher
//!   and the BM25 recall-then-rerank pipeline.
//! * [`eval`] computes ranking metrics, full-pool gold recovery and query
//!   latency.
//!
//! Data-parallel loops go through [`par::Exec`]; with the `parallel` feature
//! disabled every path runs sequentially and produces identical results.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod linalg;
pub mod par;
pub mod retrieval;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
