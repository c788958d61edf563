//! Knowledge-graph data augmentation by factorized triple sampling.
//!
//! The pipeline counts how often each entity heads or tails each relation
//! ([`cooccur`]), factorizes the resulting entity affinity matrix with
//! non-negative factors ([`factorize`]), clusters entities on those factors
//! ([`cluster`]), and samples new triples cluster by cluster ([`augment`]).
//! [`linkpred`] trains TransE and RotatE on the original triples plus a
//! growing prefix of the sampled ones, and [`eval`] scores the result by
//! entity ranking.

pub mod augment;
pub mod cluster;
pub mod cooccur;
pub mod error;
pub mod eval;
pub mod factorize;
pub mod graph;
pub mod linalg;
pub mod linkpred;
pub mod rng;

pub use error::{KgError, Result};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Triple};
