//! Cross-lingual word embeddings in the Poincaré ball.
//!
//! Skip-gram with negative sampling over a shared bilingual vocabulary, trained
//! with Riemannian SGD in the Poincaré ball or plain SGD in Euclidean space,
//! plus evaluation of hypernymy, analogies and norm-specificity structure.

pub mod cli;
pub mod corpus;
pub mod datasets;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod persist;
