//! Mutation testing across a recorded revision history.
//!
//! Mutants are generated for one revision of a MiniLang project, tracked
//! through later revisions by AST matching, and labelled latent, non-latent
//! or discarded depending on whether (and when) a later test suite reveals
//! them. Historical change features of each mutated line feed a random
//! forest that predicts latent mutants.

pub mod astmatch;
pub mod evalmetrics;
pub mod forest;
pub mod histfeat;
pub mod histstore;
pub mod lifecycle;
pub mod minilang;
pub mod mutgen;
pub mod pipeline;
pub mod runner;
