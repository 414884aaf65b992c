//! Mining k-way word co-occurrences, learning embeddings from them, and
//! checking the learned geometry against a random-walk text model.

pub mod cli;
pub mod corpus;
pub mod evalsuite;
pub mod genwalk;
pub mod miner;
pub mod trainer;
pub mod verifier;
