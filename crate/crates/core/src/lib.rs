//! Discrete-event simulator of edge data repositories that reuse prior
//! computation results through locality-sensitive hashing, with pluggable
//! bucket-orchestration strategies.

pub mod lsh;
pub mod model;
pub mod node;
pub mod orchestrator;
pub mod profile;
pub mod store;
pub mod engine;
pub mod rng;
pub mod calibrate;
