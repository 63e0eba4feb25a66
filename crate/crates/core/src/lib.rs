//! Reference-grounded proof generation: corpus handling, prompt rendering,
//! sampling backends, constrained segment-level decoding, metrics, an
//! experiment harness and an HTTP service.

pub mod corpus;
pub mod decoder;
pub mod harness;
pub mod lmbackend;
pub mod metrics;
pub mod promptgen;
pub mod service;
