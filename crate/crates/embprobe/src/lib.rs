//! Evaluation toolkit for precomputed speaker embeddings.
//!
//! Ingests per-utterance embedding files plus a metadata manifest and
//! measures how well the vectors separate speakers (verification EER,
//! cosine similarity structure) and how much non-speaker information
//! they still carry (classifier and regressor probes, 2-D projections).
//! A synthetic benchmark with planted leakage closes the loop: every
//! metric can be checked against a known ground truth.

pub mod corpus;
pub mod probes;
pub mod projection;
pub mod seed;
pub mod cli;
pub mod report;
pub mod simmetrics;
pub mod synthbench;
