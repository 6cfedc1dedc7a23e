//! Stacked adversarial feature synthesis for zero-shot sketch-based image
//! retrieval.
//!
//! A sketch query is lifted into the image-feature domain by a conditional
//! generator, refined by a second generator trained with an MMD penalty, and
//! projected into a 2-d space by a shared-weight Siamese net; gallery images
//! are ranked by Euclidean distance in that space. Everything runs on a
//! small deterministic dense-network engine, so whole pipelines are
//! reproducible from a single seed.

pub mod dataset;
pub mod engine;
pub mod error;
pub mod losses;
pub mod models;
pub mod retrieval;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Result, SanError};
