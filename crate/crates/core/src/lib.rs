//! Disentangled style/content representation learning for text.
//!
//! An RNN autoencoder (deterministic or variational) whose latent vector is
//! split into a style part and a content part, kept apart by multi-task and
//! adversarial classifier losses. The disentangled space drives non-parallel
//! style transfer: encode a sentence's content, graft on an empirically
//! estimated style vector for the target label, decode. An evaluation suite
//! measures transfer accuracy, content preservation, and fluency.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod toy;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
