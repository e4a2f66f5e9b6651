//! Similarity-space debiasing for joint image/text embeddings.
//!
//! The crate covers storage of embedding sets ([`embedstore`]), cosine
//! retrieval ([`simcore`]), analytic gradients ([`diffcore`]), learned
//! attribute queries ([`apl`]), the re-representation matrix ([`rrm`]),
//! bias and quality metrics ([`metrics`]), comparison methods
//! ([`baselines`]) and a synthetic data generator ([`synth`]).

pub mod apl;
pub mod baselines;
pub mod diffcore;
pub mod embedstore;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod rrm;
pub mod simcore;
pub mod synth;

pub use error::{Error, Result};
