//! Lexically constrained sequence decoding.
//!
//! The crate is organised bottom-up:
//!
//! * [`vocab`], [`text`], [`dataset`] and [`toy`] hold the token inventory, the
//!   JSONL sentence records and the synthetic parallel task used to exercise
//!   everything at desk scale.
//! * [`constraints`] tracks constraint progress for a hypothesis with a
//!   multi-phrase automaton.
//! * [`augmentation`] builds constraint-aware encoder inputs and samples
//!   training constraints.
//! * [`model`] is a small encoder-decoder with segment embeddings and a
//!   pointer-generator head, trained with a hand-written reverse-mode tape.
//! * [`decoding`] implements plain beam search, grid beam search, dynamic beam
//!   allocation and an exhaustive oracle.
//! * [`evaluation`] and [`postprocess`] score outputs and repair tokenization
//!   mismatches.
//! * [`experiment`] glues the stages together for the CLI and the acceptance
//!   suite.

pub mod augmentation;
pub mod constraints;
pub mod dataset;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod postprocess;
pub mod text;
pub mod toy;
pub mod vocab;

pub use augmentation::{AugmentedInput, SamplerConfig};
pub use constraints::{ConstraintAutomaton, ConstraintSet, ConstraintState};
pub use dataset::SentencePair;
pub use decoding::{DecodeConfig, DecodeMode, Hypothesis, Scorer};
pub use error::{Error, Result};
pub use evaluation::EvalReport;
pub use model::{Model, ModelConfig, TokenDistribution};
pub use toy::ToyTaskSpec;
pub use vocab::{TokenId, Vocabulary};

/// Derive a child seed from a parent seed and a label.
///
/// Used wherever a per-item random stream is needed (per-sentence sampling,
/// per-step constraint resampling) so results do not depend on iteration
/// order or parallelism.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
