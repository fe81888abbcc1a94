//! Beam search with and without hard lexical constraints.
//!
//! All three modes share one search loop. Hypotheses are grouped into banks
//! by the number of constraint tokens they have met:
//!
//! * `plain` ignores constraints and keeps a single bank of `beam_size`;
//! * `gbs` keeps one bank of `beam_size` per count `0..=total_tokens`;
//! * `dba` splits one beam of `beam_size` across banks each step with
//!   [`allocate_banks`].
//!
//! In the constrained modes every hypothesis is expanded with its top
//! `beam_size` tokens plus the tokens that advance a constraint, and eos is
//! only admissible once every constraint is met.

mod alloc;
mod brute;
mod random;
mod search;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintState;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub use alloc::allocate_banks;
pub use brute::{brute_force_decode, contains_all, BruteForceResult, BRUTE_FORCE_LIMIT};
pub use random::RandomScorer;
pub use search::{beam_search, dba_decode, decode, gbs_decode};

/// Next-token log-probabilities for a decoder prefix.
pub trait Scorer {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> TokenId;
    /// Longest prefix [`Scorer::log_probs`] accepts.
    fn max_prefix_len(&self) -> usize {
        usize::MAX
    }
    /// Log-probabilities of every token after `prefix`. The prefix never
    /// contains eos.
    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

impl<S: Scorer + ?Sized> Scorer for &mut S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn max_prefix_len(&self) -> usize {
        (**self).max_prefix_len()
    }
    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        (**self).log_probs(prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Plain,
    Gbs,
    Dba,
}

impl DecodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Plain => "plain",
            DecodeMode::Gbs => "gbs",
            DecodeMode::Dba => "dba",
        }
    }

    pub fn is_constrained(self) -> bool {
        self != DecodeMode::Plain
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(DecodeMode::Plain),
            "gbs" => Ok(DecodeMode::Gbs),
            "dba" => Ok(DecodeMode::Dba),
            other => Err(Error::config(format!("unknown decode mode {other:?} (expected plain, gbs or dba)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Output length cap is `floor(max_len_ratio · source_len) + max_len_offset`.
    pub max_len_ratio: f64,
    pub max_len_offset: usize,
    /// Exponent of the length normalisation applied at final ranking.
    pub length_penalty: f64,
    pub mode: DecodeMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: 5, max_len_ratio: 2.0, max_len_offset: 5, length_penalty: 0.6, mode: DecodeMode::Plain }
    }
}

impl DecodeConfig {
    pub fn new(mode: DecodeMode, beam_size: usize) -> Self {
        Self { mode, beam_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam_size must be >= 1"));
        }
        if !(self.max_len_ratio >= 0.0) || !self.length_penalty.is_finite() {
            return Err(Error::config("max_len_ratio and length_penalty must be finite and non-negative"));
        }
        if self.max_len(0) == 0 {
            return Err(Error::config("maximum output length must be >= 1"));
        }
        Ok(())
    }

    pub fn max_len(&self, source_len: usize) -> usize {
        (self.max_len_ratio * source_len as f64).floor() as usize + self.max_len_offset
    }
}

/// A (possibly finished) output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output tokens; ends with eos when finished.
    pub tokens: Vec<TokenId>,
    /// Sum of per-step log-probabilities.
    pub score: f64,
    pub cstate: ConstraintState,
    pub finished: bool,
}

impl Hypothesis {
    /// `score / len^alpha` with `len` counting every token including eos.
    pub fn normalized_score(&self, alpha: f64) -> f64 {
        normalized(self.score, self.tokens.len(), alpha)
    }

    pub fn tokens_met(&self) -> usize {
        self.cstate.tokens_met()
    }

    /// Output tokens without the trailing eos.
    pub fn content(&self) -> &[TokenId] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

pub(crate) fn normalized(score: f64, len: usize, alpha: f64) -> f64 {
    if len == 0 {
        score
    } else {
        score / (len as f64).powf(alpha)
    }
}

/// Total order used for every ranking: higher key first, then
/// lexicographically lower tokens, then shorter sequences.
pub(crate) fn rank(key_a: f64, tokens_a: &[TokenId], key_b: f64, tokens_b: &[TokenId]) -> Ordering {
    key_b.total_cmp(&key_a).then_with(|| tokens_a.cmp(tokens_b)).then_with(|| tokens_a.len().cmp(&tokens_b.len()))
}

#[cfg(test)]
mod tests;
