//! Constraint-aware encoder inputs and training-time constraint sampling.
//!
//! The encoder sees `source <sep> C1 <sep> C2 ... Cn <eos>`. Every position
//! carries three ids: token, position and segment. Source positions count
//! from zero; constraint positions run on one counter that starts at
//! `max_source_positions`, so the two regions never share a position id.
//! Segment 0 marks the source (and the final eos); constraint `i` and the
//! separator in front of it carry segment `i`, clamped to `k_max`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::dataset::SentencePair;
use crate::error::{Error, Result};
use crate::text::words;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k_max: usize,
    pub p_zero: f64,
    pub per_k: f64,
    pub max_source_positions: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { k_max: 14, p_zero: 0.4, per_k: 0.6 / 14.0, max_source_positions: 64 }
    }
}

impl SamplerConfig {
    /// Uniform split of the non-zero mass over `1..=k_max`.
    pub fn with_k_max(k_max: usize, p_zero: f64, max_source_positions: usize) -> Self {
        Self { k_max, p_zero, per_k: (1.0 - p_zero) / k_max as f64, max_source_positions }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::config("k_max must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.p_zero) || self.per_k < 0.0 {
            return Err(Error::config("sampler probabilities must be non-negative"));
        }
        let total = self.p_zero + self.k_max as f64 * self.per_k;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("sampler probabilities sum to {total}, not 1")));
        }
        if self.max_source_positions == 0 {
            return Err(Error::config("max_source_positions must be >= 1"));
        }
        Ok(())
    }

    /// Number of segment ids the encoder needs: source plus `k_max` constraints.
    pub fn n_segments(&self) -> usize {
        self.k_max + 1
    }

    /// Probability of drawing `k` constraints before capping.
    pub fn prob(&self, k: usize) -> f64 {
        match k {
            0 => self.p_zero,
            k if k <= self.k_max => self.per_k,
            _ => 0.0,
        }
    }

    fn distribution(&self) -> Result<WeightedIndex<f64>> {
        self.validate()?;
        WeightedIndex::new((0..=self.k_max).map(|k| self.prob(k)))
            .map_err(|e| Error::config(format!("sampler distribution: {e}")))
    }
}

/// Draw the number of constraints `k` (uncapped).
pub fn sample_k<R: Rng + ?Sized>(cfg: &SamplerConfig, rng: &mut R) -> Result<usize> {
    Ok(cfg.distribution()?.sample(rng))
}

/// Sample one-word constraints from a reference.
///
/// `k` is drawn from the configured distribution and capped at the number of
/// reference words; `k` distinct word positions are then chosen uniformly
/// without replacement and returned in reference order. Words keep their
/// piece spelling, so a split word becomes a multi-token phrase once encoded.
pub fn sample_constraints<R: Rng + ?Sized>(reference: &str, cfg: &SamplerConfig, rng: &mut R) -> Result<Vec<String>> {
    let k = sample_k(cfg, rng)?;
    Ok(pick_words(reference, k, rng))
}

/// Choose `k` (capped) distinct words of `reference` uniformly, in reference order.
pub fn pick_words<R: Rng + ?Sized>(reference: &str, k: usize, rng: &mut R) -> Vec<String> {
    let ws = words(reference);
    let k = k.min(ws.len());
    let mut idx = rand::seq::index::sample(rng, ws.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| ws[i].clone()).collect()
}

/// Encoder input with parallel position and segment ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub token_ids: Vec<TokenId>,
    pub position_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub source_len: usize,
}

impl AugmentedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Tokens of the source region.
    pub fn source(&self) -> &[TokenId] {
        &self.token_ids[..self.source_len]
    }
}

/// Lay out `source <sep> C1 ... <sep> Cn <eos>` with position and segment ids.
pub fn build_augmented_input(
    source: &[TokenId],
    cs: &ConstraintSet,
    vocab: &Vocabulary,
    cfg: &SamplerConfig,
) -> Result<AugmentedInput> {
    if source.is_empty() {
        return Err(Error::data("augmented input needs a non-empty source"));
    }
    let max_pos = cfg.max_source_positions;
    if source.len() >= max_pos {
        return Err(Error::config(format!(
            "source length {} must be below max_source_positions {max_pos}",
            source.len()
        )));
    }
    let n = source.len() + cs.total_tokens() + cs.len() + 1;
    let mut token_ids = Vec::with_capacity(n);
    let mut position_ids = Vec::with_capacity(n);
    let mut segment_ids = Vec::with_capacity(n);
    token_ids.extend_from_slice(source);
    position_ids.extend(0..source.len());
    segment_ids.resize(source.len(), 0);

    let mut next_pos = max_pos;
    for (i, phrase) in cs.phrases().iter().enumerate() {
        let seg = (i + 1).min(cfg.k_max);
        for &tok in std::iter::once(&vocab.sep()).chain(phrase) {
            token_ids.push(tok);
            position_ids.push(next_pos);
            segment_ids.push(seg);
            next_pos += 1;
        }
    }
    token_ids.push(vocab.eos());
    position_ids.push(if cs.is_empty() { source.len() } else { next_pos });
    segment_ids.push(0);
    Ok(AugmentedInput { token_ids, position_ids, segment_ids, source_len: source.len() })
}

/// Per-sentence random stream derived from `(seed, id)`.
pub fn sentence_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, id))
}

/// Fill each pair's constraints by sampling from its reference.
///
/// Deterministic in `seed`; each sentence draws from its own stream, so the
/// result does not depend on corpus order.
pub fn annotate_dataset(
    pairs: &[SentencePair],
    cfg: &SamplerConfig,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<SentencePair>> {
    cfg.validate()?;
    pairs
        .iter()
        .map(|p| {
            let mut rng = sentence_rng(seed, &p.id);
            let mut constraints = sample_constraints(&p.target, cfg, &mut rng)?;
            if shuffle {
                constraints.shuffle(&mut rng);
            }
            Ok(SentencePair { constraints, ..p.clone() })
        })
        .collect()
}

/// Like [`annotate_dataset`] but with `k` uniform on `k_min..=k_max`
/// (capped at the reference length). Used for evaluation splits.
pub fn annotate_uniform(
    pairs: &[SentencePair],
    k_min: usize,
    k_max: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<SentencePair>> {
    if k_min > k_max {
        return Err(Error::config(format!("bad constraint count range {k_min}..{k_max}")));
    }
    Ok(pairs
        .iter()
        .map(|p| {
            let mut rng = sentence_rng(seed, &p.id);
            let k = rng.random_range(k_min..=k_max);
            let mut constraints = pick_words(&p.target, k, &mut rng);
            if shuffle {
                constraints.shuffle(&mut rng);
            }
            SentencePair { constraints, ..p.clone() }
        })
        .collect())
}
