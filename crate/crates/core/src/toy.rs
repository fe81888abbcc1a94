//! Synthetic parallel task standing in for a real translation corpus.
//!
//! Source words are `w0..w{N-1}`. Each source word maps to a target word
//! through a fixed permutation of the same alphabet. Optional knobs make the
//! task harder in the ways constrained decoding cares about:
//!
//! * `ambiguous_fraction` of the source words have several target variants
//!   (`w7`, `w7v1`, ...) chosen at random per occurrence, so only a constraint
//!   can tell the model which one the reference used;
//! * `split_fraction` of the target words are written as two pieces
//!   (`w7@@ b`), so constraints span several token ids;
//! * `reorder_window` reverses every consecutive window of target words.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SentencePair;
use crate::error::{Error, Result};
use crate::text::CONTINUATION;

const SUFFIXES: [&str; 3] = ["a", "b", "c"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub source_alphabet_size: usize,
    pub sentence_length_range: (usize, usize),
    pub mapping_seed: u64,
    pub reorder_window: usize,
    #[serde(default)]
    pub ambiguous_fraction: f64,
    #[serde(default = "default_variants")]
    pub variants: usize,
    #[serde(default)]
    pub split_fraction: f64,
}

fn default_variants() -> usize {
    2
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        Self {
            source_alphabet_size: 50,
            sentence_length_range: (3, 8),
            mapping_seed: 0,
            reorder_window: 1,
            ambiguous_fraction: 0.0,
            variants: default_variants(),
            split_fraction: 0.0,
        }
    }
}

impl ToyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sentence_length_range;
        if self.source_alphabet_size == 0 {
            return Err(Error::config("toy alphabet must be non-empty"));
        }
        if lo == 0 || lo > hi {
            return Err(Error::config(format!("bad sentence length range {lo}..{hi}")));
        }
        if self.reorder_window == 0 {
            return Err(Error::config("reorder_window must be >= 1"));
        }
        for (name, p) in [("ambiguous_fraction", self.ambiguous_fraction), ("split_fraction", self.split_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.variants == 0 {
            return Err(Error::config("variants must be >= 1"));
        }
        Ok(())
    }

    /// Build the word-level mapping this spec describes.
    pub fn language(&self) -> Result<ToyLanguage> {
        self.validate()?;
        let n = self.source_alphabet_size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.mapping_seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let ambiguous: Vec<bool> = (0..n).map(|_| rng.random_bool(self.ambiguous_fraction)).collect();
        let split: Vec<Option<&'static str>> = (0..n)
            .map(|_| {
                let s = rng.random_bool(self.split_fraction);
                let suffix = SUFFIXES[rng.random_range(0..SUFFIXES.len())];
                s.then_some(suffix)
            })
            .collect();
        Ok(ToyLanguage { perm, ambiguous, split, variants: self.variants, spec: self.clone() })
    }
}

/// The fixed word mapping of a [`ToyTaskSpec`].
#[derive(Debug, Clone)]
pub struct ToyLanguage {
    perm: Vec<usize>,
    ambiguous: Vec<bool>,
    /// Indexed by target word index.
    split: Vec<Option<&'static str>>,
    variants: usize,
    spec: ToyTaskSpec,
}

impl ToyLanguage {
    pub fn source_word(i: usize) -> String {
        format!("w{i}")
    }

    pub fn is_ambiguous(&self, source: usize) -> bool {
        self.ambiguous[source]
    }

    /// Surface (piece-level) of the target word for `source` with `variant`.
    pub fn target_word(&self, source: usize, variant: usize) -> String {
        let t = self.perm[source];
        let word = if variant == 0 { format!("w{t}") } else { format!("w{t}v{variant}") };
        match self.split[t] {
            Some(suffix) => format!("{word}{CONTINUATION} {suffix}"),
            None => word,
        }
    }

    /// Source index a piece-level target word was produced from.
    pub fn source_of(&self, target_word: &str) -> Option<usize> {
        let head = target_word.split_whitespace().next()?;
        let head = head.strip_suffix(CONTINUATION).unwrap_or(head);
        let digits = head.strip_prefix('w')?;
        let t: usize = digits.split('v').next()?.parse().ok()?;
        self.perm.iter().position(|&p| p == t)
    }

    fn reorder<T>(&self, words: &mut [T]) {
        for chunk in words.chunks_mut(self.spec.reorder_window) {
            chunk.reverse();
        }
    }

    /// Translate source indices with the given per-token variants.
    pub fn translate(&self, source: &[usize], variants: &[usize]) -> String {
        let mut words: Vec<String> = source.iter().zip(variants).map(|(&s, &v)| self.target_word(s, v)).collect();
        self.reorder(&mut words);
        words.join(" ")
    }
}

/// Generate `n` sentence pairs. Deterministic in `(spec, n, rng_seed)`;
/// constraint lists are left empty.
pub fn generate_toy_corpus(spec: &ToyTaskSpec, n: usize, rng_seed: u64) -> Result<Vec<SentencePair>> {
    if n == 0 {
        return Err(Error::config("toy corpus size must be >= 1"));
    }
    let lang = spec.language()?;
    let (lo, hi) = spec.sentence_length_range;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.random_range(lo..=hi);
        let source: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.source_alphabet_size)).collect();
        let variants: Vec<usize> =
            source.iter().map(|&s| if lang.is_ambiguous(s) { rng.random_range(0..lang.variants) } else { 0 }).collect();
        pairs.push(SentencePair {
            id: format!("toy-{i:06}"),
            source: source.iter().map(|&s| ToyLanguage::source_word(s)).collect::<Vec<_>>().join(" "),
            target: lang.translate(&source, &variants),
            constraints: Vec::new(),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;

    #[test]
    fn window_one_is_a_pure_dictionary_map() {
        let spec = ToyTaskSpec { source_alphabet_size: 12, ..Default::default() };
        let lang = spec.language().unwrap();
        for p in generate_toy_corpus(&spec, 50, 3).unwrap() {
            let expect: Vec<String> =
                p.source.split_whitespace().map(|w| lang.target_word(w[1..].parse().unwrap(), 0)).collect();
            assert_eq!(p.target, expect.join(" "));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec =
            ToyTaskSpec { reorder_window: 3, ambiguous_fraction: 0.5, split_fraction: 0.3, ..Default::default() };
        let a = serde_json::to_string(&generate_toy_corpus(&spec, 40, 11).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_toy_corpus(&spec, 40, 11).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_sentences_is_rejected() {
        assert!(generate_toy_corpus(&ToyTaskSpec::default(), 0, 0).is_err());
    }

    #[test]
    fn inverse_map_recovers_source_multiset() {
        let spec = ToyTaskSpec {
            source_alphabet_size: 20,
            reorder_window: 2,
            ambiguous_fraction: 0.5,
            variants: 3,
            split_fraction: 0.4,
            ..Default::default()
        };
        let lang = spec.language().unwrap();
        for p in generate_toy_corpus(&spec, 200, 5).unwrap() {
            let mut src: Vec<usize> = p.source.split_whitespace().map(|w| w[1..].parse().unwrap()).collect();
            let mut back: Vec<usize> = words(&p.target).iter().map(|w| lang.source_of(w).unwrap()).collect();
            src.sort_unstable();
            back.sort_unstable();
            assert_eq!(src, back);
        }
    }
}
