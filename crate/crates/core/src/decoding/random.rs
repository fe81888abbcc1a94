use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Scorer;
use crate::error::Result;
use crate::vocab::TokenId;

/// Deterministic synthetic scorer: each prefix gets its own pseudo-random
/// distribution, a pure function of `(seed, prefix)`. Used by tests,
/// benchmarks and the oracle-equivalence suite.
#[derive(Debug, Clone)]
pub struct RandomScorer {
    vocab_size: usize,
    eos: TokenId,
    seed: u64,
    /// Added to the eos logit before normalising.
    pub eos_bias: f64,
    /// Logits are drawn uniformly from `[-spread, spread]`.
    pub spread: f64,
    calls: usize,
}

impl RandomScorer {
    pub fn new(vocab_size: usize, eos: TokenId, seed: u64) -> Self {
        assert!((eos as usize) < vocab_size, "eos must be inside the vocabulary");
        Self { vocab_size, eos, seed, eos_bias: 0.0, spread: 3.0, calls: 0 }
    }

    /// Number of `log_probs` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    fn stream(&self, prefix: &[TokenId]) -> ChaCha8Rng {
        // FNV-1a over the prefix, mixed with the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for &t in prefix {
            for b in (t as u64 + 1).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h ^= prefix.len() as u64;
        ChaCha8Rng::seed_from_u64(h)
    }
}

impl Scorer for RandomScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.calls += 1;
        let mut rng = self.stream(prefix);
        let mut logits: Vec<f64> = (0..self.vocab_size).map(|_| rng.random_range(-self.spread..=self.spread)).collect();
        logits[self.eos as usize] += self.eos_bias;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|l| l - lse).collect())
    }
}
