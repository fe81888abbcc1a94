use std::collections::HashMap;

use super::{normalized, rank, Scorer};
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Largest `|V|^max_len` the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum BruteForceResult {
    Found {
        /// Output tokens including the final eos.
        tokens: Vec<TokenId>,
        score: f64,
        normalized: f64,
    },
    /// No sequence within the length cap contains every constraint.
    Infeasible,
}

/// Whether `output` contains every phrase of `cs`, a phrase listed `m` times
/// needing `m` non-overlapping occurrences. Direct scan, no automaton.
pub fn contains_all(output: &[TokenId], cs: &ConstraintSet) -> bool {
    let mut need: HashMap<&[TokenId], usize> = HashMap::new();
    for p in cs.phrases() {
        *need.entry(p.as_slice()).or_default() += 1;
    }
    need.into_iter().all(|(phrase, m)| {
        let mut found = 0;
        let mut i = 0;
        while i + phrase.len() <= output.len() {
            if &output[i..i + phrase.len()] == phrase {
                found += 1;
                i += phrase.len();
            } else {
                i += 1;
            }
        }
        found >= m
    })
}

struct Search<'a> {
    scorer: &'a mut dyn Scorer,
    cs: &'a ConstraintSet,
    eos: TokenId,
    max_len: usize,
    alpha: f64,
    best: Option<(f64, Vec<TokenId>, f64)>,
}

impl Search<'_> {
    fn visit(&mut self, prefix: &mut Vec<TokenId>, score: f64) -> Result<()> {
        let lp = self.scorer.log_probs(prefix)?;
        let eos = self.eos;
        let s = score + lp[eos as usize];
        if s.is_finite() && contains_all(prefix, self.cs) {
            let mut seq = prefix.clone();
            seq.push(eos);
            let norm = normalized(s, seq.len(), self.alpha);
            let better = match &self.best {
                None => true,
                Some((bn, bt, _)) => rank(norm, &seq, *bn, bt).is_lt(),
            };
            if better {
                self.best = Some((norm, seq, s));
            }
        }
        if prefix.len() + 2 > self.max_len {
            return Ok(());
        }
        for t in 0..lp.len() as TokenId {
            if t == eos || !lp[t as usize].is_finite() {
                continue;
            }
            prefix.push(t);
            self.visit(prefix, score + lp[t as usize])?;
            prefix.pop();
        }
        Ok(())
    }
}

/// Exhaustive constrained decoding: every sequence of at most `max_len`
/// tokens ending in eos and containing all constraints, ranked by
/// `score / len^alpha`. Refuses when `|V|^max_len` exceeds
/// [`BRUTE_FORCE_LIMIT`].
pub fn brute_force_decode(
    scorer: &mut dyn Scorer,
    cs: &ConstraintSet,
    max_len: usize,
    alpha: f64,
) -> Result<BruteForceResult> {
    let v = scorer.vocab_size();
    let size = (v as f64).powi(max_len as i32);
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::Refused(format!("{v}^{max_len} sequences exceed the limit of {BRUTE_FORCE_LIMIT}")));
    }
    if max_len == 0 {
        return Ok(BruteForceResult::Infeasible);
    }
    let eos = scorer.eos();
    let mut search = Search { scorer, cs, eos, max_len, alpha, best: None };
    search.visit(&mut Vec::new(), 0.0)?;
    Ok(match search.best {
        Some((normalized, tokens, score)) => BruteForceResult::Found { tokens, score, normalized },
        None => BruteForceResult::Infeasible,
    })
}
