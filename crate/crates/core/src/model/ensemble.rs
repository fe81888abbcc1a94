//! Score averaging across independently trained models.

use serde::{Deserialize, Serialize};

use super::infer::{forward_step, EncoderMemory, ModelScorer};
use super::tensor::log_sum_exp;
use super::{Model, TokenDistribution};
use crate::augmentation::AugmentedInput;
use crate::decoding::Scorer;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// How member distributions are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleSpace {
    /// Arithmetic mean of probabilities.
    #[default]
    Prob,
    /// Mean of log-probabilities, renormalised.
    Logprob,
}

impl std::str::FromStr for EnsembleSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" => Ok(Self::Prob),
            "logprob" => Ok(Self::Logprob),
            other => Err(Error::config(format!("unknown ensemble space {other:?} (expected prob or logprob)"))),
        }
    }
}

/// Average member distributions and renormalise.
pub fn combine_distributions(dists: &[TokenDistribution], space: EnsembleSpace) -> Result<TokenDistribution> {
    let first = dists.first().ok_or_else(|| Error::config("ensemble has no members"))?;
    let v = first.log_probs.len();
    if dists.iter().any(|d| d.log_probs.len() != v) {
        return Err(Error::config("ensemble members disagree on vocabulary size"));
    }
    if dists.len() == 1 {
        return Ok(first.clone());
    }
    let k = dists.len() as f64;
    let mut acc = vec![0.0; v];
    match space {
        EnsembleSpace::Prob => {
            for d in dists {
                acc.iter_mut().zip(&d.log_probs).for_each(|(a, l)| *a += l.exp() / k);
            }
            let total: f64 = acc.iter().sum();
            Ok(TokenDistribution { log_probs: acc.iter().map(|p| (p / total).ln()).collect() })
        }
        EnsembleSpace::Logprob => {
            for d in dists {
                acc.iter_mut().zip(&d.log_probs).for_each(|(a, l)| *a += l / k);
            }
            let lse = log_sum_exp(&acc);
            Ok(TokenDistribution { log_probs: acc.iter().map(|a| a - lse).collect() })
        }
    }
}

/// Ensemble next-token distribution after `prefix`; `memories[i]` must be
/// the encoding of the input by `models[i]`.
pub fn ensemble_scores(
    models: &[Model],
    memories: &[EncoderMemory],
    prefix: &[TokenId],
    space: EnsembleSpace,
) -> Result<TokenDistribution> {
    check_members(models)?;
    if models.len() != memories.len() {
        return Err(Error::config(format!("{} models but {} encoder memories", models.len(), memories.len())));
    }
    let dists = models.iter().zip(memories).map(|(m, mem)| forward_step(m, mem, prefix)).collect::<Result<Vec<_>>>()?;
    combine_distributions(&dists, space)
}

fn check_members(models: &[Model]) -> Result<()> {
    let first = models.first().ok_or_else(|| Error::config("ensemble has no members"))?;
    let v = first.config().vocab_size;
    if let Some(m) = models.iter().find(|m| m.config().vocab_size != v) {
        return Err(Error::config(format!(
            "ensemble members have mismatched vocabularies ({} vs {v})",
            m.config().vocab_size
        )));
    }
    Ok(())
}

/// Scorer that averages several models bound to the same input.
pub struct EnsembleScorer<'m> {
    members: Vec<ModelScorer<'m>>,
    space: EnsembleSpace,
}

impl<'m> EnsembleScorer<'m> {
    pub fn new(models: &'m [Model], aug: &AugmentedInput, space: EnsembleSpace) -> Result<Self> {
        check_members(models)?;
        let members = models.iter().map(|m| ModelScorer::new(m, aug)).collect::<Result<Vec<_>>>()?;
        Ok(Self { members, space })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Scorer for EnsembleScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn eos(&self) -> TokenId {
        self.members[0].eos()
    }

    fn max_prefix_len(&self) -> usize {
        self.members.iter().map(|m| m.max_prefix_len()).min().unwrap_or(0)
    }

    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let dists = self.members.iter_mut().map(|m| m.distribution(prefix)).collect::<Result<Vec<_>>>()?;
        Ok(combine_distributions(&dists, self.space)?.log_probs)
    }
}
