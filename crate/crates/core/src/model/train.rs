//! Adam training with inverse-square-root warmup, gradient clipping and
//! checkpoint averaging.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{batch_gradients, example_nll, TrainExample};
use super::Model;
use crate::augmentation::{build_augmented_input, sample_constraints, SamplerConfig};
use crate::constraints::ConstraintSet;
use crate::dataset::SentencePair;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Where the encoder's constraint region comes from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFeed {
    /// Source only: the unconstrained baseline.
    None,
    /// The constraints stored on each pair.
    Annotated,
    /// Fresh constraints drawn from the reference each time a pair is used.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sentences per update.
    pub batch_size: usize,
    pub max_lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Snapshot interval in steps.
    pub checkpoint_every: usize,
    /// Number of trailing snapshots averaged into the final model; 1 keeps
    /// the last parameters.
    pub average_last: usize,
    pub feed: ConstraintFeed,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1200,
            batch_size: 16,
            max_lr: 3e-3,
            warmup: 200,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            checkpoint_every: 50,
            average_last: 8,
            feed: ConstraintFeed::Resample,
            sampler: SamplerConfig::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.average_last == 0 {
            return Err(Error::config("batch_size, checkpoint_every and average_last must be >= 1"));
        }
        if !(self.max_lr > 0.0) || self.warmup == 0 {
            return Err(Error::config("max_lr must be positive and warmup >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        self.sampler.validate()
    }
}

/// Learning rate at 1-based `step`: linear warmup, then inverse square root decay.
pub fn inverse_sqrt_lr(max_lr: f64, warmup: usize, step: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    max_lr * (s / w).min((w / s).sqrt())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The returned model: the checkpoint average, or the last parameters
    /// when averaging is off.
    pub model: Model,
    /// Parameters after the final step.
    pub last: Model,
    /// Per-token training loss of every step.
    pub losses: Vec<f64>,
}

/// Encode one pair as a training example.
pub fn make_example(
    pair: &SentencePair,
    constraints: &[String],
    vocab: &Vocabulary,
    sampler: &SamplerConfig,
) -> Result<TrainExample> {
    let source = vocab.encode(&pair.source);
    let cs = ConstraintSet::from_surfaces(vocab, constraints)?;
    let input = build_augmented_input(&source, &cs, vocab, sampler)?;
    Ok(TrainExample { input, target: vocab.encode(&pair.target) })
}

fn example_for(
    pair: &SentencePair,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainExample> {
    match cfg.feed {
        ConstraintFeed::None => make_example(pair, &[], vocab, &cfg.sampler),
        ConstraintFeed::Annotated => make_example(pair, &pair.constraints, vocab, &cfg.sampler),
        ConstraintFeed::Resample => {
            let cons = sample_constraints(&pair.target, &cfg.sampler, rng)?;
            make_example(pair, &cons, vocab, &cfg.sampler)
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Train `model` on `pairs`. Deterministic for a fixed `cfg.seed`.
pub fn train(model: Model, pairs: &[SentencePair], vocab: &Vocabulary, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(Error::config(format!(
            "vocabulary of {} tokens does not match model vocab_size {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let mut model = model;
    let n_params = model.params.len();
    let mut order_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "order"));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "dropout"));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, "constraints"));

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut adam = Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 };
    let mut grad = vec![0.0; n_params];
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut snapshots: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.average_last);

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(example_for(&pairs[order[cursor]], vocab, cfg, &mut sample_rng)?);
            cursor += 1;
        }
        grad.fill(0.0);
        let (loss, tokens) = batch_gradients(&model, &batch, &mut drop_rng, &mut grad)?;
        let per_token = loss / tokens as f64;
        if !per_token.is_finite() {
            return Err(Error::Diverged { step, detail: format!("loss is {per_token}") });
        }
        losses.push(per_token);
        let inv = 1.0 / tokens as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        if cfg.clip_norm > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged { step, detail: format!("gradient norm is {norm}") });
            }
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = inverse_sqrt_lr(cfg.max_lr, cfg.warmup, step);
        adam.step(model.values_mut(), &grad, lr, cfg);

        if step % cfg.checkpoint_every == 0 || step == cfg.steps {
            if snapshots.len() == cfg.average_last {
                snapshots.pop_front();
            }
            snapshots.push_back(model.params.values.clone());
        }
    }

    let last = model;
    let averaged = if cfg.average_last > 1 && snapshots.len() > 1 {
        let n = snapshots.len() as f64;
        let mut values = vec![0.0; n_params];
        for snap in &snapshots {
            values.iter_mut().zip(snap).for_each(|(a, b)| *a += b);
        }
        values.iter_mut().for_each(|v| *v /= n);
        Model::from_parts(last.config().clone(), values)?
    } else {
        last.clone()
    };
    Ok(TrainOutcome { model: averaged, last, losses })
}

/// Mean per-token negative log-likelihood (no smoothing, no dropout).
pub fn eval_loss(model: &Model, examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let mut total = 0.0;
    let mut tokens = 0;
    for ex in examples {
        let (l, n) = example_nll(model, ex)?;
        total += l;
        tokens += n;
    }
    Ok(total / tokens as f64)
}
