//! Toy encoder-decoder scorer.
//!
//! One pre-norm encoder block and one pre-norm decoder block (self-attention,
//! cross-attention, feed-forward). Encoder inputs sum token, position and
//! (optionally) segment embeddings. The output projection is the token
//! embedding table. With the pointer head enabled the next-token
//! distribution is
//!
//! ```text
//! p = g · softmax(h Eᵀ + b) + (1 - g) · copy,   g = σ(h·w_g + b_g)
//! ```
//!
//! where `copy` scatters the head-averaged cross-attention weights onto the
//! token ids of the encoder input.
//!
//! All parameters live in one flat `f64` buffer; [`Params`] records the
//! name, shape and offset of each tensor.

mod checkpoint;
mod ensemble;
mod gradcheck;
mod graph;
mod infer;
mod tape;
pub mod tensor;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use ensemble::{combine_distributions, ensemble_scores, EnsembleScorer, EnsembleSpace};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{analytic_gradients, example_loss, TrainExample};
pub use infer::{encode_input, forward_step, forward_step_with, EncoderMemory, ModelScorer};
pub use train::{eval_loss, inverse_sqrt_lr, make_example, train, ConstraintFeed, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_source_positions: usize,
    pub max_constraint_positions: usize,
    pub max_target_positions: usize,
    pub n_segments: usize,
    pub label_smoothing: f64,
    pub dropout: f64,
    /// Mix a copy distribution over encoder positions into the output.
    pub use_pointer: bool,
    /// Add segment embeddings to the encoder input.
    pub use_segments: bool,
    /// Exclude separator and eos positions from the copy distribution.
    #[serde(default)]
    pub copy_mask_separators: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_model: 32,
            n_heads: 2,
            ffn_dim: 64,
            max_source_positions: 64,
            max_constraint_positions: 64,
            max_target_positions: 64,
            n_segments: 15,
            label_smoothing: 0.1,
            dropout: 0.1,
            use_pointer: true,
            use_segments: true,
            copy_mask_separators: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::config("vocab_size must be >= 1"));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 {
            return Err(Error::config("d_model, n_heads and ffn_dim must be >= 1"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.n_segments == 0 || self.max_source_positions == 0 || self.max_target_positions == 0 {
            return Err(Error::config("position and segment tables must be non-empty"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn encoder_positions(&self) -> usize {
        self.max_source_positions + self.max_constraint_positions
    }
}

/// Name, shape and offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<f64>,
}

impl Params {
    pub fn get(&self, id: usize) -> &[f64] {
        &self.values[self.specs[id].range()]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Indices of each tensor in [`Params::specs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Attn {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Ffn {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub enc_pos: usize,
    pub seg_emb: usize,
    pub dec_pos: usize,
    pub enc_ln1: Norm,
    pub enc_attn: Attn,
    pub enc_ln2: Norm,
    pub enc_ffn: Ffn,
    pub enc_lnf: Norm,
    pub dec_ln1: Norm,
    pub dec_self: Attn,
    pub dec_ln2: Norm,
    pub dec_cross: Attn,
    pub dec_ln3: Norm,
    pub dec_ffn: Ffn,
    pub dec_lnf: Norm,
    pub out_bias: usize,
    pub gate_w: usize,
    pub gate_b: usize,
    pub ptr_q: usize,
    pub ptr_k: usize,
    pub gate_ctx: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Xavier,
    Ones,
    Zeros,
    /// Identity matrix (square parameters only).
    Identity,
}

struct Builder {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec { name: name.to_string(), rows, cols, offset: self.offset });
        self.inits.push(init);
        self.offset += rows * cols;
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            g: self.add(&format!("{prefix}.g"), 1, d, Init::Ones),
            b: self.add(&format!("{prefix}.b"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        Attn {
            q: self.add(&format!("{prefix}.wq"), d, d, Init::Xavier),
            k: self.add(&format!("{prefix}.wk"), d, d, Init::Xavier),
            v: self.add(&format!("{prefix}.wv"), d, d, Init::Xavier),
            o: self.add(&format!("{prefix}.wo"), d, d, Init::Xavier),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Ffn {
        Ffn {
            w1: self.add(&format!("{prefix}.w1"), d, f, Init::Xavier),
            b1: self.add(&format!("{prefix}.b1"), 1, f, Init::Zeros),
            w2: self.add(&format!("{prefix}.w2"), f, d, Init::Xavier),
            b2: self.add(&format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn layout(cfg: &ModelConfig) -> (Layout, Vec<ParamSpec>, Vec<Init>) {
    let d = cfg.d_model;
    let emb = Init::Normal((d as f64).powf(-0.5));
    let mut b = Builder { specs: Vec::new(), inits: Vec::new(), offset: 0 };
    let l = Layout {
        tok_emb: b.add("tok_emb", cfg.vocab_size, d, emb),
        enc_pos: b.add("enc_pos", cfg.encoder_positions(), d, emb),
        seg_emb: b.add("seg_emb", cfg.n_segments, d, emb),
        dec_pos: b.add("dec_pos", cfg.max_target_positions, d, emb),
        enc_ln1: b.norm("enc.ln1", d),
        enc_attn: b.attn("enc.attn", d),
        enc_ln2: b.norm("enc.ln2", d),
        enc_ffn: b.ffn("enc.ffn", d, cfg.ffn_dim),
        enc_lnf: b.norm("enc.lnf", d),
        dec_ln1: b.norm("dec.ln1", d),
        dec_self: b.attn("dec.self", d),
        dec_ln2: b.norm("dec.ln2", d),
        dec_cross: b.attn("dec.cross", d),
        dec_ln3: b.norm("dec.ln3", d),
        dec_ffn: b.ffn("dec.ffn", d, cfg.ffn_dim),
        dec_lnf: b.norm("dec.lnf", d),
        out_bias: b.add("out_bias", 1, cfg.vocab_size, Init::Zeros),
        gate_w: b.add("gate.w", d, 1, Init::Xavier),
        gate_b: b.add("gate.b", 1, 1, Init::Zeros),
        ptr_q: b.add("ptr.wq", d, d, Init::Identity),
        ptr_k: b.add("ptr.wk", d, d, Init::Identity),
        gate_ctx: b.add("gate.ctx", d, 1, Init::Xavier),
    };
    (l, b.specs, b.inits)
}

/// Encoder-decoder parameters plus their configuration. Immutable outside
/// training; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    pub(crate) params: Params,
    pub(crate) layout: Layout,
}

/// Deterministic initialisation from `rng_seed`.
pub fn init_model(cfg: &ModelConfig, rng_seed: u64) -> Result<Model> {
    cfg.validate()?;
    let (layout, specs, inits) = layout(cfg);
    let total = specs.last().map_or(0, |s| s.offset + s.len());
    let mut values = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for (spec, init) in specs.iter().zip(&inits) {
        let slot = &mut values[spec.range()];
        match *init {
            Init::Normal(std) => {
                let n = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                slot.iter_mut().for_each(|v| *v = n.sample(&mut rng));
            }
            Init::Xavier => {
                let bound = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                slot.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            }
            Init::Ones => slot.fill(1.0),
            Init::Zeros => slot.fill(0.0),
            Init::Identity => {
                slot.fill(0.0);
                (0..spec.rows.min(spec.cols)).for_each(|i| slot[i * spec.cols + i] = 1.0);
            }
        }
    }
    Ok(Model { cfg: cfg.clone(), params: Params { specs, values }, layout })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Overwrite all parameters; the length must match.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.params.values.len() {
            return Err(Error::data(format!(
                "parameter count mismatch: got {}, expected {}",
                values.len(),
                self.params.values.len()
            )));
        }
        self.params.values = values;
        Ok(())
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.params.values
    }

    /// Token embedding table (`vocab_size × d_model`).
    pub fn token_embeddings(&self) -> &[f64] {
        self.params.get(self.layout.tok_emb)
    }

    /// The output projection weight. It is the token embedding table itself.
    pub fn output_projection(&self) -> &[f64] {
        self.params.get(self.layout.tok_emb)
    }

    pub fn token_embeddings_mut(&mut self) -> &mut [f64] {
        let r = self.params.specs[self.layout.tok_emb].range();
        &mut self.params.values[r]
    }

    pub(crate) fn p(&self, id: usize) -> &[f64] {
        self.params.get(id)
    }

    pub(crate) fn from_parts(cfg: ModelConfig, values: Vec<f64>) -> Result<Model> {
        let mut m = init_model(&cfg, 0)?;
        m.set_values(values)?;
        Ok(m)
    }

    /// Parameter-wise mean of several models with identical configuration.
    pub fn average(models: &[Model]) -> Result<Model> {
        let first = models.first().ok_or_else(|| Error::config("cannot average zero models"))?;
        if models.iter().any(|m| m.cfg != first.cfg) {
            return Err(Error::config("cannot average models with different configurations"));
        }
        let n = models.len() as f64;
        let mut values = vec![0.0; first.params.len()];
        for m in models {
            for (a, b) in values.iter_mut().zip(&m.params.values) {
                *a += b;
            }
        }
        values.iter_mut().for_each(|v| *v /= n);
        Model::from_parts(first.cfg.clone(), values)
    }
}

/// Log-probabilities over the vocabulary for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub log_probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_probs(probs: &[f64]) -> Self {
        Self { log_probs: probs.iter().map(|p| p.ln()).collect() }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.log_probs.iter().map(|l| l.exp()).sum()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.log_probs.iter().enumerate() {
            if l > self.log_probs[best] {
                best = i;
            }
        }
        best
    }
}
