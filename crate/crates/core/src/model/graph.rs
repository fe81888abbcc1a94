//! Teacher-forced training graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::tensor::Mat;
use super::{Attn, Ffn, Model, Norm};
use crate::augmentation::AugmentedInput;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// One training pair: the encoder input and the target tokens (without eos).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub input: AugmentedInput,
    pub target: Vec<TokenId>,
}

pub(crate) fn check_input(model: &Model, aug: &AugmentedInput) -> Result<()> {
    let cfg = model.config();
    if aug.token_ids.is_empty() {
        return Err(Error::data("empty encoder input"));
    }
    if let Some(&t) = aug.token_ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::data(format!("token id {t} outside vocabulary of {}", cfg.vocab_size)));
    }
    if let Some(&p) = aug.position_ids.iter().find(|&&p| p >= cfg.encoder_positions()) {
        return Err(Error::data(format!("position id {p} outside table of {}", cfg.encoder_positions())));
    }
    if cfg.use_segments {
        if let Some(&s) = aug.segment_ids.iter().find(|&&s| s >= cfg.n_segments) {
            return Err(Error::data(format!("segment id {s} outside table of {}", cfg.n_segments)));
        }
    }
    Ok(())
}

/// Copy-distribution mask: `false` at separator and final eos positions when
/// masking is enabled.
pub(crate) fn copy_mask(model: &Model, aug: &AugmentedInput) -> Vec<bool> {
    let n = aug.token_ids.len();
    if !model.config().copy_mask_separators {
        return vec![true; n];
    }
    let eos = aug.token_ids[n - 1];
    let sep = (aug.source_len < n - 1).then(|| aug.token_ids[aug.source_len]);
    aug.token_ids
        .iter()
        .enumerate()
        .map(|(j, &t)| !(j == n - 1 || (j >= aug.source_len && Some(t) == sep && t != eos)))
        .collect()
}

struct Dropper<'r> {
    rng: Option<&'r mut ChaCha8Rng>,
    p: f64,
}

impl Dropper<'_> {
    fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - self.p);
        let n = tape.value(x).data.len();
        let mask = (0..n).map(|_| if rng.random_bool(self.p) { 0.0 } else { keep }).collect();
        tape.dropout(x, mask)
    }
}

fn norm(tape: &mut Tape, x: NodeId, n: Norm) -> NodeId {
    let g = tape.param(n.g);
    let b = tape.param(n.b);
    tape.layer_norm(x, g, b)
}

/// Multi-head attention; returns the projected output and per-head weights.
fn attention(
    tape: &mut Tape,
    model: &Model,
    q_in: NodeId,
    kv_in: NodeId,
    a: Attn,
    causal: bool,
) -> (NodeId, Vec<NodeId>) {
    let cfg = model.config();
    let dh = cfg.head_dim();
    let (wq, wk, wv, wo) = (tape.param(a.q), tape.param(a.k), tape.param(a.v), tape.param(a.o));
    let q = tape.matmul(q_in, wq);
    let k = tape.matmul(kv_in, wk);
    let v = tape.matmul(kv_in, wv);
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.cols(q, h * dh, dh);
        let kh = tape.cols(k, h * dh, dh);
        let vh = tape.cols(v, h * dh, dh);
        let s = tape.matmul_t(qh, kh);
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
        let w = tape.softmax(s, causal);
        heads.push(tape.matmul(w, vh));
        weights.push(w);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat(heads) };
    (tape.matmul(cat, wo), weights)
}

fn ffn(tape: &mut Tape, x: NodeId, f: Ffn) -> NodeId {
    let (w1, b1, w2, b2) = (tape.param(f.w1), tape.param(f.b1), tape.param(f.w2), tape.param(f.b2));
    let h = tape.matmul(x, w1);
    let h = tape.add_bias(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w2);
    tape.add_bias(o, b2)
}

/// Build the summed label-smoothed loss of `ex` on `tape`. Returns the loss
/// node and the number of predicted tokens.
pub(crate) fn build_loss(
    tape: &mut Tape,
    model: &Model,
    ex: &TrainExample,
    dropout_rng: Option<&mut ChaCha8Rng>,
    smoothing: f64,
) -> Result<(NodeId, usize)> {
    let cfg = model.config();
    let l = model.layout;
    let aug = &ex.input;
    check_input(model, aug)?;
    let steps = ex.target.len() + 1;
    if steps > cfg.max_target_positions {
        return Err(Error::data(format!("target of {} tokens exceeds decoder positions", ex.target.len())));
    }
    if let Some(&t) = ex.target.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::data(format!("target token {t} outside vocabulary")));
    }
    let mut drop = Dropper { rng: dropout_rng, p: cfg.dropout };

    // Encoder.
    let tok_ids: Vec<usize> = aug.token_ids.iter().map(|&t| t as usize).collect();
    let te = tape.gather(l.tok_emb, &tok_ids);
    let pe = tape.gather(l.enc_pos, &aug.position_ids);
    let mut x = tape.add(te, pe);
    if cfg.use_segments {
        let se = tape.gather(l.seg_emb, &aug.segment_ids);
        x = tape.add(x, se);
    }
    x = drop.apply(tape, x);
    let h = norm(tape, x, l.enc_ln1);
    let (a, _) = attention(tape, model, h, h, l.enc_attn, false);
    let a = drop.apply(tape, a);
    x = tape.add(x, a);
    let h = norm(tape, x, l.enc_ln2);
    let f = ffn(tape, h, l.enc_ffn);
    let f = drop.apply(tape, f);
    x = tape.add(x, f);
    let memory = norm(tape, x, l.enc_lnf);

    // Decoder, fed eos as the start symbol.
    let bos = *aug.token_ids.last().expect("non-empty input") as usize;
    let dec_in: Vec<usize> = std::iter::once(bos).chain(ex.target.iter().map(|&t| t as usize)).collect();
    let dec_pos: Vec<usize> = (0..steps).collect();
    let te = tape.gather(l.tok_emb, &dec_in);
    let pe = tape.gather(l.dec_pos, &dec_pos);
    let mut z = tape.add(te, pe);
    z = drop.apply(tape, z);
    let h = norm(tape, z, l.dec_ln1);
    let (a, _) = attention(tape, model, h, h, l.dec_self, true);
    let a = drop.apply(tape, a);
    z = tape.add(z, a);
    let h = norm(tape, z, l.dec_ln2);
    let (c, _) = attention(tape, model, h, memory, l.dec_cross, false);
    let c = drop.apply(tape, c);
    z = tape.add(z, c);
    let h = norm(tape, z, l.dec_ln3);
    let f = ffn(tape, h, l.dec_ffn);
    let f = drop.apply(tape, f);
    z = tape.add(z, f);
    let hf = norm(tape, z, l.dec_lnf);

    let emb = tape.param(l.tok_emb);
    let logits = tape.matmul_t(hf, emb);
    let ob = tape.param(l.out_bias);
    let logits = tape.add_bias(logits, ob);
    let pv = tape.softmax(logits, false);

    let probs = if cfg.use_pointer {
        // Single-head pointer attention queried by the final decoder state.
        let (pq, pk) = (tape.param(l.ptr_q), tape.param(l.ptr_k));
        let q = tape.matmul(hf, pq);
        let k = tape.matmul(memory, pk);
        let s = tape.matmul_t(q, k);
        let s = tape.scale(s, 1.0 / (cfg.d_model as f64).sqrt());
        let mut attn = tape.softmax(s, false);
        let mask = copy_mask(model, aug);
        if mask.iter().any(|m| !m) {
            attn = tape.row_renorm(attn, mask);
        }
        // The gate sees the decoder state and the pointer's context vector.
        let ctx = tape.matmul(attn, memory);
        let (gw, gc, gb) = (tape.param(l.gate_w), tape.param(l.gate_ctx), tape.param(l.gate_b));
        let gh = tape.matmul(hf, gw);
        let gx = tape.matmul(ctx, gc);
        let gl = tape.add(gh, gx);
        let gl = tape.add_bias(gl, gb);
        let g = tape.sigmoid(gl);
        let mut scatter = Mat::zeros(aug.token_ids.len(), cfg.vocab_size);
        for (j, &t) in aug.token_ids.iter().enumerate() {
            scatter.row_mut(j)[t as usize] = 1.0;
        }
        let scatter = tape.constant(scatter);
        let pc = tape.matmul(attn, scatter);
        tape.gate_mix(g, pv, pc)
    } else {
        pv
    };

    let targets: Vec<usize> = ex.target.iter().map(|&t| t as usize).chain(std::iter::once(bos)).collect();
    let loss = tape.smoothed_nll(probs, &targets, smoothing);
    Ok((loss, steps))
}

/// Summed loss of one example without dropout.
pub fn example_loss(model: &Model, ex: &TrainExample) -> Result<f64> {
    let mut tape = Tape::new(&model.params);
    let (loss, _) = build_loss(&mut tape, model, ex, None, model.config().label_smoothing)?;
    Ok(tape.value(loss).data[0])
}

/// Summed loss over `examples` and its gradient with respect to every
/// parameter (no dropout).
pub fn analytic_gradients(model: &Model, examples: &[TrainExample]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params.len()];
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new(&model.params);
        let (loss, _) = build_loss(&mut tape, model, ex, None, model.config().label_smoothing)?;
        total += tape.value(loss).data[0];
        tape.backward_into(loss, &mut grad);
    }
    Ok((total, grad))
}

/// Unsmoothed negative log-likelihood of one example, summed over tokens.
pub(crate) fn example_nll(model: &Model, ex: &TrainExample) -> Result<(f64, usize)> {
    let mut tape = Tape::new(&model.params);
    let (loss, n) = build_loss(&mut tape, model, ex, None, 0.0)?;
    Ok((tape.value(loss).data[0], n))
}

/// Loss and gradient of a batch with dropout; used by the trainer.
pub(crate) fn batch_gradients(
    model: &Model,
    examples: &[TrainExample],
    rng: &mut ChaCha8Rng,
    grad: &mut [f64],
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for ex in examples {
        let mut tape = Tape::new(&model.params);
        let (loss, n) = build_loss(&mut tape, model, ex, Some(rng), model.config().label_smoothing)?;
        total += tape.value(loss).data[0];
        tokens += n;
        tape.backward_into(loss, grad);
    }
    Ok((total, tokens))
}
