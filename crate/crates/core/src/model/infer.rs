//! Tape-free inference: encode once, then score one decoder position per call.

use std::collections::HashMap;

use super::graph::{check_input, copy_mask};
use super::tensor::{dot, layer_norm_row, log_sum_exp, sigmoid, softmax_prefix, vec_mat, Mat};
use super::{Attn, Ffn, Model, Norm, TokenDistribution};
use crate::augmentation::AugmentedInput;
use crate::decoding::Scorer;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Encoder output for one input, with the cross-attention keys and values
/// already projected.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderMemory {
    memory: Mat,
    cross_k: Mat,
    cross_v: Mat,
    ptr_k: Mat,
    tokens: Vec<TokenId>,
    copy_mask: Vec<bool>,
}

impl EncoderMemory {
    /// Encoder states, one row per input position.
    pub fn states(&self) -> &Mat {
        &self.memory
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Input token ids the copy distribution scatters onto.
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    /// Decoder start symbol (the input's final eos).
    pub fn start_token(&self) -> TokenId {
        *self.tokens.last().expect("non-empty memory")
    }
}

fn project(x: &Mat, w: &[f64], cols: usize) -> Mat {
    let wm = Mat::from_vec(x.cols, cols, w.to_vec());
    x.matmul(&wm)
}

fn norm_rows(model: &Model, x: &Mat, n: Norm) -> Mat {
    let (g, b) = (model.p(n.g), model.p(n.b));
    let mut out = Mat::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        out.row_mut(i).copy_from_slice(&layer_norm_row(x.row(i), g, b).0);
    }
    out
}

fn norm_vec(model: &Model, x: &[f64], n: Norm) -> Vec<f64> {
    layer_norm_row(x, model.p(n.g), model.p(n.b)).0
}

fn ffn_vec(model: &Model, x: &[f64], f: Ffn) -> Vec<f64> {
    let cfg = model.config();
    let mut h = vec_mat(x, model.p(f.w1), cfg.ffn_dim);
    for (v, b) in h.iter_mut().zip(model.p(f.b1)) {
        *v = (*v + b).max(0.0);
    }
    let mut o = vec_mat(&h, model.p(f.w2), cfg.d_model);
    o.iter_mut().zip(model.p(f.b2)).for_each(|(v, b)| *v += b);
    o
}

/// Attention of a single query over keys/values given as rows. Returns the
/// projected output and, per head, the attention weights.
fn attend(model: &Model, q: &[f64], keys: &[&[f64]], values: &[&[f64]], a: Attn) -> (Vec<f64>, Vec<Vec<f64>>) {
    let cfg = model.config();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut cat = vec![0.0; cfg.d_model];
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let r = h * dh..(h + 1) * dh;
        let mut w: Vec<f64> = keys.iter().map(|k| dot(&q[r.clone()], &k[r.clone()]) * scale).collect();
        let n = w.len();
        softmax_prefix(&mut w, n);
        for (wj, v) in w.iter().zip(values) {
            for (c, x) in cat[r.clone()].iter_mut().zip(&v[r.clone()]) {
                *c += wj * x;
            }
        }
        weights.push(w);
    }
    (vec_mat(&cat, model.p(a.o), cfg.d_model), weights)
}

/// Run the encoder over an augmented input.
pub fn encode_input(model: &Model, aug: &AugmentedInput) -> Result<EncoderMemory> {
    check_input(model, aug)?;
    let cfg = model.config();
    let l = model.layout;
    let d = cfg.d_model;
    let n = aug.token_ids.len();
    let (tok, pos, seg) = (model.p(l.tok_emb), model.p(l.enc_pos), model.p(l.seg_emb));
    let mut x = Mat::zeros(n, d);
    for i in 0..n {
        let t = aug.token_ids[i] as usize;
        let p = aug.position_ids[i];
        let row = x.row_mut(i);
        for c in 0..d {
            row[c] = tok[t * d + c] + pos[p * d + c];
        }
        if cfg.use_segments {
            let s = aug.segment_ids[i];
            for c in 0..d {
                row[c] += seg[s * d + c];
            }
        }
    }

    let h = norm_rows(model, &x, l.enc_ln1);
    let q = project(&h, model.p(l.enc_attn.q), d);
    let k = project(&h, model.p(l.enc_attn.k), d);
    let v = project(&h, model.p(l.enc_attn.v), d);
    let keys: Vec<&[f64]> = (0..n).map(|j| k.row(j)).collect();
    let vals: Vec<&[f64]> = (0..n).map(|j| v.row(j)).collect();
    for i in 0..n {
        let (a, _) = attend(model, q.row(i), &keys, &vals, l.enc_attn);
        x.row_mut(i).iter_mut().zip(&a).for_each(|(xv, av)| *xv += av);
    }
    let h = norm_rows(model, &x, l.enc_ln2);
    for i in 0..n {
        let f = ffn_vec(model, h.row(i), l.enc_ffn);
        x.row_mut(i).iter_mut().zip(&f).for_each(|(xv, fv)| *xv += fv);
    }
    let memory = norm_rows(model, &x, l.enc_lnf);
    let cross_k = project(&memory, model.p(l.dec_cross.k), d);
    let cross_v = project(&memory, model.p(l.dec_cross.v), d);
    let ptr_k = project(&memory, model.p(l.ptr_k), d);
    Ok(EncoderMemory {
        memory,
        cross_k,
        cross_v,
        ptr_k,
        tokens: aug.token_ids.clone(),
        copy_mask: copy_mask(model, aug),
    })
}

type KvCache = HashMap<(usize, TokenId), (Vec<f64>, Vec<f64>)>;

/// Self-attention key and value of decoder position `pos` holding `token`.
/// With a single decoder block these depend on nothing else.
fn self_kv(model: &Model, pos: usize, token: TokenId) -> (Vec<f64>, Vec<f64>) {
    let l = model.layout;
    let d = model.config().d_model;
    let e = embed_dec(model, pos, token);
    let h = norm_vec(model, &e, l.dec_ln1);
    (vec_mat(&h, model.p(l.dec_self.k), d), vec_mat(&h, model.p(l.dec_self.v), d))
}

fn embed_dec(model: &Model, pos: usize, token: TokenId) -> Vec<f64> {
    let l = model.layout;
    let d = model.config().d_model;
    let t = token as usize;
    let tok = &model.p(l.tok_emb)[t * d..(t + 1) * d];
    let pe = &model.p(l.dec_pos)[pos * d..(pos + 1) * d];
    tok.iter().zip(pe).map(|(a, b)| a + b).collect()
}

fn step(
    model: &Model,
    mem: &EncoderMemory,
    prefix: &[TokenId],
    gate: Option<f64>,
    cache: &mut KvCache,
) -> Result<TokenDistribution> {
    let cfg = model.config();
    let l = model.layout;
    let d = cfg.d_model;
    let v_size = cfg.vocab_size;
    let t = prefix.len();
    if t >= cfg.max_target_positions {
        return Err(Error::data(format!("decoder position {t} outside table of {}", cfg.max_target_positions)));
    }
    if let Some(&bad) = prefix.iter().find(|&&x| x as usize >= v_size) {
        return Err(Error::data(format!("prefix token {bad} outside vocabulary")));
    }
    let inputs: Vec<TokenId> = std::iter::once(mem.start_token()).chain(prefix.iter().copied()).collect();

    for (p, &tok) in inputs.iter().enumerate() {
        cache.entry((p, tok)).or_insert_with(|| self_kv(model, p, tok));
    }
    let pairs: Vec<&(Vec<f64>, Vec<f64>)> = inputs.iter().enumerate().map(|(p, &tok)| &cache[&(p, tok)]).collect();

    let mut z = embed_dec(model, t, inputs[t]);
    let h = norm_vec(model, &z, l.dec_ln1);
    let q = vec_mat(&h, model.p(l.dec_self.q), d);
    let keys: Vec<&[f64]> = pairs.iter().map(|p| p.0.as_slice()).collect();
    let vals: Vec<&[f64]> = pairs.iter().map(|p| p.1.as_slice()).collect();
    let (a, _) = attend(model, &q, &keys, &vals, l.dec_self);
    z.iter_mut().zip(&a).for_each(|(x, y)| *x += y);

    let h = norm_vec(model, &z, l.dec_ln2);
    let q = vec_mat(&h, model.p(l.dec_cross.q), d);
    let n = mem.len();
    let keys: Vec<&[f64]> = (0..n).map(|j| mem.cross_k.row(j)).collect();
    let vals: Vec<&[f64]> = (0..n).map(|j| mem.cross_v.row(j)).collect();
    let (c, _) = attend(model, &q, &keys, &vals, l.dec_cross);
    z.iter_mut().zip(&c).for_each(|(x, y)| *x += y);

    let h = norm_vec(model, &z, l.dec_ln3);
    let f = ffn_vec(model, &h, l.dec_ffn);
    z.iter_mut().zip(&f).for_each(|(x, y)| *x += y);
    let hf = norm_vec(model, &z, l.dec_lnf);

    let emb = model.p(l.tok_emb);
    let bias = model.p(l.out_bias);
    let logits: Vec<f64> = (0..v_size).map(|v| dot(&hf, &emb[v * d..(v + 1) * d]) + bias[v]).collect();

    if !cfg.use_pointer && gate.is_none() {
        let lse = log_sum_exp(&logits);
        return Ok(TokenDistribution { log_probs: logits.iter().map(|x| x - lse).collect() });
    }
    let lse = log_sum_exp(&logits);
    let q = vec_mat(&hf, model.p(l.ptr_q), d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut attn: Vec<f64> = (0..n).map(|j| dot(&q, mem.ptr_k.row(j)) * scale).collect();
    softmax_prefix(&mut attn, n);
    if mem.copy_mask.iter().any(|m| !m) {
        let kept: f64 = attn.iter().zip(&mem.copy_mask).filter(|(_, &m)| m).map(|(a, _)| a).sum();
        for (a, &m) in attn.iter_mut().zip(&mem.copy_mask) {
            *a = if m { *a / kept } else { 0.0 };
        }
    }
    let g = match gate {
        Some(g) => g,
        None => {
            let mut ctx = vec![0.0; d];
            for (j, a) in attn.iter().enumerate() {
                ctx.iter_mut().zip(mem.memory.row(j)).for_each(|(c, m)| *c += a * m);
            }
            sigmoid(dot(&hf, model.p(l.gate_w)) + dot(&ctx, model.p(l.gate_ctx)) + model.p(l.gate_b)[0])
        }
    };
    if g >= 1.0 {
        return Ok(TokenDistribution { log_probs: logits.iter().map(|x| x - lse).collect() });
    }
    let mut probs: Vec<f64> = logits.iter().map(|x| g * (x - lse).exp()).collect();
    for (&tok, a) in mem.tokens.iter().zip(&attn) {
        probs[tok as usize] += (1.0 - g) * a;
    }
    Ok(TokenDistribution::from_probs(&probs))
}

/// Next-token distribution after `prefix`.
pub fn forward_step(model: &Model, memory: &EncoderMemory, prefix: &[TokenId]) -> Result<TokenDistribution> {
    step(model, memory, prefix, None, &mut HashMap::new())
}

/// As [`forward_step`], with the copy gate optionally fixed to `gate`.
pub fn forward_step_with(
    model: &Model,
    memory: &EncoderMemory,
    prefix: &[TokenId],
    gate: Option<f64>,
) -> Result<TokenDistribution> {
    step(model, memory, prefix, gate, &mut HashMap::new())
}

/// A model bound to one encoded input, caching decoder self-attention
/// keys and values across calls.
pub struct ModelScorer<'m> {
    model: &'m Model,
    memory: EncoderMemory,
    cache: KvCache,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, aug: &AugmentedInput) -> Result<Self> {
        Ok(Self { model, memory: encode_input(model, aug)?, cache: HashMap::new() })
    }

    pub fn memory(&self) -> &EncoderMemory {
        &self.memory
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub(crate) fn distribution(&mut self, prefix: &[TokenId]) -> Result<TokenDistribution> {
        step(self.model, &self.memory, prefix, None, &mut self.cache)
    }
}

impl Scorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn eos(&self) -> TokenId {
        self.memory.start_token()
    }

    fn max_prefix_len(&self) -> usize {
        self.model.config().max_target_positions - 1
    }

    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.distribution(prefix)?.log_probs)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::graph::example_nll;
    use crate::model::testutil::{random_example, random_input, tiny_config};
    use crate::model::{init_model, ModelConfig};

    const V: usize = 12;

    #[test]
    fn distributions_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..1000u64 {
            let cfg = tiny_config(V);
            let model = init_model(&cfg, case).unwrap();
            let aug = random_input(&mut rng, V, (case % 4) as usize);
            let mem = encode_input(&model, &aug).unwrap();
            let plen = rng.random_range(0..6);
            let prefix: Vec<TokenId> = (0..plen).map(|_| rng.random_range(0..V as TokenId)).collect();
            let d = forward_step(&model, &mem, &prefix).unwrap();
            assert!(d.log_probs.iter().all(|l| l.is_finite()));
            assert!((d.total_mass() - 1.0).abs() < 1e-6, "mass {}", d.total_mass());
        }
    }

    #[test]
    fn inference_matches_the_training_graph() {
        for seed in 0..20u64 {
            let cfg = ModelConfig { copy_mask_separators: seed % 2 == 0, ..tiny_config(V) };
            let model = init_model(&cfg, seed).unwrap();
            let ex = random_example(seed + 100, V, (seed % 3) as usize);
            let (tape_nll, _) = example_nll(&model, &ex).unwrap();
            let mem = encode_input(&model, &ex.input).unwrap();
            let mut nll = 0.0;
            let mut targets = ex.target.clone();
            targets.push(mem.start_token());
            for (t, &y) in targets.iter().enumerate() {
                let d = forward_step(&model, &mem, &ex.target[..t]).unwrap();
                nll -= d.log_probs[y as usize];
            }
            assert!((nll - tape_nll).abs() < 1e-9, "{nll} vs {tape_nll}");
        }
    }

    #[test]
    fn cached_scorer_matches_forward_step() {
        let model = init_model(&tiny_config(V), 3).unwrap();
        let ex = random_example(9, V, 2);
        let mut scorer = ModelScorer::new(&model, &ex.input).unwrap();
        for t in 0..=ex.target.len() {
            let a = scorer.log_probs(&ex.target[..t]).unwrap();
            let b = forward_step(&model, scorer.memory(), &ex.target[..t]).unwrap().log_probs;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gate_one_is_the_vocabulary_softmax() {
        let cfg = tiny_config(V);
        let model = init_model(&cfg, 4).unwrap();
        let plain = Model::from_parts(ModelConfig { use_pointer: false, ..cfg }, model.params.values.clone()).unwrap();
        let ex = random_example(5, V, 2);
        let mem = encode_input(&model, &ex.input).unwrap();
        let mixed = forward_step_with(&model, &mem, &ex.target[..2.min(ex.target.len())], Some(1.0)).unwrap();
        let soft = forward_step(&plain, &mem, &ex.target[..2.min(ex.target.len())]).unwrap();
        assert_eq!(mixed, soft);
    }

    #[test]
    fn gate_zero_only_copies_input_tokens() {
        let model = init_model(&tiny_config(V), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..4 {
            let aug = random_input(&mut rng, V, k);
            let mem = encode_input(&model, &aug).unwrap();
            let d = forward_step_with(&model, &mem, &[], Some(0.0)).unwrap();
            for (tok, l) in d.log_probs.iter().enumerate() {
                if !aug.token_ids.contains(&(tok as TokenId)) {
                    assert_eq!(l.exp(), 0.0);
                }
            }
            assert!((d.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_segment_table_ignores_segment_ids() {
        let mut model = init_model(&tiny_config(V), 8).unwrap();
        let r = model.params.specs[model.layout.seg_emb].range();
        model.values_mut()[r].fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let aug = random_input(&mut rng, V, 3);
        let mut other = aug.clone();
        other.segment_ids.iter_mut().for_each(|s| *s = 3 - (*s).min(3));
        assert_eq!(encode_input(&model, &aug).unwrap(), encode_input(&model, &other).unwrap());
    }

    #[test]
    fn memory_has_one_row_per_input_token() {
        let model = init_model(&tiny_config(V), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..4 {
            let aug = random_input(&mut rng, V, k);
            let mem = encode_input(&model, &aug).unwrap();
            assert_eq!((mem.states().rows, mem.states().cols), (aug.len(), 8));
        }
    }

    #[test]
    fn swapping_constraints_only_acts_through_positions_and_segments() {
        // Without position and segment embeddings the encoder is permutation
        // equivariant, so swapping two constraint tokens permutes memory rows.
        let mut model = init_model(&tiny_config(V), 10).unwrap();
        for id in [model.layout.enc_pos, model.layout.seg_emb] {
            let r = model.params.specs[id].range();
            model.values_mut()[r].fill(0.0);
        }
        let aug = AugmentedInput {
            token_ids: vec![4, 5, 2, 7, 2, 9, 1],
            position_ids: vec![0, 1, 8, 9, 10, 11, 12],
            segment_ids: vec![0, 0, 1, 1, 2, 2, 0],
            source_len: 2,
        };
        let swapped = AugmentedInput { token_ids: vec![4, 5, 2, 9, 2, 7, 1], ..aug.clone() };
        let a = encode_input(&model, &aug).unwrap();
        let b = encode_input(&model, &swapped).unwrap();
        let perm = [0, 1, 2, 5, 4, 3, 6];
        for (i, &j) in perm.iter().enumerate() {
            for (x, y) in a.states().row(i).iter().zip(b.states().row(j)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let full = init_model(&tiny_config(V), 10).unwrap();
        assert_ne!(
            encode_input(&full, &aug).unwrap().states().row(3),
            encode_input(&full, &swapped).unwrap().states().row(5)
        );
    }

    #[test]
    fn out_of_table_positions_are_data_errors() {
        let model = init_model(&tiny_config(V), 11).unwrap();
        let aug =
            AugmentedInput { token_ids: vec![4, 1], position_ids: vec![0, 20], segment_ids: vec![0, 0], source_len: 1 };
        assert!(matches!(encode_input(&model, &aug), Err(Error::Data(_))));
        let ok = AugmentedInput { position_ids: vec![0, 19], ..aug };
        let mem = encode_input(&model, &ok).unwrap();
        let long = vec![4; 10];
        assert!(matches!(forward_step(&model, &mem, &long), Err(Error::Data(_))));
    }
}
