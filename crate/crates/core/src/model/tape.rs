//! Reverse-mode differentiation over matrix operations.
//!
//! Nodes are appended in evaluation order; [`Tape::backward`] walks them in
//! reverse and accumulates parameter gradients into a flat buffer laid out
//! like [`Params::values`](super::Params).

use super::tensor::{dot, layer_norm_row, Mat};
use super::Params;

pub(crate) type NodeId = usize;

enum Op {
    Const,
    Param(usize),
    Gather { param: usize, rows: Vec<usize> },
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LayerNorm { x: NodeId, g: NodeId, b: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax(NodeId),
    Cols { x: NodeId, start: usize },
    Concat(Vec<NodeId>),
    RowRenorm { x: NodeId, mask: Vec<bool>, sums: Vec<f64> },
    Sigmoid(NodeId),
    GateMix { g: NodeId, pv: NodeId, pc: NodeId },
    SmoothedNll { probs: NodeId, targets: Vec<usize>, eps: f64 },
    Dropout { x: NodeId, mask: Vec<f64> },
}

struct Node {
    value: Mat,
    op: Op,
}

pub(crate) struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.specs.len()] }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn constant(&mut self, m: Mat) -> NodeId {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, id: usize) -> NodeId {
        if let Some(n) = self.param_nodes[id] {
            return n;
        }
        let spec = &self.params.specs[id];
        let m = Mat::from_vec(spec.rows, spec.cols, self.params.get(id).to_vec());
        let n = self.push(m, Op::Param(id));
        self.param_nodes[id] = Some(n);
        n
    }

    pub fn gather(&mut self, param: usize, rows: &[usize]) -> NodeId {
        let spec = &self.params.specs[param];
        let table = self.params.get(param);
        let mut m = Mat::zeros(rows.len(), spec.cols);
        for (i, &r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&table[r * spec.cols..(r + 1) * spec.cols]);
        }
        self.push(m, Op::Gather { param, rows: rows.to_vec() })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        let bias = &self.value(b).data;
        for i in 0..v.rows {
            for (a, c) in v.row_mut(i).iter_mut().zip(bias) {
                *a += c;
            }
        }
        self.push(v, Op::AddBias(x, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a *= s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, g: NodeId, b: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let mut out = Mat::zeros(rows, cols);
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        let (gv, bv) = (&self.value(g).data, &self.value(b).data);
        for i in 0..rows {
            let (y, h, s) = layer_norm_row(xv.row(i), gv, bv);
            out.row_mut(i).copy_from_slice(&y);
            xhat.extend(h);
            inv_std.push(s);
        }
        self.push(out, Op::LayerNorm { x, g, b, xhat, inv_std })
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns `0..=i`.
    pub fn softmax(&mut self, x: NodeId, causal: bool) -> NodeId {
        let mut v = self.value(x).clone();
        let cols = v.cols;
        for i in 0..v.rows {
            let len = if causal { (i + 1).min(cols) } else { cols };
            super::tensor::softmax_prefix(v.row_mut(i), len);
        }
        self.push(v, Op::Softmax(x))
    }

    pub fn cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        let xv = self.value(x);
        let mut v = Mat::zeros(xv.rows, width);
        for i in 0..xv.rows {
            v.row_mut(i).copy_from_slice(&xv.row(i)[start..start + width]);
        }
        self.push(v, Op::Cols { x, start })
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            for &p in &parts {
                let pv = self.value(p);
                v.row_mut(i)[at..at + pv.cols].copy_from_slice(pv.row(i));
                at += pv.cols;
            }
        }
        self.push(v, Op::Concat(parts))
    }

    /// Zero the masked-out columns (`mask[j] == false`) and renormalise rows.
    pub fn row_renorm(&mut self, x: NodeId, mask: Vec<bool>) -> NodeId {
        let mut v = self.value(x).clone();
        let mut sums = Vec::with_capacity(v.rows);
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let mut s = 0.0;
            for (a, &keep) in row.iter_mut().zip(&mask) {
                if !keep {
                    *a = 0.0;
                }
                s += *a;
            }
            row.iter_mut().for_each(|a| *a /= s);
            sums.push(s);
        }
        self.push(v, Op::RowRenorm { x, mask, sums })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = super::tensor::sigmoid(*a));
        self.push(v, Op::Sigmoid(x))
    }

    /// `g ⊙ pv + (1 - g) ⊙ pc` with `g` a column broadcast across rows.
    pub fn gate_mix(&mut self, g: NodeId, pv: NodeId, pc: NodeId) -> NodeId {
        let (gv, pvv, pcv) = (self.value(g), self.value(pv), self.value(pc));
        let mut v = Mat::zeros(pvv.rows, pvv.cols);
        for i in 0..pvv.rows {
            let gi = gv.data[i];
            for ((o, a), b) in v.row_mut(i).iter_mut().zip(pvv.row(i)).zip(pcv.row(i)) {
                *o = gi * a + (1.0 - gi) * b;
            }
        }
        self.push(v, Op::GateMix { g, pv, pc })
    }

    /// Summed label-smoothed negative log-likelihood of `targets` under the
    /// row distributions `probs`.
    pub fn smoothed_nll(&mut self, probs: NodeId, targets: &[usize], eps: f64) -> NodeId {
        let p = self.value(probs);
        let vsize = p.cols as f64;
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = p.row(i);
            loss -= (1.0 - eps) * row[t].ln();
            if eps > 0.0 {
                loss -= eps / vsize * row.iter().map(|q| q.ln()).sum::<f64>();
            }
        }
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::SmoothedNll { probs, targets: targets.to_vec(), eps })
    }

    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let mut v = self.value(x).clone();
        v.data.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
        self.push(v, Op::Dropout { x, mask })
    }

    fn is_const(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].op, Op::Const)
    }

    /// Back-propagate from scalar node `root`, adding parameter gradients
    /// into `pgrad`.
    pub fn backward_into(&self, root: NodeId, pgrad: &mut [f64]) {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Mat::from_vec(1, 1, vec![1.0]));

        fn acc(grads: &mut [Option<Mat>], id: NodeId, rows: usize, cols: usize) -> &mut Mat {
            grads[id].get_or_insert_with(|| Mat::zeros(rows, cols))
        }

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let shape = |n: NodeId| (self.nodes[n].value.rows, self.nodes[n].value.cols);
            match &node.op {
                Op::Const => {}
                Op::Param(p) => {
                    let r = self.params.specs[*p].range();
                    for (a, b) in pgrad[r].iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
                Op::Gather { param, rows } => {
                    let spec = &self.params.specs[*param];
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut pgrad[spec.offset + r * spec.cols..spec.offset + (r + 1) * spec.cols];
                        for (a, b) in dst.iter_mut().zip(g.row(i)) {
                            *a += b;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (r, c) = shape(*a);
                    acc(&mut grads, *a, r, c).add_assign(&g);
                    acc(&mut grads, *b, r, c).add_assign(&g);
                }
                Op::AddBias(x, b) => {
                    let (r, c) = shape(*x);
                    acc(&mut grads, *x, r, c).add_assign(&g);
                    let gb = acc(&mut grads, *b, 1, c);
                    for i in 0..g.rows {
                        for (a, v) in gb.data.iter_mut().zip(g.row(i)) {
                            *a += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if !self.is_const(*a) {
                        let ga = g.matmul_t(&self.nodes[*b].value);
                        acc(&mut grads, *a, ga.rows, ga.cols).add_assign(&ga);
                    }
                    if !self.is_const(*b) {
                        let gb = self.nodes[*a].value.t_matmul(&g);
                        acc(&mut grads, *b, gb.rows, gb.cols).add_assign(&gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(&self.nodes[*b].value);
                    let gb = g.t_matmul(&self.nodes[*a].value);
                    acc(&mut grads, *a, ga.rows, ga.cols).add_assign(&ga);
                    acc(&mut grads, *b, gb.rows, gb.cols).add_assign(&gb);
                }
                Op::Scale(x, s) => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for (a, v) in gx.data.iter_mut().zip(&g.data) {
                        *a += s * v;
                    }
                }
                Op::Relu(x) => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for ((a, v), y) in gx.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        if *y > 0.0 {
                            *a += v;
                        }
                    }
                }
                Op::LayerNorm { x, g: gain, b, xhat, inv_std } => {
                    let (rows, cols) = shape(*x);
                    let gain_v = &self.nodes[*gain].value.data;
                    let mut ggain = vec![0.0; cols];
                    let mut gbias = vec![0.0; cols];
                    let mut gx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let gy = g.row(i);
                        let h = &xhat[i * cols..(i + 1) * cols];
                        let dh: Vec<f64> = gy.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        for j in 0..cols {
                            ggain[j] += gy[j] * h[j];
                            gbias[j] += gy[j];
                        }
                        let n = cols as f64;
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dot(&dh, h) / n;
                        for (j, out) in gx.row_mut(i).iter_mut().enumerate() {
                            *out = inv_std[i] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                    acc(&mut grads, *x, rows, cols).add_assign(&gx);
                    acc(&mut grads, *gain, 1, cols).add_assign(&Mat::from_vec(1, cols, ggain));
                    acc(&mut grads, *b, 1, cols).add_assign(&Mat::from_vec(1, cols, gbias));
                }
                Op::Softmax(x) => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for i in 0..r {
                        let y = node.value.row(i);
                        let gy = g.row(i);
                        let s = dot(y, gy);
                        for (j, a) in gx.row_mut(i).iter_mut().enumerate() {
                            *a += y[j] * (gy[j] - s);
                        }
                    }
                }
                Op::Cols { x, start } => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for i in 0..r {
                        for (a, v) in gx.row_mut(i)[*start..*start + g.cols].iter_mut().zip(g.row(i)) {
                            *a += v;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let (r, c) = shape(p);
                        let gp = acc(&mut grads, p, r, c);
                        for i in 0..r {
                            for (a, v) in gp.row_mut(i).iter_mut().zip(&g.row(i)[at..at + c]) {
                                *a += v;
                            }
                        }
                        at += c;
                    }
                }
                Op::RowRenorm { x, mask, sums } => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for i in 0..r {
                        let y = node.value.row(i);
                        let gy = g.row(i);
                        let s = dot(y, gy);
                        for (j, a) in gx.row_mut(i).iter_mut().enumerate() {
                            if mask[j] {
                                *a += (gy[j] - s) / sums[i];
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for ((a, v), y) in gx.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        *a += v * y * (1.0 - y);
                    }
                }
                Op::GateMix { g: gate, pv, pc } => {
                    let gate_v = &self.nodes[*gate].value;
                    let pvv = &self.nodes[*pv].value;
                    let pcv = &self.nodes[*pc].value;
                    let (r, c) = (pvv.rows, pvv.cols);
                    let mut ggate = Mat::zeros(r, 1);
                    let mut gpv = Mat::zeros(r, c);
                    let mut gpc = Mat::zeros(r, c);
                    for i in 0..r {
                        let gi = gate_v.data[i];
                        let gy = g.row(i);
                        let mut s = 0.0;
                        for j in 0..c {
                            s += gy[j] * (pvv.row(i)[j] - pcv.row(i)[j]);
                            gpv.row_mut(i)[j] = gi * gy[j];
                            gpc.row_mut(i)[j] = (1.0 - gi) * gy[j];
                        }
                        ggate.data[i] = s;
                    }
                    acc(&mut grads, *gate, r, 1).add_assign(&ggate);
                    acc(&mut grads, *pv, r, c).add_assign(&gpv);
                    acc(&mut grads, *pc, r, c).add_assign(&gpc);
                }
                Op::SmoothedNll { probs, targets, eps } => {
                    let upstream = g.data[0];
                    let p = &self.nodes[*probs].value;
                    let (r, c) = (p.rows, p.cols);
                    let gp = acc(&mut grads, *probs, r, c);
                    let vsize = c as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        let row = p.row(i);
                        let out = gp.row_mut(i);
                        if *eps > 0.0 {
                            for (a, q) in out.iter_mut().zip(row) {
                                *a -= upstream * eps / (vsize * q);
                            }
                        }
                        out[t] -= upstream * (1.0 - eps) / row[t];
                    }
                }
                Op::Dropout { x, mask } => {
                    let (r, c) = shape(*x);
                    let gx = acc(&mut grads, *x, r, c);
                    for ((a, v), m) in gx.data.iter_mut().zip(&g.data).zip(mask) {
                        *a += v * m;
                    }
                }
            }
        }
    }
}
