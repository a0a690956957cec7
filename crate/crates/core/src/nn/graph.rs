//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and accumulates gradients for every node that
//! depends on a trainable leaf. Constants (and parameters registered as
//! non-trainable) never receive gradients, which is how stop-gradient is
//! expressed: copy the value into a constant.

use std::sync::Arc;

use super::matrix::{gemm, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddConst(Var),
    MulConst(Var, Arc<Matrix>),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, rstd: Vec<f64> },
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    ClampMin(Var, f64),
    SumAll(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Attention(Box<AttentionCache>),
}

#[derive(Debug)]
struct AttentionCache {
    qkv: Var,
    seq_len: usize,
    heads: usize,
    allowed: Vec<bool>,
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Arc<Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    by_node: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&mut self, value: Arc<Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers parameter `id`. Only trainable parameters receive gradients.
    pub fn param(&mut self, id: usize, value: &Arc<Matrix>, trainable: bool) -> Var {
        let v = self.push_arc(Arc::clone(value), Op::Leaf, trainable);
        if trainable {
            self.params.push((id, v));
        }
        v
    }

    /// `(parameter id, gradient)` for every trainable parameter reached by the loss.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(usize, Matrix)> {
        let mut out = Vec::with_capacity(self.params.len());
        for &(id, v) in &self.params {
            let g = grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(self.value(v).rows(), self.value(v).cols()));
            out.push((id, g));
        }
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        gemm(1.0, va, false, vb, false, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// Adds a `1 x cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows(), 1);
        assert_eq!(va.cols(), vr.cols());
        let mut out = va.clone();
        let r = vr.row(0);
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    /// `a + c` for a constant `c` of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), c.shape());
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        let ng = self.ng(a);
        self.push(out, Op::AddConst(a), ng)
    }

    /// `a * c` elementwise for a constant `c` of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Arc<Matrix>) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), c.shape());
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        let ng = self.ng(a);
        self.push(out, Op::MulConst(a, c), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Row-wise layer normalization with a learned `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        let (g, b) = (self.value(gain).row(0), self.value(bias).row(0));
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng)
    }

    /// Softmax over consecutive groups of `group` columns in every row.
    pub fn softmax(&mut self, a: Var, group: usize) -> Var {
        let out = softmax_groups(self.value(a), group);
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a, group), ng)
    }

    /// Log-softmax over consecutive groups of `group` columns in every row.
    pub fn log_softmax(&mut self, a: Var, group: usize) -> Var {
        let out = log_softmax_groups(self.value(a), group);
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a, group), ng)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor));
        let ng = self.ng(a);
        self.push(out, Op::ClampMin(a, floor), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols());
        let mut out = Matrix::zeros(va.rows(), end - start);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let v = self.value(*p);
                assert_eq!(v.rows(), rows);
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
                off += v.cols();
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.cols(), cols);
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Same row-major data viewed as `rows x cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols, "reshape must keep the element count");
        let out = Matrix::from_vec(rows, cols, va.data().to_vec());
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(index.len(), va.cols());
        for (i, &src) in index.iter().enumerate() {
            out.row_mut(i).copy_from_slice(va.row(src));
        }
        let ng = self.ng(a);
        self.push(out, Op::GatherRows(a, index), ng)
    }

    /// Multi-head causal self-attention.
    ///
    /// `qkv` holds `[queries | keys | values]` column blocks for consecutive
    /// sequences of `seq_len` rows. Position `i` attends to positions `j <= i`
    /// of its own sequence whose `key_valid[j]` is set (and always to itself).
    pub fn causal_attention(&mut self, qkv: Var, seq_len: usize, heads: usize, key_valid: &[bool]) -> Var {
        let v = self.value(qkv);
        let (rows, cols3) = v.shape();
        assert_eq!(cols3 % 3, 0);
        let dim = cols3 / 3;
        assert_eq!(dim % heads, 0, "model width must divide into heads");
        assert_eq!(rows % seq_len, 0);
        assert_eq!(key_valid.len(), rows);
        let dh = dim / heads;
        let seqs = rows / seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let ll = seq_len * seq_len;
        let mut allowed = vec![false; seqs * ll];
        for s in 0..seqs {
            for i in 0..seq_len {
                for j in 0..=i {
                    allowed[s * ll + i * seq_len + j] = j == i || key_valid[s * seq_len + j];
                }
            }
        }
        let mut probs = vec![0.0; seqs * heads * ll];
        let mut out = Matrix::zeros(rows, dim);
        let data = v.data();
        let mut scores = vec![0.0; seq_len];
        for s in 0..seqs {
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh, dim + h * dh, 2 * dim + h * dh);
                for i in 0..seq_len {
                    let qi = &data[(s * seq_len + i) * cols3 + qo..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        if allowed[s * ll + i * seq_len + j] {
                            let kj = &data[(s * seq_len + j) * cols3 + ko..][..dh];
                            let d = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                            scores[j] = d;
                            max = max.max(d);
                        }
                    }
                    let p = &mut probs[(s * heads + h) * ll + i * seq_len..][..seq_len];
                    let mut z = 0.0;
                    for j in 0..=i {
                        if allowed[s * ll + i * seq_len + j] {
                            let e = (scores[j] - max).exp();
                            p[j] = e;
                            z += e;
                        }
                    }
                    let orow = &mut out.row_mut(s * seq_len + i)[h * dh..(h + 1) * dh];
                    for j in 0..=i {
                        if p[j] != 0.0 {
                            p[j] /= z;
                            let vj = &data[(s * seq_len + j) * cols3 + vo..][..dh];
                            for (o, x) in orow.iter_mut().zip(vj) {
                                *o += p[j] * x;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.ng(qkv);
        let cache = AttentionCache { qkv, seq_len, heads, allowed, probs };
        self.push(out, Op::Attention(Box::new(cache)), ng)
    }

    /// Gradients of the scalar `loss` with respect to every node that needs them.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.ng(loss) {
            return Grads { by_node: grads };
        }
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { by_node: grads }
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    let vb = self.value(*b);
                    let mut ga = Matrix::zeros(g.rows(), vb.rows());
                    gemm(1.0, g, false, vb, true, 0.0, &mut ga);
                    self.acc(grads, *a, ga);
                }
                if self.ng(*b) {
                    let va = self.value(*a);
                    let mut gb = Matrix::zeros(va.cols(), g.cols());
                    gemm(1.0, va, true, g, false, 0.0, &mut gb);
                    self.acc(grads, *b, gb);
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*row) {
                    self.acc(grads, *row, col_sums(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, hadamard(g, self.value(*b)));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, hadamard(g, self.value(*a)));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) | Op::AddConst(a) => self.acc(grads, *a, g.clone()),
            Op::MulConst(a, c) => self.acc(grads, *a, hadamard(g, c)),
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { gi * slope })
                    .collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Sigmoid(a) => {
                let data = g.data().iter().zip(out.data()).map(|(gi, y)| gi * y * (1.0 - y)).collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Tanh(a) => {
                let data = g.data().iter().zip(out.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (rows, cols) = g.shape();
                if self.ng(*gain) {
                    self.acc(grads, *gain, col_sums(&hadamard(g, xhat)));
                }
                if self.ng(*bias) {
                    self.acc(grads, *bias, col_sums(g));
                }
                if self.ng(*x) {
                    let gv = self.value(*gain).row(0);
                    let mut gx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            m1 += d;
                            m2 += d * hr[c];
                        }
                        m1 /= n;
                        m2 /= n;
                        let o = gx.row_mut(r);
                        for c in 0..cols {
                            o[c] = rstd[r] * (gr[c] * gv[c] - m1 - hr[c] * m2);
                        }
                    }
                    self.acc(grads, *x, gx);
                }
            }
            Op::Softmax(a, group) => {
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    for (start, (gs, ys)) in g.row(r).chunks(*group).zip(out.row(r).chunks(*group)).enumerate() {
                        let dot: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        let o = &mut ga.row_mut(r)[start * group..(start + 1) * group];
                        for c in 0..*group {
                            o[c] = ys[c] * (gs[c] - dot);
                        }
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LogSoftmax(a, group) => {
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    for (start, (gs, ys)) in g.row(r).chunks(*group).zip(out.row(r).chunks(*group)).enumerate() {
                        let total: f64 = gs.iter().sum();
                        let o = &mut ga.row_mut(r)[start * group..(start + 1) * group];
                        for c in 0..*group {
                            o[c] = gs[c] - ys[c].exp() * total;
                        }
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::ClampMin(a, floor) => {
                let va = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gi, x)| if *x > *floor { *gi } else { 0.0 })
                    .collect();
                self.acc(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::SumAll(a) => {
                let va = self.value(*a);
                self.acc(grads, *a, Matrix::filled(va.rows(), va.cols(), g.data()[0]));
            }
            Op::SliceCols(a, start) => {
                if self.ng(*a) {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    self.acc(grads, *a, ga);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.ng(*p) {
                        let mut gp = Matrix::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        self.acc(grads, *p, gp);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if self.ng(*p) {
                        let data = g.data()[off * g.cols()..(off + r) * g.cols()].to_vec();
                        self.acc(grads, *p, Matrix::from_vec(r, g.cols(), data));
                    }
                    off += r;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                self.acc(grads, *a, Matrix::from_vec(r, c, g.data().to_vec()));
            }
            Op::GatherRows(a, index) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for (i, &src) in index.iter().enumerate() {
                    for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Attention(cache) => {
                let gq = self.attention_backward(cache, g);
                self.acc(grads, cache.qkv, gq);
            }
        }
    }

    fn attention_backward(&self, cache: &AttentionCache, g: &Matrix) -> Matrix {
        let AttentionCache { qkv, seq_len, heads, allowed, probs } = cache;
        let (seq_len, heads) = (*seq_len, *heads);
        let v = self.value(*qkv);
        let (rows, cols3) = v.shape();
        let dim = cols3 / 3;
        let dh = dim / heads;
        let seqs = rows / seq_len;
        let ll = seq_len * seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let data = v.data();
        let mut gq = Matrix::zeros(rows, cols3);
        let mut dp = vec![0.0; seq_len];
        for s in 0..seqs {
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh, dim + h * dh, 2 * dim + h * dh);
                for i in 0..seq_len {
                    let p = &probs[(s * heads + h) * ll + i * seq_len..][..seq_len];
                    let gi = &g.row(s * seq_len + i)[h * dh..(h + 1) * dh];
                    let mut weighted = 0.0;
                    for j in 0..=i {
                        if allowed[s * ll + i * seq_len + j] {
                            let vj = &data[(s * seq_len + j) * cols3 + vo..][..dh];
                            dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            weighted += p[j] * dp[j];
                            let gv = &mut gq.data_mut()[(s * seq_len + j) * cols3 + vo..][..dh];
                            for (o, x) in gv.iter_mut().zip(gi) {
                                *o += p[j] * x;
                            }
                        }
                    }
                    for j in 0..=i {
                        if !allowed[s * ll + i * seq_len + j] {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let (ri, rj) = ((s * seq_len + i) * cols3, (s * seq_len + j) * cols3);
                        for c in 0..dh {
                            let kq = data[rj + ko + c];
                            let qk = data[ri + qo + c];
                            let gd = gq.data_mut();
                            gd[ri + qo + c] += ds * kq;
                            gd[rj + ko + c] += ds * qk;
                        }
                    }
                }
            }
        }
        gq
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

pub fn softmax_groups(m: &Matrix, group: usize) -> Matrix {
    assert_eq!(m.cols() % group, 0, "columns must split into groups");
    let mut out = m.clone();
    for r in 0..out.rows() {
        for chunk in out.row_mut(r).chunks_mut(group) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in chunk.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in chunk.iter_mut() {
                *x /= z;
            }
        }
    }
    out
}

pub fn log_softmax_groups(m: &Matrix, group: usize) -> Matrix {
    assert_eq!(m.cols() % group, 0, "columns must split into groups");
    let mut out = m.clone();
    for r in 0..out.rows() {
        for chunk in out.row_mut(r).chunks_mut(group) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + chunk.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in chunk.iter_mut() {
                *x -= lse;
            }
        }
    }
    out
}
