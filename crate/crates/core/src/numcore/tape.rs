//! Reverse-mode differentiation tape.
//!
//! Ops execute eagerly in f32 and append a node per result. `backward` walks
//! the recorded nodes in reverse, which is a valid topological order because
//! every op's inputs are created before it. Node gradients accumulate, so a
//! second `backward` call without a fresh tape doubles them.

use crate::error::{FearError, Result};
use crate::numcore::store::{ParamId, ParamStore};
use crate::numcore::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Conv2d { x: Var, w: Var, bias: Var, stride: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f32 },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Relu { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Softmax { x: Var },
    CrossEntropy { p: Var, label: usize },
    Concat { parts: Vec<Var> },
    Sum { x: Var },
    Reshape { x: Var },
    CosineRows { key: Var, mem: Var },
    Clamp { x: Var, lo: f32, hi: f32 },
    Minimum { a: Var, b: Var },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    needs_grad: bool,
    param: Option<ParamId>,
    op: Op,
}

/// Log arguments and cross-entropy probabilities are clamped here so the
/// loss stays finite.
pub const LOG_EPS: f32 = 1e-12;
/// Denominator guard for cosine similarity.
pub const COSINE_EPS: f32 = 1e-8;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: std::collections::HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar convenience accessor; panics if the node is not one element.
    pub fn scalar(&self, v: Var) -> f32 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Records a constant input; no gradient is tracked through it.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape.clone(), t.data.clone(), false, None)
    }

    pub fn constant_vec(&mut self, data: Vec<f32>) -> Var {
        let shape = vec![data.len()];
        self.push_leaf(shape, data, false, None)
    }

    pub fn constant_scalar(&mut self, v: f32) -> Var {
        self.push_leaf(vec![1], vec![v], false, None)
    }

    /// Records an input whose gradient will be computed (but which is not a
    /// registered parameter). Used by tests and finite-difference checks.
    pub fn watched(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape.clone(), t.data.clone(), true, None)
    }

    /// Copies a parameter onto the tape; after `backward`,
    /// [`Tape::accumulate_grads`] adds the leaf gradient back into the store.
    /// Repeated requests for the same parameter return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push_leaf(t.shape.clone(), t.data.clone(), true, Some(id));
        self.param_cache.insert(id, v);
        v
    }

    fn push_leaf(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f32>,
        needs_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        self.nodes.push(Node { shape, data, grad: None, needs_grad, param, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, op_name: &str) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FearError::NonFinite(op_name.to_string()));
        }
        let needs_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { shape, data, grad: None, needs_grad, param: None, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Minimum { a, b } => {
                vec![*a, *b]
            }
            Op::Conv2d { x, w, bias, .. } => vec![*x, *w, *bias],
            Op::Scale { x, .. }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Relu { x }
            | Op::Exp { x }
            | Op::Ln { x }
            | Op::Softmax { x }
            | Op::Sum { x }
            | Op::Reshape { x }
            | Op::Clamp { x, .. } => vec![*x],
            Op::CrossEntropy { p, .. } => vec![*p],
            Op::Concat { parts } => parts.clone(),
            Op::CosineRows { key, mem } => vec![*key, *mem],
        }
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// Matrix product. Rank-1 operands are treated as a row vector on the
    /// left and a column vector on the right, and the result is squeezed
    /// accordingly: `[k]·[k,n] -> [n]`, `[m,k]·[k] -> [m]`, `[k]·[k] -> [1]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka, squeeze_a) = as_matrix_lhs(self.shape(a))?;
        let (kb, n, squeeze_b) = as_matrix_rhs(self.shape(b))?;
        if ka != kb {
            return Err(FearError::dim(format!(
                "matmul inner dims {} vs {} (shapes {:?} x {:?})",
                ka,
                kb,
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0f32; m * n];
        matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n, &mut out);
        let shape = match (squeeze_a, squeeze_b) {
            (true, true) => vec![1],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        self.push(shape, out, Op::MatMul { a, b }, "matmul")
    }

    /// Valid (no padding) cross-correlation with per-filter bias.
    /// `x: [C,H,W]`, `w: [F,C,kH,kW]`, `bias: [F]` -> `[F,H',W']`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 {
            return Err(FearError::dim(format!("conv2d expects x rank 3, w rank 4; got {:?}, {:?}", xs, ws)));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (f, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wc != c {
            return Err(FearError::dim(format!("conv2d channel mismatch: input {c}, kernels {wc}")));
        }
        if kh > h || kw > wd {
            return Err(FearError::dim(format!("conv2d kernel {kh}x{kw} larger than input {h}x{wd}")));
        }
        if stride == 0 {
            return Err(FearError::contract("conv2d stride must be >= 1"));
        }
        if self.shape(bias) != [f] {
            return Err(FearError::dim(format!("conv2d bias shape {:?} != [{f}]", self.shape(bias))));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (wd - kw) / stride + 1;
        let xd = &self.nodes[x.0].data;
        let wdat = &self.nodes[w.0].data;
        let bd = &self.nodes[bias.0].data;
        // im2col + matmul: columns are [C*kh*kw, OH*OW] so the product
        // vectorizes over output pixels.
        let cols = im2col(xd, c, h, wd, kh, kw, stride, oh, ow);
        let mut out = vec![0.0f32; f * oh * ow];
        matmul_raw(wdat, &cols, f, c * kh * kw, oh * ow, &mut out);
        for fi in 0..f {
            let b = bd[fi];
            for v in &mut out[fi * oh * ow..(fi + 1) * oh * ow] {
                *v += b;
            }
        }
        self.push(vec![f, oh, ow], out, Op::Conv2d { x, w, bias, stride }, "conv2d")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_binary(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_binary(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_binary(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_binary(a, b, "minimum", f32::min, Op::Minimum { a, b })
    }

    fn elementwise_binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(FearError::dim(format!(
                "{name}: shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, data, op, name)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Scale { x, c }, "scale")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| sigmoid(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Sigmoid { x }, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Tanh { x }, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Relu { x }, "relu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| v.exp()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Exp { x }, "exp")
    }

    /// Natural log with the argument clamped at [`LOG_EPS`].
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| v.max(LOG_EPS).ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Ln { x }, "ln")
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        let data = self.nodes[x.0].data.iter().map(|&v| v.clamp(lo, hi)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Clamp { x, lo, hi }, "clamp")
    }

    /// Numerically-stable softmax over a rank-1 input.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(FearError::dim(format!("softmax expects rank-1, got {:?}", self.shape(x))));
        }
        let xd = &self.nodes[x.0].data;
        let max = xd.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut data: Vec<f32> = xd.iter().map(|&v| (v - max).exp()).collect();
        let sum: f32 = data.iter().sum();
        data.iter_mut().for_each(|v| *v /= sum);
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, Op::Softmax { x }, "softmax")
    }

    /// Negative log likelihood of `label` under a probability vector:
    /// `-ln(p[label])`, with the log argument clamped at [`LOG_EPS`].
    pub fn cross_entropy(&mut self, p: Var, label: usize) -> Result<Var> {
        let pd = &self.nodes[p.0].data;
        if label >= pd.len() {
            return Err(FearError::Index(format!(
                "cross_entropy label {label} out of range for {} classes",
                pd.len()
            )));
        }
        let sum: f32 = pd.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(FearError::contract(format!("cross_entropy input sums to {sum}, not 1")));
        }
        let loss = -pd[label].max(LOG_EPS).ln();
        self.push(vec![1], vec![loss], Op::CrossEntropy { p, label }, "cross_entropy")
    }

    /// Concatenates rank-1 inputs into one rank-1 output.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(FearError::contract("concat of zero parts"));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(FearError::dim(format!("concat expects rank-1 parts, got {:?}", self.shape(p))));
            }
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let shape = vec![data.len()];
        self.push(shape, data, Op::Concat { parts: parts.to_vec() }, "concat")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f32 = self.nodes[x.0].data.iter().sum();
        self.push(vec![1], vec![s], Op::Sum { x }, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].data.len() as f32;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(FearError::dim(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(x),
                shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        self.push(shape, data, Op::Reshape { x }, "reshape")
    }

    /// Cosine similarity between `key: [M]` and each row of `mem: [N,M]`:
    /// `out[i] = key·mem[i] / (|key||mem[i]| + eps)`.
    ///
    /// The memory operand is treated as storage: it must not require grad.
    pub fn cosine_rows(&mut self, key: Var, mem: Var) -> Result<Var> {
        let ks = self.shape(key).to_vec();
        let ms = self.shape(mem).to_vec();
        if ks.len() != 1 || ms.len() != 2 || ms[1] != ks[0] {
            return Err(FearError::dim(format!("cosine_rows: key {:?} vs mem {:?}", ks, ms)));
        }
        if self.nodes[mem.0].needs_grad {
            return Err(FearError::contract("cosine_rows memory operand must not require grad"));
        }
        let (n, m) = (ms[0], ms[1]);
        let kd = &self.nodes[key.0].data;
        let md = &self.nodes[mem.0].data;
        let key_norm = l2_norm(kd);
        let mut out = vec![0.0f32; n];
        for i in 0..n {
            let row = &md[i * m..(i + 1) * m];
            let dot: f32 = row.iter().zip(kd.iter()).map(|(&a, &b)| a * b).sum();
            let row_norm = l2_norm(row);
            out[i] = dot / (key_norm * row_norm + COSINE_EPS);
        }
        self.push(vec![n], out, Op::CosineRows { key, mem }, "cosine_rows")
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulates `d loss / d node` into every grad-tracked node. Each call
    /// propagates one fresh unit of seeding, so calling twice doubles the
    /// stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(FearError::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in self.nodes.iter_mut() {
            if node.needs_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.data.len()]);
            }
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing on this tape is trainable
        }
        let mut scratch: Vec<Option<Vec<f32>>> = self
            .nodes
            .iter()
            .map(|n| n.needs_grad.then(|| vec![0.0; n.data.len()]))
            .collect();
        scratch[loss.0].as_mut().unwrap()[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let out_grad = match scratch[i].as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.backprop_op(i, &op, &out_grad, &mut scratch);
        }
        for (node, s) in self.nodes.iter_mut().zip(scratch.into_iter()) {
            if let (Some(g), Some(s)) = (node.grad.as_mut(), s) {
                add_into(g, &s);
            }
        }
        Ok(())
    }

    fn backprop_op(&self, out_idx: usize, op: &Op, g: &[f32], scratch: &mut [Option<Vec<f32>>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k, _) = as_matrix_lhs(&self.nodes[a.0].shape).unwrap();
                let (_, n, _) = as_matrix_rhs(&self.nodes[b.0].shape).unwrap();
                if self.nodes[a.0].needs_grad {
                    // dA = g · Bᵀ
                    let bd = &self.nodes[b.0].data;
                    let mut da = vec![0.0f32; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    add_into(scratch[a.0].as_mut().unwrap(), &da);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = Aᵀ · g
                    let ad = &self.nodes[a.0].data;
                    let mut db = vec![0.0f32; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                dbrow[j] += av * grow[j];
                            }
                        }
                    }
                    add_into(scratch[b.0].as_mut().unwrap(), &db);
                }
            }
            Op::Conv2d { x, w, bias, stride } => {
                let xs = self.nodes[x.0].shape.clone();
                let ws = self.nodes[w.0].shape.clone();
                let os = self.nodes[out_idx].shape.clone();
                let (c, h, wd) = (xs[0], xs[1], xs[2]);
                let (f, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (oh, ow) = (os[1], os[2]);
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![0.0f32; f];
                    for fi in 0..f {
                        db[fi] = g[fi * oh * ow..(fi + 1) * oh * ow].iter().sum();
                    }
                    add_into(scratch[bias.0].as_mut().unwrap(), &db);
                }
                if self.nodes[w.0].needs_grad {
                    // dW = g[F, OHW] · im2col(x)ᵀ[OHW, CKK]
                    let xd = &self.nodes[x.0].data;
                    let ckk = c * kh * kw;
                    let ohw = oh * ow;
                    let cols = im2col(xd, c, h, wd, kh, kw, stride, oh, ow);
                    let mut cols_t = vec![0.0f32; ohw * ckk];
                    for r in 0..ckk {
                        for p in 0..ohw {
                            cols_t[p * ckk + r] = cols[r * ohw + p];
                        }
                    }
                    let mut dw = vec![0.0f32; f * ckk];
                    matmul_raw(g, &cols_t, f, ohw, ckk, &mut dw);
                    add_into(scratch[w.0].as_mut().unwrap(), &dw);
                }
                if self.nodes[x.0].needs_grad {
                    // dcols = Wᵀ[CKK, F] · g[F, OHW], then scatter back.
                    let wdat = &self.nodes[w.0].data;
                    let ckk = c * kh * kw;
                    let ohw = oh * ow;
                    let mut w_t = vec![0.0f32; ckk * f];
                    for fi in 0..f {
                        for r in 0..ckk {
                            w_t[r * f + fi] = wdat[fi * ckk + r];
                        }
                    }
                    let mut dcols = vec![0.0f32; ckk * ohw];
                    matmul_raw(&w_t, g, ckk, f, ohw, &mut dcols);
                    let dx = scratch[x.0].as_mut().unwrap();
                    col2im_add(&dcols, c, h, wd, kh, kw, stride, oh, ow, dx);
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a.0].needs_grad {
                    add_into(scratch[a.0].as_mut().unwrap(), g);
                }
                if self.nodes[b.0].needs_grad {
                    add_into(scratch[b.0].as_mut().unwrap(), g);
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a.0].needs_grad {
                    add_into(scratch[a.0].as_mut().unwrap(), g);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = scratch[b.0].as_mut().unwrap();
                    for (t, &s) in gb.iter_mut().zip(g.iter()) {
                        *t -= s;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].needs_grad {
                    let bd = &self.nodes[b.0].data;
                    let ga = scratch[a.0].as_mut().unwrap();
                    for ((t, &s), &bv) in ga.iter_mut().zip(g.iter()).zip(bd.iter()) {
                        *t += s * bv;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let ad = &self.nodes[a.0].data;
                    let gb = scratch[b.0].as_mut().unwrap();
                    for ((t, &s), &av) in gb.iter_mut().zip(g.iter()).zip(ad.iter()) {
                        *t += s * av;
                    }
                }
            }
            Op::Minimum { a, b } => {
                // Grad routes to the smaller operand; ties go to `a`.
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                if self.nodes[a.0].needs_grad {
                    let ga = scratch[a.0].as_mut().unwrap();
                    for i in 0..g.len() {
                        if ad[i] <= bd[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let gb = scratch[b.0].as_mut().unwrap();
                    for i in 0..g.len() {
                        if bd[i] < ad[i] {
                            gb[i] += g[i];
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.nodes[x.0].needs_grad {
                    let gx = scratch[x.0].as_mut().unwrap();
                    for (t, &s) in gx.iter_mut().zip(g.iter()) {
                        *t += s * c;
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.nodes[x.0].needs_grad {
                    let out = &self.nodes[out_idx].data;
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &y) in gx.iter_mut().zip(g.iter()).zip(out.iter()) {
                        *t += s * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh { x } => {
                if self.nodes[x.0].needs_grad {
                    let out = &self.nodes[out_idx].data;
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &y) in gx.iter_mut().zip(g.iter()).zip(out.iter()) {
                        *t += s * (1.0 - y * y);
                    }
                }
            }
            Op::Relu { x } => {
                if self.nodes[x.0].needs_grad {
                    let xd = &self.nodes[x.0].data;
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &v) in gx.iter_mut().zip(g.iter()).zip(xd.iter()) {
                        if v > 0.0 {
                            *t += s;
                        }
                    }
                }
            }
            Op::Exp { x } => {
                if self.nodes[x.0].needs_grad {
                    let out = &self.nodes[out_idx].data;
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &y) in gx.iter_mut().zip(g.iter()).zip(out.iter()) {
                        *t += s * y;
                    }
                }
            }
            Op::Ln { x } => {
                if self.nodes[x.0].needs_grad {
                    let xd = &self.nodes[x.0].data;
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &v) in gx.iter_mut().zip(g.iter()).zip(xd.iter()) {
                        *t += s / v.max(LOG_EPS);
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.nodes[x.0].needs_grad {
                    let xd = &self.nodes[x.0].data;
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &v) in gx.iter_mut().zip(g.iter()).zip(xd.iter()) {
                        if v >= lo && v <= hi {
                            *t += s;
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if self.nodes[x.0].needs_grad {
                    let y = &self.nodes[out_idx].data;
                    let dot: f32 = g.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum();
                    let gx = scratch[x.0].as_mut().unwrap();
                    for ((t, &s), &yv) in gx.iter_mut().zip(g.iter()).zip(y.iter()) {
                        *t += yv * (s - dot);
                    }
                }
            }
            Op::CrossEntropy { p, label } => {
                if self.nodes[p.0].needs_grad {
                    let pv = self.nodes[p.0].data[label].max(LOG_EPS);
                    let gp = scratch[p.0].as_mut().unwrap();
                    gp[label] -= g[0] / pv;
                }
            }
            Op::Concat { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].data.len();
                    if self.nodes[p.0].needs_grad {
                        add_into(scratch[p.0].as_mut().unwrap(), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Sum { x } => {
                if self.nodes[x.0].needs_grad {
                    let gx = scratch[x.0].as_mut().unwrap();
                    for t in gx.iter_mut() {
                        *t += g[0];
                    }
                }
            }
            Op::Reshape { x } => {
                if self.nodes[x.0].needs_grad {
                    add_into(scratch[x.0].as_mut().unwrap(), g);
                }
            }
            Op::CosineRows { key, mem } => {
                if self.nodes[key.0].needs_grad {
                    let kd = &self.nodes[key.0].data;
                    let md = &self.nodes[mem.0].data;
                    let m = kd.len();
                    let n = md.len() / m;
                    let key_norm = l2_norm(&kd);
                    let safe_norm = key_norm.max(1e-12);
                    let mut dk = vec![0.0f32; m];
                    for i in 0..n {
                        let row = &md[i * m..(i + 1) * m];
                        let dot: f32 = row.iter().zip(kd.iter()).map(|(&a, &b)| a * b).sum();
                        let row_norm = l2_norm(row);
                        let denom = key_norm * row_norm + COSINE_EPS;
                        let gi = g[i];
                        let coef_row = gi / denom;
                        let coef_key = gi * dot * row_norm / (safe_norm * denom * denom);
                        for j in 0..m {
                            dk[j] += coef_row * row[j] - coef_key * kd[j];
                        }
                    }
                    add_into(scratch[key.0].as_mut().unwrap(), &dk);
                }
            }
        }
    }

    /// Adds the gradient of every parameter leaf into the store's grad
    /// buffers. Call after `backward`.
    pub fn accumulate_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn l2_norm(v: &[f32]) -> f32 {
    v.iter().map(|&x| x * x).sum::<f32>().sqrt()
}

fn add_into(target: &mut [f32], src: &[f32]) {
    for (t, &s) in target.iter_mut().zip(src.iter()) {
        *t += s;
    }
}

fn as_matrix_lhs(shape: &[usize]) -> Result<(usize, usize, bool)> {
    match shape.len() {
        1 => Ok((1, shape[0], true)),
        2 => Ok((shape[0], shape[1], false)),
        _ => Err(FearError::dim(format!("matmul lhs rank {} unsupported", shape.len()))),
    }
}

fn as_matrix_rhs(shape: &[usize]) -> Result<(usize, usize, bool)> {
    match shape.len() {
        1 => Ok((shape[0], 1, true)),
        2 => Ok((shape[0], shape[1], false)),
        _ => Err(FearError::dim(format!("matmul rhs rank {} unsupported", shape.len()))),
    }
}


/// Unfolds conv patches into a `[C*kh*kw, OH*OW]` matrix (row-major).
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let ohw = oh * ow;
    let mut cols = vec![0.0f32; c * kh * kw * ohw];
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let src = (ci * h + oy * stride + ky) * w + kx;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        drow[ox] = x[src + ox * stride];
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Accumulates a `[C*kh*kw, OH*OW]` gradient matrix back into image layout.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [f32],
) {
    let ohw = oh * ow;
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let dst = (ci * h + oy * stride + ky) * w + kx;
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for ox in 0..ow {
                        out[dst + ox * stride] += srow[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out += a[m,k] · b[k,n]` over row-major slices. `out` must be zeroed.
pub fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    if n == 1 {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            out[i] = dot(arow, b);
        }
        return;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// Unrolled dot product; the fixed 8-lane accumulation order keeps results
/// reproducible run to run.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let chunks = a.len() / 8;
    let mut acc = [0.0f32; 8];
    for c in 0..chunks {
        let i = c * 8;
        for l in 0..8 {
            acc[l] += a[i + l] * b[i + l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f32>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{check_gradients, Coords};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(&tensor(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let a = tape.constant(&tensor(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_orthogonal_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(&tensor(vec![1, 2], vec![1.0, 0.0]));
        let b = tape.constant(&tensor(vec![2, 1], vec![0.0, 1.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_tensor(vec![3, 4], &mut rng);
        let b = random_tensor(vec![4, 2], &mut rng);
        // Naive triple loop, plain accumulation order.
        let mut expect = vec![0.0f32; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0f32;
                for p in 0..4 {
                    s += a.data[i * 4 + p] * b.data[p * 2 + j];
                }
                expect[i * 2 + j] = s;
            }
        }
        let mut tape = Tape::new();
        let av = tape.constant(&a);
        let bv = tape.constant(&b);
        let out = tape.matmul(av, bv).unwrap();
        for (got, want) in tape.value(out).iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(vec![2, 3]));
        let b = tape.constant(&Tensor::zeros(vec![4, 2]));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn conv2d_scalar_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::full(vec![1, 3, 3], 1.0));
        let w = tape.constant(&tensor(vec![1, 1, 1, 1], vec![2.0]));
        let b = tape.constant(&Tensor::zeros(vec![1]));
        let out = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.shape(out), &[1, 3, 3]);
        assert!(tape.value(out).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_impulse_reproduces_kernel() {
        // Cross-correlation of a delta at (2,2) with a 3x3 kernel lays the
        // kernel out (unflipped) over the output positions that cover it.
        let mut x = Tensor::zeros(vec![1, 5, 5]);
        x.data[2 * 5 + 2] = 1.0;
        let kernel: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let wv = tape.constant(&tensor(vec![1, 1, 3, 3], kernel.clone()));
        let bv = tape.constant(&Tensor::zeros(vec![1]));
        let out = tape.conv2d(xv, wv, bv, 1).unwrap();
        // out[oy,ox] = kernel[2-oy+ ... ]: output (oy,ox) sees the impulse at
        // kernel position (2-oy, 2-ox)... enumerate directly instead.
        let val = tape.value(out);
        for oy in 0..3 {
            for ox in 0..3 {
                let ky = 2 - oy; // impulse row 2 = oy + ky
                let kx = 2 - ox;
                assert_eq!(val[oy * 3 + ox], kernel[ky * 3 + kx]);
            }
        }
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_tensor(vec![2, 8, 8], &mut rng);
        let w = random_tensor(vec![4, 2, 3, 3], &mut rng);
        let b = random_tensor(vec![4], &mut rng);
        let stride = 2;
        let oh = (8 - 3) / stride + 1;
        let ow = oh;
        let mut expect = vec![0.0f32; 4 * oh * ow];
        for f in 0..4 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data[f];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let xi = (c * 8 + oy * stride + ky) * 8 + ox * stride + kx;
                                let wi = ((f * 2 + c) * 3 + ky) * 3 + kx;
                                acc += x.data[xi] * w.data[wi];
                            }
                        }
                    }
                    expect[(f * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let wv = tape.constant(&w);
        let bv = tape.constant(&b);
        let out = tape.conv2d(xv, wv, bv, stride).unwrap();
        for (got, want) in tape.value(out).iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn conv2d_kernel_too_large_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(vec![1, 2, 2]));
        let w = tape.constant(&Tensor::zeros(vec![1, 1, 3, 3]));
        let b = tape.constant(&Tensor::zeros(vec![1]));
        assert!(tape.conv2d(x, w, b, 1).is_err());
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![0.0]);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y), &[0.5]);
    }

    #[test]
    fn softmax_uniform_over_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![0.0, 0.0]);
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![1000.0, 0.0]);
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y);
        assert!(v.iter().all(|p| p.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-6);
        assert!(v[1] < 1e-6);
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_certain_prediction() {
        let mut tape = Tape::new();
        let p = tape.constant_vec(vec![1.0, 0.0]);
        let loss = tape.cross_entropy(p, 0).unwrap();
        assert!(tape.scalar(loss) <= 1e-11);
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let mut tape = Tape::new();
        let p = tape.constant_vec(vec![0.5, 0.5]);
        for label in 0..2 {
            let loss = tape.cross_entropy(p, label).unwrap();
            assert!((tape.scalar(loss) - std::f32::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let p = tape.constant_vec(vec![0.5, 0.5]);
        assert!(matches!(tape.cross_entropy(p, 2), Err(crate::FearError::Index(_))));
    }

    #[test]
    fn softmax_ce_gradient_is_p_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let logits = random_tensor(vec![4], &mut rng);
            let label = rng.gen_range(0..4);
            let mut tape = Tape::new();
            let z = tape.watched(&logits);
            let p = tape.softmax(z).unwrap();
            let loss = tape.cross_entropy(p, label).unwrap();
            tape.backward(loss).unwrap();
            let probs = tape.value(p).to_vec();
            let grad = tape.grad(z).unwrap();
            for i in 0..4 {
                let expect = probs[i] - if i == label { 1.0 } else { 0.0 };
                assert!((grad[i] - expect).abs() < 1e-5, "{} vs {}", grad[i], expect);
            }
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.watched(&Tensor::from_vec(vec![1.0, -4.0, 9.0]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_at_three() {
        let mut tape = Tape::new();
        let x = tape.watched(&Tensor::from_vec(vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.watched(&Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(crate::FearError::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.watched(&Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![1e10]);
        let sq = tape.mul(x, x).unwrap(); // 1e60 overflows f32
        assert!(matches!(tape.mul(sq, sq), Err(crate::FearError::NonFinite(_))));
    }

    #[test]
    fn finite_difference_per_op_suite() {
        // Every differentiable op against the central-difference oracle on
        // small random inputs, 10 trials each.
        let h = 1e-3;
        let tol = 1e-3;
        for trial in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let a23 = random_tensor(vec![2, 3], &mut rng);
            let b34 = random_tensor(vec![3, 4], &mut rng);
            let rep = check_gradients(&[a23, b34], h, Coords::All, |t, v| {
                let c = t.matmul(v[0], v[1])?;
                let s = t.tanh(c)?;
                t.sum(s)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "matmul trial {trial}: {rep:?}");

            let x = random_tensor(vec![2, 6, 6], &mut rng);
            let w = random_tensor(vec![3, 2, 3, 3], &mut rng);
            let b = random_tensor(vec![3], &mut rng);
            let rep = check_gradients(&[x, w, b], h, Coords::Sample { per_input: 20, seed: trial }, |t, v| {
                let c = t.conv2d(v[0], v[1], v[2], 2)?;
                let s = t.sigmoid(c)?;
                t.sum(s)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "conv2d trial {trial}: {rep:?}");

            let x = random_tensor(vec![8], &mut rng);
            let rep = check_gradients(&[x], h, Coords::All, |t, v| {
                let s = t.sigmoid(v[0])?;
                let th = t.tanh(s)?;
                let e = t.exp(th)?;
                let l = t.ln(e)?;
                t.sum(l)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "unary chain trial {trial}: {rep:?}");

            // relu: keep inputs away from the kink.
            let mut x = random_tensor(vec![8], &mut rng);
            x.data.iter_mut().for_each(|v| {
                if v.abs() < 0.1 {
                    *v += 0.2;
                }
            });
            let rep = check_gradients(&[x], h, Coords::All, |t, v| {
                let r = t.relu(v[0])?;
                t.sum(r)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "relu trial {trial}: {rep:?}");

            let logits = random_tensor(vec![5], &mut rng);
            let label = (trial % 5) as usize;
            let rep = check_gradients(&[logits], h, Coords::All, |t, v| {
                let p = t.softmax(v[0])?;
                t.cross_entropy(p, label)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "softmax+ce trial {trial}: {rep:?}");

            let key = random_tensor(vec![6], &mut rng);
            let mem = random_tensor(vec![4, 6], &mut rng);
            let mem_c = mem.clone();
            let rep = check_gradients(&[key], h, Coords::All, |t, v| {
                let m = t.constant(&mem_c);
                let sims = t.cosine_rows(v[0], m)?;
                let sm = t.softmax(sims)?;
                let weighted = t.matmul(sm, m)?;
                t.sum(weighted)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "cosine_rows trial {trial}: {rep:?}");

            let a = random_tensor(vec![6], &mut rng);
            let b = random_tensor(vec![6], &mut rng);
            let rep = check_gradients(&[a, b], h, Coords::All, |t, v| {
                let m = t.mul(v[0], v[1])?;
                let s = t.sub(m, v[1])?;
                let ad = t.add(s, v[0])?;
                let sc = t.scale(ad, 0.7)?;
                let parts = t.concat(&[sc, v[0]])?;
                t.sum(parts)
            })
            .unwrap();
            assert!(rep.max_rel_error < tol, "arith/concat trial {trial}: {rep:?}");
        }
    }

    #[test]
    fn determinism_same_seed_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let a = random_tensor(vec![8, 8], &mut rng);
            let b = random_tensor(vec![8, 8], &mut rng);
            let mut tape = Tape::new();
            let av = tape.watched(&a);
            let bv = tape.watched(&b);
            let c = tape.matmul(av, bv).unwrap();
            let s = tape.tanh(c).unwrap();
            let loss = tape.sum(s).unwrap();
            tape.backward(loss).unwrap();
            (
                tape.value(c).to_vec(),
                tape.grad(av).unwrap().to_vec(),
                tape.grad(bv).unwrap().to_vec(),
            )
        };
        let (c1, ga1, gb1) = run();
        let (c2, ga2, gb2) = run();
        assert_eq!(c1, c2);
        assert_eq!(ga1, ga2);
        assert_eq!(gb1, gb2);
    }

    #[test]
    fn cosine_rows_rejects_grad_memory() {
        let mut tape = Tape::new();
        let key = tape.constant_vec(vec![1.0, 0.0]);
        let mem = tape.watched(&Tensor::zeros(vec![3, 2]));
        assert!(tape.cosine_rows(key, mem).is_err());
    }

    #[test]
    fn minimum_and_clamp_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.watched(&Tensor::from_vec(vec![1.0, 5.0]));
        let b = tape.watched(&Tensor::from_vec(vec![2.0, 3.0]));
        let m = tape.minimum(a, b).unwrap();
        assert_eq!(tape.value(m), &[1.0, 3.0]);
        let loss = tape.sum(m).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.watched(&Tensor::from_vec(vec![-2.0, 0.5, 9.0]));
        let c = tape.clamp(x, 0.0, 1.0).unwrap();
        assert_eq!(tape.value(c), &[0.0, 0.5, 1.0]);
        let loss = tape.sum(c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }
}
