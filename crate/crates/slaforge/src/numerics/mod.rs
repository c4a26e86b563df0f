//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation on append; [`Tape::backward`] walks the
//! record once in reverse. Tensors are row-major 2-D blocks of the generic
//! scalar; vectors are `1 x n`. Parameters live outside the tape in a
//! [`ParamSet`] and are re-inserted as leaves on every forward pass, so two
//! passes never share gradient state.

mod optim;

pub use optim::{clip_grad_norm, AdamConfig, AdamState};

use rand::Rng;
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
}

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op<F: Real> {
    Leaf,
    Matmul(usize, usize),
    /// Applies a small square matrix to each consecutive row-block of the
    /// right operand. Used to batch many graph signals into one matmul chain.
    BlockMatmul { block: usize, rhs: usize, block_rows: usize },
    Add(usize, usize),
    /// `m x n` plus a `1 x n` row broadcast over rows.
    AddBias(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    ConcatRows(Vec<usize>),
    SliceRows { src: usize, start: usize },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    Scale(usize, F),
}

#[derive(Debug, Clone)]
struct Node<F: Real> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Append-only operation record; one per forward pass.
#[derive(Debug, Default)]
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

/// Per-value gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F: Real> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for a value, if it required one.
    pub fn get(&self, v: Value) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Value) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Value) -> &[F] {
        &self.nodes[v.0].data
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<F>, op: Op<F>, requires_grad: bool) -> Value {
        debug_assert_eq!(rows * cols, data.len());
        debug_assert!(
            data.iter().all(|x| x.is_finite()),
            "non-finite value produced by {:?}",
            op
        );
        self.nodes.push(Node { rows, cols, data, op, requires_grad });
        Value(self.nodes.len() - 1)
    }

    fn requires(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inserts a leaf tensor.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<F>, requires_grad: bool) -> Value {
        assert_eq!(rows * cols, data.len(), "leaf data length must match shape");
        self.push(rows, cols, data, Op::Leaf, requires_grad)
    }

    /// Inserts a constant (no gradient) leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Value {
        self.leaf(rows, cols, data, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Value {
        self.constant(rows, cols, vec![F::zero(); rows * cols])
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, NumericsError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(NumericsError::ShapeMismatch(format!(
                "matmul {m}x{k} . {k2}x{n}"
            )));
        }
        let data = matmul_nn(self.data(a), self.data(b), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, data, Op::Matmul(a.0, b.0), rg))
    }

    /// Applies the square `block` matrix to every consecutive `block_rows`-row
    /// block of `rhs`. `rhs.rows` must be a multiple of `block_rows`.
    pub fn block_matmul(&mut self, block: Value, rhs: Value) -> Result<Value, NumericsError> {
        let (bn, bm) = self.shape(block);
        let (rows, cols) = self.shape(rhs);
        if bn != bm || rows % bn != 0 {
            return Err(NumericsError::ShapeMismatch(format!(
                "block_matmul {bn}x{bm} over {rows}x{cols}"
            )));
        }
        let mut out = vec![F::zero(); rows * cols];
        let b = self.data(block);
        let x = self.data(rhs);
        for blk in 0..rows / bn {
            let base = blk * bn;
            block_mm_nn(b, &x[base * cols..(base + bn) * cols], &mut out[base * cols..(base + bn) * cols], bn, cols);
        }
        let rg = self.requires(block) || self.requires(rhs);
        Ok(self.push(rows, cols, out, Op::BlockMatmul { block: block.0, rhs: rhs.0, block_rows: bn }, rg))
    }

    fn binary_same_shape(
        &mut self,
        a: Value,
        b: Value,
        name: &str,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Value, NumericsError> {
        let (m, n) = self.shape(a);
        if self.shape(b) != (m, n) {
            let (bm, bn) = self.shape(b);
            return Err(NumericsError::ShapeMismatch(format!(
                "{name} {m}x{n} vs {bm}x{bn}"
            )));
        }
        let data: Vec<F> = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, data, op, rg))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, NumericsError> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, NumericsError> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn hadamard(&mut self, a: Value, b: Value) -> Result<Value, NumericsError> {
        self.binary_same_shape(a, b, "hadamard", |x, y| x * y, Op::Hadamard(a.0, b.0))
    }

    /// `m x n` matrix plus a `1 x n` bias row added to every row.
    pub fn add_bias(&mut self, a: Value, bias: Value) -> Result<Value, NumericsError> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(bias);
        if bm != 1 || bn != n {
            return Err(NumericsError::ShapeMismatch(format!(
                "add_bias {m}x{n} with bias {bm}x{bn}"
            )));
        }
        let bias_data = self.data(bias).to_vec();
        let data: Vec<F> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias_data[i % n])
            .collect();
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(m, n, data, Op::AddBias(a.0, bias.0), rg))
    }

    fn unary(&mut self, a: Value, f: impl Fn(F) -> F, op: Op<F>) -> Value {
        let (m, n) = self.shape(a);
        let data: Vec<F> = self.data(a).iter().map(|&x| f(x)).collect();
        let rg = self.requires(a);
        self.push(m, n, data, op, rg)
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        self.unary(a, |x| F::one() / (F::one() + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        self.unary(a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Value) -> Value {
        self.unary(a, |x| if x > F::zero() { x } else { F::zero() }, Op::Relu(a.0))
    }

    pub fn scale(&mut self, a: Value, c: F) -> Value {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    /// Stacks tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Value]) -> Result<Value, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch("concat of zero tensors".into()));
        }
        let (_, n) = self.shape(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(NumericsError::ShapeMismatch(format!(
                    "concat_rows widths {n} vs {pn}"
                )));
            }
            rows += pm;
            data.extend_from_slice(self.data(p));
            rg |= self.requires(p);
        }
        Ok(self.push(rows, n, data, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// Contiguous row range `[start, start+len)` of a tensor.
    pub fn slice_rows(&mut self, a: Value, start: usize, len: usize) -> Result<Value, NumericsError> {
        let (m, n) = self.shape(a);
        if start + len > m {
            return Err(NumericsError::ShapeMismatch(format!(
                "slice_rows [{start}, {}) of {m} rows",
                start + len
            )));
        }
        let data = self.data(a)[start * n..(start + len) * n].to_vec();
        let rg = self.requires(a);
        Ok(self.push(len, n, data, Op::SliceRows { src: a.0, start }, rg))
    }

    pub fn reshape(&mut self, a: Value, rows: usize, cols: usize) -> Result<Value, NumericsError> {
        let (m, n) = self.shape(a);
        if m * n != rows * cols {
            return Err(NumericsError::ShapeMismatch(format!(
                "reshape {m}x{n} to {rows}x{cols}"
            )));
        }
        let data = self.data(a).to_vec();
        let rg = self.requires(a);
        Ok(self.push(rows, cols, data, Op::Reshape(a.0), rg))
    }

    pub fn sum(&mut self, a: Value) -> Value {
        let total: F = self.data(a).iter().copied().sum();
        let rg = self.requires(a);
        self.push(1, 1, vec![total], Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Value) -> Value {
        let len = self.data(a).len();
        let total: F = self.data(a).iter().copied().sum();
        let rg = self.requires(a);
        self.push(1, 1, vec![total / F::from_usize(len).unwrap()], Op::Mean(a.0), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse_loss(&mut self, pred: Value, target: Value) -> Result<Value, NumericsError> {
        let diff = self.sub(pred, target)?;
        let sq = self.hadamard(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Reverse pass from a scalar loss. Every recorded node is visited at
    /// most once; gradients accumulate only into grad-requiring subgraphs.
    pub fn backward(&mut self, loss: Value) -> Result<Gradients<F>, NumericsError> {
        let (lr, lc) = self.shape(loss);
        if lr != 1 || lc != 1 {
            return Err(NumericsError::NotScalar { rows: lr, cols: lc });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<F>>], id: usize, len: usize, f: impl Fn(&mut [F])) {
        let slot = grads[id].get_or_insert_with(|| vec![F::zero(); len]);
        f(slot);
    }

    fn propagate(&self, id: usize, g: &[F], grads: &mut Vec<Option<Vec<F>>>) {
        let node = &self.nodes[id];
        let needs = |tape: &Self, i: usize| tape.nodes[i].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a].rows, self.nodes[a].cols);
                let n = self.nodes[b].cols;
                if needs(self, a) {
                    let da = matmul_nt(g, &self.nodes[b].data, m, n, k);
                    Self::accumulate(grads, a, m * k, |s| add_into(s, &da));
                }
                if needs(self, b) {
                    let db = matmul_tn(&self.nodes[a].data, g, m, k, n);
                    Self::accumulate(grads, b, k * n, |s| add_into(s, &db));
                }
            }
            Op::BlockMatmul { block, rhs, block_rows } => {
                let bn = block_rows;
                let (rows, cols) = (node.rows, node.cols);
                if needs(self, rhs) {
                    // dX_blk = B^T G_blk
                    let b = &self.nodes[block].data;
                    let mut dx = vec![F::zero(); rows * cols];
                    for blk in 0..rows / bn {
                        let base = blk * bn;
                        block_mm_tn(b, &g[base * cols..(base + bn) * cols], &mut dx[base * cols..(base + bn) * cols], bn, cols);
                    }
                    Self::accumulate(grads, rhs, rows * cols, |s| add_into(s, &dx));
                }
                if needs(self, block) {
                    // dB += sum_blk G_blk X_blk^T
                    let x = &self.nodes[rhs].data;
                    let mut db = vec![F::zero(); bn * bn];
                    for blk in 0..rows / bn {
                        let base = blk * bn;
                        let gb = &g[base * cols..(base + bn) * cols];
                        let xb = &x[base * cols..(base + bn) * cols];
                        for i in 0..bn {
                            for j in 0..bn {
                                let mut acc = F::zero();
                                for c in 0..cols {
                                    acc += gb[i * cols + c] * xb[j * cols + c];
                                }
                                db[i * bn + j] += acc;
                            }
                        }
                    }
                    Self::accumulate(grads, block, bn * bn, |s| add_into(s, &db));
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if needs(self, p) {
                        Self::accumulate(grads, p, g.len(), |s| add_into(s, g));
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if needs(self, a) {
                    Self::accumulate(grads, a, g.len(), |s| add_into(s, g));
                }
                if needs(self, bias) {
                    let n = node.cols;
                    Self::accumulate(grads, bias, n, |s| {
                        for (i, &gv) in g.iter().enumerate() {
                            s[i % n] += gv;
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                if needs(self, a) {
                    Self::accumulate(grads, a, g.len(), |s| add_into(s, g));
                }
                if needs(self, b) {
                    Self::accumulate(grads, b, g.len(), |s| {
                        for (sv, &gv) in s.iter_mut().zip(g) {
                            *sv -= gv;
                        }
                    });
                }
            }
            Op::Hadamard(a, b) => {
                if needs(self, a) {
                    let other = &self.nodes[b].data;
                    Self::accumulate(grads, a, g.len(), |s| {
                        for i in 0..g.len() {
                            s[i] += g[i] * other[i];
                        }
                    });
                }
                if needs(self, b) {
                    let other = &self.nodes[a].data;
                    Self::accumulate(grads, b, g.len(), |s| {
                        for i in 0..g.len() {
                            s[i] += g[i] * other[i];
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if needs(self, a) {
                    let out = &node.data;
                    Self::accumulate(grads, a, g.len(), |s| {
                        for i in 0..g.len() {
                            s[i] += g[i] * out[i] * (F::one() - out[i]);
                        }
                    });
                }
            }
            Op::Tanh(a) => {
                if needs(self, a) {
                    let out = &node.data;
                    Self::accumulate(grads, a, g.len(), |s| {
                        for i in 0..g.len() {
                            s[i] += g[i] * (F::one() - out[i] * out[i]);
                        }
                    });
                }
            }
            Op::Relu(a) => {
                if needs(self, a) {
                    // Subgradient at 0 pinned to 0.
                    let inp = &self.nodes[a].data;
                    Self::accumulate(grads, a, g.len(), |s| {
                        for i in 0..g.len() {
                            if inp[i] > F::zero() {
                                s[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::ConcatRows(ref parts) => {
                let n = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let pm = self.nodes[p].rows;
                    if needs(self, p) {
                        let gp = &g[offset * n..(offset + pm) * n];
                        Self::accumulate(grads, p, pm * n, |s| add_into(s, gp));
                    }
                    offset += pm;
                }
            }
            Op::SliceRows { src, start } => {
                if needs(self, src) {
                    let (sm, sn) = (self.nodes[src].rows, self.nodes[src].cols);
                    Self::accumulate(grads, src, sm * sn, |s| {
                        add_into(&mut s[start * sn..start * sn + g.len()], g);
                    });
                }
            }
            Op::Reshape(a) => {
                if needs(self, a) {
                    Self::accumulate(grads, a, g.len(), |s| add_into(s, g));
                }
            }
            Op::Sum(a) => {
                if needs(self, a) {
                    let len = self.nodes[a].data.len();
                    let gv = g[0];
                    Self::accumulate(grads, a, len, |s| {
                        for sv in s.iter_mut() {
                            *sv += gv;
                        }
                    });
                }
            }
            Op::Mean(a) => {
                if needs(self, a) {
                    let len = self.nodes[a].data.len();
                    let gv = g[0] / F::from_usize(len).unwrap();
                    Self::accumulate(grads, a, len, |s| {
                        for sv in s.iter_mut() {
                            *sv += gv;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if needs(self, a) {
                    Self::accumulate(grads, a, g.len(), |s| {
                        for (sv, &gv) in s.iter_mut().zip(g) {
                            *sv += gv * c;
                        }
                    });
                }
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `C = A(m x k) . B(k x n)`.
pub fn matmul_nn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    block_mm_nn_into(a, b, &mut c, m, k, n);
    c
}

fn block_mm_nn_into<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// Square `bn x bn` block times `bn x cols` panel.
fn block_mm_nn<F: Real>(b: &[F], x: &[F], out: &mut [F], bn: usize, cols: usize) {
    block_mm_nn_into(b, x, out, bn, bn, cols);
}

/// `B^T (bn x bn) . X (bn x cols)` panel, accumulated into `out`.
fn block_mm_tn<F: Real>(b: &[F], x: &[F], out: &mut [F], bn: usize, cols: usize) {
    for p in 0..bn {
        for i in 0..bn {
            let bv = b[p * bn + i];
            if bv == F::zero() {
                continue;
            }
            let xrow = &x[p * cols..(p + 1) * cols];
            let orow = &mut out[i * cols..(i + 1) * cols];
            for j in 0..cols {
                orow[j] += bv * xrow[j];
            }
        }
    }
}

/// `C = A(m x k) . B(n x k)^T`, i.e. row-dot-row.
pub fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, n: usize, k_out: usize) -> Vec<F> {
    // a is m x n, b is k_out-col... named for the backward pass:
    // G (m x n) . W(k_out x n)^T -> m x k_out
    let mut c = vec![F::zero(); m * k_out];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k_out {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = F::zero();
            for p in 0..n {
                acc += arow[p] * brow[p];
            }
            c[i * k_out + j] = acc;
        }
    }
    c
}

/// `C = A(m x k)^T . G(m x n)` -> `k x n`.
pub fn matmul_tn<F: Real>(a: &[F], g: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); k * n];
    for row in 0..m {
        let grow = &g[row * n..(row + 1) * n];
        for i in 0..k {
            let av = a[row * k + i];
            if av == F::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * grow[j];
            }
        }
    }
    c
}

/// Named, shaped parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F: Real> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

/// Ordered collection of model parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<F: Real> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<F>) -> usize {
        assert_eq!(rows * cols, data.len());
        assert!(self.index_of(name).is_none(), "duplicate param name {name}");
        self.params.push(Param { name: name.to_string(), rows, cols, data });
        self.params.len() - 1
    }

    /// Xavier-uniform initialized matrix: limit `sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<F> = (0..rows * cols)
            .map(|_| F::from_f64(rng.gen_range(-limit..limit)).unwrap())
            .collect();
        self.add(name, rows, cols, data)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.add(name, rows, cols, vec![F::zero(); rows * cols])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param<F> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<F> {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    /// Inserts every parameter as a grad-requiring leaf on the tape,
    /// returning tape handles in parameter order.
    pub fn insert_leaves(&self, tape: &mut Tape<F>) -> Vec<Value> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.rows, p.cols, p.data.clone(), true))
            .collect()
    }

    /// Collects gradients for leaves previously produced by
    /// [`ParamSet::insert_leaves`], zero-filled where a parameter was unused.
    pub fn collect_grads(&self, tape: &Tape<F>, leaves: &[Value], grads: &Gradients<F>) -> Vec<Vec<F>> {
        leaves
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let _ = tape;
                grads
                    .get(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![F::zero(); self.params[i].data.len()])
            })
            .collect()
    }
}
