use std::collections::BTreeMap;

use super::gemm::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Forward-pass floating point operation counts, keyed by scope name.
///
/// One multiply-accumulate counts as two operations; elementwise arithmetic
/// and nonlinearities count one per element; a softmax counts five per
/// element (max, subtract, exp, sum, divide). Data movement is free.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopCounter {
    by_scope: BTreeMap<String, u64>,
}

impl FlopCounter {
    pub fn total(&self) -> u64 {
        self.by_scope.values().sum()
    }

    pub fn get(&self, scope: &str) -> u64 {
        self.by_scope.get(scope).copied().unwrap_or(0)
    }

    pub fn scopes(&self) -> impl Iterator<Item = (&str, u64)> {
        self.by_scope.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn add(&mut self, scope: &str, flops: u64) {
        if flops == 0 {
            return;
        }
        match self.by_scope.get_mut(scope) {
            Some(v) => *v += flops,
            None => {
                self.by_scope.insert(scope.to_string(), flops);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    in_len: usize,
    out_ch: usize,
    out_len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, bt: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar { x: Var, s: Var },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Sum(Var),
    Reshape(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    Concat(Vec<Var>),
    PadLast { x: Var, from: usize, to: usize },
    MaxRows { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    PairwiseDiff(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, cols: Vec<f64>, geom: ConvGeom },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// A dynamic computation graph recorded during one forward pass.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in
/// reverse and accumulates gradients into the [`ParamStore`] tensors bound
/// with [`Tape::param`]. A tape is single-use: build a new one per pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    flops: FlopCounter,
    scope: &'static str,
}

fn row_len(shape: &[usize]) -> usize {
    *shape.last().expect("tensor shapes are never empty")
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            scope: "default",
            ..Self::default()
        }
    }

    /// Sets the scope that subsequent operations charge their FLOPs to.
    pub fn set_scope(&mut self, scope: &'static str) {
        self.scope = scope;
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shapes are validated on push")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, tracked: bool, flops: u64) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.flops.add(self.scope, flops);
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf(None), false, 0)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape, data)?))
    }

    /// Binds a stored parameter as a leaf. Binding the same id twice returns
    /// the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.0) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf(Some(id)),
            t.requires_grad(),
            0,
        );
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        self.bound[id.0] = Some(v);
        v
    }

    fn matmul_impl(&mut self, a: Var, b: Var, bt: bool, op: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(op, sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if bt { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape(op, sa, sb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), bt, &mut out, false);
        let tracked = self.tracked(a) || self.tracked(b);
        let flops = 2 * (m * k * n) as u64;
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n, bt }, tracked, flops))
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, "matmul")
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, "matmul_t")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        let n = out.len() as u64;
        self.push(self.shape(a).to_vec(), out, op, tracked, n)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds `bias` (length = last extent of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = row_len(sx);
        if sb.len() != 1 || sb[0] != n {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let tracked = self.tracked(x) || self.tracked(bias);
        let flops = out.len() as u64;
        Ok(self.push(sx.to_vec(), out, Op::AddBias { x, bias }, tracked, flops))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let tracked = self.tracked(x);
        let n = out.len() as u64;
        self.push(self.shape(x).to_vec(), out, op, tracked, n)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar", self.shape(x), self.shape(s)));
        }
        let c = self.scalar(s);
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let tracked = self.tracked(x) || self.tracked(s);
        let n = out.len() as u64;
        Ok(self.push(self.shape(x).to_vec(), out, Op::MulScalar { x, s }, tracked, n))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = row_len(&shape);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let tracked = self.tracked(x);
        let flops = 5 * out.len() as u64;
        Ok(self.push(shape, out, Op::Softmax(x), tracked, flops))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        let tracked = self.tracked(x);
        let n = self.value(x).len() as u64;
        self.push(vec![1], vec![s], Op::Sum(x), tracked, n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), tracked, 0))
    }

    /// Selects rows (slices along the first axis) in the given order.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if idx.is_empty() {
            return Err(Error::EmptySet("gather_rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= shape[0]) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of range for {shape:?}")));
        }
        let stride: usize = shape[1..].iter().product();
        let src = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            out.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
        let mut new_shape = shape;
        new_shape[0] = idx.len();
        let tracked = self.tracked(x);
        Ok(self.push(new_shape, out, Op::GatherRows { x, idx: idx.to_vec() }, tracked, 0))
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptySet("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), tracked, 0))
    }

    /// Zero-pads the last axis up to length `to`.
    pub fn pad_last(&mut self, x: Var, to: usize) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        let from = row_len(&shape);
        if to < from {
            return Err(Error::dim("pad_last", format!("cannot pad length {from} down to {to}")));
        }
        let mut out = Vec::with_capacity(self.value(x).len() / from * to);
        for row in self.value(x).chunks_exact(from) {
            out.extend_from_slice(row);
            out.extend(std::iter::repeat(0.0).take(to - from));
        }
        *shape.last_mut().unwrap() = to;
        let tracked = self.tracked(x);
        Ok(self.push(shape, out, Op::PadLast { x, from, to }, tracked, 0))
    }

    fn rows_cols(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [n, d] => Ok((n, d)),
            _ => Err(Error::dim(op, format!("expected a matrix, got {:?}", self.shape(x)))),
        }
    }

    /// Coordinatewise maximum over rows of an `n×d` matrix.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.rows_cols("max_rows", x)?;
        let v = self.value(x);
        let mut argmax = vec![0usize; d];
        let mut out = v[..d].to_vec();
        for i in 1..n {
            for j in 0..d {
                if v[i * d + j] > out[j] {
                    out[j] = v[i * d + j];
                    argmax[j] = i;
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(vec![d], out, Op::MaxRows { x, argmax }, tracked, (n * d) as u64))
    }

    /// Arithmetic mean over rows of an `n×d` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.rows_cols("mean_rows", x)?;
        let v = self.value(x);
        let mut out = vec![0.0; d];
        for row in v.chunks_exact(d) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let tracked = self.tracked(x);
        Ok(self.push(vec![d], out, Op::MeanRows(x), tracked, (n * d + d) as u64))
    }

    /// `out[i][j] = x[i] - x[j]` for an `n×c` input, giving `n×n×c`.
    pub fn pairwise_diff(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.rows_cols("pairwise_diff", x)?;
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * n * c);
        for i in 0..n {
            for j in 0..n {
                for k in 0..c {
                    out.push(v[i * c + k] - v[j * c + k]);
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(vec![n, n, c], out, Op::PairwiseDiff(x), tracked, (n * n * c) as u64))
    }

    /// One-dimensional cross-correlation.
    ///
    /// `x` is `[batch, in_ch, len]` (or `[in_ch, len]`), `weight` is
    /// `[out_ch, in_ch, kernel]`, `bias` is `[out_ch]`. The output is
    /// `[batch, out_ch, out_len]` (or `[out_ch, out_len]`) with
    /// `out_len = (len + 2·padding − kernel) / stride + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(weight).to_vec();
        let (batch, in_ch, in_len, batched) = match sx[..] {
            [b, c, l] => (b, c, l, true),
            [c, l] => (1, c, l, false),
            _ => return Err(Error::dim("conv1d", format!("input must be 2-D or 3-D, got {sx:?}"))),
        };
        let (out_ch, kernel) = match sw[..] {
            [o, c, k] if c == in_ch => (o, k),
            _ => return Err(Error::shape("conv1d", &sx, &sw)),
        };
        if let Some(b) = bias {
            if self.shape(b) != [out_ch] {
                return Err(Error::shape("conv1d bias", &sw, self.shape(b)));
            }
        }
        if stride == 0 {
            return Err(Error::dim("conv1d", "stride must be positive"));
        }
        if in_len + 2 * padding < kernel {
            return Err(Error::dim(
                "conv1d",
                format!("kernel {kernel} longer than padded input {}", in_len + 2 * padding),
            ));
        }
        let out_len = (in_len + 2 * padding - kernel) / stride + 1;
        let geom = ConvGeom {
            batch,
            in_ch,
            in_len,
            out_ch,
            out_len,
            kernel,
            stride,
            padding,
        };

        let ck = in_ch * kernel;
        let cols_w = batch * out_len;
        let xv = self.value(x);
        let mut cols = vec![0.0; ck * cols_w];
        for c in 0..in_ch {
            for k in 0..kernel {
                let row = &mut cols[(c * kernel + k) * cols_w..(c * kernel + k + 1) * cols_w];
                for b in 0..batch {
                    let src = &xv[(b * in_ch + c) * in_len..(b * in_ch + c + 1) * in_len];
                    for t in 0..out_len {
                        let pos = (t * stride + k) as isize - padding as isize;
                        if pos >= 0 && (pos as usize) < in_len {
                            row[b * out_len + t] = src[pos as usize];
                        }
                    }
                }
            }
        }
        let mut y = vec![0.0; out_ch * cols_w];
        gemm(out_ch, ck, cols_w, self.value(weight), false, &cols, false, &mut y, false);

        let mut out = vec![0.0; batch * out_ch * out_len];
        let bv = bias.map(|b| self.value(b).to_vec());
        for o in 0..out_ch {
            let add = bv.as_ref().map_or(0.0, |b| b[o]);
            for b in 0..batch {
                let dst = &mut out[(b * out_ch + o) * out_len..(b * out_ch + o + 1) * out_len];
                let src = &y[o * cols_w + b * out_len..o * cols_w + (b + 1) * out_len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + add;
                }
            }
        }
        let shape = if batched {
            vec![batch, out_ch, out_len]
        } else {
            vec![out_ch, out_len]
        };
        let tracked =
            self.tracked(x) || self.tracked(weight) || bias.is_some_and(|b| self.tracked(b));
        let per_out = 2 * ck as u64 + u64::from(bias.is_some());
        let flops = per_out * (out_ch * cols_w) as u64;
        Ok(self.push(
            shape,
            out,
            Op::Conv1d {
                x,
                w: weight,
                b: bias,
                cols,
                geom,
            },
            tracked,
            flops,
        ))
    }

    /// Cross-entropy of a logit vector against one class id.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let c = self.value(logits).len();
        let rows = self.reshape(logits, &[1, c])?;
        self.cross_entropy_rows(rows, &[Some(target)])
    }

    /// Mean cross-entropy over the rows of an `n×c` logit matrix, skipping
    /// rows whose target is `None`. With no labeled rows the result is 0.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, c) = self.rows_cols("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(Error::dim(
                "cross_entropy",
                format!("{n} logit rows but {} targets", targets.len()),
            ));
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::Label(format!("target {t} out of range for {c} classes")));
        }
        let v = self.value(logits);
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0;
        for (r, target) in targets.iter().enumerate() {
            let row = &v[r * c..(r + 1) * c];
            let p = &mut probs[r * c..(r + 1) * c];
            p.copy_from_slice(row);
            softmax_in_place(p);
            if let Some(t) = *target {
                total += nll(row, t);
                count += 1;
            }
        }
        let value = if count > 0 { total / count as f64 } else { 0.0 };
        let tracked = self.tracked(logits) && count > 0;
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            count,
        };
        Ok(self.push(vec![1], vec![value], op, tracked, 4 * (n * c) as u64))
    }

    /// Smallest distance of any ReLU input from zero and of any max-pool
    /// winner from its runner-up. Finite-difference checks are only
    /// meaningful when this exceeds the probe step.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x) {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxRows { x, .. } => {
                    let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let v = self.value(*x);
                    for j in 0..d {
                        let mut col: Vec<f64> = (0..n).map(|i| v[i * d + j]).collect();
                        col.sort_by(|a, b| b.total_cmp(a));
                        if n > 1 {
                            margin = margin.min(col[0] - col[1]);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse-mode sweep from a scalar `loss`, adding gradients into the
    /// tracked parameters of `store`. Calling it twice without zeroing the
    /// store accumulates.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.propagate(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf(Some(id)) => {
                if let Some(buf) = store.get_mut(*id).grad_mut() {
                    for (b, gi) in buf.iter_mut().zip(g) {
                        *b += gi;
                    }
                }
            }
            Op::Leaf(None) => {}
            &Op::MatMul { a, b, m, k, n, bt } => {
                if self.tracked(a) {
                    let da = acc(grads, a, m * k);
                    gemm(m, n, k, g, false, self.value(b), !bt, da, true);
                }
                if self.tracked(b) {
                    let db = acc(grads, b, k * n);
                    if bt {
                        gemm(n, m, k, g, true, self.value(a), false, db, true);
                    } else {
                        gemm(k, m, n, self.value(a), true, g, false, db, true);
                    }
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.tracked(a) {
                    add_into(acc(grads, a, g.len()), g, 1.0);
                }
                if self.tracked(b) {
                    add_into(acc(grads, b, g.len()), g, sign);
                }
            }
            &Op::Mul(a, b) => {
                if self.tracked(a) {
                    let bv = self.value(b);
                    let da = acc(grads, a, g.len());
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if self.tracked(b) {
                    let av = self.value(a);
                    let db = acc(grads, b, g.len());
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if self.tracked(x) {
                    add_into(acc(grads, x, g.len()), g, 1.0);
                }
                if self.tracked(bias) {
                    let n = len(bias);
                    let db = acc(grads, bias, n);
                    for row in g.chunks_exact(n) {
                        add_into(db, row, 1.0);
                    }
                }
            }
            &Op::Scale(x, c) => add_into(acc(grads, x, g.len()), g, c),
            &Op::AddScalar(x) | &Op::Reshape(x) => add_into(acc(grads, x, g.len()), g, 1.0),
            &Op::MulScalar { x, s } => {
                let c = self.scalar(s);
                if self.tracked(x) {
                    add_into(acc(grads, x, g.len()), g, c);
                }
                if self.tracked(s) {
                    let dot: f64 = g.iter().zip(self.value(x)).map(|(a, b)| a * b).sum();
                    acc(grads, s, 1)[0] += dot;
                }
            }
            &Op::Tanh(x) => {
                let dx = acc(grads, x, g.len());
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * (1.0 - y * y);
                }
            }
            &Op::Sigmoid(x) => {
                let dx = acc(grads, x, g.len());
                for ((d, gi), y) in dx.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * y * (1.0 - y);
                }
            }
            &Op::Relu(x) => {
                let xv = self.value(x);
                let dx = acc(grads, x, g.len());
                for ((d, gi), v) in dx.iter_mut().zip(g).zip(xv) {
                    if *v > 0.0 {
                        *d += gi;
                    }
                }
            }
            &Op::Softmax(x) => {
                let n = row_len(&node.shape);
                let dx = acc(grads, x, g.len());
                for ((drow, grow), yrow) in dx
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(node.value.chunks_exact(n))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gi), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += y * (gi - dot);
                    }
                }
            }
            &Op::Sum(x) => {
                let n = len(x);
                acc(grads, x, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::GatherRows { x, idx } => {
                let n = len(*x);
                let stride = g.len() / idx.len();
                let dx = acc(grads, *x, n);
                for (r, &i) in idx.iter().enumerate() {
                    add_into(
                        &mut dx[i * stride..(i + 1) * stride],
                        &g[r * stride..(r + 1) * stride],
                        1.0,
                    );
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = len(p);
                    if self.tracked(p) {
                        add_into(acc(grads, p, n), &g[off..off + n], 1.0);
                    }
                    off += n;
                }
            }
            &Op::PadLast { x, from, to } => {
                let dx = acc(grads, x, len(x));
                for (drow, grow) in dx.chunks_exact_mut(from).zip(g.chunks_exact(to)) {
                    add_into(drow, &grow[..from], 1.0);
                }
            }
            Op::MaxRows { x, argmax } => {
                let d = argmax.len();
                let dx = acc(grads, *x, len(*x));
                for (j, &i) in argmax.iter().enumerate() {
                    dx[i * d + j] += g[j];
                }
            }
            &Op::MeanRows(x) => {
                let d = g.len();
                let n = len(x) / d;
                let inv = 1.0 / n as f64;
                let dx = acc(grads, x, n * d);
                for row in dx.chunks_exact_mut(d) {
                    add_into(row, g, inv);
                }
            }
            &Op::PairwiseDiff(x) => {
                let (n, c) = (self.shape(x)[0], self.shape(x)[1]);
                let dx = acc(grads, x, n * c);
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..c {
                            let gv = g[(i * n + j) * c + k];
                            dx[i * c + k] += gv;
                            dx[j * c + k] -= gv;
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, cols, geom } => {
                self.conv1d_backward(*x, *w, *b, cols, geom, g, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = probs.len() / targets.len();
                let scale = g[0] / *count as f64;
                let dx = acc(grads, *logits, probs.len());
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dx[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        cols: &[f64],
        geom: &ConvGeom,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let ConvGeom {
            batch,
            in_ch,
            in_len,
            out_ch,
            out_len,
            kernel,
            stride,
            padding,
        } = *geom;
        let ck = in_ch * kernel;
        let cols_w = batch * out_len;
        // Regroup the output gradient as [out_ch, batch·out_len].
        let mut gy = vec![0.0; out_ch * cols_w];
        for bb in 0..batch {
            for o in 0..out_ch {
                let src = &g[(bb * out_ch + o) * out_len..(bb * out_ch + o + 1) * out_len];
                gy[o * cols_w + bb * out_len..o * cols_w + (bb + 1) * out_len].copy_from_slice(src);
            }
        }
        if let Some(b) = b.filter(|&b| self.tracked(b)) {
            let db = acc(grads, b, out_ch);
            for (o, row) in gy.chunks_exact(cols_w).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if self.tracked(w) {
            let dw = acc(grads, w, out_ch * ck);
            gemm(out_ch, cols_w, ck, &gy, false, cols, true, dw, true);
        }
        if self.tracked(x) {
            let mut dcols = vec![0.0; ck * cols_w];
            gemm(ck, out_ch, cols_w, self.value(w), true, &gy, false, &mut dcols, false);
            let dx = acc(grads, x, batch * in_ch * in_len);
            for c in 0..in_ch {
                for k in 0..kernel {
                    let row = &dcols[(c * kernel + k) * cols_w..(c * kernel + k + 1) * cols_w];
                    for bb in 0..batch {
                        let dst = &mut dx[(bb * in_ch + c) * in_len..(bb * in_ch + c + 1) * in_len];
                        for t in 0..out_len {
                            let pos = (t * stride + k) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < in_len {
                                dst[pos as usize] += row[bb * out_len + t];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `-log softmax(row)[t]`, computed as `(max − row[t]) + ln(1 + Σ_{j≠argmax} e^{row[j]−max})`
/// so that confident predictions keep their precision.
fn nll(row: &[f64], t: usize) -> f64 {
    let (arg, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != arg)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max - row[t]) + rest.ln_1p()
}
