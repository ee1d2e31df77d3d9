//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! read in place from a borrowed [`ParamStore`]; nothing is copied for them.
//! [`Tape::backward`] walks the tape once in reverse and returns the
//! gradients of every trainable parameter and every input that asked for one.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Softmax { x: Var, axis: usize },
    CausalMask(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Tanh(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Mean(Var),
    SumAll(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<T>, count: usize },
    Dropout { x: Var, keep: Vec<T> },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a recorded value, if it was reached.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
    }
}

pub struct Tape<'p, T> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), grad_enabled: true, param_nodes: Vec::new() }
    }

    /// A tape that records values only; `backward` yields nothing.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self { grad_enabled: false, ..Self::new(store) }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.tensor(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Input, needs_grad: self.grad_enabled && requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Records a parameter leaf; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_nodes.get(id.0) {
            return *v;
        }
        let trainable = self.store.get(id).trainable;
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: self.grad_enabled && trainable });
        let v = Var(self.nodes.len() - 1);
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        self.param_nodes[id.0] = Some(v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// `x[m×n] + b[n]` broadcast over rows; the only broadcast the engine allows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_bias")?;
        if self.shape(b) != [n] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for r in 0..m {
            for (o, &bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout of every stored weight matrix.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            1,
            k as isize,
            T::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Softmax along `axis`, stabilised by subtracting the running maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, stride) = softmax_layout(t.shape(), axis)?;
        let mut out = t.clone();
        for o in 0..outer {
            let base = base_index(o, len, stride);
            let mut max = T::neg_infinity();
            for i in 0..len {
                max = max.max(out.data()[base + i * stride]);
            }
            if max == T::neg_infinity() {
                // fully masked lane
                for i in 0..len {
                    out.data_mut()[base + i * stride] = T::zero();
                }
                continue;
            }
            let mut sum = T::zero();
            for i in 0..len {
                let e = (out.data()[base + i * stride] - max).exp();
                out.data_mut()[base + i * stride] = e;
                sum += e;
            }
            for i in 0..len {
                out.data_mut()[base + i * stride] /= sum;
            }
        }
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Sets entries above the diagonal to −∞ so a following row softmax
    /// assigns them exactly zero weight.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "causal_mask")?;
        let mut out = self.value(x).clone();
        for i in 0..m {
            for j in (i + 1)..n {
                out.data_mut()[i * n + j] = T::neg_infinity();
            }
        }
        Ok(self.push(out, Op::CausalMask(x), &[x]))
    }

    /// Row-wise layer normalisation with affine gain and bias (eps 1e-5).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::lit(1e-5);
        let nf = T::from_usize(n).unwrap();
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_fwd);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Gathers rows of `table` (vocabulary × dim).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(invalid("embedding", format!("id {bad} outside table of {v} rows")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Stacks matrices vertically. All parts need the same column count;
    /// zero-row parts are allowed.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(invalid("concat_rows", "no parts"));
        }
        let (_, cols) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Joins matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(invalid("concat_cols", "no parts"));
        }
        let (rows, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let cols: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if start + len > m {
            return Err(invalid("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::new(vec![len, n], data)?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(invalid("slice_cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let out = Tensor::new(vec![m, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Mean over every element, producing a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(invalid("mean", "empty tensor"));
        }
        let n = T::from_usize(t.len()).unwrap();
        let out = Tensor::scalar(t.data().iter().copied().sum::<T>() / n);
        Ok(self.push(out, Op::Mean(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().copied().sum::<T>());
        self.push(out, Op::SumAll(x), &[x])
    }

    /// Mean negative log-likelihood over rows where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (t, v) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != t || mask.len() != t {
            return Err(invalid(
                "cross_entropy",
                format!("{t} rows but {} targets and {} mask flags", targets.len(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); t * v];
        let mut total = T::zero();
        for r in 0..t {
            if !mask[r] {
                continue;
            }
            if targets[r] >= v {
                return Err(invalid("cross_entropy", format!("target {} outside vocabulary {v}", targets[r])));
            }
            let row = &src[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (c, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                probs[r * v + c] = e;
                sum += e;
            }
            for c in 0..v {
                probs[r * v + c] /= sum;
            }
            total += sum.ln() + max - row[targets[r]];
        }
        let cnt = T::from_usize(count).unwrap();
        let out = Tensor::scalar(total / cnt);
        Ok(self.push(
            out,
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
            &[logits],
        ))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let scale = T::lit(1.0 / (1.0 - p));
        let keep: Vec<T> =
            (0..self.value(x).len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { scale }).collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&keep).map(|(&a, &k)| a * k).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Dropout { x, keep }, &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(invalid("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { nodes: grads, params: Vec::new() });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if node.needs_grad {
                    let g = grads[i].clone().unwrap_or_else(|| Tensor::zeros(self.store.tensor(id).shape().to_vec()));
                    params.push((id, g));
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        let shape = self.shape(v).to_vec();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize) -> T) {
        if !self.wants(v) {
            return;
        }
        let buf = self.grad_buf(grads, v);
        for (i, x) in buf.data_mut().iter_mut().enumerate() {
            *x += f(i);
        }
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |i| gd[i]);
                self.accumulate(grads, *b, |i| gd[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |i| gd[i]);
                self.accumulate(grads, *b, |i| -gd[i]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |i| gd[i] * vb[i]);
                self.accumulate(grads, *b, |i| gd[i] * va[i]);
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, |i| gd[i] * s);
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |i| gd[i]);
                if self.wants(*b) {
                    let n = self.shape(*b)[0];
                    let buf = self.grad_buf(grads, *b);
                    for (i, &gv) in gd.iter().enumerate() {
                        buf.data_mut()[i % n] += gv;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul")?;
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    // ga += g · bᵀ
                    let vb = self.value(*b).data();
                    let buf = self.grad_buf(grads, *a);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gd,
                        n as isize,
                        1,
                        vb,
                        1,
                        n as isize,
                        T::one(),
                        buf.data_mut(),
                        k as isize,
                        1,
                    );
                }
                if self.wants(*b) {
                    // gb += aᵀ · g
                    let va = self.value(*a).data();
                    let buf = self.grad_buf(grads, *b);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        va,
                        1,
                        k as isize,
                        gd,
                        n as isize,
                        1,
                        T::one(),
                        buf.data_mut(),
                        n as isize,
                        1,
                    );
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul_nt")?;
                let n = self.shape(*b)[0];
                if self.wants(*a) {
                    // ga += g · b
                    let vb = self.value(*b).data();
                    let buf = self.grad_buf(grads, *a);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gd,
                        n as isize,
                        1,
                        vb,
                        k as isize,
                        1,
                        T::one(),
                        buf.data_mut(),
                        k as isize,
                        1,
                    );
                }
                if self.wants(*b) {
                    // gb += gᵀ · a
                    let va = self.value(*a).data();
                    let buf = self.grad_buf(grads, *b);
                    T::gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        gd,
                        1,
                        n as isize,
                        va,
                        k as isize,
                        1,
                        T::one(),
                        buf.data_mut(),
                        k as isize,
                        1,
                    );
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2("transpose")?;
                self.accumulate(grads, *a, |i| gd[(i % n) * m + i / n]);
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let y = self.nodes[idx].value.as_ref().unwrap().data();
                    let (outer, len, stride) = softmax_layout(g.shape(), *axis)?;
                    let buf = self.grad_buf(grads, *x);
                    for o in 0..outer {
                        let base = base_index(o, len, stride);
                        let dot: T = (0..len).map(|i| gd[base + i * stride] * y[base + i * stride]).sum();
                        for i in 0..len {
                            let j = base + i * stride;
                            buf.data_mut()[j] += y[j] * (gd[j] - dot);
                        }
                    }
                }
            }
            Op::CausalMask(x) => {
                let n = self.shape(*x)[1];
                self.accumulate(grads, *x, |i| if i % n > i / n { T::zero() } else { gd[i] });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (m, n) = self.value(*x).dims2("layer_norm")?;
                let gv = self.value(*gain).data();
                if self.wants(*gain) {
                    let buf = self.grad_buf(grads, *gain);
                    for (i, &gi) in gd.iter().enumerate() {
                        buf.data_mut()[i % n] += gi * xhat[i];
                    }
                }
                if self.wants(*bias) {
                    let buf = self.grad_buf(grads, *bias);
                    for (i, &gi) in gd.iter().enumerate() {
                        buf.data_mut()[i % n] += gi;
                    }
                }
                if self.wants(*x) {
                    let nf = T::from_usize(n).unwrap();
                    let buf = self.grad_buf(grads, *x);
                    for r in 0..m {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..n {
                            let gh = gd[r * n + c] * gv[c];
                            s1 += gh;
                            s2 += gh * xhat[r * n + c];
                        }
                        for c in 0..n {
                            let gh = gd[r * n + c] * gv[c];
                            buf.data_mut()[r * n + c] += rstd[r] / nf * (nf * gh - s1 - xhat[r * n + c] * s2);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                self.accumulate(grads, *x, |i| gd[i] * gelu_grad(vx[i]));
            }
            Op::Tanh(x) => {
                let y = self.nodes[idx].value.as_ref().unwrap().data();
                self.accumulate(grads, *x, |i| gd[i] * (T::one() - y[i] * y[i]));
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let d = self.shape(*table)[1];
                    let buf = self.grad_buf(grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            buf.data_mut()[id * d + c] += gd[r * d + c];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |i| gd[offset + i]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let cols = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.accumulate(grads, p, |i| gd[(i / w) * cols + offset + i % w]);
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                if self.wants(*x) {
                    let n = self.shape(*x)[1];
                    let buf = self.grad_buf(grads, *x);
                    for (i, &gi) in gd.iter().enumerate() {
                        buf.data_mut()[start * n + i] += gi;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let n = self.shape(*x)[1];
                    let w = g.shape()[1];
                    let buf = self.grad_buf(grads, *x);
                    for (i, &gi) in gd.iter().enumerate() {
                        buf.data_mut()[(i / w) * n + start + i % w] += gi;
                    }
                }
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).len()).unwrap();
                let gv = gd[0] / n;
                self.accumulate(grads, *x, |_| gv);
            }
            Op::SumAll(x) => {
                let gv = gd[0];
                self.accumulate(grads, *x, |_| gv);
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let v = self.shape(*logits)[1];
                let scale = gd[0] / T::from_usize(*count).unwrap();
                self.accumulate(grads, *logits, |i| {
                    let (r, c) = (i / v, i % v);
                    if !mask[r] {
                        return T::zero();
                    }
                    let onehot = if c == targets[r] { T::one() } else { T::zero() };
                    (probs[i] - onehot) * scale
                });
            }
            Op::Dropout { x, keep } => {
                self.accumulate(grads, *x, |i| gd[i] * keep[i]);
            }
        }
        Ok(())
    }
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// `(lanes, lane length, stride)` for a softmax over `axis`.
fn softmax_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    match (shape, axis) {
        ([n], 0) => Ok((1, *n, 1)),
        ([m, n], 1) => Ok((*m, *n, 1)),
        ([m, n], 0) => Ok((*n, *m, *n)),
        _ => Err(invalid("softmax", format!("axis {axis} invalid for shape {shape:?}"))),
    }
}

fn base_index(lane: usize, len: usize, stride: usize) -> usize {
    if stride == 1 {
        lane * len
    } else {
        lane
    }
}
