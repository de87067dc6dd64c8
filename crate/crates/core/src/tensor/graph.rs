use rand::Rng;

use super::{axis_extents, gemm_acc, gemm_nt_acc, shape_err, Float, Tensor, TensorError};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias { x: usize, bias: usize },
    AddScalar(usize),
    Scale(usize, T),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    MatMulNT { a: usize, b: usize, m: usize, k: usize, n: usize },
    BatchMatMul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Permute { x: usize, perm: Vec<usize> },
    Reshape(usize),
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, x_hat: Vec<T>, rstd: Vec<T> },
    Gather { table: usize, ids: Vec<usize> },
    Dropout { x: usize, mask: Vec<T> },
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Cos(usize),
    ClampMin { x: usize, min: T },
    SumAll(usize),
    MeanAll(usize),
    SumAxis { x: usize, axis: usize },
    MeanAxis { x: usize, axis: usize },
    MaskedMean { x: usize, weights: Vec<T>, batch: usize, len: usize },
    Pick { x: usize, idx: Vec<usize> },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Define-by-run operation record.
///
/// Nodes are appended in execution order, which is a valid topological order.
/// A graph supports exactly one call to [`Graph::backward`]; afterwards every
/// operation on it fails with [`TensorError::GraphConsumed`].
pub struct Graph<T: Float> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) consumed: bool,
}

/// Gradient table produced by [`Graph::backward`].
pub struct Gradients<T> {
    pub(crate) grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` required one and was
    /// reachable from the loss. Unreached inputs report `None`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Trainable input: gradients are accumulated for it.
    pub fn param(&mut self, t: Tensor<T>) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, true)
    }

    /// Fixed input: no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var, TensorError> {
        self.same_shape(op, a, b)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape.clone(), data);
        let rg = self.rg(&[a.0, b.0]);
        self.push(out, rec, rg)
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, rec: Op<T>) -> Result<Var, TensorError> {
        let vx = &self.nodes[x.0].value;
        let out = Tensor::from_parts(vx.shape.clone(), vx.data.iter().map(|&v| f(v)).collect());
        let rg = self.rg(&[x.0]);
        self.push(out, rec, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Broadcast add of a `[d]` bias over the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return shape_err("add_bias", format!("bias {:?} for last dim {d}", self.shape(bias)));
        }
        let vx = &self.nodes[x.0].value;
        let vb = &self.nodes[bias.0].value.data;
        let mut data = vx.data.clone();
        for row in data.chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(vb) {
                *o += b;
            }
        }
        let out = Tensor::from_parts(vx.shape.clone(), data);
        let rg = self.rg(&[x.0, bias.0]);
        self.push(out, Op::AddBias { x: x.0, bias: bias.0 }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let c = T::of(c);
        self.map(x, |v| v + c, Op::AddScalar(x.0))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        let s = T::of(s);
        self.map(x, |v| v * s, Op::Scale(x.0, s))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.scale(x, -1.0)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a: a.0, b: b.0, m, k, n }, rg)
    }

    /// `[m,k] x [n,k]^T -> [m,n]` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return shape_err("matmul_nt", format!("{sa:?} x {sb:?}^T"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        gemm_nt_acc(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, &mut out, m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT { a: a.0, b: b.0, m, k, n }, rg)
    }

    /// Batched product `[B,m,k] x [B,k,n]`, or `[B,m,k] x [B,n,k]^T` when
    /// `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err("batch_matmul", format!("{sa:?} x {sb:?}"));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return shape_err("batch_matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let da = &self.nodes[a.0].value.data;
            let db = &self.nodes[b.0].value.data;
            for i in 0..batch {
                let ai = &da[i * m * k..(i + 1) * m * k];
                let bi = &db[i * k * n..(i + 1) * k * n];
                let oi = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    gemm_nt_acc(ai, bi, oi, m, k, n);
                } else {
                    gemm_acc(ai, bi, oi, m, k, n);
                }
            }
        }
        let rg = self.rg(&[a.0, b.0]);
        let op = Op::BatchMatMul { a: a.0, b: b.0, batch, m, k, n, trans_b };
        self.push(Tensor::from_parts(vec![batch, m, n], out), op, rg)
    }

    /// 2-d transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        if self.shape(x).len() != 2 {
            return shape_err("transpose", format!("expected 2-d, got {:?}", self.shape(x)));
        }
        self.permute(x, &[1, 0])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("perm {perm:?} for shape {shape:?}"));
        }
        let out = permute_data(&self.nodes[x.0].value.data, &shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::from_parts(out_shape, out), Op::Permute { x: x.0, perm: perm.to_vec() }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let out = Tensor::from_parts(shape.to_vec(), self.nodes[x.0].value.data.clone());
        let rg = self.rg(&[x.0]);
        self.push(out, Op::Reshape(x.0), rg)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), TensorError> {
        if axis >= self.shape(x).len() {
            return shape_err(op, format!("axis {axis} for shape {:?}", self.shape(x)));
        }
        Ok(())
    }

    fn check_finite(&self, op: &'static str, x: Var) -> Result<(), TensorError> {
        if !self.value(x).all_finite() {
            return Err(TensorError::Numeric {
                op,
                detail: "non-finite input".into(),
            });
        }
        Ok(())
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("softmax", x, axis)?;
        self.check_finite("softmax", x)?;
        let v = &self.nodes[x.0].value;
        let mut out = v.data.clone();
        for_each_lane(&v.shape, axis, |idx| {
            let mx = idx.clone().map(|i| out[i]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for i in idx.clone() {
                out[i] = (out[i] - mx).exp();
                s += out[i];
            }
            for i in idx {
                out[i] /= s;
            }
        });
        let out = Tensor::from_parts(v.shape.clone(), out);
        let rg = self.rg(&[x.0]);
        self.push(out, Op::Softmax { x: x.0, axis }, rg)
    }

    /// Max-stabilised log-softmax along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("log_softmax", x, axis)?;
        self.check_finite("log_softmax", x)?;
        let v = &self.nodes[x.0].value;
        let mut out = v.data.clone();
        for_each_lane(&v.shape, axis, |idx| {
            let mx = idx.clone().map(|i| out[i]).fold(T::neg_infinity(), T::max);
            let s: T = idx.clone().map(|i| (out[i] - mx).exp()).sum();
            let lse = mx + s.ln();
            for i in idx {
                out[i] -= lse;
            }
        });
        let out = Tensor::from_parts(v.shape.clone(), out);
        let rg = self.rg(&[x.0]);
        self.push(out, Op::LogSoftmax { x: x.0, axis }, rg)
    }

    /// Normalises each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return shape_err(
                "layer_norm",
                format!("gain {:?} bias {:?} for last dim {d}", self.shape(gain), self.shape(bias)),
            );
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value.data;
        let b = &self.nodes[bias.0].value.data;
        let rows = xv.numel() / d;
        let mut x_hat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = &xv.data[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                x_hat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(xv.shape.clone(), out);
        let rg = self.rg(&[x.0, gain.0, bias.0]);
        self.push(out, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, x_hat, rstd }, rg)
    }

    /// Row lookup: `table[V,d]`, `ids` in `[0,V)` -> `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return shape_err("gather_rows", format!("table must be 2-d, got {shape:?}"));
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return shape_err("gather_rows", format!("id {bad} out of range for {rows} rows"));
        }
        if ids.is_empty() {
            return shape_err("gather_rows", "no ids");
        }
        let t = &self.nodes[table.0].value.data;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table.0]);
        let op = Op::Gather { table: table.0, ids: ids.to_vec() };
        self.push(Tensor::from_parts(vec![ids.len(), d], out), op, rg)
    }

    /// Inverted dropout. Identity when `rng` is `None` (evaluation) or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var, TensorError> {
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(x),
        };
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Numeric {
                op: "dropout",
                detail: format!("p={p} outside [0,1)"),
            });
        }
        let keep = T::of(1.0 / (1.0 - p));
        let v = &self.nodes[x.0].value;
        let mask: Vec<T> = (0..v.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = v.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::from_parts(v.shape.clone(), out);
        let rg = self.rg(&[x.0]);
        self.push(out, Op::Dropout { x: x.0, mask }, rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, |v| v.exp(), Op::Exp(x.0))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, |v| v.ln(), Op::Log(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, |v| v.tanh(), Op::Tanh(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, |v| v.max(T::zero()), Op::Relu(x.0))
    }

    pub fn cos(&mut self, x: Var) -> Result<Var, TensorError> {
        self.map(x, |v| v.cos(), Op::Cos(x.0))
    }

    /// `max(x, min)`; clamped entries pass no gradient.
    pub fn clamp_min(&mut self, x: Var, min: f64) -> Result<Var, TensorError> {
        let min = T::of(min);
        self.map(x, |v| v.max(min), Op::ClampMin { x: x.0, min })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data.iter().copied().sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::SumAll(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let s = v.data.iter().copied().sum::<T>() / T::of(v.numel() as f64);
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::MeanAll(x.0), rg)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var, TensorError> {
        self.check_axis(if mean { "mean_axis" } else { "sum_axis" }, x, axis)?;
        let v = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_extents(&v.shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &v.data[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (dst, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        if mean {
            let inv = T::one() / T::of(n as f64);
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let mut shape: Vec<usize> = v.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(&[x.0]);
        let op = if mean { Op::MeanAxis { x: x.0, axis } } else { Op::SumAxis { x: x.0, axis } };
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce_axis(x, axis, true)
    }

    /// Mean over the positions of `x[b, len, d]` where `mask[b*len]` is set.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
            return shape_err("masked_mean", format!("x {shape:?}, mask len {}", mask.len()));
        }
        let (batch, len, d) = (shape[0], shape[1], shape[2]);
        let mut weights = vec![T::zero(); batch * len];
        for b in 0..batch {
            let row = &mask[b * len..(b + 1) * len];
            let count = row.iter().filter(|&&m| m).count();
            if count == 0 {
                return shape_err("masked_mean", format!("sequence {b} has no unmasked positions"));
            }
            let w = T::one() / T::of(count as f64);
            for (t, &m) in row.iter().enumerate() {
                if m {
                    weights[b * len + t] = w;
                }
            }
        }
        let xv = &self.nodes[x.0].value.data;
        let mut out = vec![T::zero(); batch * d];
        for b in 0..batch {
            let acc = &mut out[b * d..(b + 1) * d];
            for t in 0..len {
                let w = weights[b * len + t];
                if w == T::zero() {
                    continue;
                }
                for (o, &v) in acc.iter_mut().zip(&xv[(b * len + t) * d..(b * len + t + 1) * d]) {
                    *o += w * v;
                }
            }
        }
        let rg = self.rg(&[x.0]);
        let op = Op::MaskedMean { x: x.0, weights, batch, len };
        self.push(Tensor::from_parts(vec![batch, d], out), op, rg)
    }

    /// `x[b, n]` -> `[b]` with entry `i` equal to `x[i, idx[i]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x);
        if shape.len() != 2 || shape[0] != idx.len() {
            return shape_err("pick", format!("x {shape:?}, {} indices", idx.len()));
        }
        let n = shape[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return shape_err("pick", format!("index {bad} out of range {n}"));
        }
        let xv = &self.nodes[x.0].value.data;
        let out = idx.iter().enumerate().map(|(r, &c)| xv[r * n + c]).collect();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::from_parts(vec![idx.len()], out), Op::Pick { x: x.0, idx: idx.to_vec() }, rg)
    }
}

/// Calls `f` with the flat indices of every 1-d lane along `axis`.
pub(crate) fn for_each_lane<F>(shape: &[usize], axis: usize, mut f: F)
where
    F: FnMut(std::iter::StepBy<std::ops::Range<usize>>),
{
    let (outer, n, inner) = axis_extents(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let start = o * n * inner + i;
            f((start..start + n * inner).step_by(inner));
        }
    }
}

pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    out
}
