use super::graph::{for_each_lane, permute_data, Gradients, Graph, Op, Var};
use super::{axis_extents, gemm_acc, gemm_nt_acc, gemm_tn_acc, Float, Tensor, TensorError};

fn acc<T: Float>(grads: &mut [Option<Vec<T>>], idx: usize, len: usize) -> &mut Vec<T> {
    grads[idx].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Float> Graph<T> {
    /// Reverse pass from a scalar `loss`.
    ///
    /// Consumes the graph: a second call, or any further operation, returns
    /// [`TensorError::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            self.backward_node(id, &gy, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(gy);
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, id: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let rg = |i: usize| nodes[i].requires_grad;
        let len = |i: usize| nodes[i].value.numel();
        let val = |i: usize| nodes[i].value.data();
        let y = nodes[id].value.data();
        match &nodes[id].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                for (i, sign) in [(a, T::one()), (b, T::one())] {
                    if rg(i) {
                        let g = acc(grads, i, len(i));
                        g.iter_mut().zip(gy).for_each(|(g, &d)| *g += sign * d);
                    }
                }
            }
            &Op::Sub(a, b) => {
                for (i, sign) in [(a, T::one()), (b, -T::one())] {
                    if rg(i) {
                        let g = acc(grads, i, len(i));
                        g.iter_mut().zip(gy).for_each(|(g, &d)| *g += sign * d);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if rg(a) {
                    let vb = val(b);
                    let g = acc(grads, a, len(a));
                    for ((g, &d), &o) in g.iter_mut().zip(gy).zip(vb) {
                        *g += d * o;
                    }
                }
                if rg(b) {
                    let va = val(a);
                    let g = acc(grads, b, len(b));
                    for ((g, &d), &o) in g.iter_mut().zip(gy).zip(va) {
                        *g += d * o;
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
                if rg(bias) {
                    let d = len(bias);
                    let g = acc(grads, bias, d);
                    for row in gy.chunks(d) {
                        g.iter_mut().zip(row).for_each(|(g, &r)| *g += r);
                    }
                }
            }
            &Op::AddScalar(x) => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
            }
            &Op::Scale(x, s) => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += s * d);
                }
            }
            &Op::MatMul { a, b, m, k, n } => {
                // dA = dC B^T, dB = A^T dC
                if rg(a) {
                    let vb = val(b);
                    gemm_nt_acc(gy, vb, acc(grads, a, m * k), m, n, k);
                }
                if rg(b) {
                    let va = val(a);
                    gemm_tn_acc(va, gy, acc(grads, b, k * n), m, k, n);
                }
            }
            &Op::MatMulNT { a, b, m, k, n } => {
                // C = A B^T: dA = dC B, dB = dC^T A
                if rg(a) {
                    let vb = val(b);
                    gemm_acc(gy, vb, acc(grads, a, m * k), m, n, k);
                }
                if rg(b) {
                    let va = val(a);
                    gemm_tn_acc(gy, va, acc(grads, b, n * k), m, n, k);
                }
            }
            &Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
                let (va, vb) = (val(a), val(b));
                if rg(a) {
                    let g = acc(grads, a, batch * m * k);
                    for i in 0..batch {
                        let gyi = &gy[i * m * n..(i + 1) * m * n];
                        let bi = &vb[i * k * n..(i + 1) * k * n];
                        let gi = &mut g[i * m * k..(i + 1) * m * k];
                        if trans_b {
                            gemm_acc(gyi, bi, gi, m, n, k);
                        } else {
                            gemm_nt_acc(gyi, bi, gi, m, n, k);
                        }
                    }
                }
                if rg(b) {
                    let g = acc(grads, b, batch * k * n);
                    for i in 0..batch {
                        let gyi = &gy[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let gi = &mut g[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            gemm_tn_acc(gyi, ai, gi, m, n, k);
                        } else {
                            gemm_tn_acc(ai, gyi, gi, m, k, n);
                        }
                    }
                }
            }
            Op::Permute { x, perm } => {
                let x = *x;
                if rg(x) {
                    let out_shape = nodes[id].value.shape();
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let back = permute_data(gy, out_shape, &inv);
                    let g = acc(grads, x, len(x));
                    g.iter_mut().zip(&back).for_each(|(g, &d)| *g += d);
                }
            }
            &Op::Reshape(x) => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
            }
            &Op::Softmax { x, axis } => {
                if rg(x) {
                    let shape = nodes[id].value.shape();
                    let g = acc(grads, x, len(x));
                    for_each_lane(shape, axis, |idx| {
                        let dot: T = idx.clone().map(|i| gy[i] * y[i]).sum();
                        for i in idx {
                            g[i] += y[i] * (gy[i] - dot);
                        }
                    });
                }
            }
            &Op::LogSoftmax { x, axis } => {
                if rg(x) {
                    let shape = nodes[id].value.shape();
                    let g = acc(grads, x, len(x));
                    for_each_lane(shape, axis, |idx| {
                        let total: T = idx.clone().map(|i| gy[i]).sum();
                        for i in idx {
                            g[i] += gy[i] - y[i].exp() * total;
                        }
                    });
                }
            }
            Op::LayerNorm { x, gain, bias, x_hat, rstd } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = len(gain);
                let rows = x_hat.len() / d;
                if rg(gain) {
                    let g = acc(grads, gain, d);
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gy[r * d + j] * x_hat[r * d + j];
                        }
                    }
                }
                if rg(bias) {
                    let g = acc(grads, bias, d);
                    for row in gy.chunks(d) {
                        g.iter_mut().zip(row).for_each(|(g, &r)| *g += r);
                    }
                }
                if rg(x) {
                    let gv = val(gain);
                    let dn = T::of(d as f64);
                    let g = acc(grads, x, rows * d);
                    let mut dxh = vec![T::zero(); d];
                    for r in 0..rows {
                        let xh = &x_hat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxh[j] = gy[r * d + j] * gv[j];
                        }
                        let m1 = dxh.iter().copied().sum::<T>() / dn;
                        let m2 = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for j in 0..d {
                            g[r * d + j] += rstd[r] * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                if rg(table) {
                    let d = nodes[table].value.last_dim();
                    let g = acc(grads, table, len(table));
                    for (r, &i) in ids.iter().enumerate() {
                        for (g, &v) in g[i * d..(i + 1) * d].iter_mut().zip(&gy[r * d..(r + 1) * d]) {
                            *g += v;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &m) in g.iter_mut().zip(gy).zip(mask) {
                        *g += d * m;
                    }
                }
            }
            &Op::Exp(x) => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &yv) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * yv;
                    }
                }
            }
            &Op::Log(x) => {
                if rg(x) {
                    let vx = val(x);
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &xv) in g.iter_mut().zip(gy).zip(vx) {
                        *g += d / xv;
                    }
                }
            }
            &Op::Tanh(x) => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &yv) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * (T::one() - yv * yv);
                    }
                }
            }
            &Op::Relu(x) => {
                if rg(x) {
                    let vx = val(x);
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &xv) in g.iter_mut().zip(gy).zip(vx) {
                        if xv > T::zero() {
                            *g += d;
                        }
                    }
                }
            }
            &Op::Cos(x) => {
                if rg(x) {
                    let vx = val(x);
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &xv) in g.iter_mut().zip(gy).zip(vx) {
                        *g -= d * xv.sin();
                    }
                }
            }
            &Op::ClampMin { x, min } => {
                if rg(x) {
                    let vx = val(x);
                    let g = acc(grads, x, len(x));
                    for ((g, &d), &xv) in g.iter_mut().zip(gy).zip(vx) {
                        if xv >= min {
                            *g += d;
                        }
                    }
                }
            }
            &Op::SumAll(x) => {
                if rg(x) {
                    let g = acc(grads, x, len(x));
                    g.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            &Op::MeanAll(x) => {
                if rg(x) {
                    let n = len(x);
                    let s = gy[0] / T::of(n as f64);
                    acc(grads, x, n).iter_mut().for_each(|g| *g += s);
                }
            }
            &Op::SumAxis { x, axis } | &Op::MeanAxis { x, axis } => {
                if rg(x) {
                    let (outer, n, inner) = axis_extents(nodes[x].value.shape(), axis);
                    let s = match nodes[id].op {
                        Op::MeanAxis { .. } => T::one() / T::of(n as f64),
                        _ => T::one(),
                    };
                    let g = acc(grads, x, len(x));
                    for o in 0..outer {
                        for a in 0..n {
                            let dst = &mut g[(o * n + a) * inner..(o * n + a + 1) * inner];
                            for (d, &v) in dst.iter_mut().zip(&gy[o * inner..(o + 1) * inner]) {
                                *d += s * v;
                            }
                        }
                    }
                }
            }
            Op::MaskedMean { x, weights, batch, len: l } => {
                let (x, batch, l) = (*x, *batch, *l);
                if rg(x) {
                    let d = nodes[x].value.last_dim();
                    let g = acc(grads, x, batch * l * d);
                    for b in 0..batch {
                        for t in 0..l {
                            let w = weights[b * l + t];
                            if w == T::zero() {
                                continue;
                            }
                            let dst = &mut g[(b * l + t) * d..(b * l + t + 1) * d];
                            for (o, &v) in dst.iter_mut().zip(&gy[b * d..(b + 1) * d]) {
                                *o += w * v;
                            }
                        }
                    }
                }
            }
            Op::Pick { x, idx } => {
                let x = *x;
                if rg(x) {
                    let n = nodes[x].value.last_dim();
                    let g = acc(grads, x, len(x));
                    for (r, &c) in idx.iter().enumerate() {
                        g[r * n + c] += gy[r];
                    }
                }
            }
        }
    }
}
