//! Forward operations. Each appends one node to the tape.

use crate::error::{Result, TensorError};
use crate::graph::{im2col, permuted_strides, BinKind, Conv2dSpec, Graph, Op, UnKind, Var};
use crate::tensor::{broadcast_shape, expand, for_each_strided, gemm, split_axis, Element, Tensor};

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased (population) variance of the batch.
    pub var: Vec<F>,
    pub count: usize,
}

impl<F: Element> Graph<F> {
    fn binary(&mut self, name: &'static str, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| TensorError::shapes(name, ta.shape(), tb.shape()))?;
        let f = |x: F, y: F| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
            BinKind::Max => {
                if x >= y {
                    x
                } else {
                    y
                }
            }
        };
        let data: Vec<F> = if ta.shape() == shape.as_slice() && tb.shape() == shape.as_slice() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ea = expand(ta, &shape);
            let eb = expand(tb, &shape);
            ea.into_iter().zip(eb).map(|(x, y)| f(x, y)).collect()
        };
        let value = Tensor::new(shape, data)?;
        self.push(name, value, Op::Binary(kind, a, b), &[a, b])
    }

    /// Broadcasting element-wise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", BinKind::Div, a, b)
    }

    /// Element-wise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", BinKind::Max, a, b)
    }

    fn unary(&mut self, name: &'static str, kind: UnKind, x: Var) -> Result<Var> {
        let one = F::one();
        let value = self.value(x).map(|v| match kind {
            UnKind::Sigmoid => {
                if v >= F::zero() {
                    one / (one + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (one + e)
                }
            }
            UnKind::Tanh => v.tanh(),
            UnKind::Exp => v.exp(),
            UnKind::Log => v.ln(),
            UnKind::Abs => v.abs(),
            UnKind::Square => v * v,
        });
        self.push(name, value, Op::Unary(kind, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", UnKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", UnKind::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", UnKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", UnKind::Log, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", UnKind::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", UnKind::Square, x)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -F::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Result<Var> {
        let value = self
            .value(x)
            .map(|v| if v >= F::zero() { v } else { v * slope });
        self.push("leaky_relu", value, Op::LeakyRelu(x, slope), &[x])
    }

    fn last_axis_rows(&self, name: &'static str, x: Var) -> Result<usize> {
        let shape = self.shape(x);
        match shape.last() {
            Some(&c) if c > 0 => Ok(c),
            _ => Err(TensorError::invalid(name, format!("needs a non-empty last axis, got {shape:?}"))),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.last_axis_rows("softmax", x)?;
        let t = self.value(x);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let mut z = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z = z + *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.last_axis_rows("log_softmax", x)?;
        let t = self.value(x);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("log_softmax", value, Op::LogSoftmax(x), &[x])
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::invalid("mean", "empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, F::one() / F::from_usize(n).unwrap())
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + d[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let value = Tensor::new(oshape, out)?;
        self.push("sum_axis", value, Op::SumAxis(x, axis), &[x])
    }

    /// Mean along `axis` (mean pooling), removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TensorError::invalid("mean_axis", "axis out of range"))?;
        if len == 0 {
            return Err(TensorError::invalid("mean_axis", "cannot pool an empty axis"));
        }
        let s = self.sum_axis(x, axis)?;
        self.scale(s, F::one() / F::from_usize(len).unwrap())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![F::zero(); m * n];
        gemm(false, false, m, k, n, self.value(a).data(), self.value(b).data(), F::zero(), &mut c);
        let value = Tensor::new(vec![m, n], c)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::shapes("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut c = vec![F::zero(); bs * m * n];
        for i in 0..bs {
            gemm(
                false,
                false,
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                F::zero(),
                &mut c[i * m * n..(i + 1) * m * n],
            );
        }
        let value = Tensor::new(vec![bs, m, n], c)?;
        self.push("bmm", value, Op::BatchMatMul(a, b), &[a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::invalid("permute", format!("{perm:?} is not a permutation of {shape:?}")));
        }
        let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let strides = permuted_strides(&shape, perm);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(d.len());
        for_each_strided(&oshape, &[&strides], |_, o| out.push(d[o[0]]));
        let value = Tensor::new(oshape, out)?;
        self.push("permute", value, Op::Permute(x, perm.to_vec()), &[x])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::invalid("transpose", "needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::shapes("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let len = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let value = Tensor::new(oshape, out)?;
        self.push("concat", value, Op::Concat(xs.to_vec(), axis), xs)
    }

    /// Stack same-shape tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let mut expanded = Vec::with_capacity(xs.len());
        for &v in xs {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(v));
            expanded.push(self.reshape(v, &s)?);
        }
        self.concat(&expanded, 0)
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.slice_step(x, axis, start, end, 1)
    }

    /// Strided slice `start, start+step, ... < end` along `axis`.
    pub fn slice_step(&mut self, x: Var, axis: usize, start: usize, end: usize, step: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] || step == 0 {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{end} step {step} invalid for axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let olen = (end - start).div_ceil(step);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * olen * inner);
        if step == 1 {
            // one contiguous run per outer index
            let run = olen * inner;
            for o in 0..outer {
                let src = (o * len + start) * inner;
                out.extend_from_slice(&d[src..src + run]);
            }
        } else {
            for o in 0..outer {
                for j in 0..olen {
                    let src = (o * len + start + j * step) * inner;
                    out.extend_from_slice(&d[src..src + inner]);
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = olen;
        let value = Tensor::new(oshape, out)?;
        self.push("slice", value, Op::Slice { x, axis, start, step }, &[x])
    }

    /// Index `index` along `axis`, removing the axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(TensorError::invalid("select", format!("index {index} out of range for axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let src = (o * len + index) * inner;
            out.extend_from_slice(&d[src..src + inner]);
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let value = Tensor::new(oshape, out)?;
        self.push("select", value, Op::Select { x, axis, index }, &[x])
    }

    /// 2-D cross-correlation. `x`: `[n, c, h, w]`, `w`: `[o, c, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(TensorError::shapes("conv2d", &xs, &ws));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ho, wo) = spec
            .output_hw(h, wd, kh, kw)
            .ok_or_else(|| TensorError::shapes("conv2d", &xs, &ws))?;
        let ckk = c * kh * kw;
        let hw = ho * wo;
        let mut cols = vec![F::zero(); n * ckk * hw];
        let mut out = vec![F::zero(); n * o * hw];
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        for b in 0..n {
            let col = &mut cols[b * ckk * hw..(b + 1) * ckk * hw];
            im2col(&xd[b * c * h * wd..(b + 1) * c * h * wd], col, (c, h, wd), (kh, kw), (ho, wo), &spec);
            gemm(false, false, o, ckk, hw, wdata, col, F::zero(), &mut out[b * o * hw..(b + 1) * o * hw]);
        }
        let value = Tensor::new(vec![n, o, ho, wo], out)?;
        self.push("conv2d", value, Op::Conv2d { x, w, spec, cols }, &[x, w])
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<usize> {
        let xs = self.shape(x);
        if axis >= xs.len() {
            return Err(TensorError::invalid("batch_norm", format!("feature axis {axis} out of range for {xs:?}")));
        }
        let ch = xs[axis];
        for v in [gamma, beta] {
            if self.shape(v) != [ch] {
                return Err(TensorError::shapes("batch_norm", xs, self.shape(v)));
            }
        }
        Ok(ch)
    }

    /// Training-mode batch norm: every feature along `axis` is normalized
    /// with statistics over all other axes. Returns those statistics so
    /// callers can maintain running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        eps: F,
    ) -> Result<(Var, BatchStats<F>)> {
        let ch = self.check_bn(x, gamma, beta, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, _, inner) = split_axis(&shape, axis);
        let count = outer * inner;
        if count == 0 {
            return Err(TensorError::invalid("batch_norm", "empty batch"));
        }
        let nf = F::from_usize(count).unwrap();
        let d = self.value(x).data();
        let mut mean = vec![F::zero(); ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                mean[c] = mean[c] + d[base..base + inner].iter().copied().sum::<F>();
            }
        }
        for m in &mut mean {
            *m = *m / nf;
        }
        let mut var = vec![F::zero(); ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for &v in &d[base..base + inner] {
                    let dv = v - mean[c];
                    var[c] = var[c] + dv * dv;
                }
            }
        }
        for v in &mut var {
            *v = *v / nf;
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, axis, &mean, &inv_std);
        let value = Tensor::new(shape, y)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            axis,
            xhat,
            inv_std,
            train: true,
        };
        let v = self.push("batch_norm", value, op, &[x, gamma, beta])?;
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Inference-mode batch norm: a fixed affine map given `mean`/`var`.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        mean: &[F],
        var: &[F],
        eps: F,
    ) -> Result<Var> {
        let ch = self.check_bn(x, gamma, beta, axis)?;
        if mean.len() != ch || var.len() != ch {
            return Err(TensorError::invalid("batch_norm", format!("running stats length != {ch} features")));
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, axis, mean, &inv_std);
        let value = Tensor::new(self.shape(x).to_vec(), y)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            axis,
            xhat,
            inv_std,
            train: false,
        };
        self.push("batch_norm", value, op, &[x, gamma, beta])
    }

    fn bn_apply(&self, x: Var, gamma: Var, beta: Var, axis: usize, mean: &[F], inv_std: &[F]) -> (Vec<F>, Vec<F>) {
        let shape = self.shape(x);
        let (outer, ch, inner) = split_axis(shape, axis);
        let d = self.value(x).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut y = vec![F::zero(); d.len()];
        let mut xhat = vec![F::zero(); d.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (d[i] - mean[c]) * inv_std[c];
                    y[i] = gm[c] * xhat[i] + bt[c];
                }
            }
        }
        (y, xhat)
    }

    /// Row lookup: `table` is `[vocab, dim]`, output `[indices.len(), dim]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(TensorError::invalid("embedding", format!("table must be 2-D, got {ts:?}")));
        }
        let d = ts[1];
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= ts[0] {
                return Err(TensorError::invalid("embedding", format!("index {i} >= vocabulary {}", ts[0])));
            }
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![indices.len(), d], out)?;
        let op = Op::Embedding {
            table,
            indices: indices.to_vec(),
        };
        self.push("embedding", value, op, &[table])
    }

    /// `out[r] = x[r, indices[r]]` for a 2-D `x`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != indices.len() {
            return Err(TensorError::shapes("pick", &xs, &[indices.len()]));
        }
        let cols = xs[1];
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            if i >= cols {
                return Err(TensorError::invalid("pick", format!("index {i} >= {cols}")));
            }
            out.push(d[r * cols + i]);
        }
        let value = Tensor::new(vec![indices.len()], out)?;
        let op = Op::Pick {
            x,
            indices: indices.to_vec(),
        };
        self.push("pick", value, op, &[x])
    }
}
