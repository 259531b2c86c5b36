//! Tape of recorded operations and the reverse sweep over it.
//!
//! Every forward op appends one node holding its output value plus whatever
//! context its vector-Jacobian product needs. Nodes are only ever appended,
//! so node order is a valid topological order and [`Graph::backward`] can
//! walk it in reverse.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::param::{ParamKey, ParamStore};
use crate::tensor::{expand, gemm, reduce_to, split_axis, Element, Tensor};
use crate::ParamId;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnKind {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Abs,
    Square,
}

/// Geometry of a 2-D convolution over NCHW input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    /// (top, bottom) zero padding along height.
    pub pad_h: (usize, usize),
    /// (left, right) zero padding along width.
    pub pad_w: (usize, usize),
}

impl Conv2dSpec {
    pub fn valid(stride: (usize, usize)) -> Self {
        Self {
            stride,
            pad_h: (0, 0),
            pad_w: (0, 0),
        }
    }

    /// Output (height, width) for an input of `h x w` and a `kh x kw` kernel.
    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let hp = h + self.pad_h.0 + self.pad_h.1;
        let wp = w + self.pad_w.0 + self.pad_w.1;
        if hp < kh || wp < kw || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some(((hp - kh) / self.stride.0 + 1, (wp - kw) / self.stride.1 + 1))
    }
}

pub(crate) enum Op<F> {
    Leaf,
    Param(ParamKey),
    Binary(BinKind, Var, Var),
    Unary(UnKind, Var),
    Scale(Var, F),
    AddScalar(Var),
    LeakyRelu(Var, F),
    Softmax(Var),
    LogSoftmax(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        step: usize,
    },
    Select {
        x: Var,
        axis: usize,
        index: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        spec: Conv2dSpec,
        cols: Vec<F>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Pick {
        x: Var,
        indices: Vec<usize>,
    },
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// Gradients produced by one backward sweep.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F> {
    params: HashMap<ParamKey, Tensor<F>>,
    vars: HashMap<Var, Tensor<F>>,
}

impl<F: Element> Gradients<F> {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor<F>> {
        self.params.get(&key)
    }

    /// Gradient with respect to a leaf created by [`Graph::variable`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.vars.get(&v)
    }

    /// L2 norm over every parameter gradient belonging to `store`.
    pub fn store_norm(&self, store: &ParamStore<F>) -> f64 {
        self.params
            .iter()
            .filter(|(k, _)| k.store == store.tag())
            .map(|(_, g)| g.l2_norm_sq().to_f64_lossy())
            .sum::<f64>()
            .sqrt()
    }
}

/// Recording tape for one forward pass.
pub struct Graph<F: Element> {
    pub(crate) nodes: Vec<Node<F>>,
    param_cache: HashMap<ParamKey, Var>,
    backward_done: bool,
    check_finite: bool,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
            backward_done: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Toggle the per-op NaN/Inf check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, true)
    }

    fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bring a parameter onto the tape. Repeated calls for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let key = store.key(id);
        if let Some(&v) = self.param_cache.get(&key) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(key),
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_cache.insert(key, v);
        v
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() && inputs.iter().all(|v| self.nodes[v.0].value.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. A graph supports exactly one
    /// sweep; record a new forward pass for the next one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let lshape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lshape));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Gradients {
            params: HashMap::new(),
            vars: HashMap::new(),
        };
        let nodes = &self.nodes;

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut sink = Sink {
                nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => {
                    out.vars.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(key) => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    match out.params.get_mut(key) {
                        Some(acc) => acc.add_assign(&t)?,
                        None => {
                            out.params.insert(*key, t);
                        }
                    }
                }
                op => backward_op(op, &node.value, &g, &mut sink),
            }
        }
        Ok(out)
    }
}

/// Accumulator for input gradients during the reverse sweep.
struct Sink<'a, F: Element> {
    nodes: &'a [Node<F>],
    grads: &'a mut [Option<Vec<F>>],
}

impl<F: Element> Sink<'_, F> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn add(&mut self, v: Var, g: Vec<F>) {
        debug_assert_eq!(g.len(), self.nodes[v.0].value.numel());
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulate in place into `v`'s gradient buffer, creating it zeroed
    /// if absent. Keeps sparse contributions (slices) O(slice) each.
    fn add_in_place(&mut self, v: Var, f: impl FnOnce(&mut [F])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n]);
        f(buf);
    }

    /// Lazily computed contribution, skipped when `v` takes no gradient.
    fn add_with(&mut self, v: Var, f: impl FnOnce(&Self) -> Vec<F>) {
        if self.wants(v) {
            let g = f(self);
            self.add(v, g);
        }
    }
}

fn backward_op<F: Element>(op: &Op<F>, out: &Tensor<F>, g: &[F], s: &mut Sink<'_, F>) {
    let y = out.data();
    match op {
        Op::Leaf | Op::Param(_) => unreachable!(),
        Op::Binary(kind, a, b) => {
            let (a, b) = (*a, *b);
            let oshape = out.shape();
            match kind {
                BinKind::Add => {
                    s.add_with(a, |s| reduce_to(g, oshape, s.val(a).shape()));
                    s.add_with(b, |s| reduce_to(g, oshape, s.val(b).shape()));
                }
                BinKind::Sub => {
                    s.add_with(a, |s| reduce_to(g, oshape, s.val(a).shape()));
                    s.add_with(b, |s| {
                        let neg: Vec<F> = g.iter().map(|&v| -v).collect();
                        reduce_to(&neg, oshape, s.val(b).shape())
                    });
                }
                BinKind::Mul => {
                    s.add_with(a, |s| {
                        let eb = expand(s.val(b), oshape);
                        let t: Vec<F> = g.iter().zip(&eb).map(|(&g, &b)| g * b).collect();
                        reduce_to(&t, oshape, s.val(a).shape())
                    });
                    s.add_with(b, |s| {
                        let ea = expand(s.val(a), oshape);
                        let t: Vec<F> = g.iter().zip(&ea).map(|(&g, &a)| g * a).collect();
                        reduce_to(&t, oshape, s.val(b).shape())
                    });
                }
                BinKind::Div => {
                    s.add_with(a, |s| {
                        let eb = expand(s.val(b), oshape);
                        let t: Vec<F> = g.iter().zip(&eb).map(|(&g, &b)| g / b).collect();
                        reduce_to(&t, oshape, s.val(a).shape())
                    });
                    s.add_with(b, |s| {
                        let eb = expand(s.val(b), oshape);
                        // d(a/b)/db = -y/b
                        let t: Vec<F> = g
                            .iter()
                            .zip(&eb)
                            .zip(y)
                            .map(|((&g, &b), &y)| -g * y / b)
                            .collect();
                        reduce_to(&t, oshape, s.val(b).shape())
                    });
                }
                BinKind::Max => {
                    let ea = expand(s.val(a), oshape);
                    let eb = expand(s.val(b), oshape);
                    s.add_with(a, |s| {
                        let t: Vec<F> = g
                            .iter()
                            .zip(ea.iter().zip(&eb))
                            .map(|(&g, (&a, &b))| if a >= b { g } else { F::zero() })
                            .collect();
                        reduce_to(&t, oshape, s.val(a).shape())
                    });
                    s.add_with(b, |s| {
                        let t: Vec<F> = g
                            .iter()
                            .zip(ea.iter().zip(&eb))
                            .map(|(&g, (&a, &b))| if a >= b { F::zero() } else { g })
                            .collect();
                        reduce_to(&t, oshape, s.val(b).shape())
                    });
                }
            }
        }
        Op::Unary(kind, x) => {
            let x = *x;
            s.add_with(x, |s| {
                let xv = s.val(x).data();
                let one = F::one();
                match kind {
                    UnKind::Sigmoid => g.iter().zip(y).map(|(&g, &y)| g * y * (one - y)).collect(),
                    UnKind::Tanh => g.iter().zip(y).map(|(&g, &y)| g * (one - y * y)).collect(),
                    UnKind::Exp => g.iter().zip(y).map(|(&g, &y)| g * y).collect(),
                    UnKind::Log => g.iter().zip(xv).map(|(&g, &x)| g / x).collect(),
                    UnKind::Abs => g
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| {
                            if x > F::zero() {
                                g
                            } else if x < F::zero() {
                                -g
                            } else {
                                F::zero()
                            }
                        })
                        .collect(),
                    UnKind::Square => {
                        let two = one + one;
                        g.iter().zip(xv).map(|(&g, &x)| g * two * x).collect()
                    }
                }
            });
        }
        Op::Scale(x, c) => {
            let c = *c;
            s.add_with(*x, |_| g.iter().map(|&g| g * c).collect());
        }
        Op::AddScalar(x) => s.add_with(*x, |_| g.to_vec()),
        Op::LeakyRelu(x, slope) => {
            let (x, slope) = (*x, *slope);
            s.add_with(x, |s| {
                g.iter()
                    .zip(s.val(x).data())
                    .map(|(&g, &x)| if x >= F::zero() { g } else { g * slope })
                    .collect()
            });
        }
        Op::Softmax(x) => {
            let x = *x;
            let cols = *out.shape().last().unwrap_or(&1);
            s.add_with(x, |_| {
                let mut dx = vec![F::zero(); g.len()];
                for r in 0..g.len() / cols.max(1) {
                    let sl = r * cols..(r + 1) * cols;
                    let dot: F = g[sl.clone()].iter().zip(&y[sl.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in sl {
                        dx[j] = y[j] * (g[j] - dot);
                    }
                }
                dx
            });
        }
        Op::LogSoftmax(x) => {
            let x = *x;
            let cols = *out.shape().last().unwrap_or(&1);
            s.add_with(x, |_| {
                let mut dx = vec![F::zero(); g.len()];
                for r in 0..g.len() / cols.max(1) {
                    let sl = r * cols..(r + 1) * cols;
                    let gsum: F = g[sl.clone()].iter().copied().sum();
                    for j in sl {
                        dx[j] = g[j] - y[j].exp() * gsum;
                    }
                }
                dx
            });
        }
        Op::SumAll(x) => {
            let x = *x;
            s.add_with(x, |s| vec![g[0]; s.val(x).numel()]);
        }
        Op::SumAxis(x, axis) => {
            let (x, axis) = (*x, *axis);
            s.add_with(x, |s| {
                let (outer, len, inner) = split_axis(s.val(x).shape(), axis);
                let mut dx = vec![F::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        dx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                dx
            });
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let (m, k) = (s.val(a).shape()[0], s.val(a).shape()[1]);
            let n = s.val(b).shape()[1];
            s.add_with(a, |s| {
                let mut ga = vec![F::zero(); m * k];
                gemm(false, true, m, n, k, g, s.val(b).data(), F::zero(), &mut ga);
                ga
            });
            s.add_with(b, |s| {
                let mut gb = vec![F::zero(); k * n];
                gemm(true, false, k, m, n, s.val(a).data(), g, F::zero(), &mut gb);
                gb
            });
        }
        Op::BatchMatMul(a, b) => {
            let (a, b) = (*a, *b);
            let sa = s.val(a).shape();
            let (bs, m, k) = (sa[0], sa[1], sa[2]);
            let n = s.val(b).shape()[2];
            s.add_with(a, |s| {
                let bd = s.val(b).data();
                let mut ga = vec![F::zero(); bs * m * k];
                for i in 0..bs {
                    gemm(
                        false,
                        true,
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        &bd[i * k * n..(i + 1) * k * n],
                        F::zero(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                    );
                }
                ga
            });
            s.add_with(b, |s| {
                let ad = s.val(a).data();
                let mut gb = vec![F::zero(); bs * k * n];
                for i in 0..bs {
                    gemm(
                        true,
                        false,
                        k,
                        m,
                        n,
                        &ad[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        F::zero(),
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                }
                gb
            });
        }
        Op::Reshape(x) => s.add_with(*x, |_| g.to_vec()),
        Op::Permute(x, perm) => {
            let x = *x;
            s.add_with(x, |s| {
                let in_shape = s.val(x).shape();
                let strides = permuted_strides(in_shape, perm);
                let mut dx = vec![F::zero(); g.len()];
                crate::tensor::for_each_strided(out.shape(), &[&strides], |flat, o| {
                    dx[o[0]] = g[flat];
                });
                dx
            });
        }
        Op::Concat(inputs, axis) => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &v in inputs {
                let len = s.val(v).shape()[*axis];
                s.add_with(v, |_| {
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        dx.extend_from_slice(&g[base..base + len * inner]);
                    }
                    dx
                });
                offset += len;
            }
        }
        Op::Slice { x, axis, start, step } => {
            let (x, axis, start, step) = (*x, *axis, *start, *step);
            let (outer, len, inner) = split_axis(s.val(x).shape(), axis);
            let olen = out.shape()[axis];
            s.add_in_place(x, |dx| {
                if step == 1 {
                    let run = olen * inner;
                    for o in 0..outer {
                        let dst = (o * len + start) * inner;
                        for (d, &v) in dx[dst..dst + run].iter_mut().zip(&g[o * run..(o + 1) * run]) {
                            *d = *d + v;
                        }
                    }
                    return;
                }
                for o in 0..outer {
                    for j in 0..olen {
                        let src = (o * olen + j) * inner;
                        let dst = (o * len + start + j * step) * inner;
                        for (d, &v) in dx[dst..dst + inner].iter_mut().zip(&g[src..src + inner]) {
                            *d = *d + v;
                        }
                    }
                }
            });
        }
        Op::Select { x, axis, index } => {
            let (x, axis, index) = (*x, *axis, *index);
            let (outer, len, inner) = split_axis(s.val(x).shape(), axis);
            s.add_in_place(x, |dx| {
                for o in 0..outer {
                    let dst = (o * len + index) * inner;
                    for (d, &v) in dx[dst..dst + inner].iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                        *d = *d + v;
                    }
                }
            });
        }
        Op::Conv2d { x, w, spec, cols } => {
            let (x, w) = (*x, *w);
            let xs = s.val(x).shape().to_vec();
            let ws = s.val(w).shape().to_vec();
            let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
            let (o, kh, kw) = (ws[0], ws[2], ws[3]);
            let (ho, wo) = (out.shape()[2], out.shape()[3]);
            let ckk = c * kh * kw;
            let hw = ho * wo;
            s.add_with(w, |_| {
                let mut gw = vec![F::zero(); o * ckk];
                for b in 0..n {
                    gemm(
                        false,
                        true,
                        o,
                        hw,
                        ckk,
                        &g[b * o * hw..(b + 1) * o * hw],
                        &cols[b * ckk * hw..(b + 1) * ckk * hw],
                        F::one(),
                        &mut gw,
                    );
                }
                gw
            });
            s.add_with(x, |s| {
                let wdata = s.val(w).data();
                let mut dx = vec![F::zero(); n * c * h * wd];
                let mut dcols = vec![F::zero(); ckk * hw];
                for b in 0..n {
                    gemm(true, false, ckk, o, hw, wdata, &g[b * o * hw..(b + 1) * o * hw], F::zero(), &mut dcols);
                    col2im(
                        &dcols,
                        &mut dx[b * c * h * wd..(b + 1) * c * h * wd],
                        (c, h, wd),
                        (kh, kw),
                        (ho, wo),
                        spec,
                    );
                }
                dx
            });
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            axis,
            xhat,
            inv_std,
            train,
        } => {
            let (x, gamma, beta, axis, train) = (*x, *gamma, *beta, *axis, *train);
            let (outer, ch, inner) = split_axis(out.shape(), axis);
            let count = F::from_usize(outer * inner).unwrap();
            let mut sum_dy = vec![F::zero(); ch];
            let mut sum_dy_xhat = vec![F::zero(); ch];
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    for i in base..base + inner {
                        sum_dy[c] = sum_dy[c] + g[i];
                        sum_dy_xhat[c] = sum_dy_xhat[c] + g[i] * xhat[i];
                    }
                }
            }
            s.add_with(x, |s| {
                let gm = s.val(gamma).data();
                let mut dx = vec![F::zero(); g.len()];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        let k = gm[c] * inv_std[c];
                        for i in base..base + inner {
                            dx[i] = if train {
                                k * (g[i] - sum_dy[c] / count - xhat[i] * sum_dy_xhat[c] / count)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                dx
            });
            s.add_with(gamma, |_| sum_dy_xhat.clone());
            s.add_with(beta, |_| sum_dy.clone());
        }
        Op::Embedding { table, indices } => {
            let table = *table;
            s.add_with(table, |s| {
                let ts = s.val(table).shape();
                let d = ts[1];
                let mut gt = vec![F::zero(); ts[0] * d];
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[idx * d + j] = gt[idx * d + j] + g[r * d + j];
                    }
                }
                gt
            });
        }
        Op::Pick { x, indices } => {
            let x = *x;
            s.add_with(x, |s| {
                let cols = s.val(x).shape()[1];
                let mut dx = vec![F::zero(); s.val(x).numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    dx[r * cols + idx] = g[r];
                }
                dx
            });
        }
    }
}

/// Read strides for producing a permuted view of a row-major `shape`.
pub(crate) fn permuted_strides(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    perm.iter().map(|&p| strides[p]).collect()
}

/// Unfold one image `[c, h, w]` into `[c*kh*kw, ho*wo]` columns.
pub(crate) fn im2col<F: Element>(
    img: &[F],
    cols: &mut [F],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (ho, wo): (usize, usize),
    spec: &Conv2dSpec,
) {
    let hw = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * spec.stride.0 + ki) as isize - spec.pad_h.0 as isize;
                    for ox in 0..wo {
                        let ix = (ox * spec.stride.1 + kj) as isize - spec.pad_w.0 as isize;
                        dst[oy * wo + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            img[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<F: Element>(
    cols: &[F],
    img: &mut [F],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (ho, wo): (usize, usize),
    spec: &Conv2dSpec,
) {
    let hw = ho * wo;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * spec.stride.0 + ki) as isize - spec.pad_h.0 as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride.1 + kj) as isize - spec.pad_w.0 as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let dst = (ci * h + iy as usize) * w + ix as usize;
                        img[dst] = img[dst] + src[oy * wo + ox];
                    }
                }
            }
        }
    }
}
