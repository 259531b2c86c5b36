//! Layers shared by the recognizer and the critic. Layers own only
//! [`ParamId`]s; values live in a [`ParamStore`], so the same layer runs in
//! `f32` for training and `f64` for gradient checks.

use advasr_tensor::{BatchStats, Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `U(-k, k)` initial values.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], k: f64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-k..=k) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Forward-pass settings and the batch-norm statistics it produced.
pub struct Ctx<F> {
    pub train: bool,
    /// Keep batch statistics so running averages can be updated.
    pub record: bool,
    pub bn_updates: Vec<BnUpdate<F>>,
}

impl<F> Ctx<F> {
    pub fn train() -> Self {
        Self {
            train: true,
            record: true,
            bn_updates: Vec::new(),
        }
    }

    /// Training-mode normalization that leaves running statistics alone.
    pub fn train_frozen() -> Self {
        Self {
            train: true,
            record: false,
            bn_updates: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self {
            train: false,
            record: false,
            bn_updates: Vec::new(),
        }
    }
}

pub struct BnUpdate<F> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<F>,
}

/// Fold recorded batch statistics into the running buffers.
pub fn apply_bn_updates(store: &mut ParamStore<f32>, updates: &[BnUpdate<f32>]) -> Result<()> {
    let m = BN_MOMENTUM as f32;
    for u in updates {
        let n = u.stats.count as f32;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let mut mean = store.value(u.mean).clone();
        for (r, &b) in mean.data_mut().iter_mut().zip(&u.stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let mut var = store.value(u.var).clone();
        for (r, &b) in var.data_mut().iter_mut().zip(&u.stats.var) {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
        store.set_value(u.mean, mean)?;
        store.set_value(u.var, var)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        scale: f64,
    ) -> Result<Self> {
        let k = scale / (input as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, &[input, output], k))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[output]))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    /// `x` is `[n, input]`.
    pub fn forward<F: Element>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        Ok(match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add(y, b)?
            }
            None => y,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[features]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[features]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[features]))?,
        })
    }

    /// Normalize each feature along `axis`.
    pub fn forward<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        axis: usize,
        ctx: &mut Ctx<F>,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = F::from_f64_lossy(BN_EPS);
        if ctx.train {
            let (y, stats) = g.batch_norm_train(x, gamma, beta, axis, eps)?;
            if ctx.record {
                ctx.bn_updates.push(BnUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    stats,
                });
            }
            Ok(y)
        } else {
            let mean = store.value(self.running_mean).data().to_vec();
            let var = store.value(self.running_var).data().to_vec();
            Ok(g.batch_norm_eval(x, gamma, beta, axis, &mean, &var, eps)?)
        }
    }
}

/// Valid (unpadded) positions of a time-major `[T, B]` batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Lengths {
    pub lens: Vec<usize>,
    pub max: usize,
}

impl Lengths {
    pub fn new(lens: Vec<usize>) -> Self {
        let max = lens.iter().copied().max().unwrap_or(0);
        Self { lens, max }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn min(&self) -> usize {
        self.lens.iter().copied().min().unwrap_or(0)
    }

    pub fn is_full(&self) -> bool {
        self.min() == self.max
    }

    /// Lengths after keeping every second step.
    pub fn halved(&self) -> Self {
        Self::new(self.lens.iter().map(|l| l.div_ceil(2)).collect())
    }

    /// `[B, 1]` indicator of sequences still running at step `t`.
    pub fn step_mask<F: Element>(&self, t: usize) -> Tensor<F> {
        let d = self.lens.iter().map(|&l| if t < l { F::one() } else { F::zero() }).collect();
        Tensor::new(vec![self.batch(), 1], d).expect("B values")
    }

    /// `[T, B, 1]` indicator of valid positions.
    pub fn time_mask<F: Element>(&self) -> Tensor<F> {
        let b = self.batch();
        let mut d = Vec::with_capacity(self.max * b);
        for t in 0..self.max {
            d.extend(self.lens.iter().map(|&l| if t < l { F::one() } else { F::zero() }));
        }
        Tensor::new(vec![self.max, b, 1], d).expect("T*B values")
    }

    /// Row indices (into a `[T*B, ..]` matrix) of valid positions.
    fn valid_rows(&self) -> Vec<usize> {
        let b = self.batch();
        let mut rows = Vec::new();
        for t in 0..self.max {
            for (i, &l) in self.lens.iter().enumerate() {
                if t < l {
                    rows.push(t * b + i);
                }
            }
        }
        rows
    }
}

/// Batch norm over the feature axis of a `[T*B, C]` matrix, with statistics
/// taken only over valid rows. Padded rows come back as zeros.
pub fn bn_valid_rows<F: Element>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    bn: &BatchNorm,
    x: Var,
    lens: &Lengths,
    ctx: &mut Ctx<F>,
) -> Result<Var> {
    if !ctx.train || lens.is_full() {
        return bn.forward(g, store, x, 1, ctx);
    }
    let rows = lens.valid_rows();
    let c = g.shape(x)[1];
    let total = g.shape(x)[0];
    let packed = g.embedding(x, &rows)?;
    let normed = bn.forward(g, store, packed, 1, ctx)?;
    let zero = g.constant(Tensor::zeros(&[1, c]));
    let table = g.concat(&[normed, zero], 0)?;
    let mut scatter = vec![rows.len(); total];
    for (i, &r) in rows.iter().enumerate() {
        scatter[r] = i;
    }
    Ok(g.embedding(table, &scatter)?)
}

/// `h + m * (h_new - h)`: freeze finished sequences.
fn masked_update<F: Element>(g: &mut Graph<F>, h: Var, h_new: Var, lens: &Lengths, t: usize) -> Result<Var> {
    if lens.lens.iter().all(|&l| t < l) {
        return Ok(h_new);
    }
    let m = g.constant(lens.step_mask(t));
    let d = g.sub(h_new, h)?;
    let md = g.mul(m, d)?;
    Ok(g.add(h, md)?)
}

/// One GRU update. `gx` is the `[B, 3H]` input contribution (gates r, z, n).
pub fn gru_cell<F: Element>(g: &mut Graph<F>, gx: Var, h: Var, u: Var, b: Var, hd: usize) -> Result<Var> {
    let gh0 = g.matmul(h, u)?;
    let gh = g.add(gh0, b)?;
    let gx_rz = g.slice(gx, 1, 0, 2 * hd)?;
    let gh_rz = g.slice(gh, 1, 0, 2 * hd)?;
    let s = g.add(gx_rz, gh_rz)?;
    let rz = g.sigmoid(s)?;
    let r = g.slice(rz, 1, 0, hd)?;
    let z = g.slice(rz, 1, hd, 2 * hd)?;
    let gx_n = g.slice(gx, 1, 2 * hd, 3 * hd)?;
    let gh_n = g.slice(gh, 1, 2 * hd, 3 * hd)?;
    let rn = g.mul(r, gh_n)?;
    let pre = g.add(gx_n, rn)?;
    let n = g.tanh(pre)?;
    let d = g.sub(h, n)?;
    let zd = g.mul(z, d)?;
    Ok(g.add(n, zd)?)
}

/// One LSTM update. `gx` is the `[B, 4H]` input contribution (i, f, g, o).
fn lstm_cell<F: Element>(g: &mut Graph<F>, gx: Var, h: Var, c: Var, u: Var, hd: usize) -> Result<(Var, Var)> {
    let gh = g.matmul(h, u)?;
    let s = g.add(gx, gh)?;
    let if_pre = g.slice(s, 1, 0, 2 * hd)?;
    let ifg = g.sigmoid(if_pre)?;
    let i = g.slice(ifg, 1, 0, hd)?;
    let f = g.slice(ifg, 1, hd, 2 * hd)?;
    let g_pre = g.slice(s, 1, 2 * hd, 3 * hd)?;
    let cand = g.tanh(g_pre)?;
    let o_pre = g.slice(s, 1, 3 * hd, 4 * hd)?;
    let o = g.sigmoid(o_pre)?;
    let fc = g.mul(f, c)?;
    let ic = g.mul(i, cand)?;
    let c_new = g.add(fc, ic)?;
    let tc = g.tanh(c_new)?;
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Run one direction over a time-major `[T, B, G]` gate tensor.
fn run_direction<F: Element>(
    g: &mut Graph<F>,
    gates: Var,
    lens: &Lengths,
    reverse: bool,
    hd: usize,
    mut step: impl FnMut(&mut Graph<F>, Var, Var, Option<Var>) -> Result<(Var, Option<Var>)>,
    lstm: bool,
) -> Result<Var> {
    let t_max = lens.max;
    let b = lens.batch();
    let mut h = g.constant(Tensor::zeros(&[b, hd]));
    let mut c = lstm.then(|| g.constant(Tensor::zeros(&[b, hd])));
    let mut outs = vec![h; t_max];
    let order: Vec<usize> = if reverse { (0..t_max).rev().collect() } else { (0..t_max).collect() };
    for t in order {
        let gx = g.select(gates, 0, t)?;
        let (h_new, c_new) = step(g, gx, h, c)?;
        h = masked_update(g, h, h_new, lens, t)?;
        if let (Some(c_old), Some(c_new)) = (c, c_new) {
            c = Some(masked_update(g, c_old, c_new, lens, t)?);
        }
        outs[t] = h;
    }
    Ok(g.stack(&outs)?)
}

/// Bidirectional GRU whose input projection is batch-normalized over all
/// valid (time, batch) positions before the recurrence.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub w_in: ParamId,
    pub bn: BatchNorm,
    pub u: [ParamId; 2],
    pub b: [ParamId; 2],
    pub hidden: usize,
    pub concat: bool,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
        concat: bool,
    ) -> Result<Self> {
        let k_in = 1.0 / (input as f64).sqrt();
        let k_h = 1.0 / (hidden as f64).sqrt();
        let w_in = store.add(format!("{name}.w_in"), uniform(rng, &[input, 6 * hidden], k_in))?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), 6 * hidden)?;
        let mut u = Vec::new();
        let mut b = Vec::new();
        for dir in ["fwd", "bwd"] {
            u.push(store.add(format!("{name}.{dir}.u"), uniform(rng, &[hidden, 3 * hidden], k_h))?);
            b.push(store.add(format!("{name}.{dir}.b"), Tensor::zeros(&[3 * hidden]))?);
        }
        Ok(Self {
            w_in,
            bn,
            u: [u[0], u[1]],
            b: [b[0], b[1]],
            hidden,
            concat,
        })
    }

    pub fn output_dim(&self) -> usize {
        if self.concat {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    /// `x` is `[T, B, F]`; returns `[T, B, H]` (directions summed) or
    /// `[T, B, 2H]` (concatenated).
    pub fn forward<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        lens: &Lengths,
        ctx: &mut Ctx<F>,
    ) -> Result<Var> {
        let (t, b, f) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let hd = self.hidden;
        let flat = g.reshape(x, &[t * b, f])?;
        let w = g.param(store, self.w_in);
        let proj = g.matmul(flat, w)?;
        let normed = bn_valid_rows(g, store, &self.bn, proj, lens, ctx)?;
        let gates = g.reshape(normed, &[t, b, 6 * hd])?;
        let mut outs = Vec::with_capacity(2);
        for dir in 0..2 {
            let gx = g.slice(gates, 2, dir * 3 * hd, (dir + 1) * 3 * hd)?;
            let u = g.param(store, self.u[dir]);
            let bias = g.param(store, self.b[dir]);
            let step = |g: &mut Graph<F>, gx_t: Var, h: Var, _c: Option<Var>| Ok((gru_cell(g, gx_t, h, u, bias, hd)?, None));
            outs.push(run_direction(g, gx, lens, dir == 1, hd, step, false)?);
        }
        Ok(if self.concat {
            g.concat(&outs, 2)?
        } else {
            g.add(outs[0], outs[1])?
        })
    }
}

/// Bidirectional LSTM with summed directions.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub u: [ParamId; 2],
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
        k: f64,
    ) -> Result<Self> {
        let w_in = store.add(format!("{name}.w_in"), uniform(rng, &[input, 8 * hidden], k))?;
        let b_in = store.add(format!("{name}.b_in"), Tensor::zeros(&[8 * hidden]))?;
        let uf = store.add(format!("{name}.fwd.u"), uniform(rng, &[hidden, 4 * hidden], k))?;
        let ub = store.add(format!("{name}.bwd.u"), uniform(rng, &[hidden, 4 * hidden], k))?;
        Ok(Self {
            w_in,
            b_in,
            u: [uf, ub],
            hidden,
        })
    }

    /// `x` is `[T, B, F]`; returns `[T, B, H]`.
    pub fn forward<F: Element>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var, lens: &Lengths) -> Result<Var> {
        let (t, b, f) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let hd = self.hidden;
        let flat = g.reshape(x, &[t * b, f])?;
        let w = g.param(store, self.w_in);
        let bias = g.param(store, self.b_in);
        let p = g.matmul(flat, w)?;
        let p = g.add(p, bias)?;
        let gates = g.reshape(p, &[t, b, 8 * hd])?;
        let mut outs = Vec::with_capacity(2);
        for dir in 0..2 {
            let gx = g.slice(gates, 2, dir * 4 * hd, (dir + 1) * 4 * hd)?;
            let u = g.param(store, self.u[dir]);
            let step = |g: &mut Graph<F>, gx_t: Var, h: Var, c: Option<Var>| {
                let (h, c) = lstm_cell(g, gx_t, h, c.expect("lstm carries a cell"), u, hd)?;
                Ok((h, Some(c)))
            };
            outs.push(run_direction(g, gx, lens, dir == 1, hd, step, true)?);
        }
        Ok(g.add(outs[0], outs[1])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn padded_positions_do_not_leak_into_valid_outputs() {
        // A batch element's outputs must not depend on another element's
        // padding length: run [short] alone and next to a long sequence.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = BiGru::new(&mut store, &mut rng, "l", 3, 4, false).unwrap();
        let short: Vec<f32> = (0..3 * 5).map(|i| (i as f32 * 0.37).sin()).collect();
        let long: Vec<f32> = (0..3 * 9).map(|i| (i as f32 * 0.11).cos()).collect();

        let run = |x: Tensor<f32>, lens: Lengths| {
            let mut g = Graph::new();
            let xv = g.constant(x);
            let mut ctx = Ctx::eval();
            let y = gru.forward(&mut g, &store, xv, &lens, &mut ctx).unwrap();
            g.value(y).clone()
        };
        let alone = run(Tensor::new(vec![5, 1, 3], short.clone()).unwrap(), Lengths::new(vec![5]));
        let mut both = vec![0f32; 9 * 2 * 3];
        for t in 0..9 {
            for f in 0..3 {
                if t < 5 {
                    both[(t * 2) * 3 + f] = short[t * 3 + f];
                }
                both[(t * 2 + 1) * 3 + f] = long[t * 3 + f];
            }
        }
        let pair = run(Tensor::new(vec![9, 2, 3], both).unwrap(), Lengths::new(vec![5, 9]));
        for t in 0..5 {
            for h in 0..4 {
                let a = alone.data()[t * 4 + h];
                let b = pair.data()[(t * 2) * 4 + h];
                assert!((a - b).abs() < 1e-6, "t={t} h={h}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut ctx = Ctx::train();
        bn.forward(&mut g, &store, x, 1, &mut ctx).unwrap();
        apply_bn_updates(&mut store, &ctx.bn_updates).unwrap();
        assert!((store.value(bn.running_mean).data()[0] - 0.25).abs() < 1e-6);
        // unbiased variance 5/3
        let expect = 0.9 + 0.1 * 5.0 / 3.0;
        assert!((store.value(bn.running_var).data()[0] - expect).abs() < 1e-6);
    }
}
