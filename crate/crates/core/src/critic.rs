//! Critic `f_w` scoring encoder embeddings as clean-like.
//!
//! Embeddings `[T', B, D]` are viewed as single-channel images of
//! (feature) x (time). Convolutions stride only along features and pad time
//! so every layer keeps `T'` steps; the final per-step likelihoods are
//! mean-pooled over valid steps.

use advasr_tensor::{Conv2dSpec, Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::CriticConfig;
use crate::error::{Error, Result};
use crate::nn::{uniform, BatchNorm, BiLstm, Ctx, Lengths, Linear};

pub const LEAK: f64 = 0.2;

#[derive(Clone, Debug)]
struct ConvBlock {
    w: ParamId,
    b: ParamId,
    bn: BatchNorm,
    spec: Conv2dSpec,
    out_h: usize,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride_h: usize,
        in_h: usize,
        k: f64,
    ) -> Result<Self> {
        // feature axis: valid convolution unless the input is shorter than
        // the kernel, then zero-pad just enough for one output row
        let short = kernel.0.saturating_sub(in_h);
        let pad_h = (short / 2, short - short / 2);
        // time axis: keep length
        let pad_w = ((kernel.1 - 1) / 2, kernel.1 / 2);
        let spec = Conv2dSpec {
            stride: (stride_h, 1),
            pad_h,
            pad_w,
        };
        let (out_h, _) = spec
            .output_hw(in_h, kernel.1, kernel.0, kernel.1)
            .ok_or_else(|| Error::Config(format!("critic layer {name}: height {in_h} too small")))?;
        Ok(Self {
            w: store.add(format!("{name}.w"), uniform(rng, &[cout, cin, kernel.0, kernel.1], k))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, cout, 1, 1]))?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
            spec,
            out_h,
        })
    }

    fn forward<F: Element>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var, ctx: &mut Ctx<F>) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.conv2d(x, w, self.spec)?;
        let y = g.add(y, b)?;
        let y = self.bn.forward(g, store, y, 1, ctx)?;
        Ok(g.leaky_relu(y, F::from_f64_lossy(LEAK))?)
    }
}

#[derive(Clone, Debug)]
pub struct Critic {
    blocks: [ConvBlock; 4],
    lstm: [BiLstm; 2],
    proj: Linear,
    pub sigmoid: bool,
    pub input_dim: usize,
}

impl Critic {
    /// All trainable values start inside `[-clip, clip]`, batch-norm scales
    /// included.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        rng: &mut R,
        cfg: &CriticConfig,
        input_dim: usize,
        clip: f64,
    ) -> Result<Self> {
        let f = cfg.filters;
        let k = clip;
        let c1 = ConvBlock::new(store, rng, "critic.conv1", 1, f[0], (7, 2), 5, input_dim, k)?;
        let c2 = ConvBlock::new(store, rng, "critic.conv2", f[0], f[1], (3, 3), 2, c1.out_h, k)?;
        let l1 = BiLstm::new(store, rng, "critic.lstm1", f[1] * c2.out_h, cfg.lstm_dim, k)?;
        let c3 = ConvBlock::new(store, rng, "critic.conv3", 1, f[2], (3, 3), 2, cfg.lstm_dim, k)?;
        let c4 = ConvBlock::new(store, rng, "critic.conv4", f[2], f[3], (3, 3), 1, c3.out_h, k)?;
        let l2 = BiLstm::new(store, rng, "critic.lstm2", f[3] * c4.out_h, cfg.lstm_dim, k)?;
        let proj = Linear::new(store, rng, "critic.proj", cfg.lstm_dim, 1, true, k * (cfg.lstm_dim as f64).sqrt())?;
        clip_weights(store, clip);
        Ok(Self {
            blocks: [c1, c2, c3, c4],
            lstm: [l1, l2],
            proj,
            sigmoid: cfg.sigmoid,
            input_dim,
        })
    }

    /// Per-step scores `[B, T']` in `(0, 1)` (or raw without the sigmoid).
    /// Batch norm always uses the statistics of the batch it sees.
    pub fn step_scores<F: Element>(&self, g: &mut Graph<F>, store: &ParamStore<F>, z: Var, lens: &Lengths) -> Result<Var> {
        let s = g.shape(z).to_vec();
        let (t, b, d) = (s[0], s[1], s[2]);
        if t == 0 {
            return Err(Error::Empty("critic input"));
        }
        if d != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "critic input",
                a: s,
                b: vec![t, b, self.input_dim],
            });
        }
        let mut ctx = Ctx::train_frozen();
        let m = g.constant(lens.time_mask());
        let z = g.mul(z, m)?;
        let img = seq_to_image(g, z)?;
        let x = self.blocks[0].forward(g, store, img, &mut ctx)?;
        let x = self.blocks[1].forward(g, store, x, &mut ctx)?;
        let x = image_to_seq(g, x)?;
        let x = self.lstm[0].forward(g, store, x, lens)?;
        let img = seq_to_image(g, x)?;
        let x = self.blocks[2].forward(g, store, img, &mut ctx)?;
        let x = self.blocks[3].forward(g, store, x, &mut ctx)?;
        let x = image_to_seq(g, x)?;
        let x = self.lstm[1].forward(g, store, x, lens)?;
        let h = g.shape(x)[2];
        let flat = g.reshape(x, &[t * b, h])?;
        let y = self.proj.forward(g, store, flat)?;
        let y = g.reshape(y, &[t, b])?;
        let y = if self.sigmoid { g.sigmoid(y)? } else { y };
        Ok(g.transpose(y)?)
    }

    /// `f_w(z)`: one score per utterance, `[B]`.
    pub fn score<F: Element>(&self, g: &mut Graph<F>, store: &ParamStore<F>, z: Var, lens: &Lengths) -> Result<Var> {
        let s = self.step_scores(g, store, z, lens)?;
        mean_pool(g, s, lens)
    }
}

/// Clamp every trainable critic value into `[-c, c]`. Values already inside
/// are left bit-identical.
pub fn clip_weights<F: Element>(store: &mut ParamStore<F>, c: f64) {
    let hi = bound_within::<F>(c);
    let lo = -hi;
    for p in store.iter_mut().filter(|p| p.trainable) {
        for v in p.value.data_mut() {
            if *v > hi {
                *v = hi;
            } else if *v < lo {
                *v = lo;
            }
        }
    }
}

/// Largest `F` whose widened value does not exceed `c`; in `f32` the
/// nearest value to 0.05 lies above it.
fn bound_within<F: Element>(c: f64) -> F {
    let mut b = F::from_f64_lossy(c);
    while b.to_f64().is_some_and(|v| v > c) {
        b = b - b.abs() * F::epsilon();
    }
    b
}

/// Mean of per-step scores `[B, T']` over each utterance's valid steps.
pub fn mean_pool<F: Element>(g: &mut Graph<F>, scores: Var, lens: &Lengths) -> Result<Var> {
    let s = g.shape(scores).to_vec();
    if s[1] == 0 || lens.lens.contains(&0) {
        return Err(Error::Empty("score sequence"));
    }
    let mut w = Vec::with_capacity(s[0] * s[1]);
    for &l in &lens.lens {
        w.extend((0..s[1]).map(|t| if t < l { F::from_f64_lossy(1.0 / l as f64) } else { F::zero() }));
    }
    let w = g.constant(Tensor::new(s, w)?);
    let p = g.mul(scores, w)?;
    Ok(g.sum_axis(p, 1)?)
}

/// `[T, B, D]` to `[B, 1, D, T]`.
fn seq_to_image<F: Element>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let p = g.permute(x, &[1, 2, 0])?;
    Ok(g.reshape(p, &[s[1], 1, s[2], s[0]])?)
}

/// `[B, C, H, T]` to `[T, B, C*H]`.
fn image_to_seq<F: Element>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let p = g.permute(x, &[3, 0, 1, 2])?;
    Ok(g.reshape(p, &[s[3], s[0], s[1] * s[2]])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn critic(d: usize) -> (Critic, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let cfg = CriticConfig {
            filters: [3, 4, 4, 5],
            lstm_dim: 6,
            sigmoid: true,
        };
        let c = Critic::new(&mut store, &mut ChaCha8Rng::seed_from_u64(3), &cfg, d, 0.05).unwrap();
        (c, store)
    }

    #[test]
    fn scores_are_probabilities_for_any_width() {
        for d in [8, 20, 64] {
            let (c, store) = critic(d);
            assert!(store.max_abs_value() <= 0.05);
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let z = g.constant(uniform(&mut rng, &[7, 3, d], 3.0));
            let lens = Lengths::new(vec![7, 4, 1]);
            let s = c.score(&mut g, &store, z, &lens).unwrap();
            assert_eq!(g.shape(s), &[3]);
            for &v in g.value(s).data() {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn mean_pool_of_constant_and_tiled_scores() {
        let mut g = Graph::<f64>::new();
        let s = 0.3f64;
        let sig = 1.0 / (1.0 + (-s).exp());
        let raw = g.constant(Tensor::full(&[2, 5], s));
        let p = g.sigmoid(raw).unwrap();
        let m = mean_pool(&mut g, p, &Lengths::new(vec![5, 3])).unwrap();
        for &v in g.value(m).data() {
            assert!((v - sig).abs() < 1e-15);
        }
        let base = [0.1, 0.7, 0.4];
        let once = g.constant(Tensor::new(vec![1, 3], base.to_vec()).unwrap());
        let twice = g.constant(Tensor::new(vec![1, 6], [base, base].concat()).unwrap());
        let a = mean_pool(&mut g, once, &Lengths::new(vec![3])).unwrap();
        let b = mean_pool(&mut g, twice, &Lengths::new(vec![6])).unwrap();
        assert!((g.value(a).data()[0] - g.value(b).data()[0]).abs() < 1e-15);
        let empty = g.constant(Tensor::zeros(&[1, 0]));
        assert!(mean_pool(&mut g, empty, &Lengths::new(vec![0])).is_err());
    }

    #[test]
    fn clipping() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::from_vec(vec![0.1, -0.2, 0.01])).unwrap();
        clip_weights(&mut store, 0.05);
        let v = store.value(id).data();
        assert!(v[0] <= 0.05 && 0.05 - v[0] < 1e-8 && v[1] == -v[0] && v[2] == 0.01);
        assert!(store.max_abs_value() <= 0.05);
        let before = store.value(id).clone();
        clip_weights(&mut store, 0.05);
        assert_eq!(store.value(id), &before);
        clip_weights(&mut store, 0.0);
        assert!(store.value(id).data().iter().all(|&v| v == 0.0));
    }
}
