//! Attention-based encoder/decoder recognizer.
//!
//! Sequences are time-major: features `[T, B, 40]`, encoder states
//! `[T', B, D]`. The encoder is a stack of batch-normalized bidirectional
//! GRUs with stride-2 time pooling after the first `pooled_layers` layers.
//! The decoder is a single GRU with hybrid (content + location) attention.

use advasr_tensor::{Conv2dSpec, Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{gru_cell, uniform, BiGru, Ctx, Lengths, Linear};
use crate::vocab::{Vocabulary, EOS, PAD, SOS};

pub const FEATURE_DIM: usize = 40;

/// Additive score for padded encoder positions.
const MASK_SCORE: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<BiGru>,
    pub pooled_layers: usize,
    pub max_pool: bool,
}

/// Encoder output on the tape.
#[derive(Clone, Debug)]
pub struct Embedded {
    /// `[T', B, D]`.
    pub states: Var,
    pub lens: Lengths,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.encoder_layers);
        let mut input = FEATURE_DIM;
        for i in 0..cfg.encoder_layers {
            let l = BiGru::new(store, rng, &format!("encoder.{i}"), input, cfg.encoder_dim, cfg.concat_directions)?;
            input = l.output_dim();
            layers.push(l);
        }
        Ok(Self {
            layers,
            pooled_layers: cfg.pooled_layers.min(cfg.encoder_layers),
            max_pool: cfg.max_pool,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(FEATURE_DIM)
    }

    /// Smallest input length accepted.
    pub fn min_frames(&self) -> usize {
        1 << self.pooled_layers
    }

    /// `T' = ceil(T / 2^pooled_layers)`.
    pub fn output_len(&self, frames: usize) -> usize {
        (0..self.pooled_layers).fold(frames, |t, _| t.div_ceil(2))
    }

    pub fn forward<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        lens: &Lengths,
        ctx: &mut Ctx<F>,
    ) -> Result<Embedded> {
        let min = self.min_frames();
        if let Some(&short) = lens.lens.iter().find(|&&l| l < min) {
            return Err(Error::TooFewFrames { frames: short, min });
        }
        let mut h = x;
        let mut lens = lens.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h, &lens, ctx)?;
            if i < self.pooled_layers {
                h = self.pool(g, h, &lens)?;
                lens = lens.halved();
            }
        }
        Ok(Embedded { states: h, lens })
    }

    fn pool<F: Element>(&self, g: &mut Graph<F>, h: Var, lens: &Lengths) -> Result<Var> {
        let t = g.shape(h)[0];
        let even = g.slice_step(h, 0, 0, t, 2)?;
        if !self.max_pool || t < 2 {
            return Ok(even);
        }
        // pair each even step with its odd successor; where the successor is
        // padding (or absent) the even step pairs with itself
        let n_odd = t / 2;
        let odd = g.slice_step(h, 0, 1, t, 2)?;
        let even_head = g.slice(even, 0, 0, n_odd)?;
        let b = lens.batch();
        let mut m = Vec::with_capacity(n_odd * b);
        for j in 0..n_odd {
            m.extend(lens.lens.iter().map(|&l| if 2 * j + 1 < l { F::one() } else { F::zero() }));
        }
        let m = g.constant(Tensor::new(vec![n_odd, b, 1], m)?);
        let d = g.sub(odd, even_head)?;
        let md = g.mul(m, d)?;
        let odd_eff = g.add(even_head, md)?;
        let pooled = g.maximum(even_head, odd_eff)?;
        if t % 2 == 1 {
            let last = g.slice(even, 0, n_odd, n_odd + 1)?;
            Ok(g.concat(&[pooled, last], 0)?)
        } else {
            Ok(pooled)
        }
    }
}

/// Hybrid attention: additive content scoring plus features from a 1-D
/// convolution of the previous alignment.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub location_conv: ParamId,
    pub location: Linear,
    pub v: ParamId,
    pub width: usize,
}

/// Per-utterance attention memory, computed once per batch.
pub struct Memory {
    /// `[B, T', D]`.
    pub values: Var,
    /// `[B, T', A]`.
    pub keys: Var,
    /// `[B, T']` additive mask (0 or a large negative number).
    pub mask: Var,
    pub lens: Lengths,
    pub steps: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        rng: &mut R,
        cfg: &ModelConfig,
        enc_dim: usize,
    ) -> Result<Self> {
        if cfg.location_width % 2 == 0 {
            return Err(Error::Config("model.location_width must be odd".into()));
        }
        let a = cfg.attention_dim;
        let f = cfg.location_filters;
        let w = cfg.location_width;
        Ok(Self {
            query: Linear::new(store, rng, "attention.query", cfg.decoder_dim, a, false, 1.0)?,
            key: Linear::new(store, rng, "attention.key", enc_dim, a, true, 1.0)?,
            location_conv: store.add("attention.location_conv", uniform(rng, &[f, 1, 1, w], 1.0 / (w as f64).sqrt()))?,
            location: Linear::new(store, rng, "attention.location", f, a, false, 1.0)?,
            v: store.add("attention.v", uniform(rng, &[a, 1], 1.0 / (a as f64).sqrt()))?,
            width: w,
        })
    }

    pub fn memory<F: Element>(&self, g: &mut Graph<F>, store: &ParamStore<F>, emb: &Embedded) -> Result<Memory> {
        let s = g.shape(emb.states).to_vec();
        let (tp, b, d) = (s[0], s[1], s[2]);
        if tp == 0 {
            return Err(Error::Empty("encoder output"));
        }
        let values = g.permute(emb.states, &[1, 0, 2])?;
        let flat = g.reshape(values, &[b * tp, d])?;
        let k = self.key.forward(g, store, flat)?;
        let a = g.shape(k)[1];
        let keys = g.reshape(k, &[b, tp, a])?;
        let mut m = Vec::with_capacity(b * tp);
        for &l in &emb.lens.lens {
            m.extend((0..tp).map(|t| if t < l { F::zero() } else { F::from_f64_lossy(MASK_SCORE) }));
        }
        let mask = g.constant(Tensor::new(vec![b, tp], m)?);
        Ok(Memory {
            values,
            keys,
            mask,
            lens: emb.lens.clone(),
            steps: tp,
        })
    }

    /// Returns `(context [B, D], alignment [B, T'])`.
    pub fn attend<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        query: Var,
        prev_align: Var,
    ) -> Result<(Var, Var)> {
        let b = mem.lens.batch();
        let tp = mem.steps;
        let q = self.query.forward(g, store, query)?;
        let a = g.shape(q)[1];
        let q = g.reshape(q, &[b, 1, a])?;

        let img = g.reshape(prev_align, &[b, 1, 1, tp])?;
        let w = g.param(store, self.location_conv);
        let half = self.width / 2;
        let spec = Conv2dSpec {
            stride: (1, 1),
            pad_h: (0, 0),
            pad_w: (half, half),
        };
        let conv = g.conv2d(img, w, spec)?;
        let nf = g.shape(conv)[1];
        let conv = g.reshape(conv, &[b, nf, tp])?;
        let conv = g.permute(conv, &[0, 2, 1])?;
        let conv = g.reshape(conv, &[b * tp, nf])?;
        let loc = self.location.forward(g, store, conv)?;
        let loc = g.reshape(loc, &[b, tp, a])?;

        let s = g.add(mem.keys, q)?;
        let s = g.add(s, loc)?;
        let e = g.tanh(s)?;
        let e = g.reshape(e, &[b * tp, a])?;
        let v = g.param(store, self.v);
        let scores = g.matmul(e, v)?;
        let scores = g.reshape(scores, &[b, tp])?;
        let align = masked_softmax(g, scores, mem.mask)?;
        let context = weighted_sum(g, align, mem.values)?;
        Ok((context, align))
    }
}

/// `softmax(scores + mask)` over the last axis.
pub fn masked_softmax<F: Element>(g: &mut Graph<F>, scores: Var, mask: Var) -> Result<Var> {
    let s = g.add(scores, mask)?;
    Ok(g.softmax(s)?)
}

/// `context[b] = sum_t align[b, t] * values[b, t, :]`.
pub fn weighted_sum<F: Element>(g: &mut Graph<F>, align: Var, values: Var) -> Result<Var> {
    let s = g.shape(values).to_vec();
    let a = g.reshape(align, &[s[0], 1, s[1]])?;
    let c = g.bmm(a, values)?;
    Ok(g.reshape(c, &[s[0], s[2]])?)
}

/// Decoder recurrent state for a batch.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub context: Var,
    pub align: Var,
}

/// Standalone embedding of one utterance (inference).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    /// `[T', D]`.
    pub states: Tensor<f32>,
    pub source_frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f32>,
}

impl Hypothesis {
    pub fn ended(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub encoder: Encoder,
    pub embed: ParamId,
    pub dec_in: Linear,
    pub dec_u: ParamId,
    pub dec_b: ParamId,
    pub attention: Attention,
    pub out: Linear,
}

impl Seq2Seq {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let vocab = Vocabulary::new(&cfg.vocabulary)?;
        let encoder = Encoder::new(store, rng, cfg)?;
        let d = encoder.output_dim();
        let h = cfg.decoder_dim;
        let e = cfg.embed_dim;
        let embed = store.add("decoder.embed", uniform(rng, &[vocab.len(), e], 1.0))?;
        let dec_in = Linear::new(store, rng, "decoder.gru_in", e + d, 3 * h, true, 1.0)?;
        let dec_u = store.add("decoder.gru_u", uniform(rng, &[h, 3 * h], 1.0 / (h as f64).sqrt()))?;
        let dec_b = store.add("decoder.gru_b", Tensor::zeros(&[3 * h]))?;
        let attention = Attention::new(store, rng, cfg, d)?;
        // near-zero logits: an untrained model predicts close to uniformly
        let out = Linear::new(store, rng, "decoder.out", h + d, vocab.len(), true, 0.05)?;
        Ok(Self {
            cfg: cfg.clone(),
            vocab,
            encoder,
            embed,
            dec_in,
            dec_u,
            dec_b,
            attention,
            out,
        })
    }

    pub fn encode<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        lens: &Lengths,
        ctx: &mut Ctx<F>,
    ) -> Result<Embedded> {
        self.encoder.forward(g, store, x, lens, ctx)
    }

    pub fn initial_state<F: Element>(&self, g: &mut Graph<F>, mem: &Memory) -> Result<DecoderState> {
        let b = mem.lens.batch();
        let d = g.shape(mem.values)[2];
        let hidden = g.constant(Tensor::zeros(&[b, self.cfg.decoder_dim]));
        let context = g.constant(Tensor::zeros(&[b, d]));
        let mut a = vec![F::zero(); b * mem.steps];
        for i in 0..b {
            a[i * mem.steps] = F::one();
        }
        let align = g.constant(Tensor::new(vec![b, mem.steps], a)?);
        Ok(DecoderState { hidden, context, align })
    }

    /// One decoder step for a batch. Returns unnormalized logits `[B, V]`.
    pub fn step<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        prev: &[usize],
        st: DecoderState,
    ) -> Result<(Var, DecoderState)> {
        if let Some(&bad) = prev.iter().find(|&&t| !self.vocab.contains(t)) {
            return Err(Error::UnknownToken(bad));
        }
        let table = g.param(store, self.embed);
        let e = g.embedding(table, prev)?;
        let x = g.concat(&[e, st.context], 1)?;
        let gx = self.dec_in.forward(g, store, x)?;
        let u = g.param(store, self.dec_u);
        let b = g.param(store, self.dec_b);
        let hidden = gru_cell(g, gx, st.hidden, u, b, self.cfg.decoder_dim)?;
        let (context, align) = self.attention.attend(g, store, mem, hidden, st.align)?;
        let o = g.concat(&[hidden, context], 1)?;
        let logits = self.out.forward(g, store, o)?;
        Ok((logits, DecoderState { hidden, context, align }))
    }

    /// One step returning log-probabilities, as used at inference.
    pub fn decode_step<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mem: &Memory,
        prev: &[usize],
        st: DecoderState,
    ) -> Result<(Var, DecoderState)> {
        let (logits, st) = self.step(g, store, mem, prev, st)?;
        Ok((g.log_softmax(logits)?, st))
    }

    /// Teacher-forced logits for `targets` (each ending in `EOS`).
    /// Returns `[L * B, V]` in time-major row order and the padded targets.
    pub fn teacher_forced<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        emb: &Embedded,
        targets: &[Vec<usize>],
    ) -> Result<(Var, Vec<usize>)> {
        let b = emb.lens.batch();
        if targets.len() != b {
            return Err(Error::BatchMismatch(targets.len(), b));
        }
        let l = targets.iter().map(Vec::len).max().unwrap_or(0);
        if l == 0 {
            return Err(Error::Empty("target batch"));
        }
        let mem = self.attention.memory(g, store, emb)?;
        let mut st = self.initial_state(g, &mem)?;
        let mut prev = vec![SOS; b];
        let mut steps = Vec::with_capacity(l);
        let mut flat = Vec::with_capacity(l * b);
        for i in 0..l {
            let (logits, next) = self.step(g, store, &mem, &prev, st)?;
            steps.push(logits);
            st = next;
            for (j, t) in targets.iter().enumerate() {
                let y = t.get(i).copied().unwrap_or(PAD);
                flat.push(y);
                prev[j] = y;
            }
        }
        let stacked = g.stack(&steps)?;
        let v = self.vocab.len();
        Ok((g.reshape(stacked, &[l * b, v])?, flat))
    }

    /// Teacher-forced cross entropy of `targets` given features `x`,
    /// with the encoder embedding.
    pub fn loss<F: Element>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        lens: &Lengths,
        targets: &[Vec<usize>],
        ctx: &mut Ctx<F>,
    ) -> Result<(Var, Embedded)> {
        let emb = self.encode(g, store, x, lens, ctx)?;
        let (logits, flat) = self.teacher_forced(g, store, &emb, targets)?;
        let lp = g.log_softmax(logits)?;
        Ok((cross_entropy_loss(g, lp, &flat)?, emb))
    }

    /// Greedy decoding of a batch in inference mode; utterance `i` stops at
    /// `EOS` or after `2 * T'_i` tokens.
    pub fn greedy_decode(&self, store: &ParamStore<f32>, feats: &Tensor<f32>, lens: &Lengths) -> Result<Vec<Hypothesis>> {
        let mut g = Graph::new();
        g.set_check_finite(false);
        let x = g.constant(feats.clone());
        let mut ctx = Ctx::eval();
        let emb = self.encode(&mut g, store, x, lens, &mut ctx)?;
        self.greedy_from(&mut g, store, &emb)
    }

    pub fn greedy_from(&self, g: &mut Graph<f32>, store: &ParamStore<f32>, emb: &Embedded) -> Result<Vec<Hypothesis>> {
        let b = emb.lens.batch();
        let caps: Vec<usize> = emb.lens.lens.iter().map(|&l| 2 * l).collect();
        let max_len = caps.iter().copied().max().unwrap_or(0);
        let mem = self.attention.memory(g, store, emb)?;
        let mut st = self.initial_state(g, &mem)?;
        let mut prev = vec![SOS; b];
        let mut hyps = vec![
            Hypothesis {
                tokens: Vec::new(),
                log_probs: Vec::new(),
            };
            b
        ];
        let mut done = vec![false; b];
        for step in 0..max_len {
            let (lp, next) = self.decode_step(g, store, &mem, &prev, st)?;
            st = next;
            let v = self.vocab.len();
            let data = g.value(lp).data();
            for i in 0..b {
                if done[i] {
                    prev[i] = EOS;
                    continue;
                }
                let row = &data[i * v..(i + 1) * v];
                let tok = argmax(row);
                hyps[i].tokens.push(tok);
                hyps[i].log_probs.push(row[tok]);
                prev[i] = tok;
                if tok == EOS || step + 1 >= caps[i] {
                    done[i] = true;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(hyps)
    }

    /// Inference-mode embedding of a single `[T, 40]` feature matrix.
    pub fn embed(&self, store: &ParamStore<f32>, feats: &[f32]) -> Result<EmbeddingSequence> {
        let t = feats.len() / FEATURE_DIM;
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![t, 1, FEATURE_DIM], feats.to_vec())?);
        let mut ctx = Ctx::eval();
        let emb = self.encode(&mut g, store, x, &Lengths::new(vec![t]), &mut ctx)?;
        let s = g.shape(emb.states).to_vec();
        let states = g.value(emb.states).clone().reshape(&[s[0], s[2]])?;
        Ok(EmbeddingSequence {
            states,
            source_frames: t,
        })
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-likelihood over non-`PAD` targets. `log_probs` is
/// `[N, V]` and `targets` has `N` entries.
pub fn cross_entropy_loss<F: Element>(g: &mut Graph<F>, log_probs: Var, targets: &[usize]) -> Result<Var> {
    let n = g.shape(log_probs)[0];
    if n != targets.len() {
        return Err(Error::ShapeMismatch {
            what: "cross entropy targets",
            a: g.shape(log_probs).to_vec(),
            b: vec![targets.len()],
        });
    }
    let count = targets.iter().filter(|&&t| t != PAD).count();
    if count == 0 {
        return Err(Error::Empty("reference tokens"));
    }
    let picked = g.pick(log_probs, targets)?;
    let w: Vec<F> = targets
        .iter()
        .map(|&t| if t == PAD { F::zero() } else { F::from_f64_lossy(-1.0 / count as f64) })
        .collect();
    let w = g.constant(Tensor::new(vec![n], w)?);
    let weighted = g.mul(picked, w)?;
    Ok(g.sum(weighted)?)
}

/// Time-major `[T, B, 40]` batch from row-major `[T_i, 40]` feature matrices,
/// zero-padded to the longest.
pub fn batch_features<F: Element>(feats: &[&[f32]]) -> (Tensor<F>, Lengths) {
    let lens: Vec<usize> = feats.iter().map(|f| f.len() / FEATURE_DIM).collect();
    let lens = Lengths::new(lens);
    let b = feats.len();
    let mut data = vec![F::zero(); lens.max * b * FEATURE_DIM];
    for (i, f) in feats.iter().enumerate() {
        for t in 0..lens.lens[i] {
            let dst = (t * b + i) * FEATURE_DIM;
            for k in 0..FEATURE_DIM {
                data[dst + k] = F::from_f64_lossy(f[t * FEATURE_DIM + k] as f64);
            }
        }
    }
    (Tensor::new(vec![lens.max, b, FEATURE_DIM], data).expect("sized above"), lens)
}
