//! Training loops for the plain recognizer, the L1 enhancer and the WGAN
//! enhancer, with dev-set early stopping.
//!
//! Three independent random streams are derived from the seed: parameter
//! initialization, data order and augmentation, and the generator's input
//! noise. Runs are bit-reproducible for a fixed seed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use advasr_audio::{add_noise_prior, normalize_features, FeatureSequence, FeatureStats, MelFrontend, Waveform, SAMPLE_RATE};
use advasr_tensor::{adam_step, rmsprop_ascent_step, Checkpoint, Graph, OptimizerState, ParamStore, RmsPropConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Config, EnhancerMode};
use crate::critic::{clip_weights, Critic};
use crate::data::{Batcher, Dataset, Prepared};
use crate::enhancer::{em_losses, l1_distance_penalty};
use crate::error::{Error, Result};
use crate::model::{batch_features, Seq2Seq};
use crate::nn::{apply_bn_updates, Ctx, Lengths};
use crate::score::{score, ScoreReport};

const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_NOISE: u64 = 2;
const DECODE_BATCH: usize = 32;
/// Reverberated feature values kept per trainer, about 256 MB of `f32`.
const REVERB_CACHE_VALUES: usize = 64 << 20;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// One metrics record per outer step.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub theta_updates: u64,
    pub ce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    /// Critic objective of the last critic update this step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_objective: Option<f64>,
    /// `-mean f(noisy)` seen by the encoder update, when it applied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_objective: Option<f64>,
    pub grad_norm: f64,
    /// Norm of the enhancer term's gradient on recognizer parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enhancer_grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_updates: Option<u64>,
    /// Largest critic weight magnitude seen after any clip this step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_max_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_s: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRecord {
    pub eval: u64,
    pub theta_updates: u64,
    pub dev_near_wer: f64,
    pub dev_far_wer: f64,
    pub dev_wer: f64,
    pub best: bool,
}

/// Critic network with its own parameters and optimizer.
pub struct CriticState {
    pub net: Critic,
    pub store: ParamStore<f32>,
    pub opt: OptimizerState<f32>,
    pub updates: u64,
}

impl CriticState {
    pub fn new(net: Critic, store: ParamStore<f32>) -> Self {
        let opt = OptimizerState::new(&store);
        Self {
            net,
            store,
            opt,
            updates: 0,
        }
    }

    /// One ascent step on `mean f(clean) - mean f(noisy)` followed by the
    /// clip. Inputs are `[T', B, D]` embeddings treated as constants.
    /// Returns the objective before the step and the gradient norm.
    pub fn ascend(
        &mut self,
        clean: &Tensor<f32>,
        noisy: &Tensor<f32>,
        lens: &Lengths,
        cfg: &RmsPropConfig,
        clip: f64,
    ) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let c = g.constant(clean.clone());
        let n = g.constant(noisy.clone());
        let em = em_losses(&mut g, &self.net, &self.store, c, n, lens)?;
        let obj = g.value(em.critic_objective).item()? as f64;
        let grads = g.backward(em.critic_objective)?;
        self.store.zero_grad();
        self.store.accumulate(&grads)?;
        let norm = self.store.grad_norm();
        rmsprop_ascent_step(&mut self.store, &mut self.opt, cfg)?;
        clip_weights(&mut self.store, clip);
        self.updates += 1;
        Ok((obj, norm))
    }
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub theta_updates: u64,
    pub outer_steps: u64,
    pub best_dev_wer: f64,
    pub stopped_early: bool,
    pub metrics: String,
}

pub struct Trainer<'a> {
    pub cfg: Config,
    pub data: &'a Dataset,
    pub model: Seq2Seq,
    pub store: ParamStore<f32>,
    pub adam: OptimizerState<f32>,
    pub critic: Option<CriticState>,
    rng_data: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    batcher: Batcher,
    /// Features of (training utterance, impulse response) pairs. Pure
    /// function of the pair, so caching never changes a run.
    reverb_cache: HashMap<(usize, usize), FeatureSequence>,
    reverb_cached_values: usize,
    pub theta_updates: u64,
    pub outer_steps: u64,
    pub metrics: String,
    start: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: Config, data: &'a Dataset) -> Result<Self> {
        crate::retain_freed_memory();
        cfg.enhancer.validate()?;
        if !(0.0..=1.0).contains(&cfg.train.augment_prob) {
            return Err(Error::Config(format!("augment_prob {} outside [0, 1]", cfg.train.augment_prob)));
        }
        if data.train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if cfg.train.batch_size == 0 || cfg.train.batch_size > data.train.len() {
            return Err(Error::Config(format!(
                "batch size {} must be between 1 and the {} training utterances",
                cfg.train.batch_size,
                data.train.len()
            )));
        }
        let seed = cfg.train.seed;
        let mut rng_init = stream(seed, STREAM_INIT);
        let mut store = ParamStore::new();
        let model = Seq2Seq::new(&mut store, &mut rng_init, &cfg.model)?;
        let critic = if cfg.enhancer.mode == EnhancerMode::Wgan {
            let mut cs = ParamStore::new();
            let net = Critic::new(&mut cs, &mut rng_init, &cfg.critic, model.encoder.output_dim(), cfg.enhancer.clip)?;
            Some(CriticState::new(net, cs))
        } else {
            None
        };
        let adam = OptimizerState::new(&store);
        let batcher = Batcher::new(data.train.len(), cfg.train.batch_size);
        Ok(Self {
            data,
            model,
            store,
            adam,
            critic,
            rng_data: stream(seed, STREAM_DATA),
            rng_noise: stream(seed, STREAM_NOISE),
            batcher,
            reverb_cache: HashMap::new(),
            reverb_cached_values: 0,
            theta_updates: 0,
            outer_steps: 0,
            metrics: String::new(),
            start: Instant::now(),
            cfg,
        })
    }

    /// Next batch; each utterance is reverberated with probability `p` by a
    /// random training impulse response.
    fn sample(&mut self, p: f64) -> Result<(Vec<usize>, Vec<Option<FeatureSequence>>)> {
        let idx = self.batcher.next(&mut self.rng_data);
        let mut aug = Vec::with_capacity(idx.len());
        for &i in &idx {
            aug.push(if p > 0.0 && self.rng_data.random_bool(p) {
                Some(self.reverb_random(i)?)
            } else {
                None
            });
        }
        Ok((idx, aug))
    }

    fn reverb_random(&mut self, i: usize) -> Result<FeatureSequence> {
        let rirs = self.data.train_rirs();
        if rirs.is_empty() {
            return Err(Error::Empty("training impulse responses"));
        }
        let k = self.rng_data.random_range(0..rirs.len());
        if let Some(f) = self.reverb_cache.get(&(i, k)) {
            return Ok(f.clone());
        }
        let f = self.data.reverberate(&self.data.train[i].wave, rirs[k])?;
        if self.reverb_cached_values + f.data().len() <= REVERB_CACHE_VALUES {
            self.reverb_cached_values += f.data().len();
            self.reverb_cache.insert((i, k), f.clone());
        }
        Ok(f)
    }

    fn pick<'b>(&'b self, idx: &[usize], aug: &'b [Option<FeatureSequence>]) -> Vec<&'b [f32]> {
        idx.iter()
            .zip(aug)
            .map(|(&i, a)| a.as_ref().unwrap_or(&self.data.train[i].clean).data())
            .collect()
    }

    fn targets(&self, idx: &[usize]) -> Vec<Vec<usize>> {
        idx.iter().map(|&i| self.data.train[i].tokens.clone()).collect()
    }

    /// Clip, take one Adam step and fold in batch-norm statistics.
    fn apply_theta(&mut self, ctx: &Ctx<f32>) -> Result<f64> {
        let norm = self.store.clip_grad_norm(self.cfg.train.grad_clip);
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                step: self.outer_steps,
                detail: format!("recognizer gradient norm {norm} after {} updates", self.theta_updates),
            });
        }
        adam_step(&mut self.store, &mut self.adam, &self.cfg.train.adam)?;
        apply_bn_updates(&mut self.store, &ctx.bn_updates)?;
        self.theta_updates += 1;
        Ok(norm)
    }

    fn check_loss(&self, what: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                step: self.outer_steps,
                detail: format!("{what} = {v} after {} updates", self.theta_updates),
            })
        }
    }

    /// Cross-entropy graph on the chosen features; gradients accumulated into
    /// the store. Returns the loss value.
    fn ce_grads(&mut self, feats: &[&[f32]], targets: &[Vec<usize>], ctx: &mut Ctx<f32>) -> Result<f64> {
        let (x, lens) = batch_features::<f32>(feats);
        let mut g = Graph::new();
        let x = g.constant(x);
        let (loss, _) = self.model.loss(&mut g, &self.store, x, &lens, targets, ctx)?;
        let v = g.value(loss).item()? as f64;
        self.check_loss("cross entropy", v)?;
        let grads = g.backward(loss)?;
        self.store.accumulate(&grads)?;
        Ok(v)
    }

    fn ce_step(&mut self, p: f64) -> Result<(Vec<usize>, f64, f64)> {
        let (idx, aug) = self.sample(p)?;
        let feats: Vec<Vec<f32>> = self.pick(&idx, &aug).into_iter().map(<[f32]>::to_vec).collect();
        let refs: Vec<&[f32]> = feats.iter().map(Vec::as_slice).collect();
        let targets = self.targets(&idx);
        let mut ctx = Ctx::train();
        self.store.zero_grad();
        let ce = self.ce_grads(&refs, &targets, &mut ctx)?;
        let norm = self.apply_theta(&ctx)?;
        Ok((idx, ce, norm))
    }

    fn require(&self, mode: EnhancerMode) -> Result<()> {
        if self.cfg.enhancer.mode == mode {
            Ok(())
        } else {
            Err(Error::WrongMode {
                expected: mode.as_str(),
                found: self.cfg.enhancer.mode.to_string(),
            })
        }
    }

    fn l1_update(&mut self) -> Result<StepRecord> {
        let (idx, aug) = self.sample(self.cfg.train.augment_prob)?;
        let noisy = self.pick(&idx, &aug);
        let clean = self.clean_of(&idx);
        let targets = self.targets(&idx);
        let (xn, lens) = batch_features::<f32>(&noisy);
        let (xc, _) = batch_features::<f32>(&clean);
        let mut g = Graph::new();
        // the noisy pass feeds the decoder and owns the running statistics
        let mut ctx = Ctx::train();
        let xn = g.constant(xn);
        let (ce, emb_n) = self.model.loss(&mut g, &self.store, xn, &lens, &targets, &mut ctx)?;
        let mut frozen = Ctx::train_frozen();
        let xc = g.constant(xc);
        let emb_c = self.model.encode(&mut g, &self.store, xc, &lens, &mut frozen)?;
        let pen = l1_distance_penalty(&mut g, emb_c.states, emb_n.states, &emb_n.lens, self.cfg.enhancer.eps_stability)?;
        let weighted = g.scale(pen, self.cfg.enhancer.lambda as f32)?;
        let loss = g.add(ce, weighted)?;
        let ce_v = g.value(ce).item()? as f64;
        let pen_v = g.value(pen).item()? as f64;
        self.check_loss("joint loss", g.value(loss).item()? as f64)?;
        let grads = g.backward(loss)?;
        self.store.zero_grad();
        self.store.accumulate(&grads)?;
        let norm = self.apply_theta(&ctx)?;
        Ok(StepRecord {
            ce: ce_v,
            penalty: Some(pen_v),
            grad_norm: norm,
            ..Default::default()
        })
    }

    /// Far-field copies of the given utterances plus the generator's prior
    /// noise.
    fn far_batch(&mut self, idx: &[usize]) -> Result<Vec<FeatureSequence>> {
        let mut far = Vec::with_capacity(idx.len());
        for &i in idx {
            let f = self.reverb_random(i)?;
            far.push(add_noise_prior(&f, self.cfg.enhancer.noise_sigma as f32, &mut self.rng_noise));
        }
        Ok(far)
    }

    /// Embeddings under the current encoder with batch statistics and no
    /// running-average updates.
    fn embed_frozen(&self, feats: &[&[f32]]) -> Result<(Tensor<f32>, Lengths)> {
        let (x, lens) = batch_features::<f32>(feats);
        let mut g = Graph::new();
        let mut ctx = Ctx::train_frozen();
        let x = g.constant(x);
        let z = self.model.encode(&mut g, &self.store, x, &lens, &mut ctx)?;
        Ok((g.value(z.states).clone(), z.lens))
    }

    fn clean_of(&self, idx: &[usize]) -> Vec<&[f32]> {
        idx.iter().map(|&i| self.data.train[i].clean.data()).collect()
    }

    fn wgan_update(&mut self) -> Result<StepRecord> {
        let ec = self.cfg.enhancer.clone();
        let p_ce = if ec.augmented_ce { self.cfg.train.augment_prob } else { 0.0 };
        let rms = self.cfg.train.rmsprop;
        let mut rec = StepRecord::default();
        let mut max_abs: f64 = 0.0;
        let mut updates = 0;
        for _ in 0..ec.n_critic {
            let (idx, ce, _) = self.ce_step(p_ce)?;
            rec.ce = ce;
            let far = self.far_batch(&idx)?;
            let farr: Vec<&[f32]> = far.iter().map(|f| f.data()).collect();
            let (zc, lens) = self.embed_frozen(&self.clean_of(&idx))?;
            let (zn, _) = self.embed_frozen(&farr)?;
            let critic = self.critic.as_mut().expect("wgan mode owns a critic");
            let (obj, norm) = critic.ascend(&zc, &zn, &lens, &rms, ec.clip)?;
            max_abs = max_abs.max(critic.store.max_abs_value());
            updates += 1;
            rec.critic_objective = Some(obj);
            rec.critic_grad_norm = Some(norm);
        }
        rec.critic_updates = Some(updates);
        rec.critic_max_abs = Some(max_abs);

        let (idx, aug) = self.sample(p_ce)?;
        let feats: Vec<Vec<f32>> = self.pick(&idx, &aug).into_iter().map(<[f32]>::to_vec).collect();
        let refs: Vec<&[f32]> = feats.iter().map(Vec::as_slice).collect();
        let targets = self.targets(&idx);
        let mut ctx = Ctx::train();
        self.store.zero_grad();
        rec.ce = self.ce_grads(&refs, &targets, &mut ctx)?;

        if self.outer_steps >= ec.warmup_steps {
            // encoder gradients from the critic: descend -lambda * mean f(noisy)
            let far = self.far_batch(&idx)?;
            let (zc, _) = self.embed_frozen(&self.clean_of(&idx))?;
            let farr: Vec<&[f32]> = far.iter().map(|f| f.data()).collect();
            let (xn, lens) = batch_features::<f32>(&farr);
            let mut g = Graph::new();
            let mut frozen = Ctx::train_frozen();
            let xn = g.constant(xn);
            let zn = self.model.encode(&mut g, &self.store, xn, &lens, &mut frozen)?;
            let zc = g.constant(zc);
            let critic = self.critic.as_ref().expect("wgan mode owns a critic");
            let em = em_losses(&mut g, &critic.net, &critic.store, zc, zn.states, &zn.lens)?;
            let gen = g.value(em.generator_objective).item()? as f64;
            self.check_loss("generator objective", gen)?;
            let loss = g.scale(em.generator_objective, ec.lambda as f32)?;
            let grads = g.backward(loss)?;
            rec.enhancer_grad_norm = Some(grads.store_norm(&self.store));
            rec.generator_objective = Some(gen);
            self.store.accumulate(&grads)?;
        } else {
            rec.enhancer_grad_norm = Some(0.0);
        }
        rec.grad_norm = self.apply_theta(&ctx)?;
        Ok(rec)
    }

    /// One outer step of the configured mode.
    pub fn step(&mut self) -> Result<StepRecord> {
        match self.cfg.enhancer.mode {
            EnhancerMode::None => {
                let (_, ce, norm) = self.ce_step(self.cfg.train.augment_prob)?;
                let rec = StepRecord {
                    ce,
                    grad_norm: norm,
                    ..Default::default()
                };
                Ok(self.finish(rec))
            }
            EnhancerMode::L1 => self.l1_step(),
            EnhancerMode::Wgan => self.wgan_step(),
        }
    }

    /// One joint update on cross entropy plus the weighted L1 penalty.
    pub fn l1_step(&mut self) -> Result<StepRecord> {
        self.require(EnhancerMode::L1)?;
        let rec = self.l1_update()?;
        Ok(self.finish(rec))
    }

    /// One outer step of the WGAN loop: `n_critic` recognizer and critic
    /// updates, then a recognizer update that includes the critic term once
    /// warmup is over.
    pub fn wgan_step(&mut self) -> Result<StepRecord> {
        self.require(EnhancerMode::Wgan)?;
        let rec = self.wgan_update()?;
        Ok(self.finish(rec))
    }

    fn finish(&mut self, mut rec: StepRecord) -> StepRecord {
        self.outer_steps += 1;
        rec.step = self.outer_steps;
        rec.theta_updates = self.theta_updates;
        if self.cfg.train.log_wall_time {
            rec.wall_s = Some(self.start.elapsed().as_secs_f64());
        }
        self.log(&rec);
        rec
    }

    fn log<T: Serialize>(&mut self, rec: &T) {
        let _ = writeln!(self.metrics, "{}", serde_json::to_string(rec).expect("plain record"));
    }

    /// Trains until the update budget is spent or dev WER stops improving,
    /// then restores the best parameters.
    /// Scores the dev set near and far, logs the result and keeps the
    /// parameters if they beat `best`. Returns whether they did.
    fn dev_checkpoint(&mut self, eval: u64, best: &mut Option<(f64, ParamStore<f32>)>) -> Result<bool> {
        let near = self.evaluate(&self.data.dev, false)?.wer();
        let far = self.evaluate(&self.data.dev, true)?.wer();
        let dev = 0.5 * (near + far);
        let improved = best.as_ref().is_none_or(|(b, _)| dev < *b);
        if improved {
            *best = Some((dev, self.store.clone()));
        }
        self.log(&EvalRecord {
            eval,
            theta_updates: self.theta_updates,
            dev_near_wer: near,
            dev_far_wer: far,
            dev_wer: dev,
            best: improved,
        });
        Ok(improved)
    }

    pub fn run(&mut self) -> Result<TrainOutcome> {
        let per_step = match self.cfg.enhancer.mode {
            EnhancerMode::Wgan => self.cfg.enhancer.n_critic as u64 + 1,
            _ => 1,
        };
        let every = self.cfg.train.eval_every.max(1);
        let mut best: Option<(f64, ParamStore<f32>)> = None;
        let mut bad = 0;
        let mut evals = 0;
        let mut stopped_early = false;
        let mut unevaluated = false;
        while self.theta_updates + per_step <= self.cfg.train.max_updates {
            let before = self.theta_updates / every;
            self.step()?;
            unevaluated = self.theta_updates / every == before;
            if unevaluated {
                continue;
            }
            evals += 1;
            if self.dev_checkpoint(evals, &mut best)? {
                bad = 0;
            } else {
                bad += 1;
            }
            if bad >= self.cfg.train.patience {
                stopped_early = true;
                break;
            }
        }
        // the budget rarely ends on an evaluation boundary in wgan mode
        if unevaluated {
            evals += 1;
            self.dev_checkpoint(evals, &mut best)?;
        }
        let best_dev_wer = match best {
            Some((w, s)) => {
                self.store = s;
                w
            }
            None => f64::NAN,
        };
        Ok(TrainOutcome {
            theta_updates: self.theta_updates,
            outer_steps: self.outer_steps,
            best_dev_wer,
            stopped_early,
            metrics: self.metrics.clone(),
        })
    }

    pub fn decode(&self, utts: &[Prepared], far: bool) -> Result<Vec<(String, String)>> {
        decode_utterances(&self.model, &self.store, utts, far)
    }

    pub fn evaluate(&self, utts: &[Prepared], far: bool) -> Result<ScoreReport> {
        let hyps = self.decode(utts, far)?.into_iter().collect();
        score(utts.iter().map(|u| (u.id.as_str(), u.transcript.as_str())), &hyps)
    }

    /// Recognizer weights with config and feature statistics, plus the
    /// critic when there is one.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = TrainedModel::checkpoint(&self.cfg, &self.data.stats, &self.store)?;
        if let Some(cs) = &self.critic {
            c.add_store("critic", &cs.store)?;
        }
        Ok(c)
    }
}

/// Greedy transcripts for `utts`, clean or far-field features.
pub fn decode_utterances(model: &Seq2Seq, store: &ParamStore<f32>, utts: &[Prepared], far: bool) -> Result<Vec<(String, String)>> {
    let mut out = Vec::with_capacity(utts.len());
    for chunk in utts.chunks(DECODE_BATCH) {
        let feats: Vec<&[f32]> = chunk
            .iter()
            .map(|u| {
                if far {
                    u.far.as_ref().ok_or(Error::Empty("far-field copy")).map(|f| f.data())
                } else {
                    Ok(u.clean.data())
                }
            })
            .collect::<Result<_>>()?;
        let (x, lens) = batch_features::<f32>(&feats);
        let hyps = model.greedy_decode(store, &x, &lens)?;
        for (u, h) in chunk.iter().zip(hyps) {
            out.push((u.id.clone(), model.vocab.decode(&h.tokens)));
        }
    }
    Ok(out)
}

/// A trained recognizer with what decoding needs besides the weights.
pub struct TrainedModel {
    pub cfg: Config,
    pub stats: FeatureStats,
    pub model: Seq2Seq,
    pub store: ParamStore<f32>,
}

impl TrainedModel {
    /// Weights under `model`, with the config and feature statistics as
    /// metadata.
    pub fn checkpoint(cfg: &Config, stats: &FeatureStats, store: &ParamStore<f32>) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.add_store("model", store)?;
        c.meta.insert("config".into(), serde_json::to_string(&cfg.to_string()).expect("string"));
        c.meta.insert("feature_stats".into(), stats.to_line());
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let text = c.meta.get("config").ok_or_else(|| Error::Checkpoint("no config entry".into()))?;
        let text: String = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("config entry: {e}")))?;
        let cfg = Config::from_text(&text)?;
        let line = c.meta.get("feature_stats").ok_or_else(|| Error::Checkpoint("no feature_stats entry".into()))?;
        let stats = FeatureStats::from_line(line)?;
        let mut store = ParamStore::new();
        let model = Seq2Seq::new(&mut store, &mut stream(cfg.train.seed, STREAM_INIT), &cfg.model)?;
        c.restore_store("model", &mut store)?;
        Ok(Self { cfg, stats, model, store })
    }

    /// Greedy transcripts of raw waveforms.
    pub fn transcribe(&self, waves: &[(String, Waveform)]) -> Result<Vec<(String, String)>> {
        let frontend = MelFrontend::new(SAMPLE_RATE);
        let mut out = Vec::with_capacity(waves.len());
        for chunk in waves.chunks(DECODE_BATCH) {
            let feats: Vec<FeatureSequence> = chunk
                .iter()
                .map(|(_, w)| Ok(normalize_features(&frontend.extract(w)?, &self.stats)?))
                .collect::<Result<_>>()?;
            let refs: Vec<&[f32]> = feats.iter().map(FeatureSequence::data).collect();
            let (x, lens) = batch_features::<f32>(&refs);
            let hyps = self.model.greedy_decode(&self.store, &x, &lens)?;
            for ((id, _), h) in chunk.iter().zip(hyps) {
                out.push((id.clone(), self.model.vocab.decode(&h.tokens)));
            }
        }
        Ok(out)
    }
}
