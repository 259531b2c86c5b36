//! Human-readable `key = value` configuration with named presets.
//!
//! Lines are `section.key = value`; `#` starts a comment. A line
//! `preset = <name>` loads that preset before the remaining lines apply.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use advasr_tensor::{AdamConfig, RmsPropConfig};

use crate::error::{Error, Result};

const DESK_PRESET: &str = include_str!("../presets/desk.conf");
const FULL_PRESET: &str = include_str!("../presets/full.conf");
const TINY_PRESET: &str = include_str!("../presets/tiny.conf");

pub const PRESETS: [&str; 3] = ["desk", "full", "tiny"];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_dim: usize,
    pub encoder_layers: usize,
    /// Leading layers followed by a stride-2 time pooling.
    pub pooled_layers: usize,
    pub concat_directions: bool,
    pub max_pool: bool,
    pub embed_dim: usize,
    pub decoder_dim: usize,
    pub attention_dim: usize,
    pub location_filters: usize,
    pub location_width: usize,
    pub vocabulary: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_dim: 64,
            encoder_layers: 3,
            pooled_layers: 3,
            concat_directions: false,
            max_pool: false,
            embed_dim: 32,
            decoder_dim: 64,
            attention_dim: 128,
            location_filters: 10,
            location_width: 11,
            vocabulary: crate::vocab::DEFAULT_CHARS.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    /// Filters of the four convolutions.
    pub filters: [usize; 4],
    pub lstm_dim: usize,
    pub sigmoid: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            filters: [32, 64, 64, 96],
            lstm_dim: 32,
            sigmoid: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnhancerMode {
    None,
    L1,
    Wgan,
}

impl EnhancerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EnhancerMode::None => "none",
            EnhancerMode::L1 => "l1",
            EnhancerMode::Wgan => "wgan",
        }
    }
}

impl fmt::Display for EnhancerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnhancerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EnhancerMode::None),
            "l1" => Ok(EnhancerMode::L1),
            "wgan" => Ok(EnhancerMode::Wgan),
            _ => Err(Error::Config(format!("unknown enhancer mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerConfig {
    pub mode: EnhancerMode,
    pub lambda: f64,
    /// Denominator constant of the normalized L1 penalty.
    pub eps_stability: f64,
    /// Critic weight clip.
    pub clip: f64,
    pub n_critic: usize,
    /// Outer steps before critic gradients reach the encoder.
    pub warmup_steps: u64,
    pub noise_sigma: f64,
    /// Critic-phase recognizer updates use the augmented batch.
    pub augmented_ce: bool,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            mode: EnhancerMode::None,
            lambda: 1.0,
            eps_stability: 1e-8,
            clip: 0.05,
            n_critic: 5,
            warmup_steps: 3000,
            noise_sigma: 0.001,
            augmented_ce: true,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.mode == EnhancerMode::Wgan && !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be > 0, got {}", self.clip)));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be >= 1".into()));
        }
        if !(self.eps_stability > 0.0) {
            return Err(Error::Config("eps_stability must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Recognizer (theta) updates, counting critic-phase updates.
    pub max_updates: u64,
    pub eval_every: u64,
    pub patience: usize,
    pub adam: AdamConfig,
    pub rmsprop: RmsPropConfig,
    pub grad_clip: f64,
    pub augment_prob: f64,
    pub seed: u64,
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_updates: 3000,
            eval_every: 100,
            patience: 10,
            adam: AdamConfig::default(),
            rmsprop: RmsPropConfig::default(),
            grad_clip: 5.0,
            augment_prob: 0.4,
            seed: 1,
            log_wall_time: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_utts: usize,
    pub dev_utts: usize,
    pub eval_utts: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub rooms: usize,
    pub rir_train: usize,
    pub rir_dev: usize,
    pub rir_eval: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_utts: 800,
            dev_utts: 60,
            eval_utts: 150,
            min_chars: 3,
            max_chars: 10,
            rooms: 20,
            rir_train: 64,
            rir_dev: 8,
            rir_eval: 12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub critic: CriticConfig,
    pub enhancer: EnhancerConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

/// Every key with a one-line description.
pub const SCHEMA: &[(&str, &str)] = &[
    ("model.encoder_dim", "width of each encoder GRU direction"),
    ("model.encoder_layers", "number of bidirectional GRU layers"),
    ("model.pooled_layers", "leading layers followed by 2x1 time pooling"),
    ("model.concat_directions", "concatenate instead of summing GRU directions"),
    ("model.max_pool", "max-pool pairs of steps instead of keeping every second step"),
    ("model.embed_dim", "decoder character embedding width"),
    ("model.decoder_dim", "decoder GRU width"),
    ("model.attention_dim", "attention MLP width"),
    ("model.location_filters", "location-feature convolution filters"),
    ("model.location_width", "location-feature convolution width (odd)"),
    ("model.vocabulary", "output characters, quoted"),
    ("critic.filters", "four comma-separated convolution filter counts"),
    ("critic.lstm_dim", "critic LSTM width"),
    ("critic.sigmoid", "squash per-step critic scores with a sigmoid"),
    ("enhancer.mode", "none | l1 | wgan"),
    ("enhancer.lambda", "weight of the enhancer term"),
    ("enhancer.eps_stability", "denominator constant of the L1 penalty"),
    ("enhancer.clip", "critic weight clip c"),
    ("enhancer.n_critic", "critic iterations per outer step"),
    ("enhancer.warmup_steps", "outer steps without critic gradients into the encoder"),
    ("enhancer.noise_sigma", "std of the Gaussian prior added to generator inputs"),
    ("enhancer.augmented_ce", "critic-phase recognizer updates use the augmented batch"),
    ("train.batch_size", "utterances per batch"),
    ("train.max_updates", "recognizer updates, critic-phase ones included"),
    ("train.eval_every", "updates between dev evaluations"),
    ("train.patience", "dev evaluations without improvement before stopping"),
    ("train.adam_lr", "Adam learning rate"),
    ("train.adam_beta1", "Adam first-moment decay"),
    ("train.adam_beta2", "Adam second-moment decay"),
    ("train.adam_eps", "Adam denominator constant"),
    ("train.rmsprop_lr", "critic RMSProp learning rate"),
    ("train.rmsprop_rho", "critic RMSProp decay"),
    ("train.rmsprop_delta", "critic RMSProp constant under the square root"),
    ("train.grad_clip", "global gradient-norm clip for the recognizer"),
    ("train.augment_prob", "probability an utterance is reverberated each epoch"),
    ("train.seed", "seed for initialization, batching and augmentation"),
    ("train.log_wall_time", "include wall-clock time in metrics records"),
    ("data.train_utts", "toy training utterances"),
    ("data.dev_utts", "toy dev utterances"),
    ("data.eval_utts", "toy eval utterances"),
    ("data.min_chars", "shortest toy transcript"),
    ("data.max_chars", "longest toy transcript"),
    ("data.rooms", "rooms the RIR sampler draws from"),
    ("data.rir_train", "training impulse responses"),
    ("data.rir_dev", "dev impulse responses"),
    ("data.rir_eval", "eval impulse responses"),
];

impl Config {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "desk" => DESK_PRESET,
            "full" => FULL_PRESET,
            "tiny" => TINY_PRESET,
            _ => return Err(Error::Config(format!("unknown preset {name:?}; known: {PRESETS:?}"))),
        };
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// A preset name or a path to a config file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Self::preset(name_or_path);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))?;
        Self::from_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                *self = Self::preset(v)?;
                continue;
            }
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", ln + 1)))?;
        }
        self.enhancer.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let e = &mut self.enhancer;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "model.encoder_dim" => m.encoder_dim = parse(key, v)?,
            "model.encoder_layers" => m.encoder_layers = parse(key, v)?,
            "model.pooled_layers" => m.pooled_layers = parse(key, v)?,
            "model.concat_directions" => m.concat_directions = parse_bool(key, v)?,
            "model.max_pool" => m.max_pool = parse_bool(key, v)?,
            "model.embed_dim" => m.embed_dim = parse(key, v)?,
            "model.decoder_dim" => m.decoder_dim = parse(key, v)?,
            "model.attention_dim" => m.attention_dim = parse(key, v)?,
            "model.location_filters" => m.location_filters = parse(key, v)?,
            "model.location_width" => m.location_width = parse(key, v)?,
            "model.vocabulary" => m.vocabulary = v.trim_matches('"').to_string(),
            "critic.filters" => {
                let f: Vec<usize> = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?;
                self.critic.filters = f
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected four values")))?;
            }
            "critic.lstm_dim" => self.critic.lstm_dim = parse(key, v)?,
            "critic.sigmoid" => self.critic.sigmoid = parse_bool(key, v)?,
            "enhancer.mode" => e.mode = v.parse()?,
            "enhancer.lambda" => e.lambda = parse(key, v)?,
            "enhancer.eps_stability" => e.eps_stability = parse(key, v)?,
            "enhancer.clip" => e.clip = parse(key, v)?,
            "enhancer.n_critic" => e.n_critic = parse(key, v)?,
            "enhancer.warmup_steps" => e.warmup_steps = parse(key, v)?,
            "enhancer.noise_sigma" => e.noise_sigma = parse(key, v)?,
            "enhancer.augmented_ce" => e.augmented_ce = parse_bool(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.max_updates" => t.max_updates = parse(key, v)?,
            "train.eval_every" => t.eval_every = parse(key, v)?,
            "train.patience" => t.patience = parse(key, v)?,
            "train.adam_lr" => t.adam.lr = parse(key, v)?,
            "train.adam_beta1" => t.adam.beta1 = parse(key, v)?,
            "train.adam_beta2" => t.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam.eps = parse(key, v)?,
            "train.rmsprop_lr" => t.rmsprop.lr = parse(key, v)?,
            "train.rmsprop_rho" => t.rmsprop.rho = parse(key, v)?,
            "train.rmsprop_delta" => t.rmsprop.delta = parse(key, v)?,
            "train.grad_clip" => t.grad_clip = parse(key, v)?,
            "train.augment_prob" => {
                t.augment_prob = parse(key, v)?;
                if !(0.0..=1.0).contains(&t.augment_prob) {
                    return Err(Error::Config(format!("{key} must be in [0, 1]")));
                }
            }
            "train.seed" => t.seed = parse(key, v)?,
            "train.log_wall_time" => t.log_wall_time = parse_bool(key, v)?,
            "data.train_utts" => d.train_utts = parse(key, v)?,
            "data.dev_utts" => d.dev_utts = parse(key, v)?,
            "data.eval_utts" => d.eval_utts = parse(key, v)?,
            "data.min_chars" => d.min_chars = parse(key, v)?,
            "data.max_chars" => d.max_chars = parse(key, v)?,
            "data.rooms" => d.rooms = parse(key, v)?,
            "data.rir_train" => d.rir_train = parse(key, v)?,
            "data.rir_dev" => d.rir_dev = parse(key, v)?,
            "data.rir_eval" => d.rir_eval = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

impl fmt::Display for Config {
    /// Every key, in schema order; parses back to the same config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.model;
        let c = &self.critic;
        let e = &self.enhancer;
        let t = &self.train;
        let d = &self.data;
        let vals: Vec<String> = vec![
            m.encoder_dim.to_string(),
            m.encoder_layers.to_string(),
            m.pooled_layers.to_string(),
            m.concat_directions.to_string(),
            m.max_pool.to_string(),
            m.embed_dim.to_string(),
            m.decoder_dim.to_string(),
            m.attention_dim.to_string(),
            m.location_filters.to_string(),
            m.location_width.to_string(),
            format!("\"{}\"", m.vocabulary),
            c.filters.map(|x| x.to_string()).join(","),
            c.lstm_dim.to_string(),
            c.sigmoid.to_string(),
            e.mode.to_string(),
            e.lambda.to_string(),
            e.eps_stability.to_string(),
            e.clip.to_string(),
            e.n_critic.to_string(),
            e.warmup_steps.to_string(),
            e.noise_sigma.to_string(),
            e.augmented_ce.to_string(),
            t.batch_size.to_string(),
            t.max_updates.to_string(),
            t.eval_every.to_string(),
            t.patience.to_string(),
            t.adam.lr.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.eps.to_string(),
            t.rmsprop.lr.to_string(),
            t.rmsprop.rho.to_string(),
            t.rmsprop.delta.to_string(),
            t.grad_clip.to_string(),
            t.augment_prob.to_string(),
            t.seed.to_string(),
            t.log_wall_time.to_string(),
            d.train_utts.to_string(),
            d.dev_utts.to_string(),
            d.eval_utts.to_string(),
            d.min_chars.to_string(),
            d.max_chars.to_string(),
            d.rooms.to_string(),
            d.rir_train.to_string(),
            d.rir_dev.to_string(),
            d.rir_eval.to_string(),
        ];
        debug_assert_eq!(vals.len(), SCHEMA.len());
        for ((k, _), v) in SCHEMA.iter().zip(vals) {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
