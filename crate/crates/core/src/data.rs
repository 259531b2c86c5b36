//! Toy speech corpus, manifests, and prepared in-memory datasets.
//!
//! Each character is a fixed 120 ms chord of one low and one high tone.
//! Reverberation smears consecutive chords into each other, which is what
//! makes far-field recognition of this corpus hard.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use advasr_audio::{
    apply_rir, load_wav, normalize_features, save_wav, FeatureSequence, FeatureStats, MelFrontend, RirBank, Split,
    Waveform, SAMPLE_RATE,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Characters the toy corpus draws from.
pub const TOY_CHARS: &str = "abcdefghijklmnopqrstuvwxyz ";
pub const CHAR_MS: usize = 120;
pub const CHAR_SAMPLES: usize = SAMPLE_RATE as usize * CHAR_MS / 1000;

const LOW_HZ: [f64; 6] = [300.0, 450.0, 620.0, 820.0, 1050.0, 1300.0];
const HIGH_HZ: [f64; 5] = [1750.0, 2250.0, 2850.0, 3550.0, 4400.0];
const TONE_AMP: f64 = 0.3;
const FADE_SAMPLES: usize = 160;
const NOISE_STD: f64 = 0.01;
const SPACE_PROB: f64 = 0.18;

/// `(low, high)` frequencies of the chord for `c`.
pub fn signature(c: char) -> Option<(f64, f64)> {
    let i = TOY_CHARS.chars().position(|x| x == c)?;
    Some((LOW_HZ[i % LOW_HZ.len()], HIGH_HZ[i / LOW_HZ.len()]))
}

/// Random transcript of `min..=max` characters with no leading, trailing or
/// doubled spaces.
pub fn random_transcript<R: Rng + ?Sized>(rng: &mut R, min: usize, max: usize) -> String {
    let letters: Vec<char> = TOY_CHARS.chars().filter(|&c| c != ' ').collect();
    let n = rng.random_range(min..=max);
    let mut s = String::with_capacity(n);
    let mut prev_space = true;
    for i in 0..n {
        let edge = i + 1 == n;
        if !prev_space && !edge && rng.random_bool(SPACE_PROB) {
            s.push(' ');
            prev_space = true;
        } else {
            s.push(letters[rng.random_range(0..letters.len())]);
            prev_space = false;
        }
    }
    s
}

/// Chords for each character with random phase and +-10% level jitter,
/// faded at both ends, over white noise.
pub fn synthesize<R: Rng + ?Sized>(text: &str, rng: &mut R) -> Result<Waveform> {
    let n = text.chars().count();
    if n == 0 {
        return Err(Error::Empty("transcript"));
    }
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0f32; n * CHAR_SAMPLES];
    for (k, c) in text.chars().enumerate() {
        let (lo, hi) = signature(c).ok_or(Error::UnknownChar(c))?;
        let gain = TONE_AMP * rng.random_range(0.9..1.1);
        let p1 = rng.random_range(0.0..2.0 * PI);
        let p2 = rng.random_range(0.0..2.0 * PI);
        for j in 0..CHAR_SAMPLES {
            let t = j as f64 / sr;
            let edge = j.min(CHAR_SAMPLES - 1 - j);
            let fade = if edge < FADE_SAMPLES {
                0.5 - 0.5 * (PI * edge as f64 / FADE_SAMPLES as f64).cos()
            } else {
                1.0
            };
            let v = gain * fade * ((2.0 * PI * lo * t + p1).sin() + (2.0 * PI * hi * t + p2).sin());
            out[k * CHAR_SAMPLES + j] = v as f32;
        }
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    for v in &mut out {
        *v += noise.sample(rng) as f32;
    }
    Ok(Waveform::new(out, SAMPLE_RATE)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub transcript: String,
}

/// One split's utterances: `id<TAB>path<TAB>transcript` per line.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {}", e.id)));
            }
            if e.transcript.is_empty() {
                return Err(Error::Manifest(format!("{}: empty transcript", e.id)));
            }
            if let Some(c) = e.transcript.chars().find(|&c| !vocab.chars().contains(&c)) {
                return Err(Error::Manifest(format!("{}: character {c:?} outside the vocabulary", e.id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", e.id, e.path.display(), e.transcript);
        }
        s
    }

    pub fn parse(text: &str, split: Split) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(3, '\t').collect();
            if f.len() != 3 {
                return Err(Error::Manifest(format!("line {}: expected id, path and transcript", i + 1)));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                path: PathBuf::from(f[1]),
                transcript: f[2].to_string(),
            });
        }
        Ok(Self { split, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    /// The split is taken from the file stem (`train.tsv` and so on) and
    /// defaults to eval.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let split = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .unwrap_or(Split::Eval);
        Self::parse(&std::fs::read_to_string(path)?, split)
    }

    /// Audio path resolved against the manifest's directory.
    pub fn resolve(&self, base: &Path, e: &ManifestEntry) -> PathBuf {
        if e.path.is_absolute() {
            e.path.clone()
        } else {
            base.join(&e.path)
        }
    }
}

/// Synthesized utterance.
#[derive(Clone, Debug)]
pub struct RawUtterance {
    pub id: String,
    pub transcript: String,
    pub wave: Waveform,
}

/// Train, dev and eval utterances with disjoint ids.
#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub train: Vec<RawUtterance>,
    pub dev: Vec<RawUtterance>,
    pub eval: Vec<RawUtterance>,
}

impl ToyCorpus {
    /// Deterministic in `seed`; each utterance has its own derived stream so
    /// split sizes do not shift other utterances.
    pub fn generate(cfg: &DataConfig, seed: u64) -> Result<Self> {
        if cfg.min_chars == 0 || cfg.min_chars > cfg.max_chars {
            return Err(Error::Config(format!("bad transcript lengths {}..={}", cfg.min_chars, cfg.max_chars)));
        }
        let make = |split: Split, n: usize, salt: u64| -> Result<Vec<RawUtterance>> {
            (0..n)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(salt << 32 | i as u64);
                    let transcript = random_transcript(&mut rng, cfg.min_chars, cfg.max_chars);
                    let wave = synthesize(&transcript, &mut rng)?;
                    Ok(RawUtterance {
                        id: format!("{split}-{i:05}"),
                        transcript,
                        wave,
                    })
                })
                .collect()
        };
        if cfg.train_utts == 0 {
            return Err(Error::Empty("training split"));
        }
        Ok(Self {
            train: make(Split::Train, cfg.train_utts, 1)?,
            dev: make(Split::Dev, cfg.dev_utts, 2)?,
            eval: make(Split::Eval, cfg.eval_utts, 3)?,
        })
    }

    pub fn split(&self, s: Split) -> &[RawUtterance] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    /// Writes `wav/<id>.wav` and `<split>.tsv` manifests under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<Manifest>> {
        std::fs::create_dir_all(dir.join("wav"))?;
        let mut out = Vec::new();
        for s in Split::ALL {
            let mut entries = Vec::new();
            for u in self.split(s) {
                let rel = PathBuf::from("wav").join(format!("{}.wav", u.id));
                save_wav(dir.join(&rel), &u.wave)?;
                entries.push(ManifestEntry {
                    id: u.id.clone(),
                    path: rel,
                    transcript: u.transcript.clone(),
                });
            }
            let m = Manifest { split: s, entries };
            m.save(dir.join(format!("{s}.tsv")))?;
            out.push(m);
        }
        Ok(out)
    }

    /// Reads the corpus written by [`ToyCorpus::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let mut splits: Vec<Vec<RawUtterance>> = Vec::new();
        for s in Split::ALL {
            let m = Manifest::load(dir.join(format!("{s}.tsv")))?;
            let mut v = Vec::new();
            for e in &m.entries {
                v.push(RawUtterance {
                    id: e.id.clone(),
                    transcript: e.transcript.clone(),
                    wave: load_wav(m.resolve(dir, e))?,
                });
            }
            splits.push(v);
        }
        let eval = splits.pop().expect("three splits");
        let dev = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Self { train, dev, eval })
    }
}

/// Utterance ready for the model: normalized clean features, plus the
/// reverberated features when the far-field copy is fixed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub transcript: String,
    pub tokens: Vec<usize>,
    pub wave: Waveform,
    pub clean: FeatureSequence,
    pub far: Option<FeatureSequence>,
    /// Id of the impulse response behind `far`.
    pub rir_id: Option<String>,
}

/// Everything a training run reads.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub frontend: MelFrontend,
    pub stats: FeatureStats,
    pub bank: RirBank,
    pub train: Vec<Prepared>,
    pub dev: Vec<Prepared>,
    pub eval: Vec<Prepared>,
}

impl Dataset {
    /// Statistics come from clean training features only. Dev and eval
    /// utterances get a fixed far-field copy, drawn from their own split's
    /// impulse responses in round-robin order.
    pub fn prepare(corpus: &ToyCorpus, bank: RirBank, vocab: Vocabulary) -> Result<Self> {
        bank.check_disjoint()?;
        let frontend = MelFrontend::new(SAMPLE_RATE);
        let raw_feats = |us: &[RawUtterance]| -> Result<Vec<FeatureSequence>> {
            us.iter().map(|u| Ok(frontend.extract(&u.wave)?)).collect()
        };
        let train_feats = raw_feats(&corpus.train)?;
        let stats = FeatureStats::compute(&train_feats);
        let mut ds = Self {
            vocab,
            frontend,
            stats,
            bank,
            train: Vec::new(),
            dev: Vec::new(),
            eval: Vec::new(),
        };
        for (u, f) in corpus.train.iter().zip(&train_feats) {
            let clean = normalize_features(f, &ds.stats)?;
            ds.train.push(ds.prepared(u, clean, None)?);
        }
        for s in [Split::Dev, Split::Eval] {
            let rirs: Vec<(String, Vec<f32>)> = ds.bank.split(s).iter().map(|r| (r.id.clone(), r.taps.clone())).collect();
            if rirs.is_empty() {
                return Err(Error::Empty("held-out impulse responses"));
            }
            let mut out = Vec::new();
            for (i, u) in corpus.split(s).iter().enumerate() {
                let clean = ds.features(&u.wave)?;
                let (rid, taps) = &rirs[i % rirs.len()];
                let far = ds.reverberate(&u.wave, taps)?;
                out.push(ds.prepared(u, clean, Some((far, rid.clone())))?);
            }
            match s {
                Split::Dev => ds.dev = out,
                _ => ds.eval = out,
            }
        }
        ds.check_leaks()?;
        Ok(ds)
    }

    fn prepared(&self, u: &RawUtterance, clean: FeatureSequence, far: Option<(FeatureSequence, String)>) -> Result<Prepared> {
        let (far, rir_id) = match far {
            Some((f, r)) => (Some(f), Some(r)),
            None => (None, None),
        };
        Ok(Prepared {
            id: u.id.clone(),
            transcript: u.transcript.clone(),
            tokens: self.vocab.encode(&u.transcript)?,
            wave: u.wave.clone(),
            clean,
            far,
            rir_id,
        })
    }

    pub fn features(&self, wave: &Waveform) -> Result<FeatureSequence> {
        Ok(normalize_features(&self.frontend.extract(wave)?, &self.stats)?)
    }

    /// Normalized features of `wave` convolved with `taps`; same frame count
    /// as the clean features.
    pub fn reverberate(&self, wave: &Waveform, taps: &[f32]) -> Result<FeatureSequence> {
        let far = apply_rir(wave, taps, SAMPLE_RATE)?;
        self.features(&far)
    }

    /// Split-leak assertion: utterance ids and impulse responses never cross
    /// splits.
    pub fn check_leaks(&self) -> Result<()> {
        self.bank.check_disjoint()?;
        let mut seen = HashSet::new();
        for (name, us) in [("train", &self.train), ("dev", &self.dev), ("eval", &self.eval)] {
            for u in us.iter() {
                if !seen.insert(u.id.as_str()) {
                    return Err(Error::SplitLeak(format!("utterance {} appears twice ({name})", u.id)));
                }
            }
        }
        for (s, us) in [(Split::Dev, &self.dev), (Split::Eval, &self.eval)] {
            let allowed: HashSet<&str> = self.bank.split(s).iter().map(|r| r.id.as_str()).collect();
            for u in us.iter() {
                if let Some(r) = &u.rir_id {
                    if !allowed.contains(r.as_str()) {
                        return Err(Error::SplitLeak(format!("{} uses impulse response {r} from another split", u.id)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Impulse responses available for training-time augmentation.
    pub fn train_rirs(&self) -> Vec<&[f32]> {
        self.bank.split(Split::Train).iter().map(|r| r.taps.as_slice()).collect()
    }
}

/// Epoch-wise shuffled batches of training indices.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    pub batch_size: usize,
    pub epoch: u64,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize) -> Self {
        Self {
            order: (0..n).collect(),
            // forces a shuffle before the first batch
            cursor: n,
            batch_size: batch_size.min(n).max(1),
            epoch: 0,
        }
    }

    /// Next batch; the tail of an epoch shorter than a batch is dropped.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let b = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        b
    }
}
