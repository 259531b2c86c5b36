//! STFT and 40-bin log-mel features: 20 ms Hann frames every 10 ms.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use crate::error::{AudioError, Result};
use crate::wav::Waveform;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LENGTH_MS: f64 = 20.0;
pub const FRAME_SHIFT_MS: f64 = 10.0;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 40;
pub const LOG_FLOOR: f32 = 1e-10;
pub const STD_FLOOR: f32 = 1e-5;

/// Window and hop in samples for a sample rate.
pub fn frame_geometry(sample_rate: u32) -> (usize, usize) {
    let sr = sample_rate as f64;
    (
        (sr * FRAME_LENGTH_MS / 1000.0).round() as usize,
        (sr * FRAME_SHIFT_MS / 1000.0).round() as usize,
    )
}

/// `floor((n - window) / hop) + 1`, or `None` when `n < window`.
pub fn num_frames(n: usize, window: usize, hop: usize) -> Option<usize> {
    (n >= window).then(|| (n - window) / hop + 1)
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let x = std::f64::consts::PI * i as f64 / len as f64;
            (x.sin() * x.sin()) as f32
        })
        .collect()
}

/// Complex short-time spectrum, `frames x (N_FFT/2 + 1)` bins.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex32>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn power(&self) -> Vec<f32> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Hann-windowed STFT with the 20 ms / 10 ms framing, zero-padded to 512.
pub fn stft(wav: &Waveform) -> Result<Spectrogram> {
    let (window, hop) = frame_geometry(wav.sample_rate);
    let n_fft = N_FFT.max(window.next_power_of_two());
    let frames = num_frames(wav.len(), window, hop).ok_or(AudioError::TooShort {
        len: wav.len(),
        window,
    })?;
    let bins = n_fft / 2 + 1;
    let win = hann(window);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < window {
                Complex32::new(wav.samples[start + i] * win[i], 0.0)
            } else {
                Complex32::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, data })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank spanning 0 Hz to Nyquist.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_mels x bins` weights.
    pub weights: Vec<f32>,
    pub bins: usize,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0f32; n_mels * bins];
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for b in 0..bins {
                let f = b as f64 * sample_rate as f64 / n_fft as f64;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                weights[m * bins + b] = w as f32;
            }
        }
        Self {
            weights,
            bins,
            centers_hz: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Mel energies of one power-spectrum frame.
    pub fn apply(&self, power: &[f32]) -> Vec<f32> {
        (0..self.n_mels())
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// `T x 40` log-mel frames (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f32>,
    frames: usize,
}

impl FeatureSequence {
    pub const BINS: usize = N_MELS;
    pub const FRAME_SHIFT_MS: f64 = FRAME_SHIFT_MS;
    pub const FRAME_LENGTH_MS: f64 = FRAME_LENGTH_MS;

    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(N_MELS) {
            return Err(AudioError::FeatureFile(format!(
                "{} values is not a positive multiple of {N_MELS}",
                data.len()
            )));
        }
        Ok(Self {
            frames: data.len() / N_MELS,
            data,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Cache file: `advasr-features <T> 40\n` then little-endian f32s.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "advasr-features {} {}", self.frames, N_MELS)?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut all = Vec::new();
        r.read_to_end(&mut all)?;
        let nl = all
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| AudioError::FeatureFile("missing header".into()))?;
        let header = std::str::from_utf8(&all[..nl]).map_err(|_| AudioError::FeatureFile("header is not UTF-8".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        let (t, bins) = match parts[..] {
            ["advasr-features", t, b] => (
                t.parse::<usize>().map_err(|_| AudioError::FeatureFile(format!("bad frame count {t:?}")))?,
                b.parse::<usize>().map_err(|_| AudioError::FeatureFile(format!("bad bin count {b:?}")))?,
            ),
            _ => return Err(AudioError::FeatureFile(format!("bad header {header:?}"))),
        };
        if bins != N_MELS {
            return Err(AudioError::FeatureFile(format!("{bins} bins, expected {N_MELS}")));
        }
        let payload = &all[nl + 1..];
        if payload.len() != t * bins * 4 {
            return Err(AudioError::FeatureFile(format!(
                "payload holds {} bytes, header promises {}",
                payload.len(),
                t * bins * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Reusable log-mel extractor (caches the filterbank).
#[derive(Clone, Debug)]
pub struct MelFrontend {
    filterbank: MelFilterbank,
    sample_rate: u32,
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new(SAMPLE_RATE)
    }
}

impl MelFrontend {
    pub fn new(sample_rate: u32) -> Self {
        let (window, _) = frame_geometry(sample_rate);
        let n_fft = N_FFT.max(window.next_power_of_two());
        Self {
            filterbank: MelFilterbank::new(sample_rate, n_fft, N_MELS),
            sample_rate,
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Natural-log mel energies with floor `max(v, 1e-10)`.
    pub fn extract(&self, wav: &Waveform) -> Result<FeatureSequence> {
        if wav.sample_rate != self.sample_rate {
            return Err(AudioError::SampleRateMismatch(wav.sample_rate, self.sample_rate));
        }
        let spec = stft(wav)?;
        let power = spec.power();
        let mut data = Vec::with_capacity(spec.frames * N_MELS);
        for t in 0..spec.frames {
            let mel = self.filterbank.apply(&power[t * spec.bins..(t + 1) * spec.bins]);
            data.extend(mel.into_iter().map(|v| v.max(LOG_FLOOR).ln()));
        }
        FeatureSequence::new(data)
    }
}

/// Log-mel features of `wav` at its own sample rate.
pub fn mel_spectrogram(wav: &Waveform) -> Result<FeatureSequence> {
    MelFrontend::new(wav.sample_rate).extract(wav)
}

/// Per-bin mean and standard deviation over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    pub fn new(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.len() != N_MELS || std.len() != N_MELS {
            return Err(AudioError::StatsBins(mean.len().max(std.len())));
        }
        Ok(Self { mean, std })
    }

    /// Accumulate statistics over every frame of every sequence.
    pub fn compute<'a>(seqs: impl IntoIterator<Item = &'a FeatureSequence>) -> Self {
        let mut sum = [0f64; N_MELS];
        let mut sq = [0f64; N_MELS];
        let mut n = 0usize;
        for s in seqs {
            for t in 0..s.num_frames() {
                for (b, &v) in s.frame(t).iter().enumerate() {
                    sum[b] += v as f64;
                    sq[b] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0)).sqrt() as f32)
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    /// `mean_0 .. mean_39 std_0 .. std_39` on one line.
    pub fn to_line(&self) -> String {
        self.mean
            .iter()
            .chain(&self.std)
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| AudioError::FeatureFile(format!("bad stats value {v:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * N_MELS {
            return Err(AudioError::StatsBins(vals.len() / 2));
        }
        Self::new(vals[..N_MELS].to_vec(), vals[N_MELS..].to_vec())
    }
}

fn check_stats(stats: &FeatureStats) -> Result<()> {
    if stats.mean.len() != N_MELS || stats.std.len() != N_MELS {
        return Err(AudioError::StatsBins(stats.mean.len().max(stats.std.len())));
    }
    Ok(())
}

/// `(v - mean) / max(std, 1e-5)` per bin.
pub fn normalize_features(seq: &FeatureSequence, stats: &FeatureStats) -> Result<FeatureSequence> {
    check_stats(stats)?;
    let mut out = seq.clone();
    for row in out.data.chunks_mut(N_MELS) {
        for (b, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.mean[b]) / stats.std[b].max(STD_FLOOR);
        }
    }
    Ok(out)
}

/// Inverse of [`normalize_features`].
pub fn denormalize_features(seq: &FeatureSequence, stats: &FeatureStats) -> Result<FeatureSequence> {
    check_stats(stats)?;
    let mut out = seq.clone();
    for row in out.data.chunks_mut(N_MELS) {
        for (b, v) in row.iter_mut().enumerate() {
            *v = *v * stats.std[b].max(STD_FLOOR) + stats.mean[b];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_99_frames() {
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        assert_eq!(stft(&w).unwrap().frames, 99);
        assert_eq!(frame_geometry(16000), (320, 160));
    }

    #[test]
    fn too_short_input_asks_for_padding() {
        let w = Waveform::new(vec![0.0; 319], 16000).unwrap();
        let err = stft(&w).unwrap_err();
        assert!(matches!(err, AudioError::TooShort { len: 319, window: 320 }));
        assert!(err.to_string().contains("zero-pad"));
    }

    #[test]
    fn dc_input_peaks_in_bin_zero() {
        let w = Waveform::new(vec![0.3; 4000], 16000).unwrap();
        let s = stft(&w).unwrap();
        for t in 0..s.frames {
            let p: Vec<f32> = s.frame(t).iter().map(|c| c.norm_sqr()).collect();
            let arg = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            assert_eq!(arg, 0);
        }
    }

    #[test]
    fn zero_waveform_hits_log_floor_everywhere() {
        let f = mel_spectrogram(&Waveform::new(vec![0.0; 2000], 16000).unwrap()).unwrap();
        assert!(f.data().iter().all(|&v| v == LOG_FLOOR.ln()));
        assert_eq!(f.data().len() % 40, 0);
    }

    #[test]
    fn filterbank_coverage() {
        let fb = MelFilterbank::new(16000, 512, 40);
        for m in 0..40 {
            assert!(fb.row(m).iter().sum::<f32>() > 0.0, "filter {m} is empty");
        }
        let first = (fb.centers_hz[0] * 512.0 / 16000.0).ceil() as usize;
        let last = (fb.centers_hz[39] * 512.0 / 16000.0).floor() as usize;
        for b in first..=last {
            let total: f32 = (0..40).map(|m| fb.row(m)[b]).sum();
            assert!(total > 0.0, "bin {b} uncovered");
        }
        // adjacent triangles overlap
        for m in 0..39 {
            let overlap = fb.row(m).iter().zip(fb.row(m + 1)).any(|(a, b)| *a > 0.0 && *b > 0.0);
            assert!(overlap, "filters {m} and {} do not overlap", m + 1);
        }
    }

    #[test]
    fn feature_cache_round_trip() {
        let f = mel_spectrogram(&tone(440.0, 3200)).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        assert!(bytes.starts_with(format!("advasr-features {} 40\n", f.num_frames()).as_bytes()));
        assert_eq!(FeatureSequence::read_from(&bytes[..]).unwrap(), f);
        bytes.pop();
        assert!(FeatureSequence::read_from(&bytes[..]).is_err());
    }

    #[test]
    fn stats_bin_count_is_checked() {
        let f = FeatureSequence::new(vec![1.0; 80]).unwrap();
        let bad = FeatureStats {
            mean: vec![0.0; 39],
            std: vec![1.0; 39],
        };
        assert!(matches!(normalize_features(&f, &bad), Err(AudioError::StatsBins(39))));
    }

    #[test]
    fn constant_bin_normalizes_to_zero() {
        let f = FeatureSequence::new(vec![2.5; 40 * 7]).unwrap();
        let stats = FeatureStats::compute([&f]);
        assert!(stats.std.iter().all(|&s| s == 0.0));
        let n = normalize_features(&f, &stats).unwrap();
        assert!(n.data().iter().all(|&v| v == 0.0));
    }
}
