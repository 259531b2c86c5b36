use std::path::Path;

use crate::error::{AudioError, Result};

/// Mono PCM audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Read a 16-bit mono PCM WAV file, scaling samples by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::MultiChannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| map_hound(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Write a 16-bit mono PCM WAV file. Samples are clamped to the PCM range.
pub fn save_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &wav.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

/// 32-bit float mono WAV, used for impulse responses where 16-bit
/// quantization would flatten the reverberant tail.
pub(crate) fn save_float_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

/// Mono WAV reader accepting 32-bit float or 16-bit PCM.
pub(crate) fn load_any_mono(path: &Path) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::MultiChannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<Vec<_>, _>>(),
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect(),
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{fmt:?} {bits}-bit"),
            })
        }
    }
    .map_err(|e| map_hound(path, e))?;
    Ok((samples, spec.sample_rate))
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(msg) => AudioError::MalformedHeader {
            path: path.to_path_buf(),
            detail: msg.to_string(),
        },
        hound::Error::Unsupported | hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: e.to_string(),
            }
        }
        other => AudioError::MalformedHeader {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm(path: &Path, channels: u16, bits: u16, samples: &[i32]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn zero_file_gives_zero_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_pcm(&p, 1, 16, &[0; 1600]);
        let w = load_wav(&p).unwrap();
        assert!(w.samples.iter().all(|&s| s == 0.0));
        assert!((w.duration_secs() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn full_scale_square_wave() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let s: Vec<i32> = (0..64).map(|i| if (i / 8) % 2 == 0 { 32767 } else { -32767 }).collect();
        write_pcm(&p, 1, 16, &s);
        let w = load_wav(&p).unwrap();
        for v in w.samples {
            assert!((v.abs() - 32767.0 / 32768.0).abs() < 1e-7);
        }
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("st.wav");
        write_pcm(&stereo, 2, 16, &[0; 32]);
        assert!(matches!(load_wav(&stereo), Err(AudioError::MultiChannel { channels: 2, .. })));

        let wide = dir.path().join("w.wav");
        write_pcm(&wide, 1, 24, &[0; 32]);
        assert!(matches!(load_wav(&wide), Err(AudioError::UnsupportedEncoding { .. })));

        let junk = dir.path().join("j.wav");
        std::fs::write(&junk, b"RIFX0000garbage-not-a-wave-file").unwrap();
        assert!(matches!(load_wav(&junk), Err(AudioError::MalformedHeader { .. })));
    }

    #[test]
    fn save_then_load_is_exact_on_pcm_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let samples: Vec<f32> = (-50..50).map(|i| i as f32 * 300.0 / 32768.0).collect();
        let w = Waveform::new(samples, 16000).unwrap();
        save_wav(&p, &w).unwrap();
        assert_eq!(load_wav(&p).unwrap(), w);
    }
}
