use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AudioError>;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: malformed WAV header ({detail})")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{path}: unsupported encoding {detail}; expected 16-bit PCM")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: expected mono audio, found {channels} channels")]
    MultiChannel { path: PathBuf, channels: u16 },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("input of {len} samples is shorter than one {window}-sample window; zero-pad it before feature extraction")]
    TooShort { len: usize, window: usize },
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("impulse response is empty")]
    EmptyRir,
    #[error("degenerate room geometry: {0}")]
    Geometry(String),
    #[error("feature statistics have {0} bins, expected 40")]
    StatsBins(usize),
    #[error("feature file: {0}")]
    FeatureFile(String),
    #[error("RIR bank: {0}")]
    Bank(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
