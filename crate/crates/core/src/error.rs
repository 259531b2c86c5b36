use advasr_audio::AudioError;
use advasr_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("input of {frames} frames is shorter than the {min} the encoder needs; pad it")]
    TooFewFrames { frames: usize, min: usize },
    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),
    #[error("token {0} is outside the vocabulary")]
    UnknownToken(usize),
    #[error("{what}: shapes {a:?} and {b:?} differ")]
    ShapeMismatch { what: &'static str, a: Vec<usize>, b: Vec<usize> },
    #[error("batch sizes differ: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("hypotheses missing for ids: {0:?}")]
    MissingHypotheses(Vec<String>),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("wrong enhancer mode: expected {expected}, configured {found}")]
    WrongMode { expected: &'static str, found: String },
    #[error("split leak: {0}")]
    SplitLeak(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
