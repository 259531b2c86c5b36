pub mod config;
pub mod critic;
pub mod data;
pub mod enhancer;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod score;
pub mod train;
pub mod vocab;

mod alloc;

pub use alloc::retain_freed_memory;
pub use error::{Error, Result};
