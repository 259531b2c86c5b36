//! Small dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records a forward pass as a tape of nodes; [`Graph::backward`]
//! replays it in reverse and returns [`Gradients`] keyed by parameter.
//! Parameters live in a [`ParamStore`] owned by the model and are brought
//! onto the tape with [`Graph::param`].

mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod ops;
mod optim;
mod param;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub use ops::BatchStats;
pub use optim::{adam_step, rmsprop_ascent_step, AdamConfig, OptimizerState, RmsPropConfig};
pub use param::{ParamId, ParamKey, ParamStore, Parameter};
pub use tensor::{broadcast_shape, Element, Tensor};
