//! Neural diffusion models: differentiation tape, residual MLP, training and checkpoints.

pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod tape;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use mlp::{Activation, MlpArchitecture};
pub use model::{NeuralModel, Parameterization};
pub use tape::{Tape, Var};
pub use train::{dsm_loss, dsm_loss_and_grad, train, TrainConfig, TrainReport};
