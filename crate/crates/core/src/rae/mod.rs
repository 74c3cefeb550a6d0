//! Recurrent autoencoder with an optional kernel-alignment term on its codes.

pub mod cell;
pub mod loss;
pub mod model;
pub mod train;

pub use cell::{cell_step, CellKind, CellParams, CellState};
pub use loss::{forward_loss, loss_alignment, loss_reconstruction, loss_total, LossNodes, LossSpec, LossValue};
pub use model::{decode, Architecture, Batch, Representation, Stack, TkaeModel};
pub use train::{
    impute_with_decoder, reconstruction_error, reconstruction_errors, train, TrainConfig, TrainReport,
};
