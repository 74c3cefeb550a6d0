//! Comparison methods working on zero-padded, unrolled samples.
//!
//! The unidirectional encoder-decoder anomaly detector is not here: it is
//! [`crate::rae::Architecture::encdec_ad`] trained without alignment.

pub mod ffae;
pub mod pca;

pub use ffae::{dae_impute, dae_train, ffae_train, Activation, FfAeConfig, FfAeModel, FfTrainConfig};
pub use pca::{pca_fit, PcaModel};
