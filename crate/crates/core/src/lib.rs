//! Fixed-size representations of multivariate time series with missing values.
//!
//! The crate bundles a stacked bidirectional recurrent autoencoder whose
//! code space is aligned to the Time series Cluster Kernel (TCK), the TCK
//! itself, imputation and one-class scoring built on the decoder, and the
//! usual comparison methods (PCA, feed-forward and denoising autoencoders,
//! mean and LOCF imputation).

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod numeric;
pub mod rae;
mod persist;
pub mod tck;

pub use error::{Error, Result};
