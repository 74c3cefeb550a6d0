//! Time series cluster kernel: an unsupervised similarity for series with
//! missing values, built from an ensemble of mixture-model posteriors.

pub mod ensemble;
pub mod gmm;

pub use ensemble::{
    build_kernel, kernel_out_of_sample, sample_posteriors, KernelBlock, KernelMatrix, TckConfig, TckInstance,
    TckModel,
};
pub use gmm::{
    fit_map_em, marginal_log_pdf, max_decrease, posterior, DiagGmm, EmConfig, EmFit, MapPriors, PriorRanges,
    TraceEntry, View,
};
