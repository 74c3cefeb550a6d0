//! Experiment front end: a flat configuration format and one function per
//! subcommand. Every command writes its effective configuration next to
//! its outputs.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{cmd_classify, cmd_gen, cmd_impute, cmd_oneclass, cmd_tck, cmd_train};
pub use config::{DatasetKind, ExperimentConfig, ModelKind};
