//! Series containers, preprocessing, CSV ingestion and synthetic generators.

pub mod csv_io;
pub mod generators;
pub mod sample;
pub mod transform;

pub use csv_io::{load_csv, save_csv};
pub use generators::{
    gen_classes, gen_ode, gen_sines, sine_grid, sine_series, ClassGenConfig, LengthSpec, OdeData, OdeGenConfig, SineGenConfig,
};
pub use sample::{Dataset, MtsSample, Split};
pub use transform::{
    impute_simple, inject_missing, pad_and_unroll, reshape_unrolled, standardize_fit_transform,
    unrolled_extent_mask, ImputeMode, InjectionRecord, Standardizer,
};
