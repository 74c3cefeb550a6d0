//! Dense linear algebra, seeded sampling, reverse-mode differentiation and Adam.

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use adam::{clip_global_norm, AdamState, StepOutcome};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use linalg::{min_eigenvalue, spectral_radius, symmetric_eigen, SymmetricEigen};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
