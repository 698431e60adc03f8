//! Controlled fragmentation-coagulation chains and their Smoluchowski
//! mean-field limit.

pub mod bounds;
pub mod composition;
pub mod control;
pub mod coupling;
pub mod ctmc;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod kernels;
pub mod meanfield;
pub mod reduced1d;
pub mod rng;

pub use composition::{Composition, MeanFieldState, StateView};
pub use error::{Error, Result};
pub use kernels::{constant_example_kernel, ControlPoint, KernelBounds, KernelSpec, RateKernel};
