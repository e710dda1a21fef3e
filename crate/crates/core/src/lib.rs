//! Pansharpening with a learned degradation model, a high-frequency prior and
//! a conditional diffusion fuser, plus the usual fusion quality metrics.
//!
//! Everything runs on the CPU in `f64` with hand-written gradients; see the
//! `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod degradation;
pub mod diffusion;
pub mod error;
pub mod fconv;
pub mod hdlm;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod scene;
#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
pub use numerics::{Precision, Raster, SeededRng, Shape, ValueRange};
