//! Morphometric lymphoma-subtype toolkit, allocation-only core.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! image tiling and stain separation, per-object morphometry, patch-level
//! aggregation, gradient-boosted trees with focal loss, exact tree-Shapley
//! attribution and bootstrap evaluation statistics. File formats, image
//! decoding and the command line live in the `morphoml` companion crate.
#![no_std]

extern crate alloc;

pub mod aggregate;
pub mod attribution;
pub mod cohort;
pub mod evaluation;
pub mod exec;
pub mod gbdt;
pub mod objectfeatures;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod stats;
pub mod synth;

/// `f64` math through libm. Importers carry `allow(unused_imports)` because
/// the inherent std methods shadow the trait whenever a dependency links std.
mod prelude {
    pub use num_traits::Float;
}

pub use exec::{Executor, Sequential};
pub use raster::Raster;
