//! File formats, thread pool, pipeline and command line around
//! [`morphoml_core`].

pub mod cli;
pub mod error;
pub mod exec;
pub mod io;
pub mod ops;
pub mod pipeline;

pub use error::{Error, Result};
pub use exec::RayonExecutor;
pub use pipeline::{run_pipeline, RunConfig, Stage};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
