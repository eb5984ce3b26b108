//! File formats read and written by the pipeline.

pub mod images;
pub mod manifest;
pub mod model;
pub mod predictions;
pub mod reports;
pub mod store;
