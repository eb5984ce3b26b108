//! Error type shared by every command, with the process exit code it maps to.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flags, configuration or cross-wired inputs. Exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Malformed or inconsistent input data. Exit code 3.
    #[error("{0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// A bug or an unexpected library failure. Exit code 4.
    #[error("{0}")]
    Internal(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Internal(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    /// Prefixes a data error with the file it came from.
    pub fn in_file(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
        move |e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),* $(,)?) => {$(
        impl From<$t> for Error {
            fn from(e: $t) -> Self {
                Error::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    morphoml_core::cohort::CohortError,
    morphoml_core::preprocess::PreprocessError,
    morphoml_core::objectfeatures::FeatureError,
    morphoml_core::aggregate::AggregateError,
    morphoml_core::attribution::AttributionError,
    morphoml_core::evaluation::EvalError,
    morphoml_core::synth::SynthError,
    csv::Error,
    serde_json::Error,
    image::ImageError,
);

impl From<morphoml_core::gbdt::GbdtError> for Error {
    fn from(e: morphoml_core::gbdt::GbdtError) -> Self {
        use morphoml_core::gbdt::GbdtError as G;
        match e {
            G::InvalidParams(_) | G::WeightCount { .. } => Error::Validation(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}
