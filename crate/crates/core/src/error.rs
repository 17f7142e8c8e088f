use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::ShapeError;
use crate::jpeg::JpegError;
use crate::nets::ArchiveError;
use crate::pipeline::ContainerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing view file for angular index ({u}, {v}) in {dir}")]
    MissingView { dir: PathBuf, u: usize, v: usize },

    #[error("invalid light field: {0}")]
    InvalidLightField(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Jpeg(#[from] JpegError),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error(transparent)]
    Archive(#[from] ArchiveError),

    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
