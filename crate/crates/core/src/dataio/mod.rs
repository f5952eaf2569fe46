//! Dataset ingestion, deterministic splitting and model persistence.

mod container;
mod image;
mod metadata;
mod split;

pub use container::{
    inspect_container, load_model, read_container, save_model, storage_rounded, write_container,
    ContainerHeader, TensorDescriptor, TrainingRecord, FORMAT_VERSION, MAGIC,
};
pub use image::{load_image, pad_to_square, resample_bilinear, write_pgm};
pub use metadata::{
    load_metadata, parse_metadata, write_metadata, RejectReason, RowRejection, ValidationSummary,
    METADATA_COLUMNS,
};
pub use split::{kfold_indices, kfold_split, split_indices, split_train_test};

use std::path::PathBuf;

use thiserror::Error;

use crate::cnn::CnnError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata schema error: {0}")]
    Schema(String),
    #[error("duplicate subject_id {0:?}")]
    DuplicateSubject(String),
    #[error("{path}: unsupported image format: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("nothing to split: input is empty")]
    EmptyInput,
    #[error("train fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("cannot split {n} records into {k} folds")]
    InvalidFolds { k: usize, n: usize },
    #[error("record {0} is missing at least one image; only complete records can be split")]
    IncompleteRecord(String),
    #[error("container version {found} is not supported (this build reads version {supported})")]
    Incompatible { found: u32, supported: u32 },
    #[error("container integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Cnn(#[from] CnnError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
