use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input where at least one element is required")]
    Empty,
    #[error("negative simplex entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroNorm { norm: f64 },
    #[error("marginals are not feasible for a transport problem: {0}")]
    InfeasibleMarginals(String),
    #[error("min-cost flow moved {moved} of {total} units of mass")]
    NumericalFailure { moved: f64, total: f64 },
    #[error("listing needs at least two views per modality, has {images} image and {texts} text")]
    TooFewViews { images: usize, texts: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("listing {0:?} is not in the index")]
    UnknownListing(String),
    #[error("listing {listing:?} has no {view} view")]
    MissingView { listing: String, view: &'static str },
    #[error("index is empty")]
    EmptyIndex,
    #[error("vector for {id:?} has norm {norm}, expected unit length")]
    NonUnitVector { id: String, norm: f64 },
    #[error("duplicate listing id {0:?}")]
    DuplicateId(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("format error on line {line}: {message}")]
    FormatLine { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
