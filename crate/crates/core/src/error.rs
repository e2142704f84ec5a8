use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not an FTZ file (bad magic bytes)")]
    BadMagic,
    #[error("FTZ header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("unsupported PNG: {0}")]
    UnsupportedPng(String),
    #[error("label {0} out of range (labels must be <= 254)")]
    LabelOutOfRange(u32),
    #[error("recipe has no source tensors")]
    EmptyRecipe,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("requested {k} components but only {available} are available")]
    KTooLarge { k: usize, available: usize },
    #[error("k = {k} exceeds the number of points ({n})")]
    KExceedsPoints { k: usize, n: usize },
    #[error("{n} points exceed the hierarchical limit of {max}; subsample first")]
    TooManyPoints { n: usize, max: usize },
    #[error("cluster {0} ended up empty")]
    EmptyCluster(usize),
    #[error("fewer than two clusters present; silhouette is undefined")]
    SingleCluster,
    #[error("every recipe failed")]
    AllRecipesFailed,
    #[error("every candidate errored")]
    AllCandidatesErrored,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown tensor source `{0}`")]
    UnknownSource(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
