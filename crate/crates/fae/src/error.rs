use thiserror::Error;

#[derive(Debug, Error)]
pub enum FaeError {
    #[error(transparent)]
    Autodiff(#[from] nasdet_autodiff::AutodiffError),

    #[error("resize target {to_shape} is not a whole number of octaves from {from_shape}")]
    BadResize { from_shape: String, to_shape: String },

    #[error("invalid cell configuration: {0}")]
    BadCell(String),

    #[error("invalid discrete architecture: {0}")]
    BadArch(String),

    #[error("architecture file: {0}")]
    ArchIo(String),
}

pub type Result<T> = std::result::Result<T, FaeError>;
