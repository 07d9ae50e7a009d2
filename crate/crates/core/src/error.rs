use thiserror::Error;

pub type Result<T> = std::result::Result<T, MpbError>;

#[derive(Debug, Error)]
pub enum MpbError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for a tensor with {ndim} modes")]
    ModeOutOfRange { mode: usize, ndim: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { point: f64, lo: f64, hi: f64 },

    #[error("derivative order {order} exceeds the smoothness of the basis (max {max})")]
    Smoothness { order: usize, max: usize },

    #[error(
        "basis evaluation matrix for dimension {dim} is rank deficient \
         (smallest/largest singular value = {ratio:.3e})"
    )]
    RankDeficient { dim: usize, ratio: f64 },

    #[error("Sylvester equation is singular (min |eig(P) + eig(M)| = {gap:.3e}); raise proximal_mu")]
    SpectralOverlap { gap: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("bad magic")]
    BadMagic,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MpbError {
    /// True for errors caused by malformed input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            MpbError::Shape(_)
                | MpbError::ModeOutOfRange { .. }
                | MpbError::InvalidArgument(_)
                | MpbError::OutOfDomain { .. }
                | MpbError::Smoothness { .. }
                | MpbError::BadMagic
                | MpbError::Format(_)
                | MpbError::Io(_)
                | MpbError::Json(_)
        )
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MpbError::Shape(msg.into()))
}
