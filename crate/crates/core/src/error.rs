//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A class id in the universe has no samples where at least one is required.
    EmptyClass(u16),
    /// Pooled covariance needs more samples than classes.
    InsufficientSamples { samples: usize, classes: usize },
    /// An impurity measure was asked for an empty label set.
    EmptySet,
    /// A covariance diagonal entry is non-positive after jitter.
    ZeroDiagonal(usize),
    /// A covariance solve failed even after regularization.
    SingularCovariance(Option<u16>),
    DimensionMismatch { expected: usize, got: usize },
    /// Class balancing needs at least two classes.
    SingleClass,
    /// Disjoint per-tree feature subsets are impossible for this tree count.
    TooManyTrees { n_weak: usize, n_sel: usize, n_tot: usize },
    /// The volume cannot host a single patch of the coarsest layer.
    VolumeTooSmall { layer: usize, side: usize, dims: (usize, usize, usize) },
    /// Single-voxel patches have no cell decomposition.
    NoCells,
    /// Macro metrics need at least one foreground class.
    NoForegroundClasses,
    /// The model's feature schema does not match the extraction schema.
    SchemaMismatch { expected: String, got: String },
    /// Predictions and references do not line up.
    Misalignment(String),
    BadConfig(String),
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyClass(c) => write!(f, "class {c} has no samples"),
            Error::InsufficientSamples { samples, classes } => write!(
                f,
                "pooled covariance undefined: {samples} samples for {classes} classes"
            ),
            Error::EmptySet => write!(f, "empty label set"),
            Error::ZeroDiagonal(h) => {
                write!(f, "covariance diagonal entry {h} is non-positive after jitter")
            }
            Error::SingularCovariance(Some(c)) => {
                write!(f, "covariance of class {c} is singular")
            }
            Error::SingularCovariance(None) => write!(f, "covariance matrix is singular"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::SingleClass => write!(f, "only one class present"),
            Error::TooManyTrees { n_weak, n_sel, n_tot } => write!(
                f,
                "{n_weak} trees x {n_sel} features exceed the {n_tot} available"
            ),
            Error::VolumeTooSmall { layer, side, dims } => write!(
                f,
                "volume {}x{}x{} cannot host a layer-{layer} patch of side {side}",
                dims.0, dims.1, dims.2
            ),
            Error::NoCells => write!(f, "single-voxel patches have no cells"),
            Error::NoForegroundClasses => write!(f, "no foreground classes to evaluate"),
            Error::SchemaMismatch { expected, got } => {
                write!(f, "feature schema mismatch: model has {expected}, data has {got}")
            }
            Error::Misalignment(m) => write!(f, "misaligned inputs: {m}"),
            Error::BadConfig(m) => write!(f, "bad configuration: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
