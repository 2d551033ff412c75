use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("invariant violation at line {line}: {message}")]
    InvariantViolation { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient units: {found} found, {required} required")]
    InsufficientUnits { found: usize, required: usize },

    #[error("empty cohort: {0}")]
    EmptyCohort(String),

    #[error("too few units: {below} below and {above} above the threshold, {required} required per side")]
    TooFewUnits {
        below: usize,
        above: usize,
        required: usize,
    },

    #[error("weak instrument: first-stage jump {itt_d:.6} is below 0.01 in magnitude")]
    WeakInstrument { itt_d: f64 },

    #[error("singular design: condition ratio {ratio:.3e}")]
    SingularDesign { ratio: f64 },

    #[error("degenerate denominator: {0:.3e}")]
    DegenerateDenominator(f64),

    #[error("degenerate density at cutoff: {0:.3e}")]
    DegenerateDensity(f64),

    #[error("degenerate conditional variance at cutoff")]
    DegenerateVariance,

    #[error("too few scores: {found} found, {required} required")]
    TooFewScores { found: usize, required: usize },

    #[error("no data on the {0} side of the threshold")]
    EmptySide(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in report annotations.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InsufficientUnits { .. } => "InsufficientUnits",
            Error::EmptyCohort(_) => "EmptyCohort",
            Error::TooFewUnits { .. } => "TooFewUnits",
            Error::WeakInstrument { .. } => "WeakInstrument",
            Error::SingularDesign { .. } => "SingularDesign",
            Error::DegenerateDenominator(_) => "DegenerateDenominator",
            Error::DegenerateDensity(_) => "DegenerateDensity",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::TooFewScores { .. } => "TooFewScores",
            Error::EmptySide(_) => "EmptySide",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
