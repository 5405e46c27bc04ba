use thiserror::Error;

/// Which side of the chirp-rate bound a rate falls on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChirpRateViolation {
    /// The rate is zero, so the delay-to-phase map is constant.
    ZeroRate,
    /// `|fc|` exceeds `1 / tau_max^2`, so the phase wraps more than once over the delay range.
    TooSteep { fc: f64, bound: f64 },
}

impl std::fmt::Display for ChirpRateViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChirpRateViolation::ZeroRate => write!(f, "chirp rate must be nonzero"),
            ChirpRateViolation::TooSteep { fc, bound } => {
                write!(f, "chirp rate |{fc}| Hz/s exceeds the bound {bound} Hz/s")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("chirp rate violation on pulse {pulse}: {violation}")]
    ChirpRate {
        pulse: usize,
        violation: ChirpRateViolation,
    },

    #[error("timing violation: {0}")]
    Timing(String),

    #[error("sampling rate {fs} Hz is below the required {required} Hz")]
    Nyquist { fs: f64, required: f64 },

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("rank {rank} is below the model order {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("found {found} usable roots, need {required}")]
    TooFewRoots { found: usize, required: usize },

    #[error("frequencies {i} and {j} are separated by only {separation} Hz")]
    NearDuplicateFrequencies { i: usize, j: usize, separation: f64 },

    #[error("least-squares system is ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("pulse {pulse} carries {found} components, expected {expected}")]
    InconsistentModelOrder {
        pulse: usize,
        expected: usize,
        found: usize,
    },

    #[error("chirp schedule does not determine delay and Doppler (all rates equal)")]
    RankDeficientSchedule,

    #[error("{format} parse error at line {line}: {message}")]
    Parse {
        format: &'static str,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
