use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between reading a config and writing the
/// reconstruction. Variants are grouped by what the caller should do about
/// them; see [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("eigensolver did not converge: {message} (after {iterations} iterations)")]
    NonConvergence { message: String, iterations: usize },

    #[error("parity pairing failed at site {site}: {reason}")]
    Pairing { site: i32, reason: String },

    #[error("reduced-mass calibration failed: {0}")]
    Calibration(String),

    #[error("packet: {0}")]
    Packet(String),

    #[error("split-step time step {dt_int:e} violates the stability bound {limit:e}")]
    StepTooLarge { dt_int: f64, limit: f64 },

    #[error("signal: {0}")]
    Signal(String),

    #[error(
        "probe reference |phi_n0(p)|^2 = {reference:e} is negligible \
         (max {max:e}); choose a different probe momentum"
    )]
    VanishingReference { reference: f64, max: f64 },

    #[error("momentum {p} is outside the resolved range [{min}, {max}]")]
    MomentumOutOfRange { p: f64, min: f64, max: f64 },

    #[error("frequency {omega} is at or above the Nyquist limit {nyquist}")]
    AboveNyquist { omega: f64, nyquist: f64 },

    #[error(
        "signal duration {t_total} too short to separate peaks {spacing} apart; \
         need t_total >= {required}"
    )]
    InsufficientDuration {
        t_total: f64,
        spacing: f64,
        required: f64,
    },

    #[error("frequency folds m=1 and m=2 overlap: {0}")]
    FoldOverlap(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Regime,
    Invariant,
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::Grid(_)
            | Error::Packet(_)
            | Error::StepTooLarge { .. }
            | Error::Signal(_)
            | Error::MomentumOutOfRange { .. }
            | Error::AboveNyquist { .. }
            | Error::InsufficientDuration { .. } => ErrorKind::Config,
            Error::Pairing { .. }
            | Error::Calibration(_)
            | Error::FoldOverlap(_)
            | Error::VanishingReference { .. } => ErrorKind::Regime,
            Error::Invariant(_) => ErrorKind::Invariant,
            Error::NonConvergence { .. } | Error::Artifact { .. } | Error::Io(_) => {
                ErrorKind::Runtime
            }
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            Error::Stage { .. } => self,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The error without stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code: 2 config, 3 physics regime, 4 invariant, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Regime => 3,
            ErrorKind::Invariant => 4,
            ErrorKind::Runtime => 1,
        }
    }
}
