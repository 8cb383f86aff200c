use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the simulator can report.
///
/// Variants are grouped by the exit code the command-line front end maps
/// them to; see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    // configuration
    #[error("parameter `{name}` must be positive (got {value})")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("screening parameter beta_L = {beta:.4} does not give a double well (need beta_L > 1)")]
    NotDoubleWell { beta: f64 },
    #[error("invalid flux grid: {0}")]
    InvalidGrid(String),
    #[error("grid too coarse: curvature error estimate {estimate:.3e} rad/ns exceeds {limit:.3e} rad/ns")]
    GridTooCoarse { estimate: f64, limit: f64 },
    #[error("noise cutoff {cutoff} rad/ns exceeds the Nyquist limit {nyquist} rad/ns")]
    NyquistViolation { cutoff: f64, nyquist: f64 },
    #[error("invalid noise spec: {0}")]
    InvalidNoiseSpec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bias range too narrow: {0}")]
    RangeTooNarrow(String),
    #[error("initial bias offset {offset_microphi0} µΦ₀ lies outside the flux grid")]
    OffsetOutOfGrid { offset_microphi0: f64 },
    #[error("no power-law fit available for the threshold inversion")]
    NoFitAvailable,

    // numerical
    #[error("eigensolver failed to converge for level {level} (residual {residual:.3e})")]
    ConvergenceFailure { level: usize, residual: f64 },
    #[error("level {level} at {energy:.3} rad/ns is within 5% of the grid-edge potential {edge:.3} rad/ns")]
    LevelsAboveBarrierEdge { level: usize, energy: f64, edge: f64 },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("calibration bracket failure: {0}")]
    BracketFailure(String),
    #[error("trace too short for spectral estimate: {len} samples, need at least {min}")]
    TraceTooShort { len: usize, min: usize },
    #[error("initial state keeps only {weight:.4} of its weight in the lowest two levels (need > 0.99)")]
    ExcessiveHigherLevelWeight { weight: f64 },
    #[error("mean two-level weight {weight:.4} below 0.95")]
    TwoLevelWeightDeficit { weight: f64 },
    #[error("trace covers {periods:.2} oscillation periods, need at least 3")]
    InsufficientPeriods { periods: f64 },
    #[error("damped-cosine fit diverged: {0}")]
    FitDiverged(String),
    #[error("power-law fit needs at least {need} usable rows, have {have}")]
    InsufficientRows { need: usize, have: usize },
    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    // budgets
    #[error("projection leakage budget exceeded: {0}")]
    LeakageBudgetExceeded(String),
    #[error("{clamped} of {total} steps clamped to the basis-table edge (limit 0.1%)")]
    ClampBudgetExceeded { clamped: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 config, 3 numerical failure, 4 budget exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonPositiveParameter { .. }
            | Error::NotDoubleWell { .. }
            | Error::InvalidGrid(_)
            | Error::GridTooCoarse { .. }
            | Error::NyquistViolation { .. }
            | Error::InvalidNoiseSpec(_)
            | Error::Config(_)
            | Error::RangeTooNarrow(_)
            | Error::OffsetOutOfGrid { .. }
            | Error::NoFitAvailable
            | Error::Json(_) => 2,
            Error::LeakageBudgetExceeded(_) | Error::ClampBudgetExceeded { .. } => 4,
            Error::Trajectory { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
