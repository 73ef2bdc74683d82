use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("integration exceeded {max_steps} steps at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("trace drift {drift:e} exceeds {limit:e} at t = {t}")]
    TraceDrift { t: f64, drift: f64, limit: f64 },

    #[error("state norm {norm_sq:e} fell below the floor at t = {t} before the jump threshold was reached")]
    NormFloor { t: f64, norm_sq: f64 },

    #[error("failed to locate jump time in [{t_lo}, {t_hi}]")]
    JumpLocation { t_lo: f64, t_hi: f64 },

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("mean spin is undefined (|<J>| = {norm:e})")]
    UndefinedMeanSpin { norm: f64 },

    #[error("unsupported order {0}")]
    UnsupportedOrder(usize),

    #[error("{0} sweep point(s) failed")]
    SweepFailures(usize),

    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure came from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepUnderflow { .. }
                | Error::TooManySteps { .. }
                | Error::NonFinite { .. }
                | Error::TraceDrift { .. }
                | Error::NormFloor { .. }
                | Error::JumpLocation { .. }
                | Error::Trajectory { .. }
                | Error::UndefinedMeanSpin { .. }
                | Error::SweepFailures(_)
        )
    }
}
