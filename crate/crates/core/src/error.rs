use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("observable undefined: {0}")]
    UndefinedObservable(String),

    #[error("brute-force interference needs pure inputs, got lambda = {lambda}")]
    UnsupportedMixedInput { lambda: f64 },

    #[error("photon-number cutoff {cutoff} exceeds the supported maximum {max}")]
    UnsupportedCutoff { cutoff: usize, max: usize },

    #[error("integration failed at t = {t_ps} ps: trace error {trace_error:e} (step {step_ps} ps)")]
    Integration {
        t_ps: f64,
        trace_error: f64,
        step_ps: f64,
    },

    #[error("two-photon truncation invalid: p0 = {p0:e} (emission correlation too large)")]
    Truncation { p0: f64 },

    #[error("fringe contrast {amplitude:e} below noise floor {floor:e}")]
    InsufficientContrast { amplitude: f64, floor: f64 },

    #[error("degenerate abscissa: all countrates equal")]
    DegenerateAbscissa,

    #[error("infeasible measurements: {0}")]
    Infeasible(String),

    #[error("measurements admit {} physical solutions", candidates.len())]
    Ambiguous { candidates: Vec<[f64; 4]> },

    #[error("expected counts per bin {expected:e} exceed cap {cap:e}")]
    CountOverflow { expected: f64, cap: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than by physics or IO.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::UnsupportedCutoff { .. }
                | Error::UnsupportedMixedInput { .. }
                | Error::DegenerateAbscissa
                | Error::InsufficientContrast { .. }
        )
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::Ambiguous { .. })
    }
}
