use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("drive detuning is zero; adiabatic elimination of the intermediate level is invalid")]
    Resonance,

    #[error("level scheme: {0}")]
    Scheme(String),

    #[error("step size underflow at t = {time:.6e} s (h = {step:.3e} s)")]
    Stiffness { time: f64, step: f64 },

    #[error("physicality violated at t = {time:.6e} s: {detail}")]
    Unphysical { time: f64, detail: String },

    #[error("no data: {0}")]
    NoData(String),

    #[error("window [{start:.3e}, {end:.3e}] s does not overlap the simulated time grid")]
    EmptyWindow { start: f64, end: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping pipeline-stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
