use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integral diverges: moment order {p} must exceed the stability index {beta}")]
    Divergence { p: f64, beta: f64 },

    #[error("no jumps can be sampled above truncation radius {radius}")]
    EmptyMeasure { radius: f64 },

    #[error("no small jumps carry Malliavin mass on ({t}, {tau}]")]
    NoSmallJumps { t: f64, tau: f64 },

    #[error("sigma is singular or ill-conditioned at t={t} (condition number {condition:e})")]
    SingularSigma { t: f64, condition: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("value function does not cover time {time} (span [{lo}, {hi}])")]
    Interpolation { time: f64, lo: f64, hi: f64 },

    #[error("Picard iteration is not contracting (ratios {ratios:?}); split the horizon below {horizon}")]
    NonContraction { ratios: Vec<f64>, horizon: f64 },

    #[error("too many invalid paths in Picard step: {invalid} of {total}")]
    TooManyInvalid { invalid: usize, total: usize },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("explicit scheme unstable: dt={dt} exceeds the bound, use dt <= {suggested}")]
    Instability { dt: f64, suggested: f64 },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
