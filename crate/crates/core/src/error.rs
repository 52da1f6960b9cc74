use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field is defined on a different grid")]
    GridMismatch,

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("field contains a non-finite value at node {0}")]
    NonFinite(usize),

    #[error("negative density value {value:e} at node {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("fitness of host {0} vanishes identically on the grid")]
    ZeroFitness(usize),

    #[error("grid under-resolves kernel: epsilon/h = {ratio:.3} < {required}")]
    UnderResolvedKernel { ratio: f64, required: f64 },

    #[error("unknown preset '{0}' (expected fig1, fig2 or fig3)")]
    UnknownPreset(String),

    #[error("invalid profile expression '{expr}': {reason}")]
    Expression { expr: String, reason: String },

    #[error("requested {requested} eigenvalues but the operator has dimension {dim}")]
    TooManyEigenvalues { requested: usize, dim: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("integration blew up at t = {t} (norm {norm:e})")]
    BlowUp { t: f64, norm: f64 },

    #[error("negative undershoot {value:e} in {component} at t = {t}")]
    Undershoot {
        component: &'static str,
        t: f64,
        value: f64,
    },

    #[error("time step {dt} violates the stability bound {bound}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("input is not a fixed point (residual {0:e})")]
    NotAFixedPoint(f64),

    #[error("empty epsilon list")]
    EmptySweep,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
