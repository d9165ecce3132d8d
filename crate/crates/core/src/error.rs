use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph generation failed after {attempts} draws (edge probability {edge_prob} too small?)")]
    GraphGeneration { attempts: usize, edge_prob: f64 },

    #[error("-R^T L R is not Hurwitz (min real part of R^T L R = {min_real_part:e})")]
    NotHurwitz { min_real_part: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("step size underflow at t = {t} (h = {step:e})")]
    StepUnderflow { t: f64, step: f64 },

    #[error("non-finite state component {index} at t = {t}")]
    NonFinite { t: f64, index: usize },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("state norm {norm:e} exceeded divergence bound at t = {t}")]
    Diverged { t: f64, norm: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
