//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GradFlowError>;

#[derive(Debug, Error)]
pub enum GradFlowError {
    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("integration stalled at t = {last_t}: step size underflow")]
    Integration { last_t: f64 },

    #[error("proximal search radius active at the boundary (R = {radius}, |v - x| = {hit}); minimizer may lie outside")]
    RadiusActive { radius: f64, hit: f64 },

    #[error("no admissible penalty coefficient below 1/4: {0}")]
    Infeasible(String),

    #[error("horizon too short: need {needed}, curve ends at {have}")]
    Horizon { needed: f64, have: f64 },

    #[error("range mismatch between curves: {0}")]
    Range(String),

    #[error("inconsistent decomposition: {0}")]
    Consistency(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GradFlowError {
    pub fn input(msg: impl Into<String>) -> Self {
        GradFlowError::Input(msg.into())
    }
}
