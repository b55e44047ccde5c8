//! Error taxonomy shared by the simulator, metrics and harness layers.

use thiserror::Error;

use crate::geom::Vec2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("singular kernel input: evaluation point coincides with the source and delta = 0")]
    SingularInput,

    #[error("point ({}, {}) lies outside the domain", .0.x, .0.y)]
    OutsideDomain(Vec2),

    #[error("simulation blow-up at t = {t}: particle left the disk by more than {excess:e} R")]
    BlowUp { t: f64, excess: f64 },

    #[error("run invalid: {projected} of {total} particles required boundary projection (> 0.1%)")]
    ExcessiveProjection { projected: usize, total: usize },

    #[error("time {t} is not a snapshot time of this history (t0 = {t0}, dt = {dt}, n = {n})")]
    TimeNotInHistory { t: f64, t0: f64, dt: f64, n: usize },

    #[error("incompatible flow histories: {0}")]
    MismatchedHistories(String),

    #[error("quadrature did not converge: relative change {change:.3e} on refinement (limit {limit:.1e})")]
    QuadratureFailure { change: f64, limit: f64 },

    #[error("quadrature resolution too coarse: {0}")]
    QuadratureResolution(String),

    #[error("oscillation frequency {n} unresolvable at grid spacing {h} (requires n <= 1/(4h))")]
    UnresolvedFrequency { n: f64, h: f64 },

    #[error("separation scales span {octaves:.2} dyadic octaves, need at least {required}")]
    InsufficientScaleRange { octaves: f64, required: f64 },

    #[error("finite-difference step {step:e} below 10x composition tolerance {tol:e}")]
    StepTooSmall { step: f64, tol: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
