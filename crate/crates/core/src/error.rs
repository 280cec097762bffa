//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong when configuring or running a lift.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("nonpositive interval: dt = {0}")]
    NonpositiveInterval(f64),
    #[error("nonpositive wheelbase: L = {0}")]
    NonpositiveWheelbase(f64),
    #[error("steering bound outside (0, pi/2): delta_max = {0}")]
    SteeringBoundOutOfRange(f64),
    #[error("nonpositive longitudinal gain: a_max = {0}")]
    NonpositiveAccelGain(f64),
    #[error("nonpositive curvature bound: kappa_max = {0}")]
    NonpositiveCurvatureBound(f64),
    #[error("nonpositive sharpness bound: sharpness_max = {0}")]
    NonpositiveSharpnessBound(f64),
    #[error("zero substeps")]
    ZeroSubsteps,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty action sequence")]
    EmptyActions,
    #[error("negative initial speed: v0 = {0}")]
    NegativeInitialSpeed(f64),
    #[error("initial curvature out of bounds: |{kappa0}| > kappa_max = {kappa_max}")]
    InitialCurvatureOutOfBounds { kappa0: f64, kappa_max: f64 },

    #[error("steering angle at or beyond tangent singularity: |{0}| >= pi/2")]
    SteeringSingularity(f64),

    #[error("config model is {actual}, operation requires {expected}")]
    ModelMismatch {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<LiftError>,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("negative loss weight at index {0}")]
    NegativeWeight(usize),
    #[error("loss weights sum to zero")]
    ZeroWeightSum,
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, LiftError>;
