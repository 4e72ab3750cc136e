use thiserror::Error;

/// Errors produced anywhere in the generation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("corner ({x}, {y}) lies outside the feasible top-left region (IoU {iou:.6} < {threshold})")]
    OutsideFeasibleRegion {
        x: f64,
        y: f64,
        iou: f64,
        threshold: f64,
    },

    #[error(
        "rejection sampling gave up after {attempts} proposals (polygon covers {area_ratio:.2e} of its enclosing rectangle)"
    )]
    SamplingFailed { attempts: usize, area_ratio: f64 },

    #[error("generated box failed IoU verification {tries} times (best IoU {best_iou:.6}, threshold {threshold})")]
    VerificationFailed {
        tries: usize,
        best_iou: f64,
        threshold: f64,
    },

    #[error("ground truth set is empty")]
    EmptyGroundTruths,

    #[error("generation failed for ground truth instance {instance_id}: {source}")]
    InstanceGeneration {
        instance_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("annotation {id}: {reason}")]
    InvalidAnnotation { id: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures of the stochastic generator itself, as opposed to bad input.
    pub fn is_generation_failure(&self) -> bool {
        match self {
            Error::SamplingFailed { .. } | Error::VerificationFailed { .. } => true,
            Error::InstanceGeneration { source, .. } => source.is_generation_failure(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
