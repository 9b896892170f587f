use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid scene spec: {0}")]
    InvalidScene(String),

    #[error("trajectory leaves the frame at frame {frame}: {detail}")]
    TrajectoryOutOfFrame { frame: usize, detail: String },

    #[error("object not found: no pixel within tolerance of palette color {color_id} on frame 0")]
    ObjectNotFound { color_id: usize },

    #[error("mask edit pushes support out of bounds on frames {frames:?}")]
    EditOutOfBounds { frames: Vec<usize> },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("dimension {dim} = {size} is not divisible by {factor}")]
    Indivisible {
        dim: &'static str,
        size: usize,
        factor: usize,
    },

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("step {t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("unknown {field} index {index} (vocabulary size {size})")]
    UnknownCode {
        field: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at step {step}, sample {sample}: L_d={loss_d}, L_c={loss_c}")]
    NonFiniteLoss {
        step: u64,
        sample: usize,
        loss_d: f64,
        loss_c: f64,
    },

    #[error("empty bounding box")]
    EmptyBox,

    #[error("invalid long-generation plan: {0}")]
    InvalidPlan(String),
}

impl Error {
    pub(crate) fn shape(expected: impl core::fmt::Debug, actual: impl core::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: alloc::format!("{expected:?}"),
            actual: alloc::format!("{actual:?}"),
        }
    }
}
