use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("capacity exceeded: {quantity} needs {required} bytes, budget is {budget} bytes")]
    CapacityExceeded {
        quantity: &'static str,
        required: usize,
        budget: usize,
    },
    #[error("operation requires a {expected} head")]
    WrongHead { expected: &'static str },
    #[error("missing required input: {0}")]
    MissingInput(&'static str),
    #[error("unexpected input: {0}")]
    UnexpectedInput(&'static str),
    #[error("blending inversion is unstable for alpha = {0}")]
    InversionUnstable(f32),
    #[error("keyframe set is empty")]
    EmptyKeyframes,
    #[error("image of {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },
    #[error("evaluation plan does not match the model: {0}")]
    PlanMismatch(String),
}
