use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("label {label} at batch index {index} is outside [0, {classes})")]
    Label { index: usize, label: usize, classes: usize },
    #[error("numeric failure in {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
