//! Recurrent flow model, masked policy head and optimizer.

mod adam;
mod model;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use adam::{Adam, AdamConfig};
pub use model::{
    BoundParams, FlowModel, FlowState, ModelConfig, RecurrentState, StepInput, EMBEDDING, GATE_BIAS, GATE_WEIGHT,
    OUTPUT_BIAS, OUTPUT_WEIGHT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite gradient in tensor {tensor} at index {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
    #[error("policy has no entry for state {0:?}")]
    UnknownState(Vec<usize>),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
