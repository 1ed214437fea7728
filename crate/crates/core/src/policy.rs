//! Policies that produce next-action logits over the vocabulary.

use crate::flowmodel::ModelError;
use crate::scalar::Scalar;

/// A forward policy with a learned (or exact) log-partition value.
///
/// Logits are unnormalized; callers apply the environment mask and a
/// masked log-softmax before sampling.
pub trait Policy<T: Scalar>: Sync {
    type State: Clone + Send;

    fn vocab_size(&self) -> usize;

    /// State before any token has been placed.
    fn initial(&self) -> Result<Self::State, ModelError>;

    fn logits<'a>(&'a self, state: &'a Self::State) -> &'a [T];

    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State, ModelError>;

    fn log_z(&self) -> T;
}

/// Zero logits everywhere: uniform over whatever the mask allows.
#[derive(Debug, Clone)]
pub struct UniformPolicy<T> {
    zeros: Vec<T>,
}

impl<T: Scalar> UniformPolicy<T> {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            zeros: vec![T::zero(); vocab_size],
        }
    }
}

impl<T: Scalar> Policy<T> for UniformPolicy<T> {
    type State = ();

    fn vocab_size(&self) -> usize {
        self.zeros.len()
    }

    fn initial(&self) -> Result<(), ModelError> {
        Ok(())
    }

    fn logits<'a>(&'a self, _: &'a ()) -> &'a [T] {
        &self.zeros
    }

    fn advance(&self, _: &(), _: usize) -> Result<(), ModelError> {
        Ok(())
    }

    fn log_z(&self) -> T {
        T::zero()
    }
}
