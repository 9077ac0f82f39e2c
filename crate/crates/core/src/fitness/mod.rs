//! Fitness backends.
//!
//! Every backend implements [`Evaluator`]: given a structure, a seed and an
//! epoch budget it returns a fitness in `[0, 1]`. Three backends ship:
//! [`SyntheticEvaluator`] (analytic stand-in for testing the optimizer),
//! [`ToyEvaluator`] (an in-process perceptron trained with inherited weights)
//! and [`ExternalEvaluator`] (a subprocess speaking newline-delimited JSON).

pub mod dataset;
pub mod external;
pub mod mlp;
pub mod synthetic;
pub mod toy;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::PrunedStructure;

pub use dataset::{BlobsConfig, Dataset};
pub use external::{Connection, ExternalConfig, ExternalEvaluator};
pub use mlp::{train_full_model, ToyModel, TrainError, TrainRecipe};
pub use synthetic::{SyntheticEvaluator, SyntheticParams};
pub use toy::{fine_tune, inherit_weights, FineTuned, ToyEvaluator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub structure: PrunedStructure,
    pub seed: u64,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub fitness: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl EvaluationResult {
    pub fn new(fitness: f64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&fitness) {
            return Err(EvalError::OutOfRange(fitness));
        }
        Ok(EvaluationResult {
            fitness,
            metrics: BTreeMap::new(),
        })
    }

    pub fn with_metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator did not answer within {0:?}")]
    Timeout(Duration),
    #[error("evaluator process exited: {0}")]
    ProcessExited(String),
    #[error("malformed message from evaluator: {0}")]
    Malformed(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("fitness {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("evaluator reported an error: {0}")]
    Remote(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Training(#[from] TrainError),
    #[error("evaluator i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A fitness backend. Implementations must be deterministic in the request.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        (**self).evaluate(request)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        (**self).evaluate(request)
    }
}
