use serde::{Deserialize, Serialize};

use super::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use crate::space::{PrunedStructure, SearchSpace};

/// Parameters of the analytic fitness surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    /// The optimum `C*`; must be a member of the space.
    pub target: PrunedStructure,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    /// Per-dimension weights on the squared distance. Unequal weights break
    /// the symmetry of the surface so distinct structures get distinct
    /// fitness values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn default_sharpness() -> f64 {
    0.5
}

/// `exp(−Σ_i w_i · ((c_i − c*_i) / max_i)² / s)`, where `max_i` is the largest
/// candidate of dimension `i`.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    target: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    sharpness: f64,
}

impl SyntheticEvaluator {
    pub fn new(space: &SearchSpace, params: &SyntheticParams) -> Result<Self, EvalError> {
        space
            .check(&params.target)
            .map_err(|e| EvalError::InvalidRequest(format!("synthetic target: {e}")))?;
        if !(params.sharpness > 0.0 && params.sharpness.is_finite()) {
            return Err(EvalError::InvalidRequest("sharpness must be positive".into()));
        }
        let weights = match &params.weights {
            Some(w) if w.len() != space.dimensions() => {
                return Err(EvalError::InvalidRequest(format!(
                    "{} weights for {} dimensions",
                    w.len(),
                    space.dimensions()
                )));
            }
            Some(w) if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) => {
                return Err(EvalError::InvalidRequest("weights must be positive".into()));
            }
            Some(w) => w.clone(),
            None => vec![1.0; space.dimensions()],
        };
        Ok(SyntheticEvaluator {
            target: params.target.channels().iter().map(|&c| c as f64).collect(),
            scale: space
                .all_candidates()
                .iter()
                .map(|l| *l.last().expect("non-empty") as f64)
                .collect(),
            weights,
            sharpness: params.sharpness,
        })
    }

    pub fn fitness(&self, structure: &PrunedStructure) -> f64 {
        let distance: f64 = structure
            .channels()
            .iter()
            .zip(&self.target)
            .zip(self.scale.iter().zip(&self.weights))
            .map(|((&c, &t), (&m, &w))| {
                let d = (c as f64 - t) / m;
                w * d * d
            })
            .sum();
        (-distance / self.sharpness).exp()
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        if request.structure.len() != self.target.len() {
            return Err(EvalError::InvalidRequest(format!(
                "structure has {} entries, expected {}",
                request.structure.len(),
                self.target.len()
            )));
        }
        EvaluationResult::new(self.fitness(&request.structure))
    }
}
