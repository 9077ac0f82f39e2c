//! In-process fitness: prune the pre-trained perceptron by inheriting a random
//! subset of its units, train briefly, score test accuracy.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ndarray::Axis;
use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::mlp::{Dense, ToyModel, TrainError, TrainRecipe};
use super::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use crate::arch::{ArchitectureSpec, LayerKind};
use crate::seed;
use crate::space::PrunedStructure;

/// Keeps a uniformly random `c'_j`-subset of each hidden layer's units,
/// slicing incoming weights by the previous layer's selection and outgoing
/// weights by this layer's. Selections are sorted, so keeping every unit
/// returns the full model unchanged.
pub fn inherit_weights<R: Rng + ?Sized>(
    full: &ToyModel,
    structure: &PrunedStructure,
    rng: &mut R,
) -> Result<ToyModel, EvalError> {
    let widths = full.hidden_widths();
    if structure.len() != widths.len() {
        return Err(EvalError::InvalidRequest(format!(
            "structure has {} entries, model has {} hidden layers",
            structure.len(),
            widths.len()
        )));
    }
    let mut selections: Vec<Vec<usize>> = Vec::with_capacity(widths.len());
    for (j, (&keep, &width)) in structure.channels().iter().zip(&widths).enumerate() {
        if keep == 0 || keep > width {
            return Err(EvalError::InvalidRequest(format!(
                "layer {j}: cannot keep {keep} of {width} units"
            )));
        }
        let mut picked = index::sample(rng, width, keep).into_vec();
        picked.sort_unstable();
        selections.push(picked);
    }

    let last = full.layers.len() - 1;
    let layers = full
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let rows = if l == 0 { None } else { Some(&selections[l - 1]) };
            let cols = if l == last { None } else { Some(&selections[l]) };
            let mut weights = layer.weights.clone();
            if let Some(rows) = rows {
                weights = weights.select(Axis(0), rows);
            }
            let mut bias = layer.bias.clone();
            if let Some(cols) = cols {
                weights = weights.select(Axis(1), cols);
                bias = bias.select(Axis(0), cols);
            }
            Dense { weights, bias }
        })
        .collect();
    Ok(ToyModel { layers })
}

/// Continues training `model` for `epochs` (zero is a no-op) and returns it
/// with its test accuracy.
pub fn fine_tune(
    mut model: ToyModel,
    data: &Dataset,
    epochs: u32,
    seed: u64,
    recipe: &TrainRecipe,
) -> Result<(ToyModel, f64), TrainError> {
    if epochs > 0 {
        let mut rng = seed::stream(seed, seed::labels::FINE_TUNE, &[]);
        model.train(data, epochs, recipe, &mut rng)?;
    }
    let accuracy = model.test_accuracy(data);
    Ok((model, accuracy))
}

#[derive(Debug, Clone)]
pub struct FineTuned {
    pub model: ToyModel,
    pub accuracy: f64,
    /// False when no cached weights existed and fresh units were inherited.
    pub warm_start: bool,
}

/// Hidden widths of a perceptron descriptor: a chain of fc layers whose
/// hidden layers are each an untied prunable dimension.
pub fn mlp_widths(spec: &ArchitectureSpec) -> Result<Vec<usize>, String> {
    if spec.input_height != 1 || spec.input_width != 1 {
        return Err("toy backend needs a 1x1 input (feature vector)".into());
    }
    let last = spec.layers.len() - 1;
    let mut widths = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if layer.kind != LayerKind::FullyConnected {
            return Err(format!("layer `{}`: toy backend only supports fc layers", layer.name));
        }
        let chained = if i == 0 { layer.predecessors.is_empty() } else { layer.predecessors == [i - 1] };
        if !chained {
            return Err(format!("layer `{}`: toy backend needs a simple chain", layer.name));
        }
        if i == last {
            if layer.prunable {
                return Err("the output layer cannot be prunable".into());
            }
        } else {
            if !layer.prunable || layer.tie_group.is_some() {
                return Err(format!("hidden layer `{}` must be prunable and untied", layer.name));
            }
            widths.push(layer.base_out_channels.expect("fc width"));
        }
    }
    Ok(widths)
}

/// Fitness = test accuracy after inheriting units from `full` and training
/// for the requested epochs. Trained candidates are cached by structure
/// (the last evaluation wins) for warm-start fine-tuning.
pub struct ToyEvaluator {
    data: Arc<Dataset>,
    full: Arc<ToyModel>,
    recipe: TrainRecipe,
    cache: Mutex<HashMap<PrunedStructure, ToyModel>>,
}

impl ToyEvaluator {
    pub fn new(data: Arc<Dataset>, full: Arc<ToyModel>, recipe: TrainRecipe) -> Self {
        ToyEvaluator {
            data,
            full,
            recipe,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn full_model(&self) -> &ToyModel {
        &self.full
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn cached(&self, structure: &PrunedStructure) -> Option<ToyModel> {
        self.cache.lock().expect("cache lock").get(structure).cloned()
    }

    pub fn fine_tune(&self, structure: &PrunedStructure, epochs: u32, seed: u64) -> Result<FineTuned, EvalError> {
        let (model, warm_start) = match self.cached(structure) {
            Some(model) => (model, true),
            None => {
                log::warn!("no cached weights for {structure}; fine-tuning from freshly inherited units");
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_seed(seed, seed::labels::FINE_TUNE, &[1]));
                (inherit_weights(&self.full, structure, &mut rng)?, false)
            }
        };
        let (model, accuracy) = fine_tune(model, &self.data, epochs, seed, &self.recipe)?;
        Ok(FineTuned {
            model,
            accuracy,
            warm_start,
        })
    }
}

impl Evaluator for ToyEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let mut model = inherit_weights(&self.full, &request.structure, &mut rng)?;
        let stats = model.train(&self.data, request.epochs, &self.recipe, &mut rng)?;
        let accuracy = model.test_accuracy(&self.data);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(request.structure.clone(), model);
        let mut result = EvaluationResult::new(accuracy)?
            .with_metric("epochs", f64::from(request.epochs))
            .with_metric("wall_time_s", started.elapsed().as_secs_f64());
        if let Some(last) = stats.last() {
            result = result.with_metric("loss", last.mean_loss);
        }
        Ok(result)
    }
}
