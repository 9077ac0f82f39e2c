//! A small tanh perceptron trained with mini-batch SGD on softmax
//! cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::Dataset;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: u32 },
    #[error("at least one training epoch is required")]
    NoEpochs,
    #[error("model expects {expected} input features, data has {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRecipe {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

/// `(dW, db)` of one layer.
pub type Gradient = (Array2<f64>, Array1<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Hidden layers use tanh; the last layer produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
}

impl ToyModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..=limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        ToyModel { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.ncols())
            .collect()
    }

    /// Activations of every layer, input first, logits last.
    fn forward_all(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights) + &layer.bias;
            if i != last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_all(x).pop().expect("non-empty")
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        softmax(self.logits(x))
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let logits = self.logits(x);
        let correct = logits
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(row, &label)| argmax(row.iter().copied()) == label)
            .count();
        correct as f64 / y.len() as f64
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[usize]) -> f64 {
        let probs = self.predict_proba(x);
        cross_entropy(&probs, y)
    }

    /// Mean loss and `(dW, db)` for every layer.
    pub fn gradients(&self, x: ArrayView2<f64>, y: &[usize]) -> (f64, Vec<Gradient>) {
        let acts = self.forward_all(x);
        let n = y.len() as f64;
        let probs = softmax(acts.last().expect("non-empty").clone());
        let loss = cross_entropy(&probs, y);

        let mut delta = probs;
        for (row, &label) in delta.rows_mut().into_iter().zip(y) {
            let mut row = row;
            row[label] -= 1.0;
        }
        delta /= n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let dw = acts[i].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                back.zip_mut_with(&acts[i], |g, &a| *g *= 1.0 - a * a);
                delta = back;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn sgd_step(&mut self, x: ArrayView2<f64>, y: &[usize], learning_rate: f64) -> f64 {
        let (loss, grads) = self.gradients(x, y);
        for (layer, (dw, db)) in self.layers.iter_mut().zip(grads) {
            layer.weights.scaled_add(-learning_rate, &dw);
            layer.bias.scaled_add(-learning_rate, &db);
        }
        loss
    }

    /// Shuffled mini-batch SGD over the training split.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        epochs: u32,
        recipe: &TrainRecipe,
        rng: &mut R,
    ) -> Result<Vec<EpochStats>, TrainError> {
        if data.dims() != self.inputs() {
            return Err(TrainError::ShapeMismatch {
                expected: self.inputs(),
                got: data.dims(),
            });
        }
        let rows = data.train_y.len();
        let batch = recipe.batch_size.max(1);
        let mut order: Vec<usize> = (0..rows).collect();
        let mut stats = Vec::with_capacity(epochs as usize);
        for epoch in 1..=epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let x = data.train_x.select(Axis(0), chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| data.train_y[i]).collect();
                let loss = self.sgd_step(x.view(), &y, recipe.learning_rate);
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                total += loss * chunk.len() as f64;
            }
            let finite = self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(l.bias.iter()).all(|w| w.is_finite()));
            if !finite {
                return Err(TrainError::Diverged { epoch });
            }
            stats.push(EpochStats {
                epoch,
                mean_loss: total / rows as f64,
            });
        }
        Ok(stats)
    }

    pub fn test_accuracy(&self, data: &Dataset) -> f64 {
        self.accuracy(data.test_x.view(), &data.test_y)
    }

    /// Total multiply-accumulates of one forward pass, one per weight.
    pub fn flops(&self) -> u64 {
        self.layers.iter().map(|l| l.weights.len() as u64).sum()
    }
}

/// Trains the unpruned model whose units later seed every pruned candidate.
pub fn train_full_model(
    widths: &[usize],
    data: &Dataset,
    epochs: u32,
    seed: u64,
    recipe: &TrainRecipe,
) -> Result<ToyModel, TrainError> {
    if epochs == 0 {
        return Err(TrainError::NoEpochs);
    }
    let mut rng = seed::stream(seed, seed::labels::PRETRAIN, &[]);
    let mut model = ToyModel::init(data.dims(), widths, data.classes, &mut rng);
    model.train(data, epochs, recipe, &mut rng)?;
    Ok(model)
}

fn softmax(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

fn cross_entropy(probs: &Array2<f64>, y: &[usize]) -> f64 {
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &label)| -row[label].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / y.len() as f64
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::dataset::BlobsConfig;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixed_batch() -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((8, 5), |_| rng.gen_range(-2.0..2.0));
        (x, vec![0, 1, 2, 0, 1, 2, 2, 1])
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ToyModel::init(5, &[7, 4], 3, &mut rng);
        let (x, _) = fixed_batch();
        let scaled = x.mapv(|v| v * 40.0);
        for row in model.predict_proba(scaled.view()).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    /// Central differences on every parameter against the analytic gradient.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ToyModel::init(5, &[6, 4], 3, &mut rng);
        let (x, y) = fixed_batch();
        let (_, grads) = model.gradients(x.view(), &y);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (l, (dw, db)) in grads.iter().enumerate() {
            for ((r, c), &g) in dw.indexed_iter() {
                let mut plus = model.clone();
                plus.layers[l].weights[[r, c]] += h;
                let mut minus = model.clone();
                minus.layers[l].weights[[r, c]] -= h;
                let fd = (plus.loss(x.view(), &y) - minus.loss(x.view(), &y)) / (2.0 * h);
                worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
            }
            for (j, &g) in db.iter().enumerate() {
                let mut plus = model.clone();
                plus.layers[l].bias[j] += h;
                let mut minus = model.clone();
                minus.layers[l].bias[j] -= h;
                let fd = (plus.loss(x.view(), &y) - minus.loss(x.view(), &y)) / (2.0 * h);
                worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_epochs_is_a_precondition_error() {
        let data = Dataset::blobs(&BlobsConfig::default(), 1).unwrap();
        assert_eq!(
            train_full_model(&[8], &data, 0, 1, &TrainRecipe::default()),
            Err(TrainError::NoEpochs)
        );
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = Dataset::blobs(&BlobsConfig::default(), 1).unwrap();
        let recipe = TrainRecipe {
            learning_rate: f64::INFINITY,
            batch_size: 32,
        };
        let err = train_full_model(&[8], &data, 3, 1, &recipe).unwrap_err();
        assert_eq!(err, TrainError::Diverged { epoch: 1 });
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = Dataset::blobs(&BlobsConfig::default(), 4).unwrap();
        let a = train_full_model(&[16, 16], &data, 2, 9, &TrainRecipe::default()).unwrap();
        let b = train_full_model(&[16, 16], &data, 2, 9, &TrainRecipe::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_blobs_are_learned() {
        let cfg = BlobsConfig {
            classes: 2,
            ..BlobsConfig::default()
        };
        let data = Dataset::blobs(&cfg, 21).unwrap();
        let model = train_full_model(&[32, 32], &data, 20, 21, &TrainRecipe::default()).unwrap();
        assert!(model.test_accuracy(&data) >= 0.95, "{}", model.test_accuracy(&data));
    }
}
