//! Seeded Gaussian-blobs classification data.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobsConfig {
    pub classes: usize,
    pub dims: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Class centres are drawn uniformly from `[-spread, spread]^dims`.
    pub spread: f64,
    /// Standard deviation of every feature around its class centre.
    pub noise: f64,
    /// Defaults to a value derived from the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            classes: 4,
            dims: 8,
            train_per_class: 200,
            test_per_class: 100,
            spread: 3.0,
            noise: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_x: Array2<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn dims(&self) -> usize {
        self.train_x.ncols()
    }

    /// Generates train and test samples as separate draws, so the two splits
    /// never share a sample.
    pub fn blobs(config: &BlobsConfig, seed: u64) -> Result<Self, String> {
        if config.classes < 2 || config.dims == 0 || config.train_per_class == 0 || config.test_per_class == 0 {
            return Err("blobs need >= 2 classes, >= 1 dimension and non-empty splits".into());
        }
        if !(config.noise.is_finite() && config.noise >= 0.0) {
            return Err("noise must be non-negative".into());
        }
        let noise = Normal::new(0.0, config.noise).map_err(|e| format!("noise: {e}"))?;
        if !(config.spread.is_finite() && config.spread >= 0.0) {
            return Err("spread must be non-negative".into());
        }
        let mut rng = seed::stream(seed, seed::labels::DATASET, &[]);
        let centres: Vec<Vec<f64>> = (0..config.classes)
            .map(|_| {
                (0..config.dims)
                    .map(|_| rng.gen_range(-config.spread..=config.spread))
                    .collect()
            })
            .collect();

        let mut draw = |per_class: usize, shuffle: bool| {
            let mut order: Vec<usize> = (0..config.classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
            if shuffle {
                order.shuffle(&mut rng);
            }
            let mut x = Array2::zeros((order.len(), config.dims));
            for (row, &label) in order.iter().enumerate() {
                for d in 0..config.dims {
                    x[[row, d]] = centres[label][d] + noise.sample(&mut rng);
                }
            }
            (x, order)
        };
        let (train_x, train_y) = draw(config.train_per_class, true);
        let (test_x, test_y) = draw(config.test_per_class, false);
        Ok(Dataset {
            train_x,
            train_y,
            test_x,
            test_y,
            classes: config.classes,
            seed,
        })
    }
}
