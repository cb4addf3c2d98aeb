use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream, FlError};
use crate::canonical_struct;

/// Two Gaussian blobs with identity covariance whose means sit
/// `separation` apart along a random unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    /// Number of features; models have `dim + 1` weights.
    pub dim: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub separation: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            dim: 48,
            train_samples: 600,
            validation_samples: 1000,
            separation: 8.0,
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<(), FlError> {
        if self.dim == 0 || self.dim > 63 {
            return Err(FlError::InvalidParam(format!("dim {} outside 1..=63", self.dim)));
        }
        if self.train_samples == 0 || self.validation_samples == 0 {
            return Err(FlError::InvalidParam("sample counts must be positive".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(FlError::InvalidParam(format!("separation {}", self.separation)));
        }
        Ok(())
    }

    pub fn model_len(&self) -> usize {
        self.dim + 1
    }
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub dim: u64,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

canonical_struct!(SyntheticDataset {
    dim,
    features,
    labels
});

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim as usize;
        &self.features[i * d..(i + 1) * d]
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> SyntheticDataset {
        let d = self.dim as usize;
        SyntheticDataset {
            dim: self.dim,
            features: self.features[start * d..end * d].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Splits into `n` contiguous, near-equal shards.
    pub fn shards(&self, n: usize) -> Vec<SyntheticDataset> {
        let n = n.max(1);
        let len = self.len();
        (0..n)
            .map(|i| self.slice(i * len / n, (i + 1) * len / n))
            .collect()
    }
}

/// Train and validation sets drawn from the same blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub train: SyntheticDataset,
    pub validation: SyntheticDataset,
    pub direction: Vec<f64>,
}

impl SyntheticTask {
    /// Deterministic in `(params, seed)`.
    pub fn generate(params: &DatasetParams, seed: u64) -> Result<Self, FlError> {
        params.validate()?;
        let mut rng = stream(seed, "dataset", &[]);
        let raw: Vec<f64> = (0..params.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let direction: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let draw = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut features = Vec::with_capacity(n * params.dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                // alternate classes so every prefix is balanced; then jitter the order
                let label = (i % 2) as u8;
                let sign = if label == 1 { 0.5 } else { -0.5 };
                for u in &direction {
                    let noise: f64 = StandardNormal.sample(rng);
                    features.push(sign * params.separation * u + noise);
                }
                labels.push(label);
            }
            let mut ds = SyntheticDataset {
                dim: params.dim as u64,
                features,
                labels,
            };
            shuffle_pairs(&mut ds, rng);
            ds
        };
        let train = draw(params.train_samples, &mut rng);
        let validation = draw(params.validation_samples, &mut rng);
        Ok(Self {
            train,
            validation,
            direction,
        })
    }
}

/// Swaps adjacent rows at random, keeping each half-open pair balanced.
fn shuffle_pairs(ds: &mut SyntheticDataset, rng: &mut impl Rng) {
    let d = ds.dim as usize;
    for pair in 0..ds.len() / 2 {
        if rng.random::<bool>() {
            let (a, b) = (2 * pair, 2 * pair + 1);
            ds.labels.swap(a, b);
            for j in 0..d {
                ds.features.swap(a * d + j, b * d + j);
            }
        }
    }
}
