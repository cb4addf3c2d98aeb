//! Federated-learning substrate: a seeded synthetic classification task,
//! logistic-regression local training, Gaussian weight noise, utility
//! measurement and score-weighted aggregation.

mod aggregate;
mod data;
mod model;

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{sha256, Canonical, CodecError, Reader};

pub use aggregate::{aggregate, aggregate_or_mean, dot2};
pub use data::{DatasetParams, SyntheticDataset, SyntheticTask};
pub use model::{apply_dp_noise, local_train, measure_utility, training_loss};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("training shard is empty")]
    EmptyShard,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all scores are zero")]
    AllZeroScores,
    #[error("no models to aggregate")]
    NoModels,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Flat model parameters: feature weights followed by the bias.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(len: usize) -> Self {
        WeightVector(vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        WeightVector(v)
    }
}

impl Canonical for WeightVector {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(WeightVector(Vec::decode(r)?))
    }
}

/// Independent random stream for one purpose, named by `tag` and a list of
/// identifying parts (task id, round, trainer, ...). A stream depends only
/// on its name, so work can be scheduled in any order.
pub fn stream(seed: u64, tag: &str, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut buf = b"autodfl/stream".to_vec();
    seed.encode(&mut buf);
    tag.to_string().encode(&mut buf);
    for p in parts {
        p.to_vec().encode(&mut buf);
    }
    ChaCha8Rng::from_seed(sha256(&buf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorKind {
    Good,
    Malicious,
    Lazy,
}

/// How a trainer behaves in every task it joins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub kind: BehaviorKind,
    /// Probability of skipping a round.
    pub skip_rate: f64,
    /// Standard deviation of the Gaussian noise added before upload.
    pub noise_scale: f64,
}

/// Range of skip rates a lazy trainer is assigned from.
pub const LAZY_SKIP_RANGE: (f64, f64) = (0.4, 0.6);
pub const DEFAULT_NOISE: f64 = 0.01;
/// Malicious trainers upload weights uniform in `[-MALICIOUS_RANGE, MALICIOUS_RANGE]`.
pub const MALICIOUS_RANGE: f64 = 5.0;

impl BehaviorProfile {
    pub fn good() -> Self {
        Self {
            kind: BehaviorKind::Good,
            skip_rate: 0.0,
            noise_scale: DEFAULT_NOISE,
        }
    }

    pub fn malicious() -> Self {
        Self {
            kind: BehaviorKind::Malicious,
            skip_rate: 0.0,
            noise_scale: DEFAULT_NOISE,
        }
    }

    pub fn lazy(skip_rate: f64) -> Self {
        Self {
            kind: BehaviorKind::Lazy,
            skip_rate,
            noise_scale: DEFAULT_NOISE,
        }
    }

    pub fn validate(&self) -> Result<(), FlError> {
        if !(0.0..=1.0).contains(&self.skip_rate) {
            return Err(FlError::InvalidParam(format!("skip_rate {}", self.skip_rate)));
        }
        if self.kind == BehaviorKind::Good && self.skip_rate != 0.0 {
            return Err(FlError::InvalidParam("good trainers never skip".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(FlError::InvalidParam(format!("noise_scale {}", self.noise_scale)));
        }
        Ok(())
    }
}

/// Local training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingParams {
    pub epochs: u32,
    pub learning_rate: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1.0,
        }
    }
}

/// What a trainer uploads for one round, or `None` when it skips.
pub fn trainer_update(
    profile: &BehaviorProfile,
    global: &WeightVector,
    shard: &SyntheticDataset,
    training: &TrainingParams,
    rng: &mut ChaCha8Rng,
) -> Result<Option<WeightVector>, FlError> {
    use rand::Rng;
    if profile.skip_rate > 0.0 && rng.random::<f64>() < profile.skip_rate {
        return Ok(None);
    }
    let w = match profile.kind {
        BehaviorKind::Malicious => WeightVector(
            (0..global.len())
                .map(|_| rng.random_range(-MALICIOUS_RANGE..=MALICIOUS_RANGE))
                .collect(),
        ),
        BehaviorKind::Good | BehaviorKind::Lazy => {
            local_train(global, shard, training.epochs, training.learning_rate)?
        }
    };
    Ok(Some(apply_dp_noise(&w, profile.noise_scale, rng)))
}

#[cfg(test)]
mod tests;
