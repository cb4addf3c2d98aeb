use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{FlError, SyntheticDataset, WeightVector};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(w: &[f64], x: &[f64]) -> f64 {
    let (bias, weights) = w.split_last().expect("model has a bias");
    weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

fn check_dims(w: &[f64], data: &SyntheticDataset) -> Result<(), FlError> {
    let want = data.dim as usize + 1;
    if w.len() != want {
        return Err(FlError::LengthMismatch(w.len(), want));
    }
    Ok(())
}

/// Mean logistic loss.
pub fn training_loss(w: &WeightVector, data: &SyntheticDataset) -> Result<f64, FlError> {
    if data.is_empty() {
        return Err(FlError::EmptyShard);
    }
    check_dims(w, data)?;
    let total: f64 = (0..data.len())
        .map(|i| {
            let z = logit(w, data.row(i));
            // log(1 + e^z) - y z, written to avoid overflow
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - f64::from(data.labels[i]) * z
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Full-batch gradient descent on the logistic loss, starting from `global`.
pub fn local_train(
    global: &WeightVector,
    shard: &SyntheticDataset,
    epochs: u32,
    lr: f64,
) -> Result<WeightVector, FlError> {
    if shard.is_empty() {
        return Err(FlError::EmptyShard);
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(FlError::InvalidParam(format!("learning rate {lr}")));
    }
    check_dims(global, shard)?;
    let d = shard.dim as usize;
    let n = shard.len() as f64;
    let mut w = global.0.clone();
    let mut grad = vec![0.0; d + 1];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..shard.len() {
            let x = shard.row(i);
            let err = sigmoid(logit(&w, x)) - f64::from(shard.labels[i]);
            for (g, xj) in grad.iter_mut().zip(x) {
                *g += err * xj;
            }
            grad[d] += err;
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= lr * g / n;
        }
    }
    Ok(WeightVector(w))
}

/// `w + N(0, eta^2)` per coordinate.
pub fn apply_dp_noise(w: &WeightVector, eta: f64, rng: &mut impl Rng) -> WeightVector {
    if eta <= 0.0 {
        return w.clone();
    }
    let normal = Normal::new(0.0, eta).expect("eta is positive and finite");
    WeightVector(w.iter().map(|v| v + normal.sample(rng)).collect())
}

/// Classification accuracy. A sample is predicted positive when its logit is
/// strictly positive.
pub fn measure_utility(w: &WeightVector, validation: &SyntheticDataset) -> Result<f64, FlError> {
    if validation.is_empty() {
        return Err(FlError::EmptyValidation);
    }
    check_dims(w, validation)?;
    let correct = (0..validation.len())
        .filter(|&i| {
            let predicted = u8::from(logit(w, validation.row(i)) > 0.0);
            predicted == validation.labels[i]
        })
        .count();
    Ok(correct as f64 / validation.len() as f64)
}
