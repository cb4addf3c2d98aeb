//! Score-weighted model averaging, `w_g = Σ s_i w_i / Σ s_i`.
//!
//! Sums use error-free transformations (compensated dot product), so each
//! coordinate is as accurate as if computed in twice the working precision
//! and rounded once.

use super::{FlError, WeightVector};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Compensated dot product.
pub fn dot2(xs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for (x, y) in xs {
        let (p, ep) = two_prod(x, y);
        let (t, es) = two_sum(s, p);
        s = t;
        c += ep + es;
    }
    s + c
}

/// Weighted mean of `models` by `scores`. Models with zero score drop out.
pub fn aggregate(models: &[WeightVector], scores: &[f64]) -> Result<WeightVector, FlError> {
    if models.is_empty() {
        return Err(FlError::NoModels);
    }
    if models.len() != scores.len() {
        return Err(FlError::LengthMismatch(models.len(), scores.len()));
    }
    let m = models[0].len();
    if let Some(bad) = models.iter().find(|w| w.len() != m) {
        return Err(FlError::LengthMismatch(bad.len(), m));
    }
    if scores.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(FlError::InvalidParam("scores must be finite and non-negative".into()));
    }
    let total = dot2(scores.iter().map(|s| (*s, 1.0)));
    if total <= 0.0 {
        return Err(FlError::AllZeroScores);
    }
    let live: Vec<(f64, &WeightVector)> = scores
        .iter()
        .copied()
        .zip(models)
        .filter(|(s, _)| *s > 0.0)
        .collect();
    let out = (0..m)
        .map(|j| {
            let v = dot2(live.iter().map(|(s, w)| (*s, w[j]))) / total;
            // keep rounding from stepping outside the convex hull
            let (lo, hi) = live
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, w)| {
                    (lo.min(w[j]), hi.max(w[j]))
                });
            v.clamp(lo, hi)
        })
        .collect();
    Ok(WeightVector(out))
}

/// [`aggregate`], falling back to the plain mean when every score is zero.
pub fn aggregate_or_mean(models: &[WeightVector], scores: &[f64]) -> Result<WeightVector, FlError> {
    match aggregate(models, scores) {
        Err(FlError::AllZeroScores) => aggregate(models, &vec![1.0; models.len()]),
        other => other,
    }
}
