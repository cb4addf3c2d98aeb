use num::{BigInt, BigRational, ToPrimitive};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;

fn small_task() -> SyntheticTask {
    let params = DatasetParams {
        dim: 8,
        train_samples: 200,
        validation_samples: 400,
        separation: 4.0,
    };
    SyntheticTask::generate(&params, 7).unwrap()
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn rational_aggregate(models: &[WeightVector], scores: &[f64]) -> Vec<f64> {
    let total: BigRational = scores.iter().map(|s| exact(*s)).sum();
    (0..models[0].len())
        .map(|j| {
            let num: BigRational = models
                .iter()
                .zip(scores)
                .map(|(w, s)| exact(*s) * exact(w[j]))
                .sum();
            (num / &total).to_f64().unwrap()
        })
        .collect()
}

#[test]
fn dataset_is_deterministic_and_balanced() {
    let a = small_task();
    let b = small_task();
    assert_eq!(a, b);
    assert_eq!(a.train.len(), 200);
    let positives = a.train.labels.iter().filter(|&&l| l == 1).count();
    assert_eq!(positives, 100);
    let norm: f64 = a.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    let other = SyntheticTask::generate(&DatasetParams { dim: 8, train_samples: 200, validation_samples: 400, separation: 4.0 }, 8).unwrap();
    assert_ne!(a.train, other.train);
}

#[test]
fn shards_partition_rows() {
    let t = small_task();
    let shards = t.train.shards(3);
    assert_eq!(shards.iter().map(|s| s.len()).sum::<usize>(), t.train.len());
    assert_eq!(shards[0].row(0), t.train.row(0));
}

#[test]
fn training_lowers_loss_and_raises_accuracy() {
    let t = small_task();
    let w0 = WeightVector::zeros(9);
    let w = local_train(&w0, &t.train, 30, 0.5).unwrap();
    assert!(training_loss(&w, &t.train).unwrap() < training_loss(&w0, &t.train).unwrap());
    let acc = measure_utility(&w, &t.validation).unwrap();
    // Bayes accuracy at separation 4 is Phi(2) ~ 0.977
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn zero_epochs_is_identity() {
    let t = small_task();
    let w = WeightVector(vec![0.3; 9]);
    assert_eq!(local_train(&w, &t.train, 0, 0.5).unwrap(), w);
}

#[test]
fn error_cases() {
    let t = small_task();
    let empty = t.train.slice(0, 0);
    let w = WeightVector::zeros(9);
    assert_eq!(local_train(&w, &empty, 1, 0.5), Err(FlError::EmptyShard));
    assert_eq!(measure_utility(&w, &empty), Err(FlError::EmptyValidation));
    assert_eq!(
        measure_utility(&WeightVector::zeros(3), &t.validation),
        Err(FlError::LengthMismatch(3, 9))
    );
    assert_eq!(aggregate(&[], &[]), Err(FlError::NoModels));
    assert_eq!(aggregate(&[w.clone()], &[0.0]), Err(FlError::AllZeroScores));
    assert_eq!(aggregate(&[w.clone()], &[1.0, 2.0]), Err(FlError::LengthMismatch(1, 2)));
}

#[test]
fn utility_examples() {
    // single feature, threshold at zero
    let ds = SyntheticDataset {
        dim: 1,
        features: vec![-2.0, -1.0, 1.0, 2.0],
        labels: vec![0, 0, 1, 1],
    };
    assert_eq!(measure_utility(&WeightVector(vec![1.0, 0.0]), &ds).unwrap(), 1.0);
    assert_eq!(measure_utility(&WeightVector(vec![-1.0, 0.0]), &ds).unwrap(), 0.0);
    assert_eq!(measure_utility(&WeightVector(vec![1.0, -1.5]), &ds).unwrap(), 0.75);
    // logit exactly zero predicts negative
    assert_eq!(measure_utility(&WeightVector(vec![0.0, 0.0]), &ds).unwrap(), 0.5);
}

#[test]
fn aggregate_example() {
    let a = WeightVector(vec![1.0, 0.0]);
    let b = WeightVector(vec![0.0, 1.0]);
    let g = aggregate(&[a.clone(), b.clone()], &[0.75, 0.25]).unwrap();
    assert_eq!(g.0, vec![0.75, 0.25]);
    let m = aggregate_or_mean(&[a, b], &[0.0, 0.0]).unwrap();
    assert_eq!(m.0, vec![0.5, 0.5]);
}

#[test]
fn aggregate_weighted_and_equal_scores() {
    let w = [WeightVector(vec![1.0, 1.0]), WeightVector(vec![3.0, 3.0])];
    assert_eq!(aggregate(&w, &[1.0, 3.0]).unwrap().0, vec![2.5, 2.5]);
    assert_eq!(aggregate(&w, &[1.0, 1.0]).unwrap().0, vec![2.0, 2.0]);
}

#[test]
fn small_noise_keeps_accuracy() {
    let t = SyntheticTask::generate(&DatasetParams::default(), 5).unwrap();
    let tp = TrainingParams::default();
    let w = local_train(&WeightVector::zeros(t.train.dim as usize + 1), &t.train, tp.epochs, tp.learning_rate).unwrap();
    let clean = measure_utility(&w, &t.validation).unwrap();
    let mut rng = stream(5, "noise", &[]);
    let noisy = measure_utility(&apply_dp_noise(&w, 0.01, &mut rng), &t.validation).unwrap();
    assert!((clean - noisy).abs() <= 0.05, "{clean} vs {noisy}");
}

#[test]
fn random_weights_score_near_chance() {
    use rand::Rng;
    let t = SyntheticTask::generate(&DatasetParams::default(), 9).unwrap();
    let m = t.train.dim as usize + 1;
    let mean = (0..100u64)
        .map(|seed| {
            let mut rng = stream(seed, "random-weights", &[]);
            let w = WeightVector((0..m).map(|_| rng.random_range(-MALICIOUS_RANGE..=MALICIOUS_RANGE)).collect());
            measure_utility(&w, &t.validation).unwrap()
        })
        .sum::<f64>()
        / 100.0;
    assert!((0.4..=0.6).contains(&mean), "mean {mean}");
}

#[test]
fn two_point_loss_falls_every_epoch() {
    let ds = SyntheticDataset {
        dim: 1,
        features: vec![1.0, -1.0],
        labels: vec![1, 0],
    };
    let mut w = WeightVector::zeros(2);
    let mut loss = training_loss(&w, &ds).unwrap();
    for _ in 0..200 {
        w = local_train(&w, &ds, 1, 0.5).unwrap();
        let next = training_loss(&w, &ds).unwrap();
        assert!(next < loss, "{next} >= {loss}");
        loss = next;
    }
}

#[test]
fn dot2_recovers_cancelled_terms() {
    let xs = [(1e16, 1.0), (1.0, 1.0), (-1e16, 1.0)];
    assert_eq!(dot2(xs), 1.0);
    assert_eq!(xs.iter().map(|(a, b)| a * b).sum::<f64>(), 0.0);
}

#[test]
fn dp_noise_norm_matches_chi_square() {
    let eta = 0.01;
    let m = 64;
    let trials = 400;
    let w = WeightVector::zeros(m);
    let mut rng = stream(11, "noise-test", &[]);
    // sum of squared standardized draws is chi-square with m * trials dof
    let stat: f64 = (0..trials)
        .map(|_| {
            apply_dp_noise(&w, eta, &mut rng)
                .iter()
                .map(|v| (v / eta).powi(2))
                .sum::<f64>()
        })
        .sum();
    let chi = ChiSquared::new((m * trials) as f64).unwrap();
    let p = chi.cdf(stat);
    assert!(p > 0.001 && p < 0.999, "p = {p}");
}

#[test]
fn streams_are_independent_of_order() {
    use rand::Rng;
    let a: u64 = stream(1, "x", &[b"a"]).random();
    let _ = stream(1, "x", &[b"b"]).random::<u64>();
    let a2: u64 = stream(1, "x", &[b"a"]).random();
    assert_eq!(a, a2);
    let b: u64 = stream(1, "x", &[b"ab"]).random();
    let c: u64 = stream(1, "x", &[b"a", b"b"]).random();
    assert_ne!(b, c);
}

#[test]
fn trainer_behaviors() {
    let t = small_task();
    let g = WeightVector::zeros(9);
    let tp = TrainingParams::default();
    let mut rng = stream(3, "beh", &[]);
    let m = trainer_update(&BehaviorProfile::malicious(), &g, &t.train, &tp, &mut rng)
        .unwrap()
        .unwrap();
    assert!(m.iter().all(|v| v.abs() <= MALICIOUS_RANGE + 0.1));
    let always = BehaviorProfile::lazy(1.0);
    assert_eq!(trainer_update(&always, &g, &t.train, &tp, &mut rng).unwrap(), None);
    let good = trainer_update(&BehaviorProfile::good(), &g, &t.train, &tp, &mut rng)
        .unwrap()
        .unwrap();
    assert!(measure_utility(&good, &t.validation).unwrap() > 0.9);
    assert!(BehaviorProfile { skip_rate: 0.5, ..BehaviorProfile::good() }.validate().is_err());
}

#[test]
fn weight_vector_roundtrips() {
    let w = WeightVector(vec![1.5, -0.0, f64::MIN_POSITIVE]);
    let bytes = w.to_canonical_bytes();
    assert_eq!(WeightVector::from_canonical_bytes(&bytes).unwrap(), w);
}

fn models_and_scores() -> impl Strategy<Value = (Vec<WeightVector>, Vec<f64>)> {
    (1usize..6, 1usize..5).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(prop::collection::vec(-1e3f64..1e3, m).prop_map(WeightVector), n),
            prop::collection::vec(0.0f64..1.0, n),
        )
    })
}

proptest! {
    #[test]
    fn aggregate_matches_exact_rational((models, mut scores) in models_and_scores()) {
        scores[0] += 1e-3;
        let got = aggregate(&models, &scores).unwrap();
        let want = rational_aggregate(&models, &scores);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn aggregate_stays_in_hull((models, mut scores) in models_and_scores()) {
        scores[0] += 1e-3;
        let got = aggregate(&models, &scores).unwrap();
        for j in 0..got.len() {
            let lo = models.iter().map(|w| w[j]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|w| w[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got[j] >= lo && got[j] <= hi);
        }
    }

    #[test]
    fn aggregate_is_scale_invariant((models, mut scores) in models_and_scores(), k in 0.5f64..4.0) {
        scores[0] += 1e-3;
        let a = aggregate(&models, &scores).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
        let b = aggregate(&models, &scaled).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn zero_scores_have_no_effect((models, mut scores) in models_and_scores(), extra in prop::collection::vec(-5f64..5.0, 1..=64)) {
        scores[0] = scores[0].max(0.01);
        let m = models[0].len();
        let mut more = models.clone();
        more.push(WeightVector(extra.iter().cycle().take(m).copied().collect()));
        let mut s2 = scores.clone();
        s2.push(0.0);
        prop_assert_eq!(aggregate(&more, &s2).unwrap(), aggregate(&models, &scores).unwrap());
    }

    #[test]
    fn utility_in_unit_interval(w in prop::collection::vec(-5f64..5.0, 9)) {
        let t = small_task();
        let u = measure_utility(&WeightVector(w), &t.validation).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
    }
}

#[test]
fn rational_helper_sanity() {
    let r = BigRational::new(BigInt::from(1), BigInt::from(3));
    assert!((r.to_f64().unwrap() - 1.0 / 3.0).abs() < 1e-16);
}
