use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use autodfl::fl::{local_train, measure_utility, BehaviorKind, DatasetParams, SyntheticTask, WeightVector};
use autodfl::harness::{run_scenario, Scenario, TrainerSpec};
use autodfl::par::{self, Execution};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn name(e: Execution) -> &'static str {
    match e {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

/// Local training of one round for many trainers.
fn training(c: &mut Criterion) {
    let params = DatasetParams::default();
    let task = SyntheticTask::generate(&params, 1).unwrap();
    let shards = task.train.shards(16);
    let global = WeightVector::zeros(params.model_len());
    let mut g = c.benchmark_group("local_training_16");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name(mode)), &mode, |b, &mode| {
            b.iter(|| par::map(mode, &shards, |s| local_train(&global, s, 50, 1.0).unwrap()))
        });
    }
    g.finish();
}

/// Oracle-style evaluation of many models on one validation set.
fn evaluation(c: &mut Criterion) {
    let params = DatasetParams::default();
    let task = SyntheticTask::generate(&params, 2).unwrap();
    let models: Vec<WeightVector> = (0..32)
        .map(|i| WeightVector((0..params.model_len()).map(|j| ((i * 7 + j) % 11) as f64 - 5.0).collect()))
        .collect();
    let mut g = c.benchmark_group("evaluation_32");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name(mode)), &mode, |b, &mode| {
            b.iter(|| par::map(mode, &models, |w| measure_utility(w, &task.validation).unwrap()))
        });
    }
    g.finish();
}

/// A whole scenario with eight trainers per task.
fn scenario(c: &mut Criterion) {
    let mut base = Scenario::default();
    base.trainers
        .extend((0..5).map(|i| TrainerSpec::new(&format!("extra{i}"), BehaviorKind::Good)));
    base.tasks[0].repeat = 2;
    base.tasks[0].trainers = 8;
    let mut g = c.benchmark_group("scenario_2x8");
    g.sample_size(10);
    for mode in MODES {
        let mut s = base.clone();
        s.execution = mode;
        g.bench_function(name(mode), |b| b.iter(|| run_scenario(&s).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, training, evaluation, scenario);
criterion_main!(benches);
