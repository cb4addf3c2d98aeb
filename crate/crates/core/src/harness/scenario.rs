use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::GasMode;
use crate::fl::{BehaviorKind, DatasetParams, TrainingParams, DEFAULT_NOISE};
use crate::par::Execution;
use crate::reputation::ReputationParams;
use crate::rollup::DEFAULT_CAPACITY;

/// Which layer carries the workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub label: String,
    pub kind: BehaviorKind,
    /// Drawn from the lazy range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_rate: Option<f64>,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

impl TrainerSpec {
    pub fn new(label: &str, kind: BehaviorKind) -> Self {
        Self {
            label: label.into(),
            kind,
            skip_rate: None,
            noise_scale: DEFAULT_NOISE,
        }
    }
}

/// A group of identical tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub repeat: u32,
    pub rounds: u32,
    /// Trainers selected per task.
    pub trainers: u32,
    pub reward: u64,
    pub dataset: DatasetParams,
    pub training: TrainingParams,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            repeat: 12,
            rounds: 5,
            trainers: 3,
            reward: 1_000,
            dataset: DatasetParams::default(),
            training: TrainingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub count: usize,
    /// The first `dishonest` nodes misreport.
    pub dishonest: usize,
    pub perturbation: f64,
    /// Median outlier filter on; off gives the plain mean.
    pub robust: bool,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            count: 4,
            dishonest: 0,
            perturbation: -0.5,
            robust: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorSpec {
    pub count: usize,
    /// Validators that withhold votes.
    pub byzantine: usize,
    pub max_txs_per_block: usize,
}

impl Default for ValidatorSpec {
    fn default() -> Self {
        Self {
            count: 4,
            byzantine: 0,
            max_txs_per_block: 100,
        }
    }
}

/// Queueing model parameters for throughput sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputSpec {
    pub function: String,
    /// Peak L1 throughput of `function`, tx/s.
    pub capacity_tps: f64,
    /// L1 throughput of batch-commit transactions, tx/s.
    pub batch_commit_tps: f64,
    /// Send rate beyond which the ledger congests, as a multiple of capacity.
    pub knee: f64,
    pub block_interval_s: f64,
    pub duration_s: f64,
    pub send_rates: Vec<f64>,
}

impl Default for ThroughputSpec {
    fn default() -> Self {
        Self {
            function: "submitLocalModel".into(),
            capacity_tps: 180.0,
            batch_commit_tps: 150.0,
            knee: 2.0,
            block_interval_s: 1.0,
            duration_s: 60.0,
            send_rates: vec![40.0, 80.0, 160.0, 320.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub validators: ValidatorSpec,
    pub oracles: OracleSpec,
    pub trainers: Vec<TrainerSpec>,
    pub publishers: usize,
    pub tasks: Vec<TaskSpec>,
    pub reputation: ReputationParams,
    pub gas_mode: GasMode,
    pub rollup_capacity: usize,
    pub routing: Routing,
    pub throughput: ThroughputSpec,
    pub execution: Execution,
    /// Balance every trainer starts with.
    pub trainer_balance: u64,
    pub publisher_balance: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 42,
            validators: ValidatorSpec::default(),
            oracles: OracleSpec::default(),
            trainers: vec![
                TrainerSpec::new("good", BehaviorKind::Good),
                TrainerSpec::new("malicious", BehaviorKind::Malicious),
                TrainerSpec::new("lazy", BehaviorKind::Lazy),
            ],
            publishers: 1,
            tasks: vec![TaskSpec::default()],
            reputation: ReputationParams::default(),
            gas_mode: GasMode::Table,
            rollup_capacity: DEFAULT_CAPACITY,
            routing: Routing::L2,
            throughput: ThroughputSpec::default(),
            execution: Execution::Parallel,
            trainer_balance: 100_000,
            publisher_balance: 1_000_000,
        }
    }
}

/// One problem with one field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldIssue {
    pub field: String,
    pub problem: String,
}

/// All problems found in a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigInvalid(pub Vec<FieldIssue>);

impl fmt::Display for ConfigInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario:")?;
        for i in &self.0 {
            write!(f, "\n  {}: {}", i.field, i.problem)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigInvalid {}

impl Scenario {
    /// Task specs expanded into one entry per task.
    pub fn task_list(&self) -> Vec<&TaskSpec> {
        self.tasks
            .iter()
            .flat_map(|t| std::iter::repeat_n(t, t.repeat as usize))
            .collect()
    }

    pub fn task_count(&self) -> usize {
        self.tasks.iter().map(|t| t.repeat as usize).sum()
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigInvalid> {
        serde_json::from_str(text).map_err(|e| {
            ConfigInvalid(vec![FieldIssue {
                field: format!("line {} column {}", e.line(), e.column()),
                problem: e.to_string(),
            }])
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigInvalid> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigInvalid(vec![FieldIssue {
                field: path.display().to_string(),
                problem: e.to_string(),
            }])
        })?;
        let s = Self::from_json(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let mut issues = Vec::new();
        let mut bad = |field: String, problem: String| issues.push(FieldIssue { field, problem });

        if self.validators.count == 0 {
            bad("validators.count".into(), "at least one validator is required".into());
        }
        if self.validators.byzantine * 3 >= self.validators.count.max(1) {
            bad(
                "validators.byzantine".into(),
                format!("{} of {} is not below one third", self.validators.byzantine, self.validators.count),
            );
        }
        if self.validators.max_txs_per_block == 0 {
            bad("validators.max_txs_per_block".into(), "must be positive".into());
        }
        if self.oracles.count == 0 {
            bad("oracles.count".into(), "at least one oracle node is required".into());
        }
        if self.oracles.dishonest * 3 >= self.oracles.count.max(1) {
            bad(
                "oracles.dishonest".into(),
                format!("{} of {} is not below one third", self.oracles.dishonest, self.oracles.count),
            );
        }
        if !self.oracles.perturbation.is_finite() {
            bad("oracles.perturbation".into(), "must be finite".into());
        }
        if self.publishers == 0 {
            bad("publishers".into(), "at least one publisher is required".into());
        }
        let mut labels = BTreeSet::new();
        for (i, t) in self.trainers.iter().enumerate() {
            let field = |name: &str| format!("trainers[{i}].{name}");
            if t.label.is_empty() {
                bad(field("label"), "must not be empty".into());
            }
            if !labels.insert(t.label.as_str()) {
                bad(field("label"), format!("duplicate label {:?}", t.label));
            }
            if let Some(r) = t.skip_rate {
                if !(0.0..=1.0).contains(&r) {
                    bad(field("skip_rate"), format!("{r} outside [0,1]"));
                }
                if t.kind == BehaviorKind::Good && r != 0.0 {
                    bad(field("skip_rate"), "good trainers never skip".into());
                }
            }
            if !(t.noise_scale >= 0.0 && t.noise_scale.is_finite()) {
                bad(field("noise_scale"), format!("{} must be finite and non-negative", t.noise_scale));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let field = |name: &str| format!("tasks[{i}].{name}");
            if t.rounds == 0 {
                bad(field("rounds"), "must be at least 1".into());
            }
            if t.trainers == 0 {
                bad(field("trainers"), "must be at least 1".into());
            }
            if t.repeat > 0 && t.trainers as usize > self.trainers.len() {
                bad(
                    field("trainers"),
                    format!("{} requested, {} registered", t.trainers, self.trainers.len()),
                );
            }
            if t.reward > self.publisher_balance {
                bad(field("reward"), "exceeds the publisher balance".into());
            }
            if let Err(e) = t.dataset.validate() {
                bad(field("dataset"), e.to_string());
            }
            if t.dataset.train_samples < t.trainers as usize {
                bad(field("dataset.train_samples"), "fewer samples than trainers".into());
            }
            if !(t.training.learning_rate > 0.0 && t.training.learning_rate.is_finite()) {
                bad(field("training.learning_rate"), "must be positive".into());
            }
        }
        if let Err(e) = self.reputation.validate() {
            bad("reputation".into(), e.to_string());
        }
        if self.rollup_capacity == 0 {
            bad("rollup_capacity".into(), "must be positive".into());
        }
        let tp = &self.throughput;
        for (name, v) in [
            ("capacity_tps", tp.capacity_tps),
            ("batch_commit_tps", tp.batch_commit_tps),
            ("block_interval_s", tp.block_interval_s),
            ("duration_s", tp.duration_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad(format!("throughput.{name}"), format!("{v} must be positive"));
            }
        }
        if !(tp.knee >= 1.0 && tp.knee.is_finite()) {
            bad("throughput.knee".into(), format!("{} must be at least 1", tp.knee));
        }
        if tp.send_rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            bad("throughput.send_rates".into(), "rates must be finite and non-negative".into());
        }
        if crate::chain::Function::from_name(&tp.function).is_none() {
            bad("throughput.function".into(), format!("unknown function {:?}", tp.function));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigInvalid(issues))
        }
    }
}
