//! Scenario runner: builds a network from a [`Scenario`], drives tasks end to
//! end through contracts, rollup, training and oracles, and collects metrics.

mod adversary;
mod driver;
mod metrics;
mod run;
mod scenario;
mod throughput;

use thiserror::Error;

use crate::chain::gas::GasError;
use crate::chain::tx::Transaction;
use crate::chain::{AccountId, Function, GasMode, GasSchedule, GasTable, GasUnits};
use crate::oracle::{ChainError, OracleError};
use crate::rollup::{session_gas, Batch, BatchPhase};

pub use adversary::{
    collusion, false_reporting, free_riding, sybil, whitewashing, Collusion, FalseReporting, FreeRiding, Sybil,
    Whitewashing,
};
pub use driver::Driver;
pub use metrics::{GasRow, MetricsFrame, RewardRow, ThroughputSample, TrajectoryPoint};
pub use run::{run_scenario, trainer_account, Participants, RoundAudit, Simulation, Trainer};
pub use scenario::{
    ConfigInvalid, FieldIssue, OracleSpec, Routing, Scenario, TaskSpec, ThroughputSpec, TrainerSpec,
    ValidatorSpec,
};
pub use throughput::{throughput_sweep, QueueModel, QueuePoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigInvalid),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Contract(#[from] crate::contracts::ContractError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Fl(#[from] crate::fl::FlError),
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

/// Replays every calibrated workload through the rollup pricing: one
/// posting session of `calls` transactions of a single function.
pub fn gas_table(scenario: &Scenario) -> Result<Vec<GasRow>, HarnessError> {
    if scenario.gas_mode != GasMode::Table {
        return Err(ConfigInvalid(vec![FieldIssue {
            field: "gas_mode".into(),
            problem: "the gas table replays calibrated rows and needs table mode".into(),
        }])
        .into());
    }
    let table = GasTable::from_env()?;
    let schedule = GasSchedule::new(scenario.gas_mode, table.clone());
    let mut out = Vec::new();
    for f in table.functions().collect::<Vec<_>>() {
        let rows = table.rows(f).ok_or(GasError::CalibrationMissing(f))?;
        for &calls in rows.keys() {
            out.push(replay_workload(&schedule, f, calls, scenario.rollup_capacity)?);
        }
    }
    if out.is_empty() {
        return Err(GasError::CalibrationMissing(Function::PublishTask).into());
    }
    Ok(out)
}

/// Gas of `calls` transactions of `function` posted in one session.
pub fn replay_workload(
    schedule: &GasSchedule,
    function: Function,
    calls: u64,
    capacity: usize,
) -> Result<GasRow, HarnessError> {
    // pricing reads only the function of each transaction
    let tx = Transaction {
        tx_id: [0; 32],
        sender: AccountId([0; 32]),
        nonce: 0,
        function,
        payload: Vec::new(),
        gas_used: GasUnits::ZERO,
    };
    let batches: Vec<Batch> = (0..calls)
        .collect::<Vec<_>>()
        .chunks(capacity.max(1))
        .enumerate()
        .map(|(i, chunk)| Batch {
            batch_no: i as u64 + 1,
            txs: vec![tx.clone(); chunk.len()],
            pre_state_root: [0; 32],
            post_state_root: [0; 32],
            proof: [0; 32],
            phase: BatchPhase::Sealed,
        })
        .collect();
    let (report, _) = session_gas(schedule, &batches)?;
    Ok(GasRow::from_report(&report))
}
