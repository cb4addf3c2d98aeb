//! Decentralized oracle network: independent evaluation of submitted
//! models, score quorum, cross-verified aggregation and the on-chain
//! reputation refresh that closes a task.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::tx::{Call, ObjectiveRepArgs, TaskTrainer};
use crate::chain::{AccountId, TxError};
use crate::codec::Canonical;
use crate::contracts::{quorum_threshold, ContractError, Task, TaskState, WorldState};
use crate::fl::{self, FlError, SyntheticDataset, WeightVector};
use crate::par::{self, Execution};
use crate::reputation::{self, ReputationError};
use crate::store::{BlobStore, Cid, StoreError};

/// A report is an outlier for a trainer when its score is further than this
/// from the median of all reports for that trainer.
pub const OUTLIER_DEVIATION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("blob {0} is referenced on chain but missing from the store")]
    MissingBlob(Cid),
    #[error(transparent)]
    Store(StoreError),
    #[error("{have} reports, quorum needs {need}")]
    QuorumNotMet { have: usize, need: usize },
    #[error("honest nodes computed different aggregates for task {task_id} round {round}")]
    CidDisagreement { task_id: u64, round: u32 },
    #[error("task {0} is not completed")]
    TaskNotCompleted(u64),
    #[error("task {task_id} round {round} is not ready: {reason}")]
    NotReady { task_id: u64, round: u32, reason: &'static str },
    #[error("no honest oracle node")]
    NoHonestNode,
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Reputation(#[from] ReputationError),
}

impl From<StoreError> for OracleError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(cid) => OracleError::MissingBlob(cid),
            other => OracleError::Store(other),
        }
    }
}

/// Why a transaction did not take effect.
#[derive(Debug, Error)]
pub enum ChainError {
    #[error("refused: {0}")]
    Refused(#[from] TxError),
    #[error("reverted: {0}")]
    Reverted(#[from] ContractError),
    #[error("{0}")]
    Layer(String),
}

/// Where oracle transactions go. Implemented by the L1 and L2 drivers.
pub trait Chain {
    /// State with every accepted transaction applied.
    fn view(&self) -> &WorldState;
    fn send(&mut self, sender: AccountId, call: Call) -> Result<(), ChainError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNode {
    pub id: AccountId,
    pub honest: bool,
    /// Offset a dishonest node adds to every score, and to every aggregate
    /// coordinate it publishes as designated aggregator.
    pub perturbation: f64,
}

impl OracleNode {
    pub fn honest(id: AccountId) -> Self {
        Self {
            id,
            honest: true,
            perturbation: 0.0,
        }
    }

    pub fn dishonest(id: AccountId, perturbation: f64) -> Self {
        Self {
            id,
            honest: false,
            perturbation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub node: AccountId,
    pub task_id: u64,
    pub round: u32,
    pub scores: BTreeMap<AccountId, f64>,
    /// Distance of each local model to the global model it started from.
    pub distances: BTreeMap<AccountId, f64>,
}

/// Global model a round's trainers started from.
fn round_base(task: &Task, round: u32) -> Cid {
    match round {
        0 => task.model_cid,
        r => task.global_models.get(r as usize - 1).copied().unwrap_or(task.model_cid),
    }
}

/// Submitted models of a round, by trainer.
pub fn round_models(
    task_id: u64,
    round: u32,
    store: &BlobStore,
    state: &WorldState,
) -> Result<BTreeMap<AccountId, WeightVector>, OracleError> {
    state
        .submitters(task_id, round)
        .into_iter()
        .map(|t| {
            let cid = state.submissions[&(task_id, round, t)];
            Ok((t, store.get_value::<WeightVector>(&cid)?))
        })
        .collect()
}

pub fn evaluate_round(
    node: &OracleNode,
    task_id: u64,
    round: u32,
    store: &BlobStore,
    state: &WorldState,
) -> Result<EvaluationReport, OracleError> {
    let task = state.task(task_id)?;
    let validation: SyntheticDataset = store.get_value(&task.validation_cid)?;
    let base: WeightVector = store.get_value(&round_base(task, round))?;
    let mut scores = BTreeMap::new();
    let mut distances = BTreeMap::new();
    for (trainer, w) in round_models(task_id, round, store, state)? {
        let utility = fl::measure_utility(&w, &validation)?;
        let score = if node.honest {
            utility
        } else {
            (utility + node.perturbation).clamp(0.0, 1.0)
        };
        scores.insert(trainer, score);
        distances.insert(trainer, reputation::euclidean_distance(&w, &base)?);
    }
    Ok(EvaluationReport {
        node: node.id,
        task_id,
        round,
        scores,
        distances,
    })
}

/// Every node's report, in node order.
pub fn evaluate_all(
    nodes: &[OracleNode],
    task_id: u64,
    round: u32,
    store: &BlobStore,
    state: &WorldState,
    exec: Execution,
) -> Result<Vec<EvaluationReport>, OracleError> {
    par::map(exec, nodes, |n| evaluate_round(n, task_id, round, store, state))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuorumResult {
    pub scores: BTreeMap<AccountId, f64>,
    /// Nodes with at least one outlying score.
    pub flagged: BTreeSet<AccountId>,
    /// Nodes vouching for the result.
    pub attesters: BTreeSet<AccountId>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Merges reports into one score per trainer. Robust mode drops scores more
/// than [`OUTLIER_DEVIATION`] from the per-trainer median before averaging.
pub fn quorum_scores(
    reports: &[EvaluationReport],
    n_nodes: usize,
    robust: bool,
) -> Result<QuorumResult, OracleError> {
    let need = quorum_threshold(n_nodes).max(1);
    if reports.len() < need {
        return Err(OracleError::QuorumNotMet {
            have: reports.len(),
            need,
        });
    }
    let mut reports: Vec<&EvaluationReport> = reports.iter().collect();
    reports.sort_by_key(|r| r.node);
    let trainers: BTreeSet<AccountId> = reports.iter().flat_map(|r| r.scores.keys().copied()).collect();
    let mut scores = BTreeMap::new();
    let mut flagged = BTreeSet::new();
    for t in trainers {
        let votes: Vec<(AccountId, f64)> = reports
            .iter()
            .filter_map(|r| r.scores.get(&t).map(|s| (r.node, *s)))
            .collect();
        let mut sorted: Vec<f64> = votes.iter().map(|v| v.1).collect();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let inliers: Vec<f64> = votes
            .iter()
            .filter(|(node, s)| {
                let outlier = (s - med).abs() > OUTLIER_DEVIATION;
                if outlier {
                    flagged.insert(*node);
                }
                !outlier
            })
            .map(|v| v.1)
            .collect();
        let used = if robust && !inliers.is_empty() {
            inliers
        } else {
            votes.iter().map(|v| v.1).collect()
        };
        scores.insert(t, used.iter().sum::<f64>() / used.len() as f64);
    }
    let attesters: BTreeSet<AccountId> = reports
        .iter()
        .map(|r| r.node)
        .filter(|n| !robust || !flagged.contains(n))
        .collect();
    if attesters.len() < need {
        return Err(OracleError::QuorumNotMet {
            have: attesters.len(),
            need,
        });
    }
    Ok(QuorumResult {
        scores,
        flagged,
        attesters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationOutcome {
    pub cid: Cid,
    /// Node whose aggregate was adopted; it submits the global model.
    pub aggregator: AccountId,
    pub designated: AccountId,
    /// Aggregate published by a designated node that honest checkers
    /// refused.
    pub rejected: Option<Cid>,
}

/// Score-weighted aggregate of a round as one node computes it.
fn node_aggregate(
    task: &Task,
    round: u32,
    state: &WorldState,
    store: &BlobStore,
) -> Result<WeightVector, OracleError> {
    let models = round_models(task.task_id, round, store, state)?;
    if models.is_empty() {
        // nobody submitted; carry the previous global model forward
        return Ok(store.get_value::<WeightVector>(&round_base(task, round))?);
    }
    let (ws, ss): (Vec<WeightVector>, Vec<f64>) = models
        .into_iter()
        .map(|(t, w)| (w, state.scores[&(task.task_id, round, t)]))
        .unzip();
    Ok(fl::aggregate_or_mean(&ws, &ss)?)
}

/// Node designated to aggregate a round. Rotates round-robin.
pub fn designated_aggregator(nodes: &[OracleNode], task_id: u64, round: u32) -> usize {
    ((task_id + u64::from(round)) % nodes.len().max(1) as u64) as usize
}

/// Aggregates the round's local models with the scores recorded on chain,
/// cross-checked by every honest node. Writes the adopted model to the store.
pub fn run_aggregation(
    nodes: &[OracleNode],
    task_id: u64,
    round: u32,
    state: &WorldState,
    store: &mut BlobStore,
) -> Result<AggregationOutcome, OracleError> {
    let task = state.task(task_id)?;
    if task.state != TaskState::Aggregating || task.current_round != round {
        return Err(OracleError::NotReady {
            task_id,
            round,
            reason: "scores not recorded",
        });
    }
    let designated_ix = designated_aggregator(nodes, task_id, round);
    let designated = nodes[designated_ix];
    // every honest node recomputes the aggregate independently
    let honest: Vec<WeightVector> = nodes
        .iter()
        .filter(|n| n.honest)
        .map(|_| node_aggregate(task, round, state, store))
        .collect::<Result<_, _>>()?;
    let Some(global) = honest.first().cloned() else {
        return Err(OracleError::NoHonestNode);
    };
    let honest_cid = Cid::of(&global.to_canonical_bytes());
    if honest.iter().any(|w| Cid::of(&w.to_canonical_bytes()) != honest_cid) {
        return Err(OracleError::CidDisagreement { task_id, round });
    }

    let (aggregator, rejected) = if designated.honest {
        (designated.id, None)
    } else {
        let tampered = WeightVector(global.iter().map(|v| v + designated.perturbation).collect());
        let tampered_cid = Cid::of(&tampered.to_canonical_bytes());
        let rejected = (tampered_cid != honest_cid).then_some(tampered_cid);
        // next honest node in rotation order takes over
        let fallback = (1..=nodes.len())
            .map(|k| nodes[(designated_ix + k) % nodes.len()])
            .find(|n| n.honest)
            .expect("an honest node exists");
        (fallback.id, rejected)
    };
    let cid = store.put_value(&global)?;
    debug_assert_eq!(cid, honest_cid);
    Ok(AggregationOutcome {
        cid,
        aggregator,
        designated: designated.id,
        rejected,
    })
}

/// Per-trainer inputs to the objective reputation of a completed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistances {
    pub trainer: AccountId,
    pub distance: f64,
    pub normalized: f64,
}

/// Distance of each trainer's latest local model to the final global model.
/// Trainers that never submitted are assigned the largest distance.
pub fn final_distances(
    task_id: u64,
    store: &BlobStore,
    state: &WorldState,
) -> Result<Vec<TaskDistances>, OracleError> {
    let task = state.task(task_id)?;
    let final_cid = task.latest_model();
    let global: WeightVector = store.get_value(&final_cid)?;
    let mut raw: Vec<(AccountId, Option<f64>)> = Vec::with_capacity(task.trainers.len());
    for t in &task.trainers {
        let latest = (0..task.total_rounds)
            .rev()
            .find_map(|r| state.submissions.get(&(task_id, r, *t)));
        let d = match latest {
            Some(cid) => Some(reputation::euclidean_distance(
                &store.get_value::<WeightVector>(cid)?,
                &global,
            )?),
            None => None,
        };
        raw.push((*t, d));
    }
    let max = raw.iter().filter_map(|r| r.1).fold(0.0f64, f64::max);
    let filled: Vec<f64> = raw.iter().map(|r| r.1.unwrap_or(max)).collect();
    let mut normalized = reputation::normalize_distances(&filled);
    for (n, r) in normalized.iter_mut().zip(&raw) {
        if r.1.is_none() {
            *n = 1.0;
        }
    }
    Ok(raw
        .iter()
        .zip(filled.iter().zip(normalized))
        .map(|((t, _), (d, n))| TaskDistances {
            trainer: *t,
            distance: *d,
            normalized: n,
        })
        .collect())
}

/// Submits the objective, subjective and overall reputation updates of a
/// completed task, in that order, and returns each trainer's new reputation.
pub fn trigger_reputation_update(
    chain: &mut dyn Chain,
    sender: AccountId,
    task_id: u64,
    store: &BlobStore,
) -> Result<Vec<(AccountId, f64)>, OracleError> {
    let state = chain.view();
    let task = state.task(task_id)?;
    if task.state != TaskState::Completed {
        return Err(OracleError::TaskNotCompleted(task_id));
    }
    let distances = final_distances(task_id, store, state)?;
    let normalized: Vec<f64> = distances.iter().map(|d| d.normalized).collect();
    let tau = state.config.reputation.tau_for(&normalized);
    for d in &distances {
        chain.send(
            sender,
            Call::CalcObjectiveRep(ObjectiveRepArgs {
                task_id,
                trainer: d.trainer,
                distance: d.distance,
                normalized_distance: d.normalized,
                tau,
            }),
        )?;
    }
    for d in &distances {
        chain.send(sender, Call::CalcSubjectiveRep(TaskTrainer { task_id, trainer: d.trainer }))?;
    }
    for d in &distances {
        chain.send(sender, Call::CalcNewRep(TaskTrainer { task_id, trainer: d.trainer }))?;
    }
    let state = chain.view();
    Ok(distances
        .iter()
        .map(|d| (d.trainer, state.reputation_of(&d.trainer)))
        .collect())
}
