//! Native contract state machines: tasks and submissions, deposits and
//! settlement, reputation persistence and consortium membership.
//!
//! [`WorldState`] is the whole contract state. Transactions pass an
//! admission guard (registration, nonce, role and enrollment checks) before
//! they execute; a refused transaction leaves the state untouched. An
//! admitted transaction always bumps the sender's nonce, and either applies
//! in full or reverts with a [`ContractError`] and no other effect.

mod dsc;
mod rsc;
mod tsc;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::tx::{Call, Function, Transaction, TxError};
use crate::chain::{AccountId, Registry, RegistryError, Role};
use crate::codec::{Canonical, Hash32};
use crate::reputation::{ReputationParams, ReputationRecord};
use crate::store::Cid;
use crate::{canonical_enum, canonical_struct};

pub use dsc::Payout;
pub use tsc::quorum_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Selection,
    Training,
    Evaluating,
    Aggregating,
    Completed,
}

canonical_enum!(TaskState {
    Selection = 0,
    Training = 1,
    Evaluating = 2,
    Aggregating = 3,
    Completed = 4,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: u64,
    pub publisher: AccountId,
    pub model_cid: Cid,
    pub description_cid: Cid,
    pub validation_cid: Cid,
    /// Stored with the task; nothing gates on it.
    pub required_accuracy: f64,
    pub total_rounds: u32,
    pub required_trainers: u32,
    pub reward: u64,
    pub trainers: Vec<AccountId>,
    pub current_round: u32,
    pub state: TaskState,
    /// Global model per finalized round.
    pub global_models: Vec<Cid>,
    pub settled: bool,
}

canonical_struct!(Task {
    task_id,
    publisher,
    model_cid,
    description_cid,
    validation_cid,
    required_accuracy,
    total_rounds,
    required_trainers,
    reward,
    trainers,
    current_round,
    state,
    global_models,
    settled
});

impl Task {
    pub fn is_trainer(&self, id: &AccountId) -> bool {
        self.trainers.contains(id)
    }

    /// Latest global model: the last finalized round's, or the initial model.
    pub fn latest_model(&self) -> Cid {
        self.global_models.last().copied().unwrap_or(self.model_cid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DepositKind {
    PublisherReward,
    TrainerCollateral,
}

canonical_enum!(DepositKind {
    PublisherReward = 0,
    TrainerCollateral = 1,
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepositState {
    Locked,
    Released,
    Slashed,
}

canonical_enum!(DepositState {
    Locked = 0,
    Released = 1,
    Slashed = 2,
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deposit {
    pub owner: AccountId,
    pub task_id: u64,
    pub kind: DepositKind,
    pub amount: u64,
    pub state: DepositState,
}

canonical_struct!(Deposit {
    owner,
    task_id,
    kind,
    amount,
    state
});

/// Reputation inputs computed for one trainer in one task, filled in by the
/// three reputation calls in turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PendingRep {
    pub objective: Option<f64>,
    pub judged_good: Option<bool>,
    pub subjective: Option<f64>,
    pub local: Option<f64>,
    pub reputation: Option<f64>,
}

canonical_struct!(PendingRep {
    objective,
    judged_good,
    subjective,
    local,
    reputation
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractConfig {
    pub reputation: ReputationParams,
    /// Trainer collateral in basis points of the per-trainer reward share.
    pub collateral_bps: u64,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            reputation: ReputationParams::default(),
            collateral_bps: 1_000,
        }
    }
}

canonical_struct!(ContractConfig {
    reputation,
    collateral_bps
});

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractError {
    #[error("task {0} already exists")]
    DuplicateTask(u64),
    #[error("task {0} does not exist")]
    UnknownTask(u64),
    #[error("balance {have} below required {need}")]
    InsufficientFunds { need: u64, have: u64 },
    #[error("task {task_id} is {state:?}, {function} needs {expected:?}")]
    WrongState {
        task_id: u64,
        function: Function,
        state: TaskState,
        expected: TaskState,
    },
    #[error("task {0} is not in selection")]
    NotInSelection(u64),
    #[error("task {0} is not aggregating")]
    NotAggregating(u64),
    #[error("task {0} is not completed")]
    NotCompleted(u64),
    #[error("need {needed} training agents, {available} available")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("round {got} submitted, current round is {current}")]
    WrongRound { current: u32, got: u32 },
    #[error("{0:?} already submitted this round")]
    AlreadySubmitted(AccountId),
    #[error("{0:?} has no locked collateral")]
    NoCollateral(AccountId),
    #[error("collateral already locked")]
    AlreadyLocked,
    #[error("{0:?} is not enrolled in the task")]
    NotEnrolled(AccountId),
    #[error("{0:?} is not the task publisher")]
    NotPublisher(AccountId),
    #[error("{have} concurring evaluators, quorum needs {need}")]
    QuorumNotMet { have: usize, need: usize },
    #[error("score for {0:?}, who did not submit")]
    UnknownTrainerInScores(AccountId),
    #[error("no score for submitting trainer {0:?}")]
    MissingScore(AccountId),
    #[error("{0} already computed")]
    AlreadyComputed(&'static str),
    #[error("reputation inputs missing for {0:?}")]
    ReputationPending(AccountId),
    #[error("task {0} already settled")]
    AlreadySettled(u64),
    #[error("invalid argument: {0}")]
    InvalidArgs(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Initial accounts, balances and parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Genesis {
    pub accounts: Vec<(AccountId, BTreeSet<Role>)>,
    pub balances: BTreeMap<AccountId, u64>,
    pub config: ContractConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: ContractConfig,
    pub registry: Registry,
    pub nonces: BTreeMap<AccountId, u64>,
    pub balances: BTreeMap<AccountId, u64>,
    /// Total supply created at genesis.
    pub minted: u64,
    /// Slashed collateral, removed from circulation.
    pub burned: u64,
    pub tasks: BTreeMap<u64, Task>,
    pub deposits: BTreeMap<(u64, AccountId, DepositKind), Deposit>,
    pub submissions: BTreeMap<(u64, u32, AccountId), Cid>,
    pub scores: BTreeMap<(u64, u32, AccountId), f64>,
    pub reputation: BTreeMap<AccountId, ReputationRecord>,
    /// Interactions per publisher across all trainers.
    pub publisher_interactions: BTreeMap<AccountId, u64>,
    pub pending_rep: BTreeMap<(u64, AccountId), PendingRep>,
    pub payouts: BTreeMap<u64, Vec<Payout>>,
}

canonical_struct!(WorldState {
    config,
    registry,
    nonces,
    balances,
    minted,
    burned,
    tasks,
    deposits,
    submissions,
    scores,
    reputation,
    publisher_interactions,
    pending_rep,
    payouts
});

impl WorldState {
    pub fn genesis(g: &Genesis) -> Self {
        let registry = Registry::genesis(g.accounts.iter().cloned());
        let r_init = g.config.reputation.r_init;
        let reputation = g
            .accounts
            .iter()
            .filter(|(_, roles)| roles.contains(&Role::TrainingAgent))
            .map(|(id, _)| (*id, ReputationRecord::new(r_init)))
            .collect();
        Self {
            config: g.config,
            registry,
            nonces: BTreeMap::new(),
            balances: g.balances.clone(),
            minted: g.balances.values().sum(),
            burned: 0,
            tasks: BTreeMap::new(),
            deposits: BTreeMap::new(),
            submissions: BTreeMap::new(),
            scores: BTreeMap::new(),
            reputation,
            publisher_interactions: BTreeMap::new(),
            pending_rep: BTreeMap::new(),
            payouts: BTreeMap::new(),
        }
    }

    pub fn state_hash(&self) -> Hash32 {
        self.content_hash()
    }

    pub fn nonce(&self, id: &AccountId) -> u64 {
        self.nonces.get(id).copied().unwrap_or(0)
    }

    pub fn balance(&self, id: &AccountId) -> u64 {
        self.balances.get(id).copied().unwrap_or(0)
    }

    pub fn task(&self, task_id: u64) -> Result<&Task, ContractError> {
        self.tasks.get(&task_id).ok_or(ContractError::UnknownTask(task_id))
    }

    pub fn reputation_of(&self, id: &AccountId) -> f64 {
        self.reputation
            .get(id)
            .map_or(self.config.reputation.r_init, |r| r.reputation)
    }

    pub fn submitted(&self, task_id: u64, round: u32, trainer: &AccountId) -> bool {
        self.submissions.contains_key(&(task_id, round, *trainer))
    }

    /// Trainers with a recorded submission for the round, in id order.
    pub fn submitters(&self, task_id: u64, round: u32) -> Vec<AccountId> {
        self.submissions
            .range((task_id, round, AccountId([0; 32]))..=(task_id, round, AccountId([0xff; 32])))
            .map(|((_, _, t), _)| *t)
            .collect()
    }

    /// Tokens currently held in locked deposits.
    pub fn locked(&self) -> u64 {
        self.deposits
            .values()
            .filter(|d| d.state == DepositState::Locked)
            .map(|d| d.amount)
            .sum()
    }

    /// Balances plus locked deposits plus burned tokens equal genesis supply.
    pub fn supply_conserved(&self) -> bool {
        let circulating: u128 = self.balances.values().map(|&b| b as u128).sum();
        circulating + self.locked() as u128 + self.burned as u128 == self.minted as u128
    }

    /// Admission checks. Pure: never mutates.
    pub fn admit(&self, tx: &Transaction) -> Result<Call, TxError> {
        tx.verify_id()?;
        if !self.registry.is_registered(&tx.sender) {
            return Err(TxError::UnknownSender(tx.sender));
        }
        let expected = self.nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(TxError::NonceMismatch {
                sender: tx.sender,
                expected,
                got: tx.nonce,
            });
        }
        let required = tx.function.required_role();
        let violation = |reason: &str| TxError::RoleViolation {
            function: tx.function,
            required,
            reason: reason.to_string(),
        };
        if !self.registry.has_role(&tx.sender, required) {
            return Err(violation("sender lacks the role"));
        }
        if let Some(excluded) = tx.function.excluded_role() {
            if self.registry.has_role(&tx.sender, excluded) {
                return Err(violation("sender holds an excluded role"));
            }
        }
        let call = tx.call()?;
        let enrollment_task = match &call {
            Call::SubmitLocalModel(m) => Some(m.task_id),
            Call::LockDeposit { task_id } => Some(*task_id),
            _ => None,
        };
        if let Some(task_id) = enrollment_task {
            let enrolled = self
                .tasks
                .get(&task_id)
                .is_some_and(|t| t.is_trainer(&tx.sender));
            if !enrolled {
                return Err(violation("sender is not enrolled in the task"));
            }
        }
        Ok(call)
    }

    /// Admits and executes one transaction. The outer error is an admission
    /// refusal (state untouched); the inner one a revert (nonce consumed).
    pub fn apply_tx(&mut self, tx: &Transaction) -> Result<Result<(), ContractError>, TxError> {
        let call = self.admit(tx)?;
        *self.nonces.entry(tx.sender).or_insert(0) += 1;
        Ok(self.execute(tx.sender, call))
    }

    fn execute(&mut self, sender: AccountId, call: Call) -> Result<(), ContractError> {
        match call {
            Call::PublishTask(args) => self.publish_task(sender, args),
            Call::SelectTrainers { task_id } => self.select_trainers(sender, task_id).map(|_| ()),
            Call::LockDeposit { task_id } => self.lock_deposit(sender, task_id),
            Call::SubmitLocalModel(m) => self.submit_local_model(sender, m),
            Call::CloseRound(r) => self.close_round(r.task_id, r.round),
            Call::RecordScores(args) => self.record_scores(args),
            Call::SubmitGlobalModel(m) => self.finalize_round(m.task_id, m.round, m.cid),
            Call::CalcObjectiveRep(args) => self.calc_objective_rep(args),
            Call::CalcSubjectiveRep(t) => self.calc_subjective_rep(t.task_id, t.trainer),
            Call::CalcNewRep(t) => self.calc_new_rep(t.task_id, t.trainer),
            Call::ReleaseRewards { task_id } => self.settle(task_id).map(|_| ()),
            Call::MembershipVote(action) => self.membership_vote(sender, action),
        }
    }

    fn expect_state(
        &self,
        task_id: u64,
        function: Function,
        expected: TaskState,
    ) -> Result<&Task, ContractError> {
        let task = self.task(task_id)?;
        if task.state != expected {
            return Err(ContractError::WrongState {
                task_id,
                function,
                state: task.state,
                expected,
            });
        }
        Ok(task)
    }
}
