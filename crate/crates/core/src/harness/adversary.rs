//! Attack scenarios run against the full stack. Each returns what it
//! observed so callers can assert on it or print it.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::chain::tx::{Call, ObjectiveRepArgs, RecordScoresArgs, TaskRound, TaskTrainer};
use crate::chain::{AccountId, MembershipAction, Role, TxError};
use crate::oracle::ChainError;

use super::{trainer_account, HarnessError, Scenario, Simulation};

/// Rewards collected by a malicious and a good trainer over the same tasks.
#[derive(Debug, Clone, Serialize)]
pub struct FreeRiding {
    pub tasks: u64,
    pub malicious_reward: u64,
    pub good_reward: u64,
}

impl FreeRiding {
    pub fn ratio(&self) -> f64 {
        self.malicious_reward as f64 / self.good_reward.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.good_reward > 0 && self.ratio() < 0.1
    }
}

pub fn free_riding(base: &Scenario, tasks: u32) -> Result<FreeRiding, HarnessError> {
    let mut s = base.clone();
    for t in &mut s.tasks {
        t.repeat = 0;
    }
    let mut spec = base.tasks.first().cloned().unwrap_or_default();
    spec.repeat = tasks;
    s.tasks = vec![spec];
    let mut sim = Simulation::new(s)?;
    sim.run_all()?;
    let rewards = sim.rewards();
    let of = |label: &str| rewards.iter().find(|r| r.trainer == label).map_or(0, |r| r.amount);
    Ok(FreeRiding {
        tasks: sim.tasks_done(),
        malicious_reward: of("malicious"),
        good_reward: of("good"),
    })
}

/// A second publisher tries to write scores and reputation directly.
#[derive(Debug, Clone, Serialize)]
pub struct Collusion {
    pub attempts: usize,
    pub refused: usize,
    pub reputations_unchanged: bool,
}

impl Collusion {
    pub fn passed(&self) -> bool {
        self.attempts > 0 && self.refused == self.attempts && self.reputations_unchanged
    }
}

fn refused_by_role(r: &Result<(), HarnessError>) -> bool {
    matches!(
        r,
        Err(HarnessError::Chain(ChainError::Refused(TxError::RoleViolation { .. })))
    )
}

pub fn collusion(base: &Scenario) -> Result<Collusion, HarnessError> {
    let mut s = base.clone();
    s.publishers = s.publishers.max(2);
    let mut sim = Simulation::new(s)?;
    let spec = sim.scenario.tasks.first().cloned().unwrap_or_default();
    let task_id = sim.run_task(&spec)?;
    let colluder = sim.participants.publishers[1];
    let before: Vec<f64> = sim
        .participants
        .trainers
        .iter()
        .map(|t| sim.view().reputation_of(&t.id))
        .collect();
    let victim = trainer_account("good");
    let round = 0;
    let calls = vec![
        Call::RecordScores(RecordScoresArgs {
            task_id,
            round,
            scores: sim.participants.trainers.iter().map(|t| (t.id, 0.0)).collect(),
            attesters: BTreeSet::from([colluder]),
        }),
        Call::CloseRound(TaskRound { task_id, round }),
        Call::CalcObjectiveRep(ObjectiveRepArgs {
            task_id,
            trainer: victim,
            distance: 1e6,
            normalized_distance: 1.0,
            tau: 0.0,
        }),
        Call::CalcSubjectiveRep(TaskTrainer { task_id, trainer: victim }),
        Call::CalcNewRep(TaskTrainer { task_id, trainer: victim }),
    ];
    let attempts = calls.len();
    let refused = calls
        .into_iter()
        .filter(|c| refused_by_role(&sim.send(colluder, c.clone())))
        .count();
    sim.driver.flush()?;
    let after: Vec<f64> = sim
        .participants
        .trainers
        .iter()
        .map(|t| sim.driver.committed().reputation_of(&t.id))
        .collect();
    Ok(Collusion {
        attempts,
        refused,
        reputations_unchanged: before == after,
    })
}

/// An evicted trainer readmitted by consortium vote.
#[derive(Debug, Clone, Serialize)]
pub struct Whitewashing {
    pub before_eviction: f64,
    pub registered_after_eviction: bool,
    pub after_readmission: f64,
    pub r_init: f64,
}

impl Whitewashing {
    pub fn passed(&self) -> bool {
        !self.registered_after_eviction && self.after_readmission == self.r_init
    }
}

pub fn whitewashing(base: &Scenario, label: &str, tasks: u32) -> Result<Whitewashing, HarnessError> {
    let mut sim = Simulation::new(base.clone())?;
    let spec = sim.scenario.tasks.first().cloned().unwrap_or_default();
    for _ in 0..tasks {
        sim.run_task(&spec)?;
    }
    let id = trainer_account(label);
    let before_eviction = sim.view().reputation_of(&id);
    let members = sim.participants.consortium.clone();
    // members vote one at a time until the action takes effect
    let vote = |sim: &mut Simulation, action: MembershipAction, want: bool| -> Result<(), HarnessError> {
        for m in &members {
            if sim.view().registry.is_registered(&id) == want {
                break;
            }
            sim.send(*m, Call::MembershipVote(action.clone()))?;
        }
        Ok(())
    };
    vote(&mut sim, MembershipAction::Evict { id }, false)?;
    let registered_after_eviction = sim.view().registry.is_registered(&id);
    let register = MembershipAction::Register {
        id,
        roles: BTreeSet::from([Role::TrainingAgent]),
    };
    vote(&mut sim, register, true)?;
    sim.driver.flush()?;
    Ok(Whitewashing {
        before_eviction,
        registered_after_eviction,
        after_readmission: sim.driver.committed().reputation_of(&id),
        r_init: sim.scenario.reputation.r_init,
    })
}

/// The publisher stays silent after publishing and tries to settle itself.
#[derive(Debug, Clone, Serialize)]
pub struct FalseReporting {
    pub publisher_settle_refused: bool,
    pub settled: bool,
    pub good_paid: u64,
}

impl FalseReporting {
    pub fn passed(&self) -> bool {
        self.publisher_settle_refused && self.settled && self.good_paid > 0
    }
}

pub fn false_reporting(base: &Scenario) -> Result<FalseReporting, HarnessError> {
    let mut sim = Simulation::new(base.clone())?;
    let spec = sim.scenario.tasks.first().cloned().unwrap_or_default();
    let task_id = sim.open_task(&spec)?;
    let publisher = sim.view().task(task_id)?.publisher;
    let trainers = sim.view().task(task_id)?.trainers.clone();
    for t in &trainers {
        sim.send(*t, Call::LockDeposit { task_id })?;
    }
    for round in 0..spec.rounds {
        sim.train_round(task_id, round, &spec)?;
        sim.evaluate_and_aggregate(task_id, round)?;
    }
    let lead = sim.participants.lead_oracle()?;
    crate::oracle::trigger_reputation_update(&mut sim.driver, lead, task_id, &sim.store)?;
    let publisher_settle_refused =
        refused_by_role(&sim.send(publisher, Call::ReleaseRewards { task_id }));
    sim.send(lead, Call::ReleaseRewards { task_id })?;
    sim.driver.flush()?;
    let state = sim.driver.committed();
    let good = trainer_account("good");
    Ok(FalseReporting {
        publisher_settle_refused,
        settled: state.task(task_id)?.settled,
        good_paid: state
            .payouts
            .get(&task_id)
            .into_iter()
            .flatten()
            .filter(|p| p.account == good)
            .map(|p| p.amount)
            .sum(),
    })
}

/// Identities that never went through membership voting.
#[derive(Debug, Clone, Serialize)]
pub struct Sybil {
    pub identities: usize,
    pub refused: usize,
    pub ranked: usize,
    pub selected: usize,
}

impl Sybil {
    pub fn passed(&self) -> bool {
        self.refused == self.identities && self.ranked == 0 && self.selected == 0
    }
}

pub fn sybil(base: &Scenario, identities: usize) -> Result<Sybil, HarnessError> {
    let mut sim = Simulation::new(base.clone())?;
    let spec = sim.scenario.tasks.first().cloned().unwrap_or_default();
    let task_id = sim.open_task(&spec)?;
    let fakes: Vec<AccountId> = (0..identities)
        .map(|i| AccountId::named(&format!("sybil/{i}")))
        .collect();
    let refused = fakes
        .iter()
        .filter(|f| {
            matches!(
                sim.send(**f, Call::LockDeposit { task_id }),
                Err(HarnessError::Chain(ChainError::Refused(TxError::UnknownSender(_))))
            )
        })
        .count();
    let publisher = sim.view().task(task_id)?.publisher;
    let ranked = sim
        .view()
        .rank_candidates(&publisher)
        .iter()
        .filter(|c| fakes.contains(c))
        .count();
    let selected = sim
        .view()
        .task(task_id)?
        .trainers
        .iter()
        .filter(|c| fakes.contains(c))
        .count();
    Ok(Sybil {
        identities,
        refused,
        ranked,
        selected,
    })
}
