use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::tx::{Call, PublishTaskArgs, RecordScoresArgs, RoundModel, TaskRound};
use crate::chain::{AccountId, GasSchedule, GasTable, Ledger, LedgerConfig, Role, TxStatus};
use crate::contracts::{ContractConfig, Genesis, WorldState};
use crate::fl::{self, BehaviorKind, BehaviorProfile, SyntheticTask, WeightVector, LAZY_SKIP_RANGE};
use crate::oracle::{self, AggregationOutcome, Chain, EvaluationReport, OracleNode, QuorumResult};
use crate::par;
use crate::store::{BlobStore, Cid};

use super::{
    throughput_sweep, Driver, GasRow, HarnessError, MetricsFrame, RewardRow, Routing, Scenario,
    TaskSpec, TrajectoryPoint,
};

/// Everything the oracles did in one round, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub task_id: u64,
    pub round: u32,
    pub reports: Vec<EvaluationReport>,
    pub quorum: QuorumResult,
    pub aggregation: AggregationOutcome,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub id: AccountId,
    pub label: String,
    pub profile: BehaviorProfile,
}

/// Accounts of a scenario, derived from labels so runs are reproducible.
#[derive(Debug, Clone)]
pub struct Participants {
    pub publishers: Vec<AccountId>,
    pub trainers: Vec<Trainer>,
    pub oracles: Vec<OracleNode>,
    pub validators: Vec<AccountId>,
    pub consortium: Vec<AccountId>,
}

pub fn trainer_account(label: &str) -> AccountId {
    AccountId::named(&format!("trainer/{label}"))
}

impl Participants {
    pub fn for_scenario(s: &Scenario) -> Self {
        let trainers = s
            .trainers
            .iter()
            .map(|t| {
                let skip_rate = match (t.kind, t.skip_rate) {
                    (_, Some(r)) => r,
                    (BehaviorKind::Lazy, None) => {
                        let mut rng = fl::stream(s.seed, "lazy-skip-rate", &[t.label.as_bytes()]);
                        rng.random_range(LAZY_SKIP_RANGE.0..=LAZY_SKIP_RANGE.1)
                    }
                    (_, None) => 0.0,
                };
                Trainer {
                    id: trainer_account(&t.label),
                    label: t.label.clone(),
                    profile: BehaviorProfile {
                        kind: t.kind,
                        skip_rate,
                        noise_scale: t.noise_scale,
                    },
                }
            })
            .collect();
        let oracles = (0..s.oracles.count)
            .map(|i| {
                let id = AccountId::named(&format!("oracle/{i}"));
                if i < s.oracles.dishonest {
                    OracleNode::dishonest(id, s.oracles.perturbation)
                } else {
                    OracleNode::honest(id)
                }
            })
            .collect();
        Self {
            publishers: (0..s.publishers).map(|i| AccountId::named(&format!("publisher/{i}"))).collect(),
            trainers,
            oracles,
            validators: (0..s.validators.count).map(|i| AccountId::named(&format!("validator/{i}"))).collect(),
            consortium: (0..3).map(|i| AccountId::named(&format!("consortium/{i}"))).collect(),
        }
    }

    pub fn genesis(&self, s: &Scenario) -> Genesis {
        let one = |r: Role| BTreeSet::from([r]);
        let mut accounts = Vec::new();
        accounts.extend(self.publishers.iter().map(|p| (*p, one(Role::TaskPublisher))));
        accounts.extend(self.trainers.iter().map(|t| (t.id, one(Role::TrainingAgent))));
        accounts.extend(
            self.oracles
                .iter()
                .map(|o| (o.id, BTreeSet::from([Role::TrainingEvaluator, Role::Aggregator]))),
        );
        accounts.extend(self.validators.iter().map(|v| (*v, one(Role::Validator))));
        accounts.extend(self.consortium.iter().map(|c| (*c, one(Role::ConsortiumMember))));
        let mut balances = BTreeMap::new();
        balances.extend(self.publishers.iter().map(|p| (*p, s.publisher_balance)));
        balances.extend(self.trainers.iter().map(|t| (t.id, s.trainer_balance)));
        Genesis {
            accounts,
            balances,
            config: ContractConfig {
                reputation: s.reputation,
                ..ContractConfig::default()
            },
        }
    }

    /// Oracle node that drives the chain-facing steps.
    pub fn lead_oracle(&self) -> Result<AccountId, HarnessError> {
        self.oracles
            .iter()
            .find(|o| o.honest)
            .map(|o| o.id)
            .ok_or(HarnessError::Oracle(oracle::OracleError::NoHonestNode))
    }

    pub fn label_of(&self, id: &AccountId) -> Option<&str> {
        self.trainers.iter().find(|t| t.id == *id).map(|t| t.label.as_str())
    }
}

/// A scenario in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub participants: Participants,
    pub driver: Driver,
    pub store: BlobStore,
    pub audit: Vec<RoundAudit>,
    trajectories: Vec<TrajectoryPoint>,
    tasks_done: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let participants = Participants::for_scenario(&scenario);
        let genesis = participants.genesis(&scenario);
        let gas = GasSchedule::new(scenario.gas_mode, GasTable::from_env()?);
        let byzantine = participants
            .validators
            .iter()
            .take(scenario.validators.byzantine)
            .copied()
            .collect();
        let ledger = Ledger::new(
            &genesis,
            gas,
            LedgerConfig {
                max_txs_per_block: scenario.validators.max_txs_per_block,
                byzantine,
            },
        );
        let driver = Driver::new(ledger, scenario.routing, scenario.rollup_capacity);
        Ok(Self {
            scenario,
            participants,
            driver,
            store: BlobStore::new(),
            audit: Vec::new(),
            trajectories: Vec::new(),
            tasks_done: 0,
        })
    }

    pub fn view(&self) -> &WorldState {
        self.driver.view()
    }

    pub fn send(&mut self, sender: AccountId, call: Call) -> Result<(), HarnessError> {
        Ok(self.driver.send(sender, call)?)
    }

    pub fn run_all(&mut self) -> Result<(), HarnessError> {
        let tasks: Vec<TaskSpec> = self.scenario.task_list().into_iter().cloned().collect();
        for spec in &tasks {
            self.run_task(spec)?;
        }
        Ok(())
    }

    fn next_publisher(&self) -> AccountId {
        let p = &self.participants.publishers;
        p[self.tasks_done as usize % p.len()]
    }

    /// Publishes a task and selects its trainers. Returns the task id.
    pub fn open_task(&mut self, spec: &TaskSpec) -> Result<u64, HarnessError> {
        let task_id = self.view().tasks.keys().next_back().map_or(1, |k| k + 1);
        let publisher = self.next_publisher();
        let mut rng = fl::stream(self.scenario.seed, "task-data", &[&task_id.to_be_bytes()]);
        let data = SyntheticTask::generate(&spec.dataset, rng.random())?;
        let model_cid = self.store.put_value(&WeightVector::zeros(spec.dataset.model_len()))?;
        let validation_cid = self.store.put_value(&data.validation)?;
        let description_cid = self.store.put_value(&data.train)?;
        self.send(
            publisher,
            Call::PublishTask(PublishTaskArgs {
                task_id,
                model_cid,
                description_cid,
                validation_cid,
                total_rounds: spec.rounds,
                required_trainers: spec.trainers,
                reward: spec.reward,
                required_accuracy: 0.0,
            }),
        )?;
        self.send(publisher, Call::SelectTrainers { task_id })?;
        Ok(task_id)
    }

    /// Runs a task end to end and records one trajectory point per trainer.
    pub fn run_task(&mut self, spec: &TaskSpec) -> Result<u64, HarnessError> {
        let task_id = self.open_task(spec)?;
        let trainers = self.view().task(task_id)?.trainers.clone();
        for t in &trainers {
            self.send(*t, Call::LockDeposit { task_id })?;
        }
        for round in 0..spec.rounds {
            self.train_round(task_id, round, spec)?;
            self.evaluate_and_aggregate(task_id, round)?;
        }
        self.close_task(task_id)?;
        Ok(task_id)
    }

    /// Local training and submission for one round.
    pub fn train_round(&mut self, task_id: u64, round: u32, spec: &TaskSpec) -> Result<(), HarnessError> {
        let task = self.view().task(task_id)?.clone();
        let global: WeightVector = self.store.get_value(&task.latest_model())?;
        let train: fl::SyntheticDataset = self.store.get_value(&task.description_cid)?;
        let shards = train.shards(task.trainers.len());
        let seed = self.scenario.seed;
        let jobs: Vec<(AccountId, BehaviorProfile, &fl::SyntheticDataset)> = task
            .trainers
            .iter()
            .zip(&shards)
            .map(|(id, shard)| {
                let profile = self
                    .participants
                    .trainers
                    .iter()
                    .find(|t| t.id == *id)
                    .map_or(BehaviorProfile::good(), |t| t.profile);
                (*id, profile, shard)
            })
            .collect();
        let updates = par::map(self.scenario.execution, &jobs, |(id, profile, shard)| {
            let mut rng = fl::stream(
                seed,
                "local-update",
                &[&task_id.to_be_bytes(), &round.to_be_bytes(), &id.0],
            );
            fl::trainer_update(profile, &global, shard, &spec.training, &mut rng)
        });
        for ((id, _, _), update) in jobs.iter().zip(updates) {
            if let Some(w) = update? {
                let cid = self.store.put_value(&w)?;
                self.send(*id, Call::SubmitLocalModel(RoundModel { task_id, round, cid }))?;
            }
        }
        Ok(())
    }

    /// Closes the round, scores it through the oracle quorum and records the
    /// aggregated global model.
    pub fn evaluate_and_aggregate(&mut self, task_id: u64, round: u32) -> Result<(), HarnessError> {
        let lead = self.participants.lead_oracle()?;
        self.send(lead, Call::CloseRound(TaskRound { task_id, round }))?;
        let nodes = self.participants.oracles.clone();
        let reports = oracle::evaluate_all(
            &nodes,
            task_id,
            round,
            &self.store,
            self.driver.view(),
            self.scenario.execution,
        )?;
        let quorum = oracle::quorum_scores(&reports, nodes.len(), self.scenario.oracles.robust)?;
        let reporter = *quorum.attesters.iter().next().expect("quorum has attesters");
        self.send(
            reporter,
            Call::RecordScores(RecordScoresArgs {
                task_id,
                round,
                scores: quorum.scores.clone(),
                attesters: quorum.attesters.clone(),
            }),
        )?;
        let aggregation = oracle::run_aggregation(&nodes, task_id, round, self.driver.view(), &mut self.store)?;
        self.send(
            aggregation.aggregator,
            Call::SubmitGlobalModel(RoundModel {
                task_id,
                round,
                cid: aggregation.cid,
            }),
        )?;
        self.audit.push(RoundAudit {
            task_id,
            round,
            reports,
            quorum,
            aggregation,
        });
        Ok(())
    }

    /// Reputation refresh, settlement and the trajectory point.
    pub fn close_task(&mut self, task_id: u64) -> Result<(), HarnessError> {
        let lead = self.participants.lead_oracle()?;
        oracle::trigger_reputation_update(&mut self.driver, lead, task_id, &self.store)?;
        self.send(lead, Call::ReleaseRewards { task_id })?;
        self.driver.flush()?;
        self.tasks_done += 1;
        let state = self.driver.committed();
        for t in &self.participants.trainers {
            self.trajectories.push(TrajectoryPoint {
                trainer: t.label.clone(),
                task_index: self.tasks_done,
                reputation: state.reputation_of(&t.id),
            });
        }
        Ok(())
    }

    pub fn tasks_done(&self) -> u64 {
        self.tasks_done
    }

    pub fn trajectories(&self) -> &[TrajectoryPoint] {
        &self.trajectories
    }

    pub fn gas_rows(&self) -> Vec<GasRow> {
        let ledger = self.driver.ledger();
        match self.driver.routing() {
            Routing::L2 => ledger.bridge().reports().iter().map(GasRow::from_report).collect(),
            Routing::L1 => ledger
                .blocks()
                .iter()
                .map(|b| {
                    let functions: BTreeSet<&str> = b.txs.iter().map(|t| t.function.name()).collect();
                    let total = b.gas_used().0;
                    GasRow {
                        function: functions.into_iter().collect::<Vec<_>>().join("+"),
                        calls: b.txs.len() as u64,
                        batches: 0,
                        commit: 0,
                        verify: 0,
                        execute: 0,
                        total,
                        l1_equivalent: total,
                    }
                })
                .collect(),
        }
    }

    /// Rewards paid to each trainer across all settled tasks.
    pub fn rewards(&self) -> Vec<RewardRow> {
        let state = self.driver.committed();
        self.participants
            .trainers
            .iter()
            .map(|t| RewardRow {
                trainer: t.label.clone(),
                amount: state
                    .payouts
                    .values()
                    .flatten()
                    .filter(|p| p.account == t.id)
                    .map(|p| p.amount)
                    .sum(),
            })
            .collect()
    }

    /// Receipts that reverted, for diagnostics.
    pub fn reverted(&self) -> usize {
        self.driver
            .ledger()
            .receipts()
            .iter()
            .filter(|r| matches!(r.status, TxStatus::Reverted(_)))
            .count()
    }

    pub fn frame(&self) -> MetricsFrame {
        MetricsFrame {
            trajectories: self.trajectories.clone(),
            gas: self.gas_rows(),
            throughput: throughput_sweep(&self.scenario, &self.scenario.throughput.send_rates),
            rewards: self.rewards(),
        }
    }

    /// Audit record of one round.
    pub fn round_audit(&self, task_id: u64, round: u32) -> Option<&RoundAudit> {
        self.audit.iter().find(|a| a.task_id == task_id && a.round == round)
    }

    pub fn model(&self, cid: &Cid) -> Result<WeightVector, HarnessError> {
        Ok(self.store.get_value(cid)?)
    }
}

/// Runs every task of the scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsFrame, HarnessError> {
    let mut sim = Simulation::new(scenario.clone())?;
    sim.run_all()?;
    Ok(sim.frame())
}
