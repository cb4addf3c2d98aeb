//! Task lifecycle: publication, trainer selection, local submissions, score
//! recording and round finalization.

use std::cmp::Ordering;

use super::{ContractError, Deposit, DepositKind, DepositState, Task, TaskState, WorldState};
use crate::chain::tx::{Function, PublishTaskArgs, RecordScoresArgs, RoundModel};
use crate::chain::{AccountId, Role};
use crate::store::Cid;

/// Evaluator reports needed for a quorum among `n` evaluators.
pub fn quorum_threshold(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

impl WorldState {
    pub(super) fn publish_task(
        &mut self,
        publisher: AccountId,
        args: PublishTaskArgs,
    ) -> Result<(), ContractError> {
        if self.tasks.contains_key(&args.task_id) {
            return Err(ContractError::DuplicateTask(args.task_id));
        }
        if args.total_rounds == 0 || args.required_trainers == 0 {
            return Err(ContractError::InvalidArgs(
                "rounds and required trainers must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&args.required_accuracy) {
            return Err(ContractError::InvalidArgs("required accuracy outside [0,1]".into()));
        }
        let have = self.balance(&publisher);
        if have < args.reward {
            return Err(ContractError::InsufficientFunds {
                need: args.reward,
                have,
            });
        }
        self.balances.insert(publisher, have - args.reward);
        self.deposits.insert(
            (args.task_id, publisher, DepositKind::PublisherReward),
            Deposit {
                owner: publisher,
                task_id: args.task_id,
                kind: DepositKind::PublisherReward,
                amount: args.reward,
                state: DepositState::Locked,
            },
        );
        self.tasks.insert(
            args.task_id,
            Task {
                task_id: args.task_id,
                publisher,
                model_cid: args.model_cid,
                description_cid: args.description_cid,
                validation_cid: args.validation_cid,
                required_accuracy: args.required_accuracy,
                total_rounds: args.total_rounds,
                required_trainers: args.required_trainers,
                reward: args.reward,
                trainers: Vec::new(),
                current_round: 0,
                state: TaskState::Selection,
                global_models: Vec::new(),
                settled: false,
            },
        );
        Ok(())
    }

    /// Registered training agents ranked by reputation, highest first, ties
    /// by ascending id. The publisher is never its own candidate.
    pub fn rank_candidates(&self, publisher: &AccountId) -> Vec<AccountId> {
        let mut candidates: Vec<(AccountId, f64)> = self
            .registry
            .with_role(Role::TrainingAgent)
            .into_iter()
            .filter(|id| id != publisher)
            .map(|id| (id, self.reputation_of(&id)))
            .collect();
        candidates.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        candidates.into_iter().map(|(id, _)| id).collect()
    }

    pub(super) fn select_trainers(
        &mut self,
        caller: AccountId,
        task_id: u64,
    ) -> Result<Vec<AccountId>, ContractError> {
        let task = self.task(task_id)?;
        if task.publisher != caller {
            return Err(ContractError::NotPublisher(caller));
        }
        if task.state != TaskState::Selection {
            return Err(ContractError::NotInSelection(task_id));
        }
        let reward_locked = self
            .deposits
            .get(&(task_id, task.publisher, DepositKind::PublisherReward))
            .is_some_and(|d| d.state == DepositState::Locked);
        if !reward_locked {
            return Err(ContractError::InvalidArgs("publisher reward is not locked".into()));
        }
        let k = task.required_trainers as usize;
        let ranked = self.rank_candidates(&task.publisher);
        if ranked.len() < k {
            return Err(ContractError::InsufficientCandidates {
                needed: k,
                available: ranked.len(),
            });
        }
        let chosen: Vec<AccountId> = ranked.into_iter().take(k).collect();
        let task = self.tasks.get_mut(&task_id).expect("checked above");
        task.trainers = chosen.clone();
        task.state = TaskState::Training;
        Ok(chosen)
    }

    pub(super) fn submit_local_model(
        &mut self,
        trainer: AccountId,
        m: RoundModel,
    ) -> Result<(), ContractError> {
        let task = self.expect_state(m.task_id, Function::SubmitLocalModel, TaskState::Training)?;
        if !task.is_trainer(&trainer) {
            return Err(ContractError::NotEnrolled(trainer));
        }
        if m.round != task.current_round {
            return Err(ContractError::WrongRound {
                current: task.current_round,
                got: m.round,
            });
        }
        let collateral_locked = self
            .deposits
            .get(&(m.task_id, trainer, DepositKind::TrainerCollateral))
            .is_some_and(|d| d.state == DepositState::Locked);
        if !collateral_locked {
            return Err(ContractError::NoCollateral(trainer));
        }
        let key = (m.task_id, m.round, trainer);
        if self.submissions.contains_key(&key) {
            return Err(ContractError::AlreadySubmitted(trainer));
        }
        self.submissions.insert(key, m.cid);
        Ok(())
    }

    /// Ends the submission window of the current round.
    pub(super) fn close_round(&mut self, task_id: u64, round: u32) -> Result<(), ContractError> {
        let task = self.expect_state(task_id, Function::CloseRound, TaskState::Training)?;
        if round != task.current_round {
            return Err(ContractError::WrongRound {
                current: task.current_round,
                got: round,
            });
        }
        self.tasks.get_mut(&task_id).expect("checked above").state = TaskState::Evaluating;
        Ok(())
    }

    pub(super) fn record_scores(&mut self, args: RecordScoresArgs) -> Result<(), ContractError> {
        let task =
            self.expect_state(args.task_id, Function::RecordScores, TaskState::Evaluating)?;
        if args.round != task.current_round {
            return Err(ContractError::WrongRound {
                current: task.current_round,
                got: args.round,
            });
        }
        let evaluators = self.registry.with_role(Role::TrainingEvaluator);
        let concurring = args
            .attesters
            .iter()
            .filter(|a| evaluators.binary_search(a).is_ok())
            .count();
        let need = quorum_threshold(evaluators.len());
        if concurring < need || concurring == 0 {
            return Err(ContractError::QuorumNotMet {
                have: concurring,
                need: need.max(1),
            });
        }
        let submitters = self.submitters(args.task_id, args.round);
        if let Some(t) = args.scores.keys().find(|t| submitters.binary_search(t).is_err()) {
            return Err(ContractError::UnknownTrainerInScores(*t));
        }
        if let Some(t) = submitters.iter().find(|t| !args.scores.contains_key(t)) {
            return Err(ContractError::MissingScore(*t));
        }
        if args.scores.values().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(ContractError::InvalidArgs("score outside [0,1]".into()));
        }
        for (trainer, score) in &args.scores {
            self.scores.insert((args.task_id, args.round, *trainer), *score);
        }
        self.tasks.get_mut(&args.task_id).expect("checked above").state = TaskState::Aggregating;
        Ok(())
    }

    /// Records the round's global model and advances the task.
    pub(super) fn finalize_round(
        &mut self,
        task_id: u64,
        round: u32,
        global: Cid,
    ) -> Result<(), ContractError> {
        let task = self.task(task_id)?;
        if task.state != TaskState::Aggregating {
            return Err(ContractError::NotAggregating(task_id));
        }
        if round != task.current_round {
            return Err(ContractError::WrongRound {
                current: task.current_round,
                got: round,
            });
        }
        let task = self.tasks.get_mut(&task_id).expect("checked above");
        task.global_models.push(global);
        task.current_round += 1;
        task.state = if task.current_round < task.total_rounds {
            TaskState::Training
        } else {
            TaskState::Completed
        };
        Ok(())
    }

    /// Per-round scores of a trainer, `None` for rounds without a submission.
    pub fn round_scores(&self, task_id: u64, trainer: &AccountId) -> Vec<Option<f64>> {
        let rounds = self.tasks.get(&task_id).map_or(0, |t| t.total_rounds);
        (0..rounds)
            .map(|r| self.scores.get(&(task_id, r, *trainer)).copied())
            .collect()
    }
}
