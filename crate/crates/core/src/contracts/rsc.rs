//! Reputation persistence and consortium membership.

use super::{ContractError, PendingRep, TaskState, WorldState};
use crate::chain::tx::{Function, ObjectiveRepArgs};
use crate::chain::{AccountId, MembershipAction, Role, VoteOutcome};
use crate::reputation::{
    self, InteractionHistory, InteractionRecord, ReputationRecord, TaskOutcome,
};

impl WorldState {
    fn completed_trainer(&self, task_id: u64, trainer: &AccountId, f: Function) -> Result<AccountId, ContractError> {
        let task = self.expect_state(task_id, f, TaskState::Completed)?;
        if !task.is_trainer(trainer) {
            return Err(ContractError::NotEnrolled(*trainer));
        }
        Ok(task.publisher)
    }

    fn pending(&self, task_id: u64, trainer: &AccountId) -> PendingRep {
        self.pending_rep.get(&(task_id, *trainer)).cloned().unwrap_or_default()
    }

    /// Utility and completeness of a trainer in a task, from recorded scores.
    pub fn task_outcome_inputs(&self, task_id: u64, trainer: &AccountId) -> (f64, u32, u32) {
        let rounds = self.round_scores(task_id, trainer);
        let submitted: Vec<f64> = rounds.iter().flatten().copied().collect();
        let score_auto = if submitted.is_empty() {
            0.0
        } else {
            submitted.iter().sum::<f64>() / submitted.len() as f64
        };
        let completed = (0..rounds.len() as u32)
            .filter(|r| self.submitted(task_id, *r, trainer))
            .count() as u32;
        (score_auto, completed, rounds.len() as u32)
    }

    pub(super) fn calc_objective_rep(&mut self, args: ObjectiveRepArgs) -> Result<(), ContractError> {
        self.completed_trainer(args.task_id, &args.trainer, Function::CalcObjectiveRep)?;
        let mut pending = self.pending(args.task_id, &args.trainer);
        if pending.objective.is_some() {
            return Err(ContractError::AlreadyComputed("objective reputation"));
        }
        if !(args.distance >= 0.0 && args.distance.is_finite()) {
            return Err(ContractError::InvalidArgs("distance must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&args.normalized_distance) {
            return Err(ContractError::InvalidArgs("normalized distance outside [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&args.tau) {
            return Err(ContractError::InvalidArgs("tau outside [0,1]".into()));
        }
        let (score_auto, completed_rounds, total_rounds) =
            self.task_outcome_inputs(args.task_id, &args.trainer);
        let outcome = TaskOutcome {
            score_auto,
            completed_rounds,
            total_rounds,
            distance: args.distance,
            normalized_distance: args.normalized_distance,
        };
        let o = reputation::objective_rep(&outcome, args.tau);
        pending.objective = Some(o);
        pending.judged_good = Some(reputation::judged_good(o, &self.config.reputation));
        self.pending_rep.insert((args.task_id, args.trainer), pending);
        Ok(())
    }

    /// Interaction history used for the subjective opinion of `trainer` in
    /// `task_id`. Interactions from this task itself are left out, so the
    /// result does not depend on the order trainers are updated in.
    pub fn history_for(&self, task_id: u64, trainer: &AccountId) -> Result<InteractionHistory, ContractError> {
        let task = self.task(task_id)?;
        let publisher = task.publisher;
        let records: Vec<InteractionRecord> = self
            .reputation
            .get(trainer)
            .and_then(|r| r.histories.get(&publisher))
            .map(|h| h.iter().filter(|rec| rec.task_index != task_id).copied().collect())
            .unwrap_or_default();
        let already_counted = task
            .trainers
            .iter()
            .filter(|t| {
                self.pending_rep
                    .get(&(task_id, **t))
                    .is_some_and(|p| p.reputation.is_some())
            })
            .count() as u64;
        let x_tp = self
            .publisher_interactions
            .get(&publisher)
            .copied()
            .unwrap_or(0)
            .saturating_sub(already_counted);
        Ok(InteractionHistory::new(records, x_tp))
    }

    pub(super) fn calc_subjective_rep(&mut self, task_id: u64, trainer: AccountId) -> Result<(), ContractError> {
        self.completed_trainer(task_id, &trainer, Function::CalcSubjectiveRep)?;
        let mut pending = self.pending(task_id, &trainer);
        if pending.subjective.is_some() {
            return Err(ContractError::AlreadyComputed("subjective reputation"));
        }
        let params = self.config.reputation;
        let history = self.history_for(task_id, &trainer)?;
        let op = reputation::opinion(&history, params.theta, params.rho);
        pending.subjective = Some(reputation::subjective_rep(&op, params.sigma));
        self.pending_rep.insert((task_id, trainer), pending);
        Ok(())
    }

    pub(super) fn calc_new_rep(&mut self, task_id: u64, trainer: AccountId) -> Result<(), ContractError> {
        let publisher = self.completed_trainer(task_id, &trainer, Function::CalcNewRep)?;
        let mut pending = self.pending(task_id, &trainer);
        if pending.reputation.is_some() {
            return Err(ContractError::AlreadyComputed("reputation update"));
        }
        let (Some(o), Some(s), Some(good)) = (pending.objective, pending.subjective, pending.judged_good)
        else {
            return Err(ContractError::ReputationPending(trainer));
        };
        let params = self.config.reputation;
        let local = reputation::local_rep(o, s, params.gamma);
        let record = self
            .reputation
            .entry(trainer)
            .or_insert_with(|| ReputationRecord::new(params.r_init));
        record.tasks += 1;
        record.reputation = reputation::update_rep(record.reputation, local, record.tasks, &params);
        record.histories.entry(publisher).or_default().push(InteractionRecord {
            task_index: task_id,
            judged_good: good,
        });
        pending.local = Some(local);
        pending.reputation = Some(record.reputation);
        self.pending_rep.insert((task_id, trainer), pending);
        *self.publisher_interactions.entry(publisher).or_insert(0) += 1;
        Ok(())
    }

    pub(super) fn membership_vote(
        &mut self,
        voter: AccountId,
        action: MembershipAction,
    ) -> Result<(), ContractError> {
        if self.registry.vote(voter, action.clone())? == VoteOutcome::Applied {
            self.on_membership_applied(&action);
        }
        Ok(())
    }

    fn on_membership_applied(&mut self, action: &MembershipAction) {
        if let MembershipAction::Register { id, roles } = action {
            if roles.contains(&Role::TrainingAgent) {
                self.reputation
                    .insert(*id, ReputationRecord::new(self.config.reputation.r_init));
            }
        }
    }

    /// Registers an account directly with a given set of consortium votes.
    /// A newly admitted (or re-admitted) training agent starts at the
    /// initial reputation.
    pub fn register_account(
        &mut self,
        id: AccountId,
        roles: std::collections::BTreeSet<Role>,
        votes: &std::collections::BTreeSet<AccountId>,
    ) -> Result<(), ContractError> {
        let action = MembershipAction::Register {
            id,
            roles: roles.clone(),
        };
        self.registry.register_account(id, roles, votes)?;
        self.on_membership_applied(&action);
        Ok(())
    }
}
