//! Deposits and settlement.

use serde::{Deserialize, Serialize};

use super::{ContractError, Deposit, DepositKind, DepositState, TaskState, WorldState};
use crate::canonical_struct;
use crate::chain::AccountId;

/// Tokens paid out of a task's reward pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub account: AccountId,
    pub amount: u64,
}

canonical_struct!(Payout { account, amount });

/// Scores are turned into integer weights at this resolution before the
/// pool is split.
const WEIGHT_SCALE: f64 = 1e9;

/// Splits `pool` in proportion to `weights` using largest remainders: each
/// share is floored, then leftover tokens go one each to the largest
/// fractional parts, ties to the smaller id. Returns an empty split when
/// the total weight is zero.
pub fn largest_remainder_split(pool: u64, weights: &[(AccountId, u128)]) -> Vec<Payout> {
    let total: u128 = weights.iter().map(|(_, w)| w).sum();
    if total == 0 {
        return Vec::new();
    }
    let mut shares: Vec<(AccountId, u64, u128)> = weights
        .iter()
        .map(|&(id, w)| {
            let num = pool as u128 * w;
            (id, (num / total) as u64, num % total)
        })
        .collect();
    let assigned: u64 = shares.iter().map(|s| s.1).sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2).then(shares[a].0.cmp(&shares[b].0)));
    for &i in order.iter().take((pool - assigned) as usize) {
        shares[i].1 += 1;
    }
    shares.sort_by_key(|s| s.0);
    shares
        .into_iter()
        .map(|(account, amount, _)| Payout { account, amount })
        .collect()
}

impl WorldState {
    /// Collateral a trainer locks for a task.
    pub fn collateral_for(&self, task_id: u64) -> Result<u64, ContractError> {
        let task = self.task(task_id)?;
        let share = task.reward / u64::from(task.required_trainers.max(1));
        Ok((share as u128 * self.config.collateral_bps as u128 / 10_000) as u64)
    }

    pub(super) fn lock_deposit(&mut self, trainer: AccountId, task_id: u64) -> Result<(), ContractError> {
        let task = self.task(task_id)?;
        if !task.is_trainer(&trainer) {
            return Err(ContractError::NotEnrolled(trainer));
        }
        if task.state == TaskState::Completed {
            return Err(ContractError::WrongState {
                task_id,
                function: crate::chain::Function::LockDeposit,
                state: task.state,
                expected: TaskState::Training,
            });
        }
        let key = (task_id, trainer, DepositKind::TrainerCollateral);
        if self.deposits.contains_key(&key) {
            return Err(ContractError::AlreadyLocked);
        }
        let amount = self.collateral_for(task_id)?;
        let have = self.balance(&trainer);
        if have < amount {
            return Err(ContractError::InsufficientFunds { need: amount, have });
        }
        self.balances.insert(trainer, have - amount);
        self.deposits.insert(
            key,
            Deposit {
                owner: trainer,
                task_id,
                kind: DepositKind::TrainerCollateral,
                amount,
                state: DepositState::Locked,
            },
        );
        Ok(())
    }

    /// Final task score of a trainer: mean over all rounds, a missed round
    /// counting as zero.
    pub fn final_score(&self, task_id: u64, trainer: &AccountId) -> f64 {
        let rounds = self.round_scores(task_id, trainer);
        if rounds.is_empty() {
            return 0.0;
        }
        rounds.iter().map(|s| s.unwrap_or(0.0)).sum::<f64>() / rounds.len() as f64
    }

    /// Pays out a completed task from on-chain state alone. Trainers whose
    /// local reputation for the task reaches the trust threshold share the
    /// pool by final score and get their collateral back; the rest forfeit
    /// collateral. With no payee the pool returns to the publisher.
    pub fn settle(&mut self, task_id: u64) -> Result<Vec<Payout>, ContractError> {
        let task = self.task(task_id)?;
        if task.state != TaskState::Completed {
            return Err(ContractError::NotCompleted(task_id));
        }
        if task.settled {
            return Err(ContractError::AlreadySettled(task_id));
        }
        let r_min = self.config.reputation.r_min;
        let mut eligible = Vec::new();
        let mut ineligible = Vec::new();
        for t in &task.trainers {
            let local = self
                .pending_rep
                .get(&(task_id, *t))
                .filter(|p| p.reputation.is_some())
                .and_then(|p| p.local)
                .ok_or(ContractError::ReputationPending(*t))?;
            if local >= r_min {
                eligible.push(*t);
            } else {
                ineligible.push(*t);
            }
        }
        let weights: Vec<(AccountId, u128)> = eligible
            .iter()
            .map(|t| {
                let s = self.final_score(task_id, t).clamp(0.0, 1.0);
                (*t, (s * WEIGHT_SCALE).round() as u128)
            })
            .collect();
        let publisher = task.publisher;
        let pool_key = (task_id, publisher, DepositKind::PublisherReward);
        let pool = self.deposits.get(&pool_key).map_or(0, |d| d.amount);
        let mut payouts = largest_remainder_split(pool, &weights);
        if payouts.is_empty() {
            payouts.push(Payout {
                account: publisher,
                amount: pool,
            });
        }

        for p in &payouts {
            *self.balances.entry(p.account).or_insert(0) += p.amount;
        }
        if let Some(d) = self.deposits.get_mut(&pool_key) {
            d.state = DepositState::Released;
        }
        for t in &eligible {
            if let Some(d) = self.deposits.get_mut(&(task_id, *t, DepositKind::TrainerCollateral)) {
                if d.state == DepositState::Locked {
                    d.state = DepositState::Released;
                    *self.balances.entry(*t).or_insert(0) += d.amount;
                }
            }
        }
        for t in &ineligible {
            if let Some(d) = self.deposits.get_mut(&(task_id, *t, DepositKind::TrainerCollateral)) {
                if d.state == DepositState::Locked {
                    d.state = DepositState::Slashed;
                    self.burned += d.amount;
                }
            }
        }
        self.tasks.get_mut(&task_id).expect("checked above").settled = true;
        self.payouts.insert(task_id, payouts.clone());
        Ok(payouts)
    }
}
