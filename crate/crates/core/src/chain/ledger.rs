use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gas::{CallContext, GasError, GasSchedule, GasUnits};
use super::tx::{Function, Transaction, TxError};
use super::{AccountId, Role};
use crate::canonical_struct;
use crate::codec::{Canonical, Hash32};
use crate::contracts::{ContractError, Genesis, WorldState};
use crate::rollup::Bridge;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent: Hash32,
    /// Executed transactions with `gas_used` filled in.
    pub txs: Vec<Transaction>,
    pub proposer: AccountId,
    pub votes: BTreeSet<AccountId>,
    /// Contract state hash after the block.
    pub state_root: Hash32,
}

canonical_struct!(Block {
    height,
    parent,
    txs,
    proposer,
    votes,
    state_root
});

impl Block {
    pub fn hash(&self) -> Hash32 {
        self.content_hash()
    }

    pub fn gas_used(&self) -> GasUnits {
        self.txs.iter().map(|t| t.gas_used).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxStatus {
    Applied,
    Reverted(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: Hash32,
    pub block: u64,
    pub function: Function,
    pub status: TxStatus,
    pub gas: GasUnits,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerConfig {
    pub max_txs_per_block: usize,
    /// Validators that withhold their vote.
    pub byzantine: BTreeSet<AccountId>,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            max_txs_per_block: 100,
            byzantine: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("proposer {got:?} is not the scheduled validator {expected:?}")]
    WrongProposer { expected: AccountId, got: AccountId },
    #[error("no pending transactions")]
    EmptyPool,
    #[error("{votes} votes, quorum needs {needed}")]
    QuorumNotMet { votes: usize, needed: usize },
    #[error("no validators registered")]
    NoValidators,
    #[error(transparent)]
    Gas(#[from] GasError),
}

/// L1 ledger. Admission is checked against the speculative state (committed
/// state plus every pooled transaction), so a transaction accepted into the
/// pool is checked exactly as it will later execute.
#[derive(Debug, Clone)]
pub struct Ledger {
    committed: WorldState,
    pending: WorldState,
    pool: VecDeque<Transaction>,
    blocks: Vec<Block>,
    receipts: Vec<Receipt>,
    gas: GasSchedule,
    config: LedgerConfig,
    bridge: Bridge,
}

impl Ledger {
    pub fn new(genesis: &Genesis, gas: GasSchedule, config: LedgerConfig) -> Self {
        let state = WorldState::genesis(genesis);
        Self {
            bridge: Bridge::new(state.clone()),
            pending: state.clone(),
            committed: state,
            pool: VecDeque::new(),
            blocks: Vec::new(),
            receipts: Vec::new(),
            gas,
            config,
        }
    }

    pub fn state(&self) -> &WorldState {
        &self.committed
    }

    /// Committed state with all pooled transactions applied.
    pub fn pending_state(&self) -> &WorldState {
        &self.pending
    }

    pub fn state_hash(&self) -> Hash32 {
        self.committed.state_hash()
    }

    pub fn gas_schedule(&self) -> &GasSchedule {
        &self.gas
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn bridge(&self) -> &Bridge {
        &self.bridge
    }

    pub fn bridge_mut(&mut self) -> &mut Bridge {
        &mut self.bridge
    }

    pub fn total_gas(&self) -> GasUnits {
        self.blocks.iter().map(Block::gas_used).sum()
    }

    pub fn validators(&self) -> Vec<AccountId> {
        self.committed.registry.with_role(Role::Validator)
    }

    /// Validator scheduled to propose the next block.
    pub fn expected_proposer(&self) -> Option<AccountId> {
        let validators = self.validators();
        if validators.is_empty() {
            return None;
        }
        let height = self.blocks.len() as u64;
        Some(validators[(height % validators.len() as u64) as usize])
    }

    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Hash32, TxError> {
        let id = tx.tx_id;
        let _ = self.submit(tx)?;
        Ok(id)
    }

    /// Pools `tx` and reports how it will execute. A reverting tx is still
    /// pooled; it will be mined, charged and receipted as reverted.
    pub fn submit(&mut self, tx: Transaction) -> Result<Result<(), ContractError>, TxError> {
        let outcome = self.pending.apply_tx(&tx)?;
        self.pool.push_back(tx);
        Ok(outcome)
    }

    pub fn produce_block(&mut self, proposer: AccountId, max_txs: usize) -> Result<&Block, LedgerError> {
        let validators = self.validators();
        let expected = self.expected_proposer().ok_or(LedgerError::NoValidators)?;
        if proposer != expected {
            return Err(LedgerError::WrongProposer {
                expected,
                got: proposer,
            });
        }
        if self.pool.is_empty() {
            return Err(LedgerError::EmptyPool);
        }
        let votes: BTreeSet<AccountId> = validators
            .iter()
            .filter(|v| !self.config.byzantine.contains(v))
            .copied()
            .collect();
        let needed = (2 * validators.len()).div_ceil(3);
        if votes.len() < needed {
            return Err(LedgerError::QuorumNotMet {
                votes: votes.len(),
                needed,
            });
        }

        let take = max_txs.min(self.pool.len());
        let mut per_function: BTreeMap<Function, u64> = BTreeMap::new();
        for tx in self.pool.iter().take(take) {
            *per_function.entry(tx.function).or_insert(0) += 1;
        }
        // price everything before mutating, so a gas error leaves the ledger as it was
        let mut seen: BTreeMap<Function, u64> = BTreeMap::new();
        let mut charges = Vec::with_capacity(take);
        for tx in self.pool.iter().take(take) {
            let ordinal = seen.entry(tx.function).or_insert(0);
            *ordinal += 1;
            let ctx = CallContext::new(*ordinal, per_function[&tx.function]);
            charges.push(self.gas.l1_gas_for(tx.function, ctx)?);
        }

        let height = self.blocks.len() as u64;
        let mut txs = Vec::with_capacity(take);
        for gas in charges {
            let mut tx = self.pool.pop_front().expect("counted above");
            let status = match self.committed.apply_tx(&tx) {
                Ok(Ok(())) => TxStatus::Applied,
                Ok(Err(e)) => TxStatus::Reverted(e.to_string()),
                Err(e) => unreachable!("pooled tx passed admission on the same state: {e}"),
            };
            tx.gas_used = gas;
            self.receipts.push(Receipt {
                tx_id: tx.tx_id,
                block: height,
                function: tx.function,
                status,
                gas,
            });
            txs.push(tx);
        }
        let block = Block {
            height,
            parent: self.blocks.last().map_or([0; 32], Block::hash),
            txs,
            proposer,
            votes,
            state_root: self.committed.state_hash(),
        };
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// Produces a block from the scheduled proposer with the configured size.
    pub fn produce_next(&mut self) -> Result<&Block, LedgerError> {
        let proposer = self.expected_proposer().ok_or(LedgerError::NoValidators)?;
        self.produce_block(proposer, self.config.max_txs_per_block)
    }

    /// Produces blocks until the pool is empty.
    pub fn drain(&mut self) -> Result<(), LedgerError> {
        while !self.pool.is_empty() {
            self.produce_next()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::chain::tx::{Call, PublishTaskArgs};
    use crate::chain::{AccountId, Role};
    use crate::contracts::ContractConfig;
    use crate::store::Cid;

    fn validators(n: usize) -> Vec<AccountId> {
        let mut v: Vec<_> = (0..n).map(|i| AccountId::named(&format!("v{i}"))).collect();
        v.sort();
        v
    }

    fn ledger(n_validators: usize, byzantine: &[usize]) -> (Ledger, AccountId) {
        let tp = AccountId::named("tp");
        let vs = validators(n_validators);
        let mut accounts = vec![(tp, BTreeSet::from([Role::TaskPublisher]))];
        accounts.extend(vs.iter().map(|v| (*v, BTreeSet::from([Role::Validator]))));
        let genesis = Genesis {
            accounts,
            balances: BTreeMap::from([(tp, 10_000)]),
            config: ContractConfig::default(),
        };
        let config = LedgerConfig {
            byzantine: byzantine.iter().map(|i| vs[*i]).collect(),
            ..LedgerConfig::default()
        };
        (Ledger::new(&genesis, GasSchedule::table_mode(), config), tp)
    }

    fn publish(l: &mut Ledger, tp: AccountId, task_id: u64, reward: u64) -> Result<Hash32, TxError> {
        let call = Call::PublishTask(PublishTaskArgs {
            task_id,
            model_cid: Cid::of(b"m"),
            description_cid: Cid::of(b"d"),
            validation_cid: Cid::of(b"v"),
            total_rounds: 1,
            required_trainers: 1,
            reward,
            required_accuracy: 0.5,
        });
        l.submit_tx(Transaction::new(tp, l.pending_state().nonce(&tp), &call))
    }

    #[test]
    fn block_links_to_parent_and_commits_state() {
        let (mut l, tp) = ledger(4, &[]);
        publish(&mut l, tp, 1, 10).unwrap();
        let b0 = l.produce_next().unwrap().clone();
        assert_eq!(b0.height, 0);
        assert_eq!(b0.parent, [0; 32]);
        assert_eq!(b0.state_root, l.state_hash());
        assert_eq!(b0.votes.len(), 4);
        publish(&mut l, tp, 2, 10).unwrap();
        let b1 = l.produce_next().unwrap().clone();
        assert_eq!(b1.parent, b0.hash());
        assert_eq!(b1.proposer, validators(4)[1]);
    }

    #[test]
    fn wrong_proposer_and_empty_pool() {
        let (mut l, tp) = ledger(4, &[]);
        assert!(matches!(l.produce_next(), Err(LedgerError::EmptyPool)));
        publish(&mut l, tp, 1, 10).unwrap();
        let wrong = validators(4)[2];
        assert!(matches!(l.produce_block(wrong, 10), Err(LedgerError::WrongProposer { .. })));
        assert_eq!(l.pool_len(), 1);
    }

    #[test]
    fn one_byzantine_of_four_still_commits() {
        let (mut l, tp) = ledger(4, &[3]);
        publish(&mut l, tp, 1, 10).unwrap();
        let b = l.produce_next().unwrap();
        assert_eq!(b.votes.len(), 3);
    }

    #[test]
    fn two_byzantine_of_four_stall() {
        let (mut l, tp) = ledger(4, &[0, 1]);
        publish(&mut l, tp, 1, 10).unwrap();
        let before = l.state_hash();
        assert!(matches!(
            l.produce_next(),
            Err(LedgerError::QuorumNotMet { votes: 2, needed: 3 })
        ));
        assert_eq!(l.pool_len(), 1);
        assert_eq!(l.state_hash(), before);
        assert!(l.blocks().is_empty());
    }

    #[test]
    fn no_validators() {
        let (mut l, tp) = ledger(0, &[]);
        publish(&mut l, tp, 1, 10).unwrap();
        assert!(matches!(l.produce_next(), Err(LedgerError::NoValidators)));
    }

    #[test]
    fn reverted_tx_is_receipted_and_charged() {
        let (mut l, tp) = ledger(4, &[]);
        publish(&mut l, tp, 1, 10).unwrap();
        publish(&mut l, tp, 1, 10).unwrap();
        l.drain().unwrap();
        let r = l.receipts();
        assert_eq!(r[0].status, TxStatus::Applied);
        assert!(matches!(r[1].status, TxStatus::Reverted(_)));
        assert!(r[1].gas > GasUnits::ZERO);
        assert_eq!(l.state().nonce(&tp), 2);
    }

    #[test]
    fn block_gas_matches_table_workload() {
        let (mut l, tp) = ledger(4, &[]);
        for id in 0..5 {
            publish(&mut l, tp, id, 10).unwrap();
        }
        let b = l.produce_next().unwrap();
        assert_eq!(b.gas_used(), l.gas_schedule().l1_workload(Function::PublishTask, 5).unwrap());
    }

    #[test]
    fn refused_tx_never_reaches_the_pool() {
        let (mut l, tp) = ledger(4, &[]);
        let stranger = AccountId::named("stranger");
        let call = Call::SelectTrainers { task_id: 1 };
        let err = l.submit_tx(Transaction::new(stranger, 0, &call)).unwrap_err();
        assert!(matches!(err, TxError::UnknownSender(_)));
        let stale = Transaction::new(tp, 5, &call);
        assert!(matches!(l.submit_tx(stale), Err(TxError::NonceMismatch { .. })));
        assert_eq!(l.pool_len(), 0);
    }

    proptest! {
        #[test]
        fn chain_is_linked(sizes in prop::collection::vec(1usize..6, 1..8)) {
            let (mut l, tp) = ledger(4, &[]);
            let mut id = 0;
            for s in &sizes {
                for _ in 0..*s {
                    publish(&mut l, tp, id, 1).unwrap();
                    id += 1;
                }
                l.produce_next().unwrap();
            }
            let blocks = l.blocks();
            prop_assert_eq!(blocks.len(), sizes.len());
            for w in blocks.windows(2) {
                prop_assert_eq!(w[1].parent, w[0].hash());
                prop_assert_eq!(w[1].height, w[0].height + 1);
            }
            prop_assert_eq!(blocks.last().unwrap().state_root, l.state_hash());
            prop_assert_eq!(l.state_hash(), l.pending_state().state_hash());
        }
    }
}
