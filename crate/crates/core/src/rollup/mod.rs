//! Rollup sequencer and its L1 bridge.
//!
//! The sequencer executes L2 transactions against its own copy of the
//! contract state as they arrive and packs them into batches of at most
//! `capacity`. Posting commits every batch to the L1 [`Bridge`], which
//! verifies each one by re-executing it from its last verified state, then
//! adopts the result. The proof is a binding hash of the pre-state root, the
//! transaction ids and the post-state root.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::gas::{CallContext, GasError, GasSchedule, GasUnits};
use crate::chain::tx::{Function, Transaction, TxError};
use crate::chain::Ledger;
use crate::codec::{sha256, Canonical, Hash32};
use crate::contracts::{ContractError, WorldState};

pub const DEFAULT_CAPACITY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BatchPhase {
    Open,
    Sealed,
    Committed,
    Proven,
    Executed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_no: u64,
    pub txs: Vec<Transaction>,
    pub pre_state_root: Hash32,
    pub post_state_root: Hash32,
    pub proof: Hash32,
    pub phase: BatchPhase,
}

impl Batch {
    fn open(batch_no: u64, pre_state_root: Hash32) -> Self {
        Self {
            batch_no,
            txs: Vec::new(),
            pre_state_root,
            post_state_root: pre_state_root,
            proof: [0; 32],
            phase: BatchPhase::Open,
        }
    }
}

/// Commitment over a batch's state transition.
pub fn batch_proof(pre: &Hash32, txs: &[Transaction], post: &Hash32) -> Hash32 {
    let mut buf = Vec::with_capacity(72 + 32 * txs.len());
    pre.encode(&mut buf);
    let ids: Vec<Hash32> = txs.iter().map(|t| t.tx_id).collect();
    ids.encode(&mut buf);
    post.encode(&mut buf);
    sha256(&buf)
}

pub fn batches_needed(n_calls: u64, capacity: u64) -> u64 {
    n_calls.div_ceil(capacity.max(1))
}

/// L2 throughput when every L1 transaction carries a full batch.
pub fn effective_throughput(batch_capacity: u64, l1_tps: f64) -> f64 {
    batch_capacity as f64 * l1_tps
}

/// Gas for one posting session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasReport {
    /// Calls per function in the session.
    pub calls: BTreeMap<Function, u64>,
    pub per_batch_commit: Vec<GasUnits>,
    pub verify: GasUnits,
    pub execute: GasUnits,
    pub total: GasUnits,
    /// Gas the same transactions would cost executed directly on L1.
    pub l1_equivalent: GasUnits,
}

impl GasReport {
    pub fn batches(&self) -> usize {
        self.per_batch_commit.len()
    }

    pub fn commit(&self) -> GasUnits {
        self.per_batch_commit.iter().copied().sum()
    }
}

#[derive(Debug, Error)]
pub enum RollupError {
    #[error("no transactions to post")]
    NothingToPost,
    #[error(transparent)]
    Gas(#[from] GasError),
}

/// What L1 keeps per batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_no: u64,
    pub tx_count: usize,
    pub pre_state_root: Hash32,
    pub post_state_root: Hash32,
    pub proof: Hash32,
    pub commit_gas: GasUnits,
    pub phase: BatchPhase,
}

/// L1 side of the rollup: the last verified L2 state and the batch log.
#[derive(Debug, Clone)]
pub struct Bridge {
    verified: WorldState,
    verified_root: Hash32,
    records: Vec<BatchRecord>,
    reports: Vec<GasReport>,
}

impl Bridge {
    pub fn new(genesis_state: WorldState) -> Self {
        Self {
            verified_root: genesis_state.state_hash(),
            verified: genesis_state,
            records: Vec::new(),
            reports: Vec::new(),
        }
    }

    pub fn verified_state(&self) -> &WorldState {
        &self.verified
    }

    pub fn verified_root(&self) -> Hash32 {
        self.verified_root
    }

    pub fn records(&self) -> &[BatchRecord] {
        &self.records
    }

    pub fn reports(&self) -> &[GasReport] {
        &self.reports
    }

    pub fn total_gas(&self) -> GasUnits {
        self.reports.iter().map(|r| r.total).sum()
    }

    /// Checks a committed batch against the verified state. Returns the
    /// post-state when the batch is valid.
    pub fn verify_batch(&self, batch: &Batch) -> Option<WorldState> {
        if batch.phase != BatchPhase::Committed
            || batch.pre_state_root != self.verified_root
            || batch.proof != batch_proof(&batch.pre_state_root, &batch.txs, &batch.post_state_root)
        {
            return None;
        }
        let mut state = self.verified.clone();
        for tx in &batch.txs {
            if state.apply_tx(tx).is_err() {
                return None;
            }
        }
        (state.state_hash() == batch.post_state_root).then_some(state)
    }

    fn execute(&mut self, state: WorldState, root: Hash32) {
        self.verified = state;
        self.verified_root = root;
    }
}

/// Outcome of one posting session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostOutcome {
    pub report: GasReport,
    pub executed: Vec<u64>,
    /// Batches that failed verification; their transactions (and those of
    /// every later batch) went back to the sequencer's pool.
    pub rejected: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Sequencer {
    capacity: usize,
    state: WorldState,
    open: Option<Batch>,
    sealed: Vec<Batch>,
    next_batch_no: u64,
    /// Root the next batch starts from when nothing is sealed or open.
    base_root: Hash32,
    returned: Vec<Transaction>,
}

impl Sequencer {
    /// Starts from the bridge's verified state.
    pub fn new(capacity: usize, bridge: &Bridge) -> Self {
        Self {
            capacity: capacity.max(1),
            state: bridge.verified_state().clone(),
            open: None,
            sealed: Vec::new(),
            next_batch_no: bridge.records().last().map_or(1, |r| r.batch_no + 1),
            base_root: bridge.verified_root(),
            returned: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// L2 state including every enqueued transaction.
    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn sealed(&self) -> &[Batch] {
        &self.sealed
    }

    /// Sealed batches, mutable. Lets tests model a faulty sequencer.
    pub fn sealed_mut(&mut self) -> &mut [Batch] {
        &mut self.sealed
    }

    pub fn open_len(&self) -> usize {
        self.open.as_ref().map_or(0, |b| b.txs.len())
    }

    pub fn pending_txs(&self) -> usize {
        self.sealed.iter().map(|b| b.txs.len()).sum::<usize>() + self.open_len()
    }

    /// Transactions handed back after a failed verification.
    pub fn take_returned(&mut self) -> Vec<Transaction> {
        std::mem::take(&mut self.returned)
    }

    /// Executes `tx` on L2 and appends it to the open batch. Returns the
    /// position within that batch. A refused tx leaves everything as it was.
    pub fn enqueue_l2(&mut self, tx: Transaction) -> Result<usize, TxError> {
        self.enqueue(tx).map(|(position, _)| position)
    }

    /// [`Sequencer::enqueue_l2`], also reporting the contract outcome.
    pub fn enqueue(&mut self, tx: Transaction) -> Result<(usize, Result<(), ContractError>), TxError> {
        let root = self.state_root_before_open();
        let outcome = self.state.apply_tx(&tx)?;
        if self.open.is_none() {
            self.open = Some(Batch::open(self.next_batch_no, root));
            self.next_batch_no += 1;
        }
        let batch = self.open.as_mut().expect("opened above");
        batch.txs.push(tx);
        let position = batch.txs.len() - 1;
        if batch.txs.len() >= self.capacity {
            self.seal();
        }
        Ok((position, outcome))
    }

    fn state_root_before_open(&self) -> Hash32 {
        match (&self.open, self.sealed.last()) {
            (Some(b), _) => b.pre_state_root,
            (None, Some(last)) => last.post_state_root,
            (None, None) => self.base_root,
        }
    }

    /// Seals the open batch, if any.
    pub fn seal(&mut self) {
        if let Some(mut b) = self.open.take() {
            b.post_state_root = self.state.state_hash();
            b.proof = batch_proof(&b.pre_state_root, &b.txs, &b.post_state_root);
            b.phase = BatchPhase::Sealed;
            self.sealed.push(b);
        }
    }

    /// Seals the open batch, commits every sealed batch to L1, verifies and
    /// executes them. Verify and execute are charged once for the session.
    pub fn seal_and_post(&mut self, ledger: &mut Ledger) -> Result<PostOutcome, RollupError> {
        self.seal();
        if self.sealed.is_empty() {
            return Err(RollupError::NothingToPost);
        }
        let gas = ledger.gas_schedule().clone();
        let (report, contexts) = session_gas(&gas, &self.sealed)?;

        let mut batches = std::mem::take(&mut self.sealed);
        for (b, ctxs) in batches.iter_mut().zip(&contexts) {
            b.phase = BatchPhase::Committed;
            for (tx, (f, ctx)) in b.txs.iter_mut().zip(ctxs) {
                tx.gas_used = gas.l2_commit_share(*f, *ctx)?;
            }
        }

        let bridge = ledger.bridge_mut();
        let mut executed = Vec::new();
        let mut rejected = Vec::new();
        let mut failed = false;
        for (i, mut b) in batches.into_iter().enumerate() {
            let verdict = if failed { None } else { bridge.verify_batch(&b) };
            match verdict {
                Some(post) => {
                    b.phase = BatchPhase::Proven;
                    bridge.execute(post, b.post_state_root);
                    b.phase = BatchPhase::Executed;
                    executed.push(b.batch_no);
                }
                None => {
                    failed = true;
                    rejected.push(b.batch_no);
                    self.returned.extend(b.txs.iter().cloned().map(|mut t| {
                        t.gas_used = GasUnits::ZERO;
                        t
                    }));
                }
            }
            bridge.records.push(BatchRecord {
                batch_no: b.batch_no,
                tx_count: b.txs.len(),
                pre_state_root: b.pre_state_root,
                post_state_root: b.post_state_root,
                proof: b.proof,
                commit_gas: report.per_batch_commit[i],
                phase: b.phase,
            });
        }
        bridge.reports.push(report.clone());
        if failed {
            // roll back to what L1 has verified
            self.state = bridge.verified_state().clone();
            self.open = None;
        }
        self.base_root = bridge.verified_root();
        Ok(PostOutcome {
            report,
            executed,
            rejected,
        })
    }
}

type SessionContexts = Vec<Vec<(Function, CallContext)>>;

/// Prices a posting session. Each transaction's context is its ordinal among
/// same-function transactions in the session and that function's count.
pub fn session_gas(gas: &GasSchedule, batches: &[Batch]) -> Result<(GasReport, SessionContexts), GasError> {
    let mut calls: BTreeMap<Function, u64> = BTreeMap::new();
    for tx in batches.iter().flat_map(|b| &b.txs) {
        *calls.entry(tx.function).or_insert(0) += 1;
    }
    let mut seen: BTreeMap<Function, u64> = BTreeMap::new();
    let mut contexts = Vec::with_capacity(batches.len());
    let mut per_batch_commit = Vec::with_capacity(batches.len());
    let mut l1_equivalent = GasUnits::ZERO;
    for b in batches {
        let ctxs: Vec<(Function, CallContext)> = b
            .txs
            .iter()
            .map(|tx| {
                let k = seen.entry(tx.function).or_insert(0);
                *k += 1;
                (tx.function, CallContext::new(*k, calls[&tx.function]))
            })
            .collect();
        per_batch_commit.push(gas.l2_batch_commit(&ctxs)?);
        for (f, ctx) in &ctxs {
            l1_equivalent += gas.l1_gas_for(*f, *ctx)?;
        }
        contexts.push(ctxs);
    }
    let (verify, execute) = gas.l2_session_overhead(&calls)?;
    let total = per_batch_commit.iter().copied().sum::<GasUnits>() + verify + execute;
    Ok((
        GasReport {
            calls,
            per_batch_commit,
            verify,
            execute,
            total,
            l1_equivalent,
        },
        contexts,
    ))
}

#[cfg(test)]
mod tests;
