use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::chain::tx::{Call, PublishTaskArgs, RoundModel, TaskRound, TaskTrainer};
use crate::chain::{AccountId, LedgerConfig, Role};
use crate::contracts::{ContractConfig, Genesis};
use crate::store::Cid;

struct Net {
    ledger: Ledger,
    seq: Sequencer,
    tp: AccountId,
    tas: Vec<AccountId>,
    te: AccountId,
}

fn net(n_ta: usize) -> Net {
    let tp = AccountId::named("tp");
    let te = AccountId::named("te");
    let tas: Vec<_> = (0..n_ta).map(|i| AccountId::named(&format!("ta{i}"))).collect();
    let mut accounts = vec![
        (tp, BTreeSet::from([Role::TaskPublisher])),
        (te, BTreeSet::from([Role::TrainingEvaluator, Role::Aggregator])),
    ];
    accounts.extend(tas.iter().map(|a| (*a, BTreeSet::from([Role::TrainingAgent]))));
    accounts.extend((0..4).map(|i| (AccountId::named(&format!("v{i}")), BTreeSet::from([Role::Validator]))));
    let mut balances = BTreeMap::from([(tp, 1_000_000_000)]);
    balances.extend(tas.iter().map(|a| (*a, 1_000_000)));
    let genesis = Genesis {
        accounts,
        balances,
        config: ContractConfig::default(),
    };
    let ledger = Ledger::new(&genesis, GasSchedule::table_mode(), LedgerConfig::default());
    let seq = Sequencer::new(DEFAULT_CAPACITY, ledger.bridge());
    Net {
        ledger,
        seq,
        tp,
        tas,
        te,
    }
}

fn publish(task_id: u64, rounds: u32, k: u32) -> Call {
    Call::PublishTask(PublishTaskArgs {
        task_id,
        model_cid: Cid::of(b"model"),
        description_cid: Cid::of(b"desc"),
        validation_cid: Cid::of(b"val"),
        total_rounds: rounds,
        required_trainers: k,
        reward: 1_000,
        required_accuracy: 0.5,
    })
}

impl Net {
    fn tx(&self, sender: AccountId, call: &Call) -> Transaction {
        Transaction::new(sender, self.seq.state().nonce(&sender), call)
    }

    fn l2(&mut self, sender: AccountId, call: Call) {
        let tx = self.tx(sender, &call);
        self.seq.enqueue_l2(tx).unwrap();
    }

    fn post(&mut self) -> PostOutcome {
        self.seq.seal_and_post(&mut self.ledger).unwrap()
    }

    /// Publishes a task with every trainer enrolled and collateral locked.
    fn started_task(&mut self, task_id: u64, rounds: u32) {
        let k = self.tas.len() as u32;
        self.l2(self.tp, publish(task_id, rounds, k));
        self.l2(self.tp, Call::SelectTrainers { task_id });
        for t in self.tas.clone() {
            self.l2(t, Call::LockDeposit { task_id });
        }
    }
}

#[test]
fn publish_task_100_replays_table_row() {
    let mut n = net(0);
    for id in 0..100 {
        n.l2(n.tp, publish(id, 1, 1));
    }
    let out = n.post();
    assert_eq!(out.report.batches(), 5);
    assert_eq!(out.report.total, GasUnits(742_115));
    assert_eq!(out.report.commit(), GasUnits(685_639));
    assert_eq!(out.report.l1_equivalent, GasUnits(17_736_655));
    assert_eq!(out.executed.len(), 5);
    assert!(out.rejected.is_empty());
    assert_eq!(n.ledger.bridge().verified_root(), n.seq.state().state_hash());
}

#[test]
fn submit_local_model_50_replays_table_row() {
    let mut n = net(50);
    n.started_task(1, 1);
    n.post();
    for t in n.tas.clone() {
        let cid = Cid::of(t.0.as_slice());
        n.l2(t, Call::SubmitLocalModel(RoundModel { task_id: 1, round: 0, cid }));
    }
    let out = n.post();
    assert_eq!(out.report.batches(), 3);
    assert_eq!(out.report.total, GasUnits(241_568));
    assert_eq!(out.report.l1_equivalent, GasUnits(2_288_330));
}

#[test]
fn subjective_rep_5_replays_table_row() {
    let mut n = net(5);
    n.started_task(1, 1);
    let te = n.te;
    let tas = n.tas.clone();
    for t in &tas {
        let cid = Cid::of(t.0.as_slice());
        n.l2(*t, Call::SubmitLocalModel(RoundModel { task_id: 1, round: 0, cid }));
    }
    n.l2(te, Call::CloseRound(TaskRound { task_id: 1, round: 0 }));
    n.l2(
        te,
        Call::RecordScores(crate::chain::tx::RecordScoresArgs {
            task_id: 1,
            round: 0,
            scores: tas.iter().map(|t| (*t, 0.9)).collect(),
            attesters: BTreeSet::from([te]),
        }),
    );
    n.l2(te, Call::SubmitGlobalModel(RoundModel { task_id: 1, round: 0, cid: Cid::of(b"g") }));
    for t in &tas {
        n.l2(
            te,
            Call::CalcObjectiveRep(crate::chain::tx::ObjectiveRepArgs {
                task_id: 1,
                trainer: *t,
                distance: 0.0,
                normalized_distance: 0.0,
                tau: 0.5,
            }),
        );
    }
    n.post();
    for t in &tas {
        n.l2(te, Call::CalcSubjectiveRep(TaskTrainer { task_id: 1, trainer: *t }));
    }
    let out = n.post();
    assert_eq!(out.report.batches(), 1);
    assert_eq!(out.report.total, GasUnits(87_280));
    assert_eq!(out.report.l1_equivalent, GasUnits(196_296));
}

#[test]
fn every_tx_gets_a_commit_share() {
    let mut n = net(0);
    for id in 0..7 {
        n.l2(n.tp, publish(id, 1, 1));
    }
    let before = n.seq.sealed().len();
    assert_eq!(before, 0);
    assert_eq!(n.seq.open_len(), 7);
    let out = n.post();
    assert_eq!(out.report.calls[&Function::PublishTask], 7);
    assert_eq!(n.seq.pending_txs(), 0);
}

#[test]
fn role_violating_enqueue_leaves_batch_unchanged() {
    let mut n = net(1);
    n.l2(n.tp, publish(1, 1, 1));
    let root = n.seq.state().state_hash();
    let ta = n.tas[0];
    let tx = n.tx(ta, &publish(2, 1, 1));
    assert!(matches!(n.seq.enqueue_l2(tx), Err(TxError::RoleViolation { .. })));
    assert_eq!(n.seq.open_len(), 1);
    assert_eq!(n.seq.state().state_hash(), root);
}

#[test]
fn batches_seal_at_capacity() {
    let mut n = net(0);
    for id in 0..41 {
        n.l2(n.tp, publish(id, 1, 1));
    }
    assert_eq!(n.seq.sealed().len(), 2);
    assert_eq!(n.seq.open_len(), 1);
    let sealed = n.seq.sealed();
    assert_eq!(sealed[0].post_state_root, sealed[1].pre_state_root);
}

#[test]
fn tampered_proof_is_rejected_with_later_batches() {
    let mut n = net(0);
    for id in 0..45 {
        n.l2(n.tp, publish(id, 1, 1));
    }
    let genesis_root = n.ledger.bridge().verified_root();
    n.seq.sealed_mut()[1].proof[0] ^= 1;
    let out = n.post();
    assert_eq!(out.executed, vec![1]);
    assert_eq!(out.rejected, vec![2, 3]);
    let returned = n.seq.take_returned();
    assert_eq!(returned.len(), 25);
    assert_ne!(n.ledger.bridge().verified_root(), genesis_root);
    assert_eq!(n.seq.state().state_hash(), n.ledger.bridge().verified_root());
    let phases: Vec<_> = n.ledger.bridge().records().iter().map(|r| r.phase).collect();
    assert_eq!(phases, vec![BatchPhase::Executed, BatchPhase::Committed, BatchPhase::Committed]);

    // the returned transactions replay cleanly on the rolled back state
    for tx in returned {
        n.seq.enqueue_l2(tx).unwrap();
    }
    let out = n.post();
    assert!(out.rejected.is_empty());
    assert_eq!(n.ledger.bridge().verified_state().tasks.len(), 45);
}

#[test]
fn forged_post_root_is_rejected() {
    let mut n = net(0);
    n.l2(n.tp, publish(1, 1, 1));
    n.seq.seal();
    let b = &mut n.seq.sealed_mut()[0];
    b.post_state_root = [7; 32];
    b.proof = batch_proof(&b.pre_state_root, &b.txs, &b.post_state_root);
    let out = n.post();
    assert_eq!(out.rejected, vec![1]);
}

#[test]
fn replayed_batch_is_rejected() {
    let mut n = net(0);
    n.l2(n.tp, publish(1, 1, 1));
    n.seq.seal();
    let mut copy = n.seq.sealed()[0].clone();
    n.post();
    copy.phase = BatchPhase::Committed;
    assert!(n.ledger.bridge().verify_batch(&copy).is_none());
}

#[test]
fn nothing_to_post() {
    let mut n = net(0);
    assert!(matches!(n.seq.seal_and_post(&mut n.ledger), Err(RollupError::NothingToPost)));
}

#[test]
fn amplification() {
    assert_eq!(effective_throughput(20, 150.0), 3000.0);
    assert_eq!(batches_needed(5, 20), 1);
    assert_eq!(batches_needed(20, 20), 1);
    assert_eq!(batches_needed(50, 20), 3);
    assert_eq!(batches_needed(100, 20), 5);
    assert_eq!(batches_needed(0, 20), 0);
}

#[test]
fn l1_and_l2_reach_the_same_state() {
    let mut n = net(3);
    n.started_task(1, 2);
    let calls: Vec<(AccountId, Call)> = {
        let mut v = vec![(n.tp, publish(1, 2, 3)), (n.tp, Call::SelectTrainers { task_id: 1 })];
        v.extend(n.tas.iter().map(|t| (*t, Call::LockDeposit { task_id: 1 })));
        v
    };
    n.post();
    for (sender, call) in calls {
        let tx = Transaction::new(sender, n.ledger.pending_state().nonce(&sender), &call);
        n.ledger.submit_tx(tx).unwrap();
    }
    n.ledger.drain().unwrap();
    assert_eq!(n.ledger.state_hash(), n.ledger.bridge().verified_root());
}
