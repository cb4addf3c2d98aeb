use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AccountId, MembershipAction, Role};
use crate::codec::{Canonical, CodecError, Hash32, Reader};
use crate::store::Cid;
use crate::{canonical_enum, canonical_struct};

use super::gas::GasUnits;

/// Contract entry points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Function {
    PublishTask,
    SubmitLocalModel,
    RecordScores,
    CalcObjectiveRep,
    CalcSubjectiveRep,
    CalcNewRep,
    LockDeposit,
    ReleaseRewards,
    MembershipVote,
    SelectTrainers,
    SubmitGlobalModel,
    CloseRound,
}

canonical_enum!(Function {
    PublishTask = 0,
    SubmitLocalModel = 1,
    RecordScores = 2,
    CalcObjectiveRep = 3,
    CalcSubjectiveRep = 4,
    CalcNewRep = 5,
    LockDeposit = 6,
    ReleaseRewards = 7,
    MembershipVote = 8,
    SelectTrainers = 9,
    SubmitGlobalModel = 10,
    CloseRound = 11,
});

impl Function {
    pub const ALL: [Function; 12] = [
        Function::PublishTask,
        Function::SubmitLocalModel,
        Function::RecordScores,
        Function::CalcObjectiveRep,
        Function::CalcSubjectiveRep,
        Function::CalcNewRep,
        Function::LockDeposit,
        Function::ReleaseRewards,
        Function::MembershipVote,
        Function::SelectTrainers,
        Function::SubmitGlobalModel,
        Function::CloseRound,
    ];

    /// Contract-level function name, as used in the gas calibration file.
    pub fn name(self) -> &'static str {
        match self {
            Function::PublishTask => "publishTask",
            Function::SubmitLocalModel => "submitLocalModel",
            Function::RecordScores => "recordScores",
            Function::CalcObjectiveRep => "calculateObjectiveRep",
            Function::CalcSubjectiveRep => "calculateSubjectiveRep",
            Function::CalcNewRep => "calculateNewRep",
            Function::LockDeposit => "lockDeposit",
            Function::ReleaseRewards => "releaseRewards",
            Function::MembershipVote => "membershipVote",
            Function::SelectTrainers => "selectTrainers",
            Function::SubmitGlobalModel => "submitGlobalModel",
            Function::CloseRound => "closeRound",
        }
    }

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Role the sender must hold.
    pub fn required_role(self) -> Role {
        match self {
            Function::PublishTask | Function::SelectTrainers => Role::TaskPublisher,
            Function::SubmitLocalModel | Function::LockDeposit => Role::TrainingAgent,
            Function::RecordScores
            | Function::CalcObjectiveRep
            | Function::CalcSubjectiveRep
            | Function::CalcNewRep
            | Function::ReleaseRewards
            | Function::CloseRound => Role::TrainingEvaluator,
            Function::SubmitGlobalModel => Role::Aggregator,
            Function::MembershipVote => Role::ConsortiumMember,
        }
    }

    /// Role the sender must NOT hold. Publishers never author evaluations,
    /// reputation inputs, aggregates or payouts.
    pub fn excluded_role(self) -> Option<Role> {
        match self {
            Function::RecordScores
            | Function::CalcObjectiveRep
            | Function::CalcSubjectiveRep
            | Function::CalcNewRep
            | Function::ReleaseRewards
            | Function::SubmitGlobalModel
            | Function::CloseRound => Some(Role::TaskPublisher),
            _ => None,
        }
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishTaskArgs {
    pub task_id: u64,
    pub model_cid: Cid,
    pub description_cid: Cid,
    pub validation_cid: Cid,
    pub total_rounds: u32,
    pub required_trainers: u32,
    pub reward: u64,
    pub required_accuracy: f64,
}

canonical_struct!(PublishTaskArgs {
    task_id,
    model_cid,
    description_cid,
    validation_cid,
    total_rounds,
    required_trainers,
    reward,
    required_accuracy
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundModel {
    pub task_id: u64,
    pub round: u32,
    pub cid: Cid,
}

canonical_struct!(RoundModel { task_id, round, cid });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScoresArgs {
    pub task_id: u64,
    pub round: u32,
    pub scores: BTreeMap<AccountId, f64>,
    /// Evaluators whose reports concurred on these scores.
    pub attesters: BTreeSet<AccountId>,
}

canonical_struct!(RecordScoresArgs {
    task_id,
    round,
    scores,
    attesters
});

/// Off-chain distance inputs to a trainer's objective reputation. Utility
/// and completeness are read from chain state by the contract itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRepArgs {
    pub task_id: u64,
    pub trainer: AccountId,
    pub distance: f64,
    pub normalized_distance: f64,
    pub tau: f64,
}

canonical_struct!(ObjectiveRepArgs {
    task_id,
    trainer,
    distance,
    normalized_distance,
    tau
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrainer {
    pub task_id: u64,
    pub trainer: AccountId,
}

canonical_struct!(TaskTrainer { task_id, trainer });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRound {
    pub task_id: u64,
    pub round: u32,
}

canonical_struct!(TaskRound { task_id, round });

/// Typed view of a transaction payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Call {
    PublishTask(PublishTaskArgs),
    SubmitLocalModel(RoundModel),
    RecordScores(RecordScoresArgs),
    CalcObjectiveRep(ObjectiveRepArgs),
    CalcSubjectiveRep(TaskTrainer),
    CalcNewRep(TaskTrainer),
    LockDeposit { task_id: u64 },
    ReleaseRewards { task_id: u64 },
    MembershipVote(MembershipAction),
    SelectTrainers { task_id: u64 },
    SubmitGlobalModel(RoundModel),
    CloseRound(TaskRound),
}

impl Call {
    pub fn function(&self) -> Function {
        match self {
            Call::PublishTask(_) => Function::PublishTask,
            Call::SubmitLocalModel(_) => Function::SubmitLocalModel,
            Call::RecordScores(_) => Function::RecordScores,
            Call::CalcObjectiveRep(_) => Function::CalcObjectiveRep,
            Call::CalcSubjectiveRep(_) => Function::CalcSubjectiveRep,
            Call::CalcNewRep(_) => Function::CalcNewRep,
            Call::LockDeposit { .. } => Function::LockDeposit,
            Call::ReleaseRewards { .. } => Function::ReleaseRewards,
            Call::MembershipVote(_) => Function::MembershipVote,
            Call::SelectTrainers { .. } => Function::SelectTrainers,
            Call::SubmitGlobalModel(_) => Function::SubmitGlobalModel,
            Call::CloseRound(_) => Function::CloseRound,
        }
    }

    /// Task the call refers to, if any.
    pub fn task_id(&self) -> Option<u64> {
        match self {
            Call::PublishTask(a) => Some(a.task_id),
            Call::SubmitLocalModel(a) | Call::SubmitGlobalModel(a) => Some(a.task_id),
            Call::RecordScores(a) => Some(a.task_id),
            Call::CalcObjectiveRep(a) => Some(a.task_id),
            Call::CalcSubjectiveRep(a) | Call::CalcNewRep(a) => Some(a.task_id),
            Call::LockDeposit { task_id }
            | Call::ReleaseRewards { task_id }
            | Call::SelectTrainers { task_id } => Some(*task_id),
            Call::CloseRound(a) => Some(a.task_id),
            Call::MembershipVote(_) => None,
        }
    }

    /// Argument bytes, without the function tag.
    pub fn encode_args(&self, out: &mut Vec<u8>) {
        match self {
            Call::PublishTask(a) => a.encode(out),
            Call::SubmitLocalModel(a) | Call::SubmitGlobalModel(a) => a.encode(out),
            Call::RecordScores(a) => a.encode(out),
            Call::CalcObjectiveRep(a) => a.encode(out),
            Call::CalcSubjectiveRep(a) | Call::CalcNewRep(a) => a.encode(out),
            Call::LockDeposit { task_id }
            | Call::ReleaseRewards { task_id }
            | Call::SelectTrainers { task_id } => task_id.encode(out),
            Call::MembershipVote(a) => a.encode(out),
            Call::CloseRound(a) => a.encode(out),
        }
    }

    pub fn decode_args(function: Function, payload: &[u8]) -> Result<Call, CodecError> {
        let mut r = Reader::new(payload);
        let call = match function {
            Function::PublishTask => Call::PublishTask(Canonical::decode(&mut r)?),
            Function::SubmitLocalModel => Call::SubmitLocalModel(Canonical::decode(&mut r)?),
            Function::RecordScores => Call::RecordScores(Canonical::decode(&mut r)?),
            Function::CalcObjectiveRep => Call::CalcObjectiveRep(Canonical::decode(&mut r)?),
            Function::CalcSubjectiveRep => Call::CalcSubjectiveRep(Canonical::decode(&mut r)?),
            Function::CalcNewRep => Call::CalcNewRep(Canonical::decode(&mut r)?),
            Function::LockDeposit => Call::LockDeposit {
                task_id: u64::decode(&mut r)?,
            },
            Function::ReleaseRewards => Call::ReleaseRewards {
                task_id: u64::decode(&mut r)?,
            },
            Function::MembershipVote => Call::MembershipVote(Canonical::decode(&mut r)?),
            Function::SelectTrainers => Call::SelectTrainers {
                task_id: u64::decode(&mut r)?,
            },
            Function::SubmitGlobalModel => Call::SubmitGlobalModel(Canonical::decode(&mut r)?),
            Function::CloseRound => Call::CloseRound(Canonical::decode(&mut r)?),
        };
        if r.remaining() != 0 {
            return Err(CodecError::TrailingBytes(r.remaining()));
        }
        Ok(call)
    }
}

/// Reasons a transaction is refused admission. A refused transaction never
/// touches contract state.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TxError {
    #[error("sender {0:?} is not a registered account")]
    UnknownSender(AccountId),
    #[error("{function} requires role {required:?}: {reason}")]
    RoleViolation {
        function: Function,
        required: Role,
        reason: String,
    },
    #[error("nonce {got} for {sender:?}, expected {expected}")]
    NonceMismatch {
        sender: AccountId,
        expected: u64,
        got: u64,
    },
    #[error("payload does not decode: {0}")]
    Malformed(#[from] CodecError),
    #[error("tx id does not match its contents")]
    TxIdMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub sender: AccountId,
    pub nonce: u64,
    pub function: Function,
    pub payload: Vec<u8>,
    /// Filled in when the transaction executes.
    pub gas_used: GasUnits,
}

canonical_struct!(Transaction {
    tx_id,
    sender,
    nonce,
    function,
    payload,
    gas_used
});

impl Transaction {
    pub fn new(sender: AccountId, nonce: u64, call: &Call) -> Self {
        let mut payload = Vec::new();
        call.encode_args(&mut payload);
        let function = call.function();
        Self {
            tx_id: Self::compute_id(&sender, function, &payload, nonce),
            sender,
            nonce,
            function,
            payload,
            gas_used: GasUnits::ZERO,
        }
    }

    pub fn compute_id(sender: &AccountId, function: Function, payload: &[u8], nonce: u64) -> Hash32 {
        let mut buf = Vec::with_capacity(payload.len() + 64);
        sender.encode(&mut buf);
        function.encode(&mut buf);
        payload.to_vec().encode(&mut buf);
        nonce.encode(&mut buf);
        crate::codec::sha256(&buf)
    }

    pub fn verify_id(&self) -> Result<(), TxError> {
        if Self::compute_id(&self.sender, self.function, &self.payload, self.nonce) == self.tx_id {
            Ok(())
        } else {
            Err(TxError::TxIdMismatch)
        }
    }

    pub fn call(&self) -> Result<Call, TxError> {
        Ok(Call::decode_args(self.function, &self.payload)?)
    }
}
