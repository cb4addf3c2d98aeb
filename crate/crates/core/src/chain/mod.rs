//! Permissioned L1 ledger: identities, roles, transactions, gas metering and
//! block production under a vote-count quorum rule.

pub mod gas;
pub mod ledger;
pub mod tx;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{sha256, Canonical, CodecError, Reader};
use crate::{canonical_enum, canonical_struct};

pub use gas::{CallContext, GasError, GasMode, GasSchedule, GasTable, GasUnits};
pub use ledger::{Block, Ledger, LedgerConfig, LedgerError, Receipt, TxStatus};
pub use tx::{Call, Function, Transaction, TxError};

/// Opaque 32-byte account identifier, ordered byte-lexicographically.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct AccountId(pub [u8; 32]);

impl AccountId {
    /// Deterministic identifier derived from a human-readable label.
    pub fn named(label: &str) -> Self {
        let mut buf = b"autodfl/account/".to_vec();
        buf.extend_from_slice(label.as_bytes());
        AccountId(sha256(&buf))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountId({})", &self.to_hex()[..8])
    }
}

impl FromStr for AccountId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let id: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "account id must be 32 bytes".to_string())?;
        Ok(AccountId(id))
    }
}

impl From<AccountId> for String {
    fn from(a: AccountId) -> String {
        a.to_hex()
    }
}

impl TryFrom<String> for AccountId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl Canonical for AccountId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(AccountId(<[u8; 32]>::decode(r)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    TaskPublisher,
    TrainingAgent,
    TrainingEvaluator,
    Aggregator,
    Validator,
    ConsortiumMember,
}

canonical_enum!(Role {
    TaskPublisher = 0,
    TrainingAgent = 1,
    TrainingEvaluator = 2,
    Aggregator = 3,
    Validator = 4,
    ConsortiumMember = 5,
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountEntry {
    pub roles: BTreeSet<Role>,
    pub active: bool,
}

canonical_struct!(AccountEntry { roles, active });

/// A membership change put to the consortium.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MembershipAction {
    Register { id: AccountId, roles: BTreeSet<Role> },
    Evict { id: AccountId },
}

impl Canonical for MembershipAction {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            MembershipAction::Register { id, roles } => {
                out.push(0);
                id.encode(out);
                roles.encode(out);
            }
            MembershipAction::Evict { id } => {
                out.push(1);
                id.encode(out);
            }
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match u8::decode(r)? {
            0 => Ok(MembershipAction::Register {
                id: AccountId::decode(r)?,
                roles: BTreeSet::decode(r)?,
            }),
            1 => Ok(MembershipAction::Evict {
                id: AccountId::decode(r)?,
            }),
            tag => Err(CodecError::InvalidTag {
                ty: "MembershipAction",
                tag,
            }),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{have} of {members} consortium votes, need a strict majority")]
    InsufficientVotes { have: usize, members: usize },
    #[error("account {0:?} is already registered")]
    DuplicateAccount(AccountId),
    #[error("account {0:?} is not an active member")]
    UnknownAccount(AccountId),
    #[error("voter {0:?} is not a consortium member")]
    NotConsortiumMember(AccountId),
    #[error("registration must grant at least one role")]
    NoRoles,
}

/// Outcome of a single consortium vote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteOutcome {
    Pending { votes: usize, members: usize },
    Applied,
}

/// On-chain permissioning: accounts, their roles and open membership
/// proposals. All role checks are pure reads of this structure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub accounts: BTreeMap<AccountId, AccountEntry>,
    pub proposals: BTreeMap<MembershipAction, BTreeSet<AccountId>>,
}

canonical_struct!(Registry {
    accounts,
    proposals
});

impl Registry {
    pub fn genesis<I>(accounts: I) -> Self
    where
        I: IntoIterator<Item = (AccountId, BTreeSet<Role>)>,
    {
        Self {
            accounts: accounts
                .into_iter()
                .map(|(id, roles)| (id, AccountEntry { roles, active: true }))
                .collect(),
            proposals: BTreeMap::new(),
        }
    }

    pub fn is_registered(&self, id: &AccountId) -> bool {
        self.accounts.get(id).is_some_and(|e| e.active)
    }

    pub fn has_role(&self, id: &AccountId, role: Role) -> bool {
        self.accounts
            .get(id)
            .is_some_and(|e| e.active && e.roles.contains(&role))
    }

    /// Active holders of `role`, in id order.
    pub fn with_role(&self, role: Role) -> Vec<AccountId> {
        self.accounts
            .iter()
            .filter(|(_, e)| e.active && e.roles.contains(&role))
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn consortium(&self) -> Vec<AccountId> {
        self.with_role(Role::ConsortiumMember)
    }

    fn has_majority(&self, votes: usize) -> bool {
        2 * votes > self.consortium().len()
    }

    fn check_applicable(&self, action: &MembershipAction) -> Result<(), RegistryError> {
        match action {
            MembershipAction::Register { id, roles } => {
                if roles.is_empty() {
                    return Err(RegistryError::NoRoles);
                }
                if self.is_registered(id) {
                    return Err(RegistryError::DuplicateAccount(*id));
                }
            }
            MembershipAction::Evict { id } => {
                if !self.is_registered(id) {
                    return Err(RegistryError::UnknownAccount(*id));
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, action: &MembershipAction) {
        self.proposals.remove(action);
        match action {
            MembershipAction::Register { id, roles } => {
                self.accounts.insert(
                    *id,
                    AccountEntry {
                        roles: roles.clone(),
                        active: true,
                    },
                );
            }
            MembershipAction::Evict { id } => {
                if let Some(e) = self.accounts.get_mut(id) {
                    e.active = false;
                }
            }
        }
    }

    /// Registers `id` when `votes` form a strict majority of the consortium.
    /// Otherwise the proposal and its votes are recorded and
    /// `InsufficientVotes` is returned.
    pub fn register_account(
        &mut self,
        id: AccountId,
        roles: BTreeSet<Role>,
        votes: &BTreeSet<AccountId>,
    ) -> Result<(), RegistryError> {
        self.decide(MembershipAction::Register { id, roles }, votes)
    }

    pub fn evict_account(
        &mut self,
        id: AccountId,
        votes: &BTreeSet<AccountId>,
    ) -> Result<(), RegistryError> {
        self.decide(MembershipAction::Evict { id }, votes)
    }

    fn decide(
        &mut self,
        action: MembershipAction,
        votes: &BTreeSet<AccountId>,
    ) -> Result<(), RegistryError> {
        if let Some(v) = votes.iter().find(|v| !self.has_role(v, Role::ConsortiumMember)) {
            return Err(RegistryError::NotConsortiumMember(*v));
        }
        self.check_applicable(&action)?;
        let tally = self.proposals.entry(action.clone()).or_default();
        tally.extend(votes.iter().copied());
        let have = tally.len();
        if self.has_majority(have) {
            self.apply(&action);
            Ok(())
        } else {
            Err(RegistryError::InsufficientVotes {
                have,
                members: self.consortium().len(),
            })
        }
    }

    /// Checks whether `voter` may cast a vote on `action` without mutating.
    pub fn check_vote(&self, voter: &AccountId, action: &MembershipAction) -> Result<(), RegistryError> {
        if !self.has_role(voter, Role::ConsortiumMember) {
            return Err(RegistryError::NotConsortiumMember(*voter));
        }
        self.check_applicable(action)
    }

    /// Records one member's vote; applies the action once a majority is reached.
    pub fn vote(
        &mut self,
        voter: AccountId,
        action: MembershipAction,
    ) -> Result<VoteOutcome, RegistryError> {
        self.check_vote(&voter, &action)?;
        match self.decide(action, &BTreeSet::from([voter])) {
            Ok(()) => Ok(VoteOutcome::Applied),
            Err(RegistryError::InsufficientVotes { have, members }) => Ok(VoteOutcome::Pending {
                votes: have,
                members,
            }),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consortium(n: usize) -> (Registry, Vec<AccountId>) {
        let members: Vec<_> = (0..n).map(|i| AccountId::named(&format!("cm{i}"))).collect();
        let reg = Registry::genesis(
            members
                .iter()
                .map(|m| (*m, BTreeSet::from([Role::ConsortiumMember]))),
        );
        (reg, members)
    }

    fn ta() -> BTreeSet<Role> {
        BTreeSet::from([Role::TrainingAgent])
    }

    #[test]
    fn majority_of_three_registers() {
        let (mut reg, m) = consortium(3);
        let new = AccountId::named("ta");
        reg.register_account(new, ta(), &BTreeSet::from([m[0], m[1]])).unwrap();
        assert!(reg.has_role(&new, Role::TrainingAgent));
    }

    #[test]
    fn single_vote_is_recorded_but_not_applied() {
        let (mut reg, m) = consortium(3);
        let new = AccountId::named("ta");
        let err = reg
            .register_account(new, ta(), &BTreeSet::from([m[0]]))
            .unwrap_err();
        assert_eq!(err, RegistryError::InsufficientVotes { have: 1, members: 3 });
        assert!(!reg.is_registered(&new));
        assert_eq!(reg.proposals.len(), 1);
        // a later second vote completes the majority
        reg.register_account(new, ta(), &BTreeSet::from([m[2]])).unwrap();
        assert!(reg.is_registered(&new));
        assert!(reg.proposals.is_empty());
    }

    #[test]
    fn duplicate_and_outsider_votes_rejected() {
        let (mut reg, m) = consortium(3);
        let all: BTreeSet<_> = m.iter().copied().collect();
        let new = AccountId::named("ta");
        reg.register_account(new, ta(), &all).unwrap();
        assert_eq!(
            reg.register_account(new, ta(), &all),
            Err(RegistryError::DuplicateAccount(new))
        );
        let outsider = AccountId::named("outsider");
        assert_eq!(
            reg.register_account(AccountId::named("x"), ta(), &BTreeSet::from([outsider])),
            Err(RegistryError::NotConsortiumMember(outsider))
        );
    }

    #[test]
    fn evicted_account_can_rejoin_by_vote() {
        let (mut reg, m) = consortium(3);
        let all: BTreeSet<_> = m.iter().copied().collect();
        let id = AccountId::named("ta");
        reg.register_account(id, ta(), &all).unwrap();
        reg.evict_account(id, &all).unwrap();
        assert!(!reg.is_registered(&id));
        reg.register_account(id, ta(), &all).unwrap();
        assert!(reg.is_registered(&id));
    }

    #[test]
    fn incremental_votes() {
        let (mut reg, m) = consortium(4);
        let action = MembershipAction::Register {
            id: AccountId::named("n"),
            roles: ta(),
        };
        assert_eq!(
            reg.vote(m[0], action.clone()).unwrap(),
            VoteOutcome::Pending { votes: 1, members: 4 }
        );
        assert!(matches!(reg.vote(m[1], action.clone()).unwrap(), VoteOutcome::Pending { .. }));
        assert_eq!(reg.vote(m[2], action).unwrap(), VoteOutcome::Applied);
    }

    #[test]
    fn account_ids_order_bytewise() {
        let a = AccountId([0; 32]);
        let mut b = [0; 32];
        b[31] = 1;
        assert!(a < AccountId(b));
        assert_eq!(a.to_hex().parse::<AccountId>().unwrap(), a);
    }
}
