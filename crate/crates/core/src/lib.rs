//! Deterministic simulator for reputation-aware federated learning
//! coordinated by a permissioned ledger with a rollup layer.

pub mod chain;
pub mod codec;
pub mod contracts;
pub mod fl;
pub mod harness;
pub mod oracle;
pub mod par;
pub mod reputation;
pub mod rollup;
pub mod store;
