use crate::chain::tx::{Call, Transaction};
use crate::chain::{AccountId, Ledger};
use crate::contracts::WorldState;
use crate::oracle::{Chain, ChainError};
use crate::rollup::{RollupError, Sequencer};

use super::Routing;

/// The ledger plus, for L2 routing, the rollup sequencer in front of it.
#[derive(Debug, Clone)]
pub struct Driver {
    ledger: Ledger,
    sequencer: Option<Sequencer>,
}

impl Driver {
    pub fn new(ledger: Ledger, routing: Routing, capacity: usize) -> Self {
        let sequencer = match routing {
            Routing::L1 => None,
            Routing::L2 => Some(Sequencer::new(capacity, ledger.bridge())),
        };
        Self { ledger, sequencer }
    }

    pub fn routing(&self) -> Routing {
        if self.sequencer.is_some() {
            Routing::L2
        } else {
            Routing::L1
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn sequencer(&self) -> Option<&Sequencer> {
        self.sequencer.as_ref()
    }

    /// State every submitted transaction has settled into on L1.
    pub fn committed(&self) -> &WorldState {
        match &self.sequencer {
            Some(_) => self.ledger.bridge().verified_state(),
            None => self.ledger.state(),
        }
    }

    /// Sends a signed transaction as is. Lets callers submit transactions
    /// they built themselves, including malformed ones.
    pub fn send_raw(&mut self, tx: Transaction) -> Result<(), ChainError> {
        let outcome = match &mut self.sequencer {
            Some(seq) => seq.enqueue(tx)?.1,
            None => self.ledger.submit(tx)?,
        };
        Ok(outcome?)
    }

    /// Mines or posts everything pending.
    pub fn flush(&mut self) -> Result<(), ChainError> {
        match &mut self.sequencer {
            None => self
                .ledger
                .drain()
                .map_err(|e| ChainError::Layer(e.to_string())),
            Some(seq) => match seq.seal_and_post(&mut self.ledger) {
                Ok(out) if out.rejected.is_empty() => Ok(()),
                Ok(out) => Err(ChainError::Layer(format!("batches {:?} failed verification", out.rejected))),
                Err(RollupError::NothingToPost) => Ok(()),
                Err(e) => Err(ChainError::Layer(e.to_string())),
            },
        }
    }
}

impl Chain for Driver {
    fn view(&self) -> &WorldState {
        match &self.sequencer {
            Some(seq) => seq.state(),
            None => self.ledger.pending_state(),
        }
    }

    fn send(&mut self, sender: AccountId, call: Call) -> Result<(), ChainError> {
        let tx = Transaction::new(sender, self.view().nonce(&sender), &call);
        self.send_raw(tx)
    }
}
