use thiserror::Error;

use super::{Honest, Hooks, Runtime, RuntimeError};
use crate::codec;
use crate::hash::Hash32;
use crate::ledger::{Block, Event, Ledger, LedgerError, StateCommitment, Transaction, TxBody};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("transaction {tx_id} failed: {source}")]
    Transaction {
        tx_id: Hash32,
        #[source]
        source: RuntimeError,
    },
}

/// A replica: a ledger plus the runtime whose states it commits to.
///
/// Each call to [`Executor::execute_block`] runs a batch of transactions in
/// canonical (tx id) order and seals one block. A failing transaction aborts
/// the whole block and leaves both ledger and runtime untouched.
#[derive(Debug, Clone)]
pub struct Executor {
    chain_seed: u64,
    ledger: Ledger,
    runtime: Runtime,
}

impl Executor {
    pub fn new(chain_seed: u64) -> Self {
        Self {
            chain_seed,
            ledger: Ledger::new(),
            runtime: Runtime::new(),
        }
    }

    pub fn chain_seed(&self) -> u64 {
        self.chain_seed
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn into_parts(self) -> (Ledger, Runtime) {
        (self.ledger, self.runtime)
    }

    /// Randomness for the block at `height`, shared by every replica.
    pub fn block_seed(chain_seed: u64, height: u64) -> u64 {
        Hash32::digest_parts(&[b"block-seed", &chain_seed.to_le_bytes(), &height.to_le_bytes()])
            .fold_u64()
    }

    pub fn execute_block(&mut self, txs: Vec<Transaction>) -> Result<&Block, ExecError> {
        self.execute_block_with(txs, &mut Honest)
    }

    pub fn execute_block_with(
        &mut self,
        mut txs: Vec<Transaction>,
        hooks: &mut dyn Hooks,
    ) -> Result<&Block, ExecError> {
        let height = self.ledger.next_height();
        let block_seed = Self::block_seed(self.chain_seed, height);
        txs.sort_by_key(Transaction::tx_id);

        let mut staged = self.runtime.clone();
        let mut events = Vec::new();
        for tx in &txs {
            let tx_id = tx.tx_id();
            let body = tx.body().map_err(|source| LedgerError::InvalidTransaction { tx_id, source })?;
            let fail = |source| ExecError::Transaction { tx_id, source };
            match body {
                TxBody::DeployContract(d) => {
                    staged.deploy(d.kind, &d.init_payload, height).map_err(fail)?;
                }
                TxBody::InvokeContract(call) => {
                    let (_, emitted) = staged
                        .invoke_with(&call.contract_id, &call.method, &call.args, block_seed, hooks)
                        .map_err(fail)?;
                    events.extend(emitted.into_iter().map(|data| Event {
                        contract_id: call.contract_id,
                        data,
                    }));
                }
                TxBody::ObservationBatch(batch) => {
                    let mut enc = codec::Encoder::new();
                    enc.list(&batch.records);
                    let (_, emitted) = staged
                        .invoke_with(&batch.target, "ingest", &enc.finish(), block_seed, hooks)
                        .map_err(fail)?;
                    events.extend(emitted.into_iter().map(|data| Event {
                        contract_id: batch.target,
                        data,
                    }));
                }
            }
        }

        let commitment = StateCommitment::from_states(staged.states());
        self.ledger.append_block(txs, &commitment, events)?;
        self.runtime = staged;
        Ok(self.ledger.tip().expect("block appended"))
    }
}
