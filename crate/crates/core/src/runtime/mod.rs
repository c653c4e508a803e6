//! Deterministic contract execution.
//!
//! Contracts are plain functions over canonical state bytes. The runtime
//! owns the registry of deployed contracts, derives each invocation's PRNG
//! stream, and routes calls to the contract kind's method table. Nothing in
//! an execution path reads a clock, the environment, or floating point.

mod executor;
pub mod prng;
pub mod q32;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{self, AgreementError};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::epi_data::{datastore, EpiDataError};
use crate::hash::Hash32;
use crate::sir::{self, SirError};

pub use executor::{ExecError, Executor};
pub use prng::{InvalidRange, Prng};
pub use q32::{Q32Error, Q32, Q32_ONE_RAW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContractKind {
    SirSim,
    Agreement,
    DataStore,
}

impl ContractKind {
    pub fn formalism_id(self) -> &'static str {
        match self {
            ContractKind::SirSim => sir::FORMALISM_ID,
            ContractKind::Agreement => agreement::contract::FORMALISM_ID,
            ContractKind::DataStore => datastore::FORMALISM_ID,
        }
    }

    pub fn methods(self) -> &'static [&'static str] {
        match self {
            ContractKind::SirSim => sir::contract::METHODS,
            ContractKind::Agreement => agreement::contract::METHODS,
            ContractKind::DataStore => datastore::METHODS,
        }
    }
}

impl Canonical for ContractKind {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(match self {
            ContractKind::SirSim => 0,
            ContractKind::Agreement => 1,
            ContractKind::DataStore => 2,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u64()? {
            0 => Ok(ContractKind::SirSim),
            1 => Ok(ContractKind::Agreement),
            2 => Ok(ContractKind::DataStore),
            tag => Err(DecodeError::BadTag {
                what: "contract kind",
                tag,
            }),
        }
    }
}

/// Failure raised by contract logic.
#[derive(Debug, Error)]
pub enum ContractError {
    #[error("malformed contract input: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Sir(#[from] SirError),
    #[error(transparent)]
    EpiData(#[from] EpiDataError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("init payload rejected: {0}")]
    SchemaError(#[source] ContractError),
    #[error("contract {0} is already deployed")]
    DuplicateContract(Hash32),
    #[error("no contract with id {0}")]
    NoSuchContract(Hash32),
    #[error("{kind:?} contract has no method {method:?}")]
    NoSuchMethod { kind: ContractKind, method: String },
    #[error("contract {contract_id} failed: {source}")]
    ContractError {
        contract_id: Hash32,
        #[source]
        source: ContractError,
    },
}

/// Interception points inside contract execution. Honest replicas use
/// [`Honest`]; fault-injection harnesses override individual methods.
pub trait Hooks {
    /// Outcome of one transmission trial at simulation step `step`.
    fn bernoulli(&mut self, _step: u64, outcome: bool) -> bool {
        outcome
    }

    /// Asked once per step, only when at least one agent is due to recover.
    fn skip_recovery(&mut self, _step: u64) -> bool {
        false
    }

    /// Sees a contract's new state bytes before they are stored.
    fn after_invoke(&mut self, _contract_id: &Hash32, _state: &mut Vec<u8>) {}
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Honest;

impl Hooks for Honest {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRecord {
    pub contract_id: Hash32,
    pub kind: ContractKind,
    pub state: Vec<u8>,
    pub formalism_id: String,
    /// Number of completed invocations; part of the PRNG derivation.
    pub invocations: u64,
}

impl ContractRecord {
    pub fn compute_id(kind: ContractKind, init_payload: &[u8], height: u64) -> Hash32 {
        let mut enc = Encoder::new();
        enc.value(&kind).bytes(init_payload).u64(height);
        Hash32::digest(&enc.finish())
    }
}

/// Registry of deployed contracts on one replica.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Runtime {
    contracts: BTreeMap<Hash32, ContractRecord>,
}

impl Runtime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contract(&self, id: &Hash32) -> Option<&ContractRecord> {
        self.contracts.get(id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &ContractRecord> {
        self.contracts.values()
    }

    /// `(contract_id, state bytes)` for every contract, ascending by id.
    pub fn states(&self) -> impl Iterator<Item = (Hash32, &[u8])> {
        self.contracts
            .iter()
            .map(|(id, rec)| (*id, rec.state.as_slice()))
    }

    pub fn deploy(
        &mut self,
        kind: ContractKind,
        init_payload: &[u8],
        height: u64,
    ) -> Result<&ContractRecord, RuntimeError> {
        let contract_id = ContractRecord::compute_id(kind, init_payload, height);
        if self.contracts.contains_key(&contract_id) {
            return Err(RuntimeError::DuplicateContract(contract_id));
        }
        let state = match kind {
            ContractKind::SirSim => sir::contract::init(init_payload),
            ContractKind::Agreement => agreement::contract::init(init_payload),
            ContractKind::DataStore => datastore::init(init_payload),
        }
        .map_err(RuntimeError::SchemaError)?;
        let record = ContractRecord {
            contract_id,
            kind,
            state,
            formalism_id: kind.formalism_id().to_string(),
            invocations: 0,
        };
        Ok(self.contracts.entry(contract_id).or_insert(record))
    }

    pub fn invoke(
        &mut self,
        contract_id: &Hash32,
        method: &str,
        args: &[u8],
        block_seed: u64,
    ) -> Result<(&[u8], Vec<Vec<u8>>), RuntimeError> {
        self.invoke_with(contract_id, method, args, block_seed, &mut Honest)
    }

    /// Runs `method` against the contract's current state. The new state is
    /// stored only if the call succeeds.
    pub fn invoke_with(
        &mut self,
        contract_id: &Hash32,
        method: &str,
        args: &[u8],
        block_seed: u64,
        hooks: &mut dyn Hooks,
    ) -> Result<(&[u8], Vec<Vec<u8>>), RuntimeError> {
        let record = self
            .contracts
            .get_mut(contract_id)
            .ok_or(RuntimeError::NoSuchContract(*contract_id))?;
        if !record.kind.methods().contains(&method) {
            return Err(RuntimeError::NoSuchMethod {
                kind: record.kind,
                method: method.to_string(),
            });
        }
        let mut prng = Prng::for_invocation(block_seed, contract_id, record.invocations);
        let call = match record.kind {
            ContractKind::SirSim => sir::contract::call(&record.state, method, args, &mut prng, hooks),
            ContractKind::Agreement => agreement::contract::call(&record.state, method, args),
            ContractKind::DataStore => datastore::call(&record.state, method, args),
        };
        let (mut state, events) = call.map_err(|source| RuntimeError::ContractError {
            contract_id: *contract_id,
            source,
        })?;
        hooks.after_invoke(contract_id, &mut state);
        record.state = state;
        record.invocations += 1;
        Ok((&record.state, events))
    }
}

/// Human-readable JSON view of a contract state. Display only; the canonical
/// bytes are the source of truth.
pub fn render_state_json(kind: ContractKind, state: &[u8]) -> Result<serde_json::Value, DecodeError> {
    use crate::codec::from_bytes;
    let value = match kind {
        ContractKind::SirSim => serde_json::to_value(from_bytes::<sir::SirState>(state)?),
        ContractKind::Agreement => {
            serde_json::to_value(from_bytes::<agreement::contract::AgreementState>(state)?)
        }
        ContractKind::DataStore => serde_json::to_value(from_bytes::<datastore::Aggregate>(state)?),
    };
    Ok(value.expect("state types serialize to JSON"))
}
