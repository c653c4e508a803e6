//! Append-only, hash-chained block store.
//!
//! A [`Block`] commits to its transactions (by id), to the post-execution
//! state of every contract (through the state root), and to the events its
//! invocations emitted. [`Ledger::verify_chain`] recomputes every commitment
//! from the stored bodies, so any single-byte change to a block is caught at
//! that block's height.

mod payload;
pub mod store;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Canonical, DecodeError, Decoder, Encoder};
use crate::hash::Hash32;

pub use payload::{DeployContract, InvokeContract, ObservationBatch, TxBody};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction {tx_id} is invalid: {source}")]
    InvalidTransaction {
        tx_id: Hash32,
        #[source]
        source: DecodeError,
    },
    #[error("transaction {0} appears twice in one block")]
    DuplicateTransaction(Hash32),
    #[error("chain is corrupt at height {height}: {reason}")]
    ChainCorrupt { height: u64, reason: String },
}

/// 8-byte identifier of the party that submitted a transaction.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PartyId(pub [u8; 8]);

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PartyId({})", hex::encode(self.0))
    }
}

impl Canonical for PartyId {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PartyId(dec.fixed::<8>("party id")?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    ObservationBatch,
    DeployContract,
    InvokeContract,
}

impl Canonical for TxKind {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(match self {
            TxKind::ObservationBatch => 0,
            TxKind::DeployContract => 1,
            TxKind::InvokeContract => 2,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u64()? {
            0 => Ok(TxKind::ObservationBatch),
            1 => Ok(TxKind::DeployContract),
            2 => Ok(TxKind::InvokeContract),
            tag => Err(DecodeError::BadTag { what: "tx kind", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    tx_id: Hash32,
    kind: TxKind,
    payload: Vec<u8>,
    submitter: PartyId,
}

impl Transaction {
    /// Builds a transaction from a typed body; the payload is the body's
    /// canonical encoding.
    pub fn new(body: &TxBody, submitter: PartyId) -> Self {
        let (kind, payload) = match body {
            TxBody::ObservationBatch(b) => (TxKind::ObservationBatch, codec::to_bytes(b)),
            TxBody::DeployContract(b) => (TxKind::DeployContract, codec::to_bytes(b)),
            TxBody::InvokeContract(b) => (TxKind::InvokeContract, codec::to_bytes(b)),
        };
        Self {
            tx_id: Self::compute_id(kind, &payload, &submitter),
            kind,
            payload,
            submitter,
        }
    }

    /// Builds a transaction from raw parts, checking the payload against the
    /// schema implied by `kind`.
    pub fn from_parts(
        kind: TxKind,
        payload: Vec<u8>,
        submitter: PartyId,
    ) -> Result<Self, LedgerError> {
        let tx = Self {
            tx_id: Self::compute_id(kind, &payload, &submitter),
            kind,
            payload,
            submitter,
        };
        tx.body().map_err(|source| LedgerError::InvalidTransaction {
            tx_id: tx.tx_id,
            source,
        })?;
        Ok(tx)
    }

    pub fn compute_id(kind: TxKind, payload: &[u8], submitter: &PartyId) -> Hash32 {
        let mut enc = Encoder::new();
        enc.value(&kind).bytes(payload).value(submitter);
        Hash32::digest(&enc.finish())
    }

    pub fn tx_id(&self) -> Hash32 {
        self.tx_id
    }

    pub fn kind(&self) -> TxKind {
        self.kind
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn submitter(&self) -> PartyId {
        self.submitter
    }

    pub fn body(&self) -> Result<TxBody, DecodeError> {
        Ok(match self.kind {
            TxKind::ObservationBatch => TxBody::ObservationBatch(codec::from_bytes(&self.payload)?),
            TxKind::DeployContract => TxBody::DeployContract(codec::from_bytes(&self.payload)?),
            TxKind::InvokeContract => TxBody::InvokeContract(codec::from_bytes(&self.payload)?),
        })
    }

    fn check(&self) -> Result<(), String> {
        if Self::compute_id(self.kind, &self.payload, &self.submitter) != self.tx_id {
            return Err(format!("tx id {} does not match its contents", self.tx_id));
        }
        self.body()
            .map(drop)
            .map_err(|e| format!("tx {} payload: {e}", self.tx_id))
    }
}

impl Canonical for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.tx_id)
            .value(&self.kind)
            .bytes(&self.payload)
            .value(&self.submitter);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        // The id is carried as stored; verify_chain recomputes it.
        Ok(Self {
            tx_id: dec.value()?,
            kind: dec.value()?,
            payload: dec.bytes()?,
            submitter: dec.value()?,
        })
    }
}

/// One `(contract_id, hash(state))` pair of a state-root preimage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateEntry {
    pub contract_id: Hash32,
    pub state_hash: Hash32,
}

impl Canonical for StateEntry {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.contract_id).value(&self.state_hash);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            contract_id: dec.value()?,
            state_hash: dec.value()?,
        })
    }
}

/// Commitment to the state of every contract after a block executes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateCommitment {
    hashes: BTreeMap<Hash32, Hash32>,
}

impl StateCommitment {
    pub fn from_states<I, S>(states: I) -> Self
    where
        I: IntoIterator<Item = (Hash32, S)>,
        S: AsRef<[u8]>,
    {
        Self {
            hashes: states
                .into_iter()
                .map(|(id, bytes)| (id, Hash32::digest(bytes.as_ref())))
                .collect(),
        }
    }

    pub fn entries(&self) -> Vec<StateEntry> {
        self.hashes
            .iter()
            .map(|(&contract_id, &state_hash)| StateEntry {
                contract_id,
                state_hash,
            })
            .collect()
    }

    pub fn root(&self) -> Hash32 {
        root_of_entries(&self.entries())
    }
}

/// SHA-256 over the concatenated `(contract_id ‖ hash(state))` pairs in
/// ascending contract-id order. The empty map hashes the empty string.
pub fn compute_state_root<I, S>(states: I) -> Hash32
where
    I: IntoIterator<Item = (Hash32, S)>,
    S: AsRef<[u8]>,
{
    StateCommitment::from_states(states).root()
}

fn root_of_entries(entries: &[StateEntry]) -> Hash32 {
    let mut buf = Vec::with_capacity(entries.len() * 64);
    for e in entries {
        buf.extend_from_slice(e.contract_id.as_bytes());
        buf.extend_from_slice(e.state_hash.as_bytes());
    }
    Hash32::digest(&buf)
}

/// An event emitted by a contract invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub contract_id: Hash32,
    pub data: Vec<u8>,
}

impl Canonical for Event {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.contract_id).bytes(&self.data);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            contract_id: dec.value()?,
            data: dec.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub txs: Vec<Transaction>,
    /// Preimage of `state_root`, sorted by contract id.
    pub state_entries: Vec<StateEntry>,
    pub state_root: Hash32,
    pub events: Vec<Event>,
    pub block_hash: Hash32,
}

impl Block {
    pub fn compute_hash(
        height: u64,
        prev_hash: &Hash32,
        tx_ids: &[Hash32],
        state_root: &Hash32,
        events: &[Event],
    ) -> Hash32 {
        let mut enc = Encoder::new();
        enc.u64(height)
            .value(prev_hash)
            .list(tx_ids)
            .value(state_root)
            .value(&events_root(events));
        Hash32::digest(&enc.finish())
    }

    pub fn tx_ids(&self) -> Vec<Hash32> {
        self.txs.iter().map(Transaction::tx_id).collect()
    }

    pub fn recompute_hash(&self) -> Hash32 {
        Self::compute_hash(
            self.height,
            &self.prev_hash,
            &self.tx_ids(),
            &self.state_root,
            &self.events,
        )
    }

    /// Checks everything that can be checked without the previous block.
    fn check_body(&self) -> Result<(), String> {
        for tx in &self.txs {
            tx.check()?;
        }
        if !self.txs.windows(2).all(|w| w[0].tx_id < w[1].tx_id) {
            return Err("transactions are not strictly sorted by id".into());
        }
        if !self
            .state_entries
            .windows(2)
            .all(|w| w[0].contract_id < w[1].contract_id)
        {
            return Err("state entries are not strictly sorted by contract id".into());
        }
        if root_of_entries(&self.state_entries) != self.state_root {
            return Err("state root does not match its entries".into());
        }
        if self.recompute_hash() != self.block_hash {
            return Err("block hash does not match block contents".into());
        }
        Ok(())
    }
}

fn events_root(events: &[Event]) -> Hash32 {
    let mut enc = Encoder::new();
    enc.list(events);
    Hash32::digest(&enc.finish())
}

impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height)
            .value(&self.prev_hash)
            .list(&self.txs)
            .list(&self.state_entries)
            .value(&self.state_root)
            .list(&self.events)
            .value(&self.block_hash);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: dec.u64()?,
            prev_hash: dec.value()?,
            txs: dec.list()?,
            state_entries: dec.list()?,
            state_root: dec.value()?,
            events: dec.list()?,
            block_hash: dec.value()?,
        })
    }
}

/// Outcome of [`Ledger::verify_chain`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainReport {
    pub ok: bool,
    pub first_bad_height: Option<u64>,
    pub reason: Option<String>,
}

impl ChainReport {
    fn good() -> Self {
        Self {
            ok: true,
            first_bad_height: None,
            reason: None,
        }
    }

    fn bad(height: u64, reason: String) -> Self {
        Self {
            ok: false,
            first_bad_height: Some(height),
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<Block>,
    /// Number of leading blocks already verified by `append_block`.
    verified: usize,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps existing blocks without verifying them.
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self {
            blocks,
            verified: 0,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Raw mutable access, for fault-injection harnesses. Clears the
    /// verification watermark.
    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        self.verified = 0;
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Seals `txs` into a new block on top of the chain. Transactions are
    /// sorted by id, so submission order never affects the block hash.
    pub fn append_block(
        &mut self,
        mut txs: Vec<Transaction>,
        state: &StateCommitment,
        events: Vec<Event>,
    ) -> Result<&Block, LedgerError> {
        self.verify_from(self.verified)?;
        self.verified = self.blocks.len();

        for tx in &txs {
            let body = if Transaction::compute_id(tx.kind, &tx.payload, &tx.submitter) != tx.tx_id {
                Err(DecodeError::invalid("tx id", "does not match contents"))
            } else {
                tx.body().map(drop)
            };
            body.map_err(|source| LedgerError::InvalidTransaction {
                tx_id: tx.tx_id,
                source,
            })?;
        }
        txs.sort_by_key(Transaction::tx_id);
        if let Some(w) = txs.windows(2).find(|w| w[0].tx_id == w[1].tx_id) {
            return Err(LedgerError::DuplicateTransaction(w[0].tx_id));
        }

        let height = self.next_height();
        let prev_hash = self.tip().map_or(Hash32::ZERO, |b| b.block_hash);
        let state_entries = state.entries();
        let state_root = root_of_entries(&state_entries);
        let tx_ids: Vec<Hash32> = txs.iter().map(Transaction::tx_id).collect();
        let block_hash = Block::compute_hash(height, &prev_hash, &tx_ids, &state_root, &events);
        self.blocks.push(Block {
            height,
            prev_hash,
            txs,
            state_entries,
            state_root,
            events,
            block_hash,
        });
        self.verified = self.blocks.len();
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn verify_chain(&self) -> ChainReport {
        match self.verify_from(0) {
            Ok(()) => ChainReport::good(),
            Err(LedgerError::ChainCorrupt { height, reason }) => ChainReport::bad(height, reason),
            Err(other) => unreachable!("verify_from only reports corruption: {other}"),
        }
    }

    fn verify_from(&self, start: usize) -> Result<(), LedgerError> {
        for (i, block) in self.blocks.iter().enumerate().skip(start) {
            let height = i as u64;
            let corrupt = |reason: String| LedgerError::ChainCorrupt { height, reason };
            if block.height != height {
                return Err(corrupt(format!("stored height {} out of sequence", block.height)));
            }
            let expected_prev = if i == 0 {
                Hash32::ZERO
            } else {
                self.blocks[i - 1].block_hash
            };
            if block.prev_hash != expected_prev {
                return Err(corrupt("prev_hash does not link to the previous block".into()));
            }
            block.check_body().map_err(corrupt)?;
        }
        Ok(())
    }
}
