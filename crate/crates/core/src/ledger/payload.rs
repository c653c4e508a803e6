//! Typed transaction payloads. A transaction's `kind` fixes which of these
//! its payload bytes must decode as.

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::epi_data::PseudonymizedRecord;
use crate::hash::Hash32;
use crate::runtime::ContractKind;

/// Pseudonymized observations delivered to a data-store contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationBatch {
    pub target: Hash32,
    pub records: Vec<PseudonymizedRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeployContract {
    pub kind: ContractKind,
    pub init_payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvokeContract {
    pub contract_id: Hash32,
    pub method: String,
    pub args: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxBody {
    ObservationBatch(ObservationBatch),
    DeployContract(DeployContract),
    InvokeContract(InvokeContract),
}

impl Canonical for ObservationBatch {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.target).list(&self.records);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            target: dec.value()?,
            records: dec.list()?,
        })
    }
}

impl Canonical for DeployContract {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.kind).bytes(&self.init_payload);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            kind: dec.value()?,
            init_payload: dec.bytes()?,
        })
    }
}

impl Canonical for InvokeContract {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.contract_id)
            .str(&self.method)
            .bytes(&self.args);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            contract_id: dec.value()?,
            method: dec.string()?,
            args: dec.bytes()?,
        })
    }
}
