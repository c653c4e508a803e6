//! The data-store contract: holds only aggregated observation structures.

use serde::{Deserialize, Serialize};

use super::{estimate_params, EpiDataError, EstimatedParams, PseudonymizedRecord};
use crate::codec::{self, Canonical, DecodeError, Decoder, Encoder};
use crate::hash::Hash32;
use crate::runtime::ContractError;

pub const FORMALISM_ID: &str = "DATASTORE/1";
pub const METHODS: &[&str] = &["store", "ingest"];

/// Everything the data store keeps: counts and estimated parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub record_count: u64,
    pub transition_count: u64,
    pub params: EstimatedParams,
}

impl Aggregate {
    pub fn empty(n_locations: u64) -> Self {
        Self {
            record_count: 0,
            transition_count: 0,
            params: EstimatedParams::empty(n_locations),
        }
    }

    pub fn n_locations(&self) -> u64 {
        self.params.transition_matrix.n_locations()
    }

    /// Hash of the canonical aggregate bytes; emitted as the store event.
    pub fn commitment(&self) -> Hash32 {
        Hash32::digest(&codec::to_bytes(self))
    }
}

impl Canonical for Aggregate {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.record_count)
            .u64(self.transition_count)
            .value(&self.params);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            record_count: dec.u64()?,
            transition_count: dec.u64()?,
            params: dec.value()?,
        })
    }
}

/// Replaces the stored aggregate. Returns the new state bytes and the
/// aggregate's commitment.
pub fn store_aggregate(
    state: &[u8],
    aggregate: Aggregate,
) -> Result<(Vec<u8>, Hash32), ContractError> {
    let current: Aggregate = codec::from_bytes(state)?;
    if aggregate.n_locations() != current.n_locations() {
        return Err(EpiDataError::SchemaError(format!(
            "aggregate covers {} locations, store holds {}",
            aggregate.n_locations(),
            current.n_locations()
        ))
        .into());
    }
    aggregate
        .params
        .transition_matrix
        .validate()
        .map_err(|e| EpiDataError::SchemaError(e.to_string()))?;
    let commitment = aggregate.commitment();
    Ok((codec::to_bytes(&aggregate), commitment))
}

/// Reads the stored aggregate back out of contract state.
pub fn read_aggregate(state: &[u8]) -> Result<Aggregate, DecodeError> {
    codec::from_bytes(state)
}

/// Init payload: the location count as a single integer.
pub(crate) fn init(payload: &[u8]) -> Result<Vec<u8>, ContractError> {
    let n_locations: u64 = codec::from_bytes(payload)?;
    if n_locations == 0 {
        return Err(EpiDataError::SchemaError("data store needs at least one location".into()).into());
    }
    Ok(codec::to_bytes(&Aggregate::empty(n_locations)))
}

pub(crate) fn call(
    state: &[u8],
    method: &str,
    args: &[u8],
) -> Result<(Vec<u8>, Vec<Vec<u8>>), ContractError> {
    let aggregate = match method {
        "store" => codec::from_bytes::<Aggregate>(args)?,
        "ingest" => {
            let n_locations = read_aggregate(state)?.n_locations();
            let mut dec = Decoder::new(args);
            let records: Vec<PseudonymizedRecord> = dec.list()?;
            dec.finish()?;
            let (params, stats) = estimate_params(&records, n_locations)?;
            Aggregate {
                record_count: stats.records,
                transition_count: stats.transitions,
                params,
            }
        }
        other => unreachable!("runtime checked method table, got {other}"),
    };
    let (state, commitment) = store_aggregate(state, aggregate)?;
    Ok((state, vec![commitment.as_bytes().to_vec()]))
}
