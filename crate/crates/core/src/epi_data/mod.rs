//! Observation ingestion: pseudonymize raw records, impute location
//! transitions, and aggregate them into mobility and contact parameters.
//!
//! The pipeline is order-insensitive. Records are sorted by
//! `(pseudonym, step)` before any counting, so the same multiset of records
//! always yields the same [`EstimatedParams`].

pub mod datastore;
mod matrix;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::Hash32;
use crate::sir::ContactTable;

pub use matrix::{estimate_markov, TransitionCounts, TransitionMatrix};

pub const SALT_LEN: usize = 16;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EpiDataError {
    #[error("salt must be exactly {SALT_LEN} bytes, got {0}")]
    BadSalt(usize),
    #[error("subject {pseudonym} observed at two locations in step {step}")]
    DuplicateStep { pseudonym: Hash32, step: u64 },
    #[error("location {location} out of range for {n_locations} locations")]
    LocationOutOfRange { location: u64, n_locations: u64 },
    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),
    #[error("aggregate rejected: {0}")]
    SchemaError(String),
}

/// One raw observation as delivered by a data source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub raw_subject_id: String,
    /// Hours since the start of observation.
    pub step: u64,
    pub location_id: u64,
    pub contacts_observed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PseudonymizedRecord {
    pub pseudonym: Hash32,
    pub step: u64,
    pub location_id: u64,
    pub contacts_observed: u64,
}

impl Canonical for PseudonymizedRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.pseudonym)
            .u64(self.step)
            .u64(self.location_id)
            .u64(self.contacts_observed);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            pseudonym: dec.value()?,
            step: dec.u64()?,
            location_id: dec.u64()?,
            contacts_observed: dec.u64()?,
        })
    }
}

/// `SHA-256(salt ‖ raw_subject_id)`.
pub fn pseudonymize(raw_subject_id: &str, salt: &[u8]) -> Result<Hash32, EpiDataError> {
    if salt.len() != SALT_LEN {
        return Err(EpiDataError::BadSalt(salt.len()));
    }
    Ok(Hash32::digest_parts(&[salt, raw_subject_id.as_bytes()]))
}

/// Pseudonymizes a batch and checks every location against `n_locations`.
pub fn anonymize(
    records: &[ObservationRecord],
    salt: &[u8],
    n_locations: u64,
) -> Result<Vec<PseudonymizedRecord>, EpiDataError> {
    records
        .iter()
        .map(|r| {
            if r.location_id >= n_locations {
                return Err(EpiDataError::LocationOutOfRange {
                    location: r.location_id,
                    n_locations,
                });
            }
            Ok(PseudonymizedRecord {
                pseudonym: pseudonymize(&r.raw_subject_id, salt)?,
                step: r.step,
                location_id: r.location_id,
                contacts_observed: r.contacts_observed,
            })
        })
        .collect()
}

fn canonical_order(records: &[PseudonymizedRecord]) -> Vec<PseudonymizedRecord> {
    let mut sorted = records.to_vec();
    sorted.sort();
    sorted
}

/// Counts one transition for every pair of a subject's records at
/// consecutive hours `t`, `t + 1`. Gaps contribute nothing. A subject seen
/// at two locations in the same hour is an error; exact duplicate
/// sightings count once.
pub fn impute_transitions(
    records: &[PseudonymizedRecord],
) -> Result<TransitionCounts, EpiDataError> {
    let sorted = canonical_order(records);
    let mut counts = TransitionCounts::default();
    for pair in sorted.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.pseudonym != b.pseudonym {
            continue;
        }
        if a.step == b.step {
            if a.location_id != b.location_id {
                return Err(EpiDataError::DuplicateStep {
                    pseudonym: a.pseudonym,
                    step: a.step,
                });
            }
            continue;
        }
        if b.step == a.step + 1 {
            counts.add(a.location_id, b.location_id);
        }
    }
    Ok(counts)
}

fn mean_half_up(sum: u128, n: u128) -> u64 {
    ((2 * sum + n) / (2 * n)) as u64
}

/// Per-subject mean contacts per hour (rounded half-up) and the population
/// mean over all records (0 when there are none).
pub fn estimate_contacts(records: &[PseudonymizedRecord]) -> (BTreeMap<Hash32, u64>, u64) {
    let mut tally: BTreeMap<Hash32, (u128, u128)> = BTreeMap::new();
    for r in records {
        let t = tally.entry(r.pseudonym).or_default();
        t.0 += r.contacts_observed as u128;
        t.1 += 1;
    }
    let (sum, n) = tally
        .values()
        .fold((0u128, 0u128), |acc, t| (acc.0 + t.0, acc.1 + t.1));
    let default = if n == 0 { 0 } else { mean_half_up(sum, n) };
    let per_agent = tally
        .into_iter()
        .map(|(p, (s, c))| (p, mean_half_up(s, c)))
        .collect();
    (per_agent, default)
}

/// Aggregated model inputs derived from observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatedParams {
    pub transition_matrix: TransitionMatrix,
    pub contacts_per_agent: BTreeMap<Hash32, u64>,
    pub default_contacts: u64,
}

impl EstimatedParams {
    pub fn empty(n_locations: u64) -> Self {
        Self {
            transition_matrix: TransitionMatrix::identity(n_locations),
            contacts_per_agent: BTreeMap::new(),
            default_contacts: 0,
        }
    }

    /// Assigns observed contact rates to simulation agents: the i-th
    /// pseudonym in ascending order becomes agent `i`. Pseudonyms beyond the
    /// population are dropped; unmatched agents use the default.
    pub fn contact_table(&self, population: u64) -> ContactTable {
        ContactTable {
            default: self.default_contacts,
            per_agent: self
                .contacts_per_agent
                .values()
                .take(population as usize)
                .enumerate()
                .map(|(i, &k)| (i as u64, k))
                .collect(),
        }
    }
}

impl Canonical for EstimatedParams {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.transition_matrix);
        enc.seq(
            self.contacts_per_agent.len(),
            &self.contacts_per_agent,
            |e, (p, k)| {
                e.value(p).u64(*k);
            },
        );
        enc.u64(self.default_contacts);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let transition_matrix = dec.value()?;
        let pairs: Vec<(Hash32, u64)> = dec.list()?;
        if !pairs.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(DecodeError::invalid("contact map", "keys not strictly ascending"));
        }
        Ok(Self {
            transition_matrix,
            contacts_per_agent: pairs.into_iter().collect(),
            default_contacts: dec.u64()?,
        })
    }
}

/// Counts reported alongside an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: u64,
    pub transitions: u64,
}

/// Full pipeline from pseudonymized records to model parameters.
pub fn estimate_params(
    records: &[PseudonymizedRecord],
    n_locations: u64,
) -> Result<(EstimatedParams, IngestStats), EpiDataError> {
    if let Some(r) = records.iter().find(|r| r.location_id >= n_locations) {
        return Err(EpiDataError::LocationOutOfRange {
            location: r.location_id,
            n_locations,
        });
    }
    let counts = impute_transitions(records)?;
    let transition_matrix = estimate_markov(&counts, n_locations)?;
    let (contacts_per_agent, default_contacts) = estimate_contacts(records);
    let stats = IngestStats {
        records: records.len() as u64,
        transitions: counts.total(),
    };
    Ok((
        EstimatedParams {
            transition_matrix,
            contacts_per_agent,
            default_contacts,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SALT: [u8; 16] = [7; 16];

    fn rec(id: &str, step: u64, loc: u64, contacts: u64) -> PseudonymizedRecord {
        PseudonymizedRecord {
            pseudonym: pseudonymize(id, &SALT).unwrap(),
            step,
            location_id: loc,
            contacts_observed: contacts,
        }
    }

    #[test]
    fn pseudonyms_are_deterministic_and_salted() {
        let a = pseudonymize("alice", &SALT).unwrap();
        assert_eq!(a, pseudonymize("alice", &SALT).unwrap());
        assert_ne!(a, pseudonymize("alice", &[8; 16]).unwrap());
        assert_eq!(pseudonymize("", &SALT).unwrap(), Hash32::digest(&SALT));
        assert_eq!(pseudonymize("x", &[0; 15]), Err(EpiDataError::BadSalt(15)));
    }

    #[test]
    fn single_pair_counts_once() {
        let c = impute_transitions(&[rec("a", 0, 0, 0), rec("a", 1, 1, 0)]).unwrap();
        assert_eq!(c.get(0, 1), 1);
        assert_eq!(c.total(), 1);
    }

    #[test]
    fn gaps_contribute_nothing() {
        let c = impute_transitions(&[rec("a", 0, 0, 0), rec("a", 2, 1, 0)]).unwrap();
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn stay_then_move() {
        let c = impute_transitions(&[rec("a", 2, 1, 0), rec("a", 0, 0, 0), rec("a", 1, 0, 0)])
            .unwrap();
        assert_eq!(c.get(0, 0), 1);
        assert_eq!(c.get(0, 1), 1);
        assert_eq!(c.total(), 2);
    }

    #[test]
    fn subjects_do_not_link_to_each_other() {
        let c = impute_transitions(&[rec("a", 0, 0, 0), rec("b", 1, 1, 0)]).unwrap();
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn conflicting_sightings_rejected() {
        let err = impute_transitions(&[rec("a", 3, 0, 0), rec("a", 3, 1, 0)]).unwrap_err();
        assert!(matches!(err, EpiDataError::DuplicateStep { step: 3, .. }));
        // identical sightings are fine
        impute_transitions(&[rec("a", 3, 0, 0), rec("a", 3, 0, 0)]).unwrap();
    }

    #[test]
    fn contact_means_round_half_up() {
        let (m, d) = estimate_contacts(&[rec("a", 0, 0, 3)]);
        assert_eq!(m[&rec("a", 0, 0, 0).pseudonym], 3);
        assert_eq!(d, 3);

        let (m, _) = estimate_contacts(&[rec("a", 0, 0, 2), rec("a", 1, 0, 3)]);
        assert_eq!(m[&rec("a", 0, 0, 0).pseudonym], 3);

        let (m, d) = estimate_contacts(&[]);
        assert!(m.is_empty());
        assert_eq!(d, 0);
    }

    #[test]
    fn population_default_is_over_records() {
        // a: 1, 1, 1 ; b: 10  -> record mean 13/4 = 3.25 -> 3
        let recs = [
            rec("a", 0, 0, 1),
            rec("a", 1, 0, 1),
            rec("a", 2, 0, 1),
            rec("b", 0, 0, 10),
        ];
        assert_eq!(estimate_contacts(&recs).1, 3);
    }

    #[test]
    fn anonymize_checks_locations() {
        let raw = ObservationRecord {
            raw_subject_id: "a".into(),
            step: 0,
            location_id: 4,
            contacts_observed: 1,
        };
        assert!(matches!(
            anonymize(std::slice::from_ref(&raw), &SALT, 4),
            Err(EpiDataError::LocationOutOfRange { location: 4, .. })
        ));
        assert_eq!(anonymize(&[raw], &SALT, 5).unwrap().len(), 1);
    }

    #[test]
    fn contact_table_assigns_in_pseudonym_order() {
        let recs = [rec("a", 0, 0, 4), rec("b", 0, 0, 6), rec("c", 0, 0, 8)];
        let (params, _) = estimate_params(&recs, 1).unwrap();
        let table = params.contact_table(2);
        let mut sorted: Vec<(Hash32, u64)> =
            recs.iter().map(|r| (r.pseudonym, r.contacts_observed)).collect();
        sorted.sort();
        assert_eq!(table.per_agent.len(), 2);
        assert_eq!(table.per_agent[&0], sorted[0].1);
        assert_eq!(table.per_agent[&1], sorted[1].1);
        assert_eq!(table.default, 6);
    }
}
