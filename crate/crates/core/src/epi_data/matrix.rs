use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EpiDataError;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::runtime::{Prng, Q32, Q32_ONE_RAW};

/// Markov mobility matrix. Row `s` lists `(destination, probability)` pairs
/// sorted by destination, and its numerators sum to exactly 2³².
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct TransitionMatrix {
    n_locations: u64,
    rows: Vec<Vec<(u64, Q32)>>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    n_locations: u64,
    rows: Vec<Vec<(u64, Q32)>>,
}

impl TryFrom<MatrixRepr> for TransitionMatrix {
    type Error = EpiDataError;

    fn try_from(r: MatrixRepr) -> Result<Self, Self::Error> {
        TransitionMatrix::new(r.n_locations, r.rows)
    }
}

impl TransitionMatrix {
    pub fn new(n_locations: u64, rows: Vec<Vec<(u64, Q32)>>) -> Result<Self, EpiDataError> {
        let m = Self { n_locations, rows };
        m.validate()?;
        Ok(m)
    }

    /// Every location maps to itself with probability 1.
    pub fn identity(n_locations: u64) -> Self {
        Self {
            n_locations,
            rows: (0..n_locations).map(|l| vec![(l, Q32::ONE)]).collect(),
        }
    }

    pub fn n_locations(&self) -> u64 {
        self.n_locations
    }

    pub fn rows(&self) -> &[Vec<(u64, Q32)>] {
        &self.rows
    }

    pub fn row(&self, source: u64) -> &[(u64, Q32)] {
        &self.rows[source as usize]
    }

    pub fn validate(&self) -> Result<(), EpiDataError> {
        let bad = |reason: String| Err(EpiDataError::InvalidMatrix(reason));
        if self.n_locations == 0 {
            return bad("no locations".into());
        }
        if self.rows.len() as u64 != self.n_locations {
            return bad(format!(
                "{} rows for {} locations",
                self.rows.len(),
                self.n_locations
            ));
        }
        for (src, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                return bad(format!("row {src} is empty"));
            }
            if !row.windows(2).all(|w| w[0].0 < w[1].0) {
                return bad(format!("row {src} destinations not strictly ascending"));
            }
            if let Some(&(dest, _)) = row.iter().find(|(d, _)| *d >= self.n_locations) {
                return bad(format!("row {src} names location {dest}"));
            }
            let sum: u64 = row.iter().map(|(_, p)| p.raw()).sum();
            if sum != Q32_ONE_RAW {
                return bad(format!("row {src} sums to {sum}, not 2^32"));
            }
        }
        Ok(())
    }

    /// First destination whose cumulative numerator exceeds `u`, where `u`
    /// is a 32-bit uniform draw.
    pub fn destination(&self, source: u64, u: u64) -> u64 {
        let mut cumulative = 0u64;
        let row = self.row(source);
        for &(dest, p) in row {
            cumulative += p.raw();
            if cumulative > u {
                return dest;
            }
        }
        unreachable!("row numerators sum to 2^32 and u < 2^32")
    }

    /// One Markov move from `source`, consuming one PRNG step.
    pub fn sample(&self, source: u64, prng: &mut Prng) -> u64 {
        self.destination(source, prng.next_u64() >> 32)
    }
}

impl Canonical for TransitionMatrix {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.n_locations);
        enc.seq(self.rows.len(), &self.rows, |e, row| {
            e.list(row);
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let m = Self {
            n_locations: dec.u64()?,
            rows: dec.seq(|d| d.list())?,
        };
        m.validate()
            .map_err(|e| DecodeError::invalid("transition matrix", e.to_string()))?;
        Ok(m)
    }
}

/// Observed transitions: `source -> destination -> count`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub rows: BTreeMap<u64, BTreeMap<u64, u64>>,
}

impl TransitionCounts {
    pub fn add(&mut self, source: u64, destination: u64) {
        *self
            .rows
            .entry(source)
            .or_default()
            .entry(destination)
            .or_default() += 1;
    }

    pub fn get(&self, source: u64, destination: u64) -> u64 {
        self.rows
            .get(&source)
            .and_then(|r| r.get(&destination))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.rows.values().flat_map(|r| r.values()).sum()
    }
}

/// Normalizes counts into a [`TransitionMatrix`].
///
/// Each observed row is apportioned over 2³² by largest remainder: every
/// destination gets `floor(count * 2^32 / total)`, and the units left over
/// go one each to the largest remainders, lower destination id first on
/// ties. Rows with no observations become a self-loop.
pub fn estimate_markov(
    counts: &TransitionCounts,
    n_locations: u64,
) -> Result<TransitionMatrix, EpiDataError> {
    if n_locations == 0 {
        return Err(EpiDataError::InvalidMatrix("no locations".into()));
    }
    for (&src, row) in &counts.rows {
        for &dest in std::iter::once(&src).chain(row.keys()) {
            if dest >= n_locations {
                return Err(EpiDataError::LocationOutOfRange {
                    location: dest,
                    n_locations,
                });
            }
        }
    }

    let rows = (0..n_locations)
        .map(|src| match counts.rows.get(&src) {
            Some(row) if row.values().any(|&c| c > 0) => apportion(row),
            _ => vec![(src, Q32::ONE)],
        })
        .collect();
    TransitionMatrix::new(n_locations, rows)
}

fn apportion(row: &BTreeMap<u64, u64>) -> Vec<(u64, Q32)> {
    let total: u128 = row.values().map(|&c| c as u128).sum();
    let one = Q32_ONE_RAW as u128;
    let mut shares: Vec<(u64, u128, u128)> = row
        .iter()
        .map(|(&dest, &c)| {
            let scaled = c as u128 * one;
            (dest, scaled / total, scaled % total)
        })
        .collect();
    let assigned: u128 = shares.iter().map(|s| s.1).sum();
    let leftover = (one - assigned) as usize;

    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2).then(shares[a].0.cmp(&shares[b].0)));
    for &i in order.iter().take(leftover) {
        shares[i].1 += 1;
    }
    shares
        .into_iter()
        .map(|(dest, q, _)| (dest, Q32::from_raw(q as u64).expect("share <= 2^32")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(src: u64, dests: &[(u64, u64)]) -> TransitionCounts {
        let mut c = TransitionCounts::default();
        for &(d, n) in dests {
            for _ in 0..n {
                c.add(src, d);
            }
        }
        c
    }

    #[test]
    fn single_destination_gets_everything() {
        let m = estimate_markov(&counts(0, &[(1, 1)]), 2).unwrap();
        assert_eq!(m.row(0), &[(1, Q32::ONE)]);
        // unobserved row is a self-loop
        assert_eq!(m.row(1), &[(1, Q32::ONE)]);
    }

    #[test]
    fn exact_halves() {
        let m = estimate_markov(&counts(0, &[(1, 1), (2, 1)]), 3).unwrap();
        assert_eq!(m.row(0), &[(1, Q32::HALF), (2, Q32::HALF)]);
    }

    #[test]
    fn three_way_split_by_largest_remainder() {
        // 2^32 = 3 * 1431655765 + 1. All remainders tie, so the spare unit
        // goes to the lowest destination id.
        let m = estimate_markov(&counts(0, &[(1, 1), (2, 1), (3, 1)]), 4).unwrap();
        let raw: Vec<u64> = m.row(0).iter().map(|(_, p)| p.raw()).collect();
        assert_eq!(raw, vec![1_431_655_766, 1_431_655_765, 1_431_655_765]);
        assert_eq!(raw.iter().sum::<u64>(), 1 << 32);
    }

    #[test]
    fn largest_remainder_not_lowest_id() {
        // counts 1, 2 over total 3: floors 1431655765, 2863311530 with
        // remainders 1 and 2; the spare unit goes to destination 2.
        let m = estimate_markov(&counts(0, &[(1, 1), (2, 2)]), 3).unwrap();
        let raw: Vec<u64> = m.row(0).iter().map(|(_, p)| p.raw()).collect();
        assert_eq!(raw, vec![1_431_655_765, 2_863_311_531]);
    }

    #[test]
    fn out_of_range_location_rejected() {
        assert!(matches!(
            estimate_markov(&counts(0, &[(5, 1)]), 2),
            Err(EpiDataError::LocationOutOfRange { location: 5, .. })
        ));
    }

    #[test]
    fn destination_lookup() {
        let m = TransitionMatrix::new(
            3,
            vec![
                vec![(1, Q32::HALF), (2, Q32::HALF)],
                vec![(1, Q32::ONE)],
                vec![(2, Q32::ONE)],
            ],
        )
        .unwrap();
        assert_eq!(m.destination(0, 0), 1);
        assert_eq!(m.destination(0, (1 << 31) - 1), 1);
        assert_eq!(m.destination(0, 1 << 31), 2);
        assert_eq!(m.destination(0, u32::MAX as u64), 2);
    }

    #[test]
    fn validation_catches_bad_rows() {
        assert!(TransitionMatrix::new(1, vec![vec![(0, Q32::HALF)]]).is_err());
        assert!(TransitionMatrix::new(2, vec![vec![(0, Q32::ONE)]]).is_err());
        assert!(TransitionMatrix::new(1, vec![vec![(1, Q32::ONE)]]).is_err());
        assert!(TransitionMatrix::new(
            2,
            vec![vec![(1, Q32::HALF), (0, Q32::HALF)], vec![(1, Q32::ONE)]]
        )
        .is_err());
        assert!(TransitionMatrix::new(0, vec![]).is_err());
    }
}
