//! SplitMix64 and the integer-only samplers built on it.
//!
//! Every sampler consumes exactly one 64-bit output, so the number of draws a
//! contract makes is a function of its logic alone and replicas stay in
//! lock-step.

use thiserror::Error;

use super::q32::{Q32, Q32_ONE_RAW};
use crate::hash::Hash32;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid range: lo {lo} > hi {hi}")]
pub struct InvalidRange {
    pub lo: u64,
    pub hi: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for one contract invocation: seeded by folding
    /// `(block_seed, contract_id, invocation_index)` through SHA-256.
    pub fn for_invocation(block_seed: u64, contract_id: &Hash32, invocation_index: u64) -> Self {
        let seed = Hash32::digest_parts(&[
            &block_seed.to_le_bytes(),
            contract_id.as_bytes(),
            &invocation_index.to_le_bytes(),
        ])
        .fold_u64();
        Self::new(seed)
    }

    pub const fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// True with probability `p`: compares the high 32 bits of one draw
    /// against the numerator.
    #[inline]
    pub fn bernoulli(&mut self, p: Q32) -> bool {
        (self.next_u64() >> 32) < p.raw()
    }

    /// `lo + floor((v >> 32) * (hi - lo) / 2^32)`.
    pub fn uniform_q32(&mut self, lo: Q32, hi: Q32) -> Result<Q32, InvalidRange> {
        if lo > hi {
            return Err(InvalidRange {
                lo: lo.raw(),
                hi: hi.raw(),
            });
        }
        let v = self.next_u64() >> 32;
        let offset = (v * (hi.raw() - lo.raw())) / Q32_ONE_RAW;
        Ok(Q32::from_raw(lo.raw() + offset).expect("within [lo, hi]"))
    }

    /// `lo + (v mod (hi - lo + 1))`. Plain modulo; the bias is at most
    /// `span / 2^64`.
    #[inline]
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> Result<u64, InvalidRange> {
        if lo > hi {
            return Err(InvalidRange { lo, hi });
        }
        let v = self.next_u64();
        Ok(match (hi - lo).checked_add(1) {
            Some(span) => lo + v % span,
            None => v,
        })
    }

    /// Index in `0..n` for `n >= 1`; same draw as `uniform_int(0, n - 1)`.
    #[inline]
    pub(crate) fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n >= 1);
        self.next_u64() % n
    }
}
