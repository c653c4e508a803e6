//! Unsigned fixed-point probabilities with denominator 2³².

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// Numerator representing exactly 1.0.
pub const Q32_ONE_RAW: u64 = 1 << 32;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Q32Error {
    #[error("numerator {0} exceeds 2^32")]
    OutOfRange(u64),
    #[error("ratio {num}/{den} is not a probability")]
    BadRatio { num: u64, den: u64 },
    #[error("cannot parse {0:?} as a probability")]
    Parse(String),
}

/// A probability in `[0, 1]` stored as `numerator / 2³²`.
///
/// The numerator `2³²` is exactly 1.0 and `0` is exactly 0.0, so both
/// endpoints are representable and Bernoulli trials at the endpoints are
/// certain.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Q32(u64);

impl Q32 {
    pub const ZERO: Q32 = Q32(0);
    pub const HALF: Q32 = Q32(1 << 31);
    pub const ONE: Q32 = Q32(Q32_ONE_RAW);

    pub const fn from_raw(raw: u64) -> Result<Self, Q32Error> {
        if raw > Q32_ONE_RAW {
            Err(Q32Error::OutOfRange(raw))
        } else {
            Ok(Q32(raw))
        }
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    /// `num / den` rounded half-up to the nearest representable value.
    pub fn from_ratio(num: u64, den: u64) -> Result<Self, Q32Error> {
        if den == 0 || num > den {
            return Err(Q32Error::BadRatio { num, den });
        }
        Ok(Q32(round_half_up(num as u128 * Q32_ONE_RAW as u128, den as u128) as u64))
    }

    pub fn abs_diff(self, other: Q32) -> Q32 {
        Q32(self.0.abs_diff(other.0))
    }
}

/// `num / den` rounded half-up.
pub(crate) fn round_half_up(num: u128, den: u128) -> u128 {
    (2 * num + den) / (2 * den)
}

impl fmt::Debug for Q32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q32({} = {})", self.0, self)
    }
}

/// Decimal rendering with ten fractional digits, trailing zeros trimmed.
/// Shortest decimal (at most 10 fractional digits) that parses back to the
/// same value.
impl fmt::Display for Q32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one = Q32_ONE_RAW as u128;
        let mut scale: u128 = 1;
        for digits in 0..=10usize {
            let scaled = round_half_up(self.0 as u128 * scale, one);
            let back = round_half_up(scaled * one, scale);
            if back == self.0 as u128 || digits == 10 {
                let (int, frac) = (scaled / scale, scaled % scale);
                return if digits == 0 || frac == 0 {
                    write!(f, "{int}")
                } else {
                    let frac = format!("{frac:0digits$}");
                    write!(f, "{int}.{}", frac.trim_end_matches('0'))
                };
            }
            scale *= 10;
        }
        unreachable!()
    }
}

/// Parses an exact decimal such as `"0.05"` or `"1"`, rounding half-up to
/// the nearest `Q32`. No floating point is involved.
impl FromStr for Q32 {
    type Err = Q32Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || Q32Error::Parse(s.to_string());
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if int.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
        let den = 10u64.pow(frac.len() as u32);
        let frac_num: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
        let num = int
            .checked_mul(den)
            .and_then(|x| x.checked_add(frac_num))
            .ok_or_else(err)?;
        Q32::from_ratio(num, den).map_err(|_| err())
    }
}

impl Serialize for Q32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

/// Accepts either a raw numerator (`214748365`) or a decimal string (`"0.05"`).
impl<'de> Deserialize<'de> for Q32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Raw(u64),
            Decimal(String),
        }
        match Repr::deserialize(d)? {
            Repr::Raw(raw) => Q32::from_raw(raw),
            Repr::Decimal(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

impl Canonical for Q32 {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let raw = dec.u64()?;
        Q32::from_raw(raw).map_err(|e| DecodeError::invalid("q32", e.to_string()))
    }
}
