//! Canonical byte encoding.
//!
//! Every value that is hashed, stored on the ledger, or exchanged between
//! replicas goes through this encoding. The rules are fixed:
//!
//! * integers are 8-byte little-endian,
//! * byte strings (and UTF-8 strings) carry an 8-byte little-endian length
//!   prefix followed by the raw bytes,
//! * lists carry an 8-byte little-endian element count followed by the
//!   elements,
//! * struct fields are written in declaration order,
//! * enum discriminants are written as integers, `Option` as a `0`/`1` tag
//!   followed by the payload when present.
//!
//! Decoding is strict: truncated input, trailing bytes, bad tags, and
//! out-of-range values are errors, so `encode(decode(b)) == b` for every `b`
//! that decodes.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("invalid tag {tag} for {what}")]
    BadTag { what: &'static str, tag: u64 },
    #[error("string field is not valid UTF-8")]
    Utf8,
    #[error("expected {expected} bytes for {what}, found {found}")]
    BadLength {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

impl DecodeError {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        DecodeError::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

/// A type with a canonical byte encoding.
pub trait Canonical: Sized {
    fn encode(&self, enc: &mut Encoder);
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;
}

/// Encodes a value into a fresh buffer.
pub fn to_bytes<T: Canonical>(value: &T) -> Vec<u8> {
    let mut enc = Encoder::new();
    value.encode(&mut enc);
    enc.finish()
}

/// Decodes a value that must occupy the whole of `bytes`.
pub fn from_bytes<T: Canonical>(bytes: &[u8]) -> Result<T, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let value = T::decode(&mut dec)?;
    dec.finish()?;
    Ok(value)
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn option_u64(&mut self, v: Option<u64>) -> &mut Self {
        match v {
            None => self.u64(0),
            Some(x) => self.u64(1).u64(x),
        }
    }

    pub fn value<T: Canonical>(&mut self, v: &T) -> &mut Self {
        v.encode(self);
        self
    }

    pub fn list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.u64(items.len() as u64);
        for item in items {
            item.encode(self);
        }
        self
    }

    /// Writes a length prefix and then hands each item to `f`.
    pub fn seq<I, F>(&mut self, len: usize, items: I, mut f: F) -> &mut Self
    where
        I: IntoIterator,
        F: FnMut(&mut Self, I::Item),
    {
        self.u64(len as u64);
        let mut written = 0usize;
        for item in items {
            f(self, item);
            written += 1;
        }
        debug_assert_eq!(written, len, "sequence length prefix mismatch");
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let raw = self.take(8)?;
        Ok(u64::from_le_bytes(raw.try_into().expect("8-byte slice")))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u64()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::BadTag { what: "bool", tag }),
        }
    }

    fn len_prefix(&mut self) -> Result<usize, DecodeError> {
        let len = self.u64()?;
        usize::try_from(len).map_err(|_| DecodeError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
        })
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        Ok(self.bytes_ref()?.to_vec())
    }

    pub fn bytes_ref(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.len_prefix()?;
        self.take(len)
    }

    pub fn fixed<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], DecodeError> {
        let raw = self.bytes_ref()?;
        raw.try_into().map_err(|_| DecodeError::BadLength {
            what,
            expected: N,
            found: raw.len(),
        })
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let raw = self.bytes_ref()?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::Utf8)
    }

    pub fn option_u64(&mut self) -> Result<Option<u64>, DecodeError> {
        match self.u64()? {
            0 => Ok(None),
            1 => Ok(Some(self.u64()?)),
            tag => Err(DecodeError::BadTag {
                what: "option",
                tag,
            }),
        }
    }

    pub fn value<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode(self)
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        self.seq(|d| T::decode(d))
    }

    pub fn seq<T, F>(&mut self, mut f: F) -> Result<Vec<T>, DecodeError>
    where
        F: FnMut(&mut Self) -> Result<T, DecodeError>,
    {
        let len = self.len_prefix()?;
        // every element occupies at least 8 bytes
        if len > self.remaining() / 8 {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: len.saturating_mul(8).saturating_sub(self.remaining()),
            });
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f(self)?);
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

impl Canonical for u64 {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(*self);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.u64()
    }
}

impl Canonical for String {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(self);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.string()
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn encode(&self, enc: &mut Encoder) {
        self.0.encode(enc);
        self.1.encode(enc);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok((A::decode(dec)?, B::decode(dec)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_byte_string_is_eight_zero_bytes() {
        let mut enc = Encoder::new();
        enc.bytes(&[]);
        assert_eq!(enc.finish(), vec![0u8; 8]);
    }

    #[test]
    fn integer_one_is_little_endian() {
        assert_eq!(to_bytes(&1u64), vec![1, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn trailing_and_truncated_input_rejected() {
        let mut bytes = to_bytes(&7u64);
        bytes.push(0);
        assert_eq!(from_bytes::<u64>(&bytes), Err(DecodeError::Trailing(1)));
        assert!(matches!(
            from_bytes::<u64>(&bytes[..5]),
            Err(DecodeError::Truncated { .. })
        ));
    }

    #[test]
    fn huge_list_prefix_does_not_allocate() {
        let bytes = to_bytes(&u64::MAX);
        let mut dec = Decoder::new(&bytes);
        assert!(dec.list::<u64>().is_err());
    }

    #[test]
    fn string_round_trip() {
        let s = "SIR-ABM/1".to_string();
        assert_eq!(from_bytes::<String>(&to_bytes(&s)).unwrap(), s);
        let mut enc = Encoder::new();
        enc.bytes(&[0xff, 0xfe]);
        assert_eq!(from_bytes::<String>(&enc.finish()), Err(DecodeError::Utf8));
    }
}
