//! Canonical byte encoding for every type that feeds a digest or a signature.
//!
//! The encoding is deliberately tiny and fully specified in
//! `docs/encoding.md` so that third parties can recompute program ids,
//! receipt digests, ledger hashes and seal records without this crate:
//!
//! * integers are fixed-width big-endian,
//! * variable-length fields carry a `u32` big-endian length prefix,
//! * lists carry a `u32` big-endian element count,
//! * options are a one-byte presence tag (`0`/`1`) followed by the value,
//! * struct fields are encoded in declaration order with no padding or tags.
//!
//! JSON is used on the HTTP surface for debuggability, but digests and
//! signatures are always computed over these bytes, never over JSON.

use thiserror::Error;

/// Maximum length accepted for a single variable-length field (64 MiB).
/// Keeps a corrupted length prefix from turning into a huge allocation.
pub const MAX_FIELD_LEN: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input: need {need} bytes, have {have}")]
    UnexpectedEnd { need: usize, have: usize },
    #[error("length prefix {0} exceeds maximum field length")]
    OversizedField(u32),
    #[error("invalid discriminant {value} for {what}")]
    BadDiscriminant { what: &'static str, value: u8 },
    #[error("trailing bytes after value: {0} left over")]
    TrailingBytes(usize),
    #[error("malformed {what}: {detail}")]
    Malformed {
        what: &'static str,
        detail: &'static str,
    },
}

/// Types with a deterministic, injective byte encoding.
pub trait CanonicalEncode {
    fn encode_into(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }
}

/// Types decodable from their canonical encoding.
pub trait CanonicalDecode: Sized {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete value and rejects trailing bytes.
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = ByteReader::new(bytes);
        let value = Self::decode_from(&mut reader)?;
        reader.finish()?;
        Ok(value)
    }
}

/// Bounds-checked cursor over an input buffer. Never panics on malformed
/// input; every read returns `DecodeError` instead.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEnd {
                need: n,
                have: self.remaining(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn read_u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn read_u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    pub fn read_i32(&mut self) -> Result<i32, DecodeError> {
        Ok(self.read_u32()? as i32)
    }

    pub fn read_array32(&mut self) -> Result<[u8; 32], DecodeError> {
        let mut out = [0u8; 32];
        out.copy_from_slice(self.take(32)?);
        Ok(out)
    }

    pub fn read_bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.read_u32()?;
        if len > MAX_FIELD_LEN {
            return Err(DecodeError::OversizedField(len));
        }
        Ok(self.take(len as usize)?.to_vec())
    }

    pub fn read_string(&mut self) -> Result<String, DecodeError> {
        let bytes = self.read_bytes()?;
        String::from_utf8(bytes).map_err(|_| DecodeError::Malformed {
            what: "string",
            detail: "not valid UTF-8",
        })
    }

    /// Reads a `u32` element count, bounded so a corrupted prefix cannot
    /// force a huge reservation.
    pub fn read_count(&mut self) -> Result<usize, DecodeError> {
        let n = self.read_u32()?;
        if n > MAX_FIELD_LEN {
            return Err(DecodeError::OversizedField(n));
        }
        Ok(n as usize)
    }

    pub fn read_option<T, F>(&mut self, f: F) -> Result<Option<T>, DecodeError>
    where
        F: FnOnce(&mut Self) -> Result<T, DecodeError>,
    {
        match self.read_u8()? {
            0 => Ok(None),
            1 => Ok(Some(f(self)?)),
            v => Err(DecodeError::BadDiscriminant {
                what: "option tag",
                value: v,
            }),
        }
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.remaining() != 0 {
            return Err(DecodeError::TrailingBytes(self.remaining()));
        }
        Ok(())
    }
}

pub fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_i32(out: &mut Vec<u8>, v: i32) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_array32(out: &mut Vec<u8>, v: &[u8; 32]) {
    out.extend_from_slice(v);
}

pub fn put_bytes(out: &mut Vec<u8>, v: &[u8]) {
    debug_assert!(v.len() <= MAX_FIELD_LEN as usize);
    put_u32(out, v.len() as u32);
    out.extend_from_slice(v);
}

pub fn put_string(out: &mut Vec<u8>, v: &str) {
    put_bytes(out, v.as_bytes());
}

pub fn put_count(out: &mut Vec<u8>, n: usize) {
    debug_assert!(n <= MAX_FIELD_LEN as usize);
    put_u32(out, n as u32);
}

pub fn put_option<T, F>(out: &mut Vec<u8>, v: Option<&T>, f: F)
where
    F: FnOnce(&mut Vec<u8>, &T),
{
    match v {
        None => put_u8(out, 0),
        Some(value) => {
            put_u8(out, 1);
            f(out, value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian() {
        let mut out = Vec::new();
        put_u32(&mut out, 0x0102_0304);
        put_u64(&mut out, 0x0506_0708_090a_0b0c);
        put_i32(&mut out, -2);
        assert_eq!(
            out,
            vec![
                0x01, 0x02, 0x03, 0x04, // u32
                0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, // u64
                0xff, 0xff, 0xff, 0xfe, // i32 two's complement
            ]
        );
    }

    #[test]
    fn bytes_carry_length_prefix() {
        let mut out = Vec::new();
        put_bytes(&mut out, b"ab");
        assert_eq!(out, vec![0, 0, 0, 2, b'a', b'b']);
        let mut reader = ByteReader::new(&out);
        assert_eq!(reader.read_bytes().unwrap(), b"ab");
        reader.finish().unwrap();
    }

    #[test]
    fn truncated_input_is_an_error_not_a_panic() {
        let mut reader = ByteReader::new(&[0, 0, 0, 9, 1]);
        assert!(matches!(
            reader.read_bytes(),
            Err(DecodeError::UnexpectedEnd { .. })
        ));
    }

    #[test]
    fn oversized_length_prefix_rejected() {
        let mut out = Vec::new();
        put_u32(&mut out, MAX_FIELD_LEN + 1);
        let mut reader = ByteReader::new(&out);
        assert!(matches!(
            reader.read_bytes(),
            Err(DecodeError::OversizedField(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let reader = ByteReader::new(&[1]);
        assert_eq!(reader.finish(), Err(DecodeError::TrailingBytes(1)));
    }

    #[test]
    fn option_tags() {
        let mut out = Vec::new();
        put_option(&mut out, Some(&7u64), |o, v| put_u64(o, *v));
        put_option::<u64, _>(&mut out, None, |o, v| put_u64(o, *v));
        let mut reader = ByteReader::new(&out);
        assert_eq!(reader.read_option(|r| r.read_u64()).unwrap(), Some(7));
        assert_eq!(reader.read_option(|r| r.read_u64()).unwrap(), None);
        reader.finish().unwrap();
    }
}
