//! Canonical binary encoding and content hashing.
//!
//! Fields are written in declaration order, integers big-endian, floats as
//! their IEEE-754 bit pattern (big-endian), and every variable-length value
//! (lists, maps, strings, byte blobs) is prefixed with its length as a `u64`.
//! Enum variants are a single tag byte followed by their payload. Map and set
//! iteration order is the key order, so two equal values always encode to the
//! same bytes.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

/// A 32-byte SHA-256 digest.
pub type Hash32 = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Hash32 {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input: needed {needed} bytes, {remaining} left")]
    UnexpectedEof { needed: usize, remaining: usize },
    #[error("invalid tag {tag} for {ty}")]
    InvalidTag { ty: &'static str, tag: u8 },
    #[error("invalid utf-8 string")]
    InvalidUtf8,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid value: {0}")]
    Invalid(String),
}

pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::UnexpectedEof {
                needed: n,
                remaining: self.buf.len(),
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn take_array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    /// Reads a length prefix, rejecting lengths that cannot possibly fit in
    /// the remaining input (each element occupies at least one byte).
    fn take_len(&mut self) -> Result<usize, CodecError> {
        let len = u64::decode(self)?;
        if len > self.buf.len() as u64 {
            return Err(CodecError::UnexpectedEof {
                needed: len as usize,
                remaining: self.buf.len(),
            });
        }
        Ok(len as usize)
    }
}

pub trait Canonical: Sized {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode(&mut r)?;
        if r.remaining() != 0 {
            return Err(CodecError::TrailingBytes(r.remaining()));
        }
        Ok(v)
    }

    fn content_hash(&self) -> Hash32 {
        sha256(&self.to_canonical_bytes())
    }
}

macro_rules! int_impl {
    ($($t:ty),*) => {$(
        impl Canonical for $t {
            fn encode(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }
            fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                Ok(<$t>::from_be_bytes(r.take_array()?))
            }
        }
    )*};
}

int_impl!(u8, u16, u32, u64, i64);

impl Canonical for bool {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(u8::from(*self));
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match u8::decode(r)? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::InvalidTag { ty: "bool", tag }),
        }
    }
}

impl Canonical for f64 {
    fn encode(&self, out: &mut Vec<u8>) {
        self.to_bits().encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(f64::from_bits(u64::decode(r)?))
    }
}

impl Canonical for [u8; 32] {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.take_array()
    }
}

impl Canonical for String {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        out.extend_from_slice(self.as_bytes());
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.take_len()?;
        let bytes = r.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }
}

impl<T: Canonical> Canonical for Vec<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        for item in self {
            item.encode(out);
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.take_len()?;
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(T::decode(r)?);
        }
        Ok(v)
    }
}

impl<T: Canonical> Canonical for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode(out);
            }
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match u8::decode(r)? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(r)?)),
            tag => Err(CodecError::InvalidTag { ty: "Option", tag }),
        }
    }
}

impl<K: Canonical + Ord, V: Canonical> Canonical for BTreeMap<K, V> {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        for (k, v) in self {
            k.encode(out);
            v.encode(out);
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.take_len()?;
        let mut map = BTreeMap::new();
        for _ in 0..len {
            let k = K::decode(r)?;
            let v = V::decode(r)?;
            if map.insert(k, v).is_some() {
                return Err(CodecError::Invalid("duplicate map key".into()));
            }
        }
        Ok(map)
    }
}

impl<T: Canonical + Ord> Canonical for BTreeSet<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        for item in self {
            item.encode(out);
        }
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.take_len()?;
        let mut set = BTreeSet::new();
        for _ in 0..len {
            if !set.insert(T::decode(r)?) {
                return Err(CodecError::Invalid("duplicate set element".into()));
            }
        }
        Ok(set)
    }
}

impl<A: Canonical, B: Canonical> Canonical for (A, B) {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode(r)?, B::decode(r)?))
    }
}

impl<A: Canonical, B: Canonical, C: Canonical> Canonical for (A, B, C) {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
        self.1.encode(out);
        self.2.encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode(r)?, B::decode(r)?, C::decode(r)?))
    }
}

/// Implements [`Canonical`] for a struct by encoding the listed fields in
/// order. List every field, in declaration order.
#[macro_export]
macro_rules! canonical_struct {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::codec::Canonical for $ty {
            fn encode(&self, out: &mut Vec<u8>) {
                $( $crate::codec::Canonical::encode(&self.$field, out); )*
            }
            fn decode(
                r: &mut $crate::codec::Reader<'_>,
            ) -> Result<Self, $crate::codec::CodecError> {
                Ok(Self {
                    $( $field: $crate::codec::Canonical::decode(r)?, )*
                })
            }
        }
    };
}

/// Implements [`Canonical`] for a fieldless enum as a single tag byte.
#[macro_export]
macro_rules! canonical_enum {
    ($ty:ident { $($variant:ident = $tag:literal),* $(,)? }) => {
        impl $crate::codec::Canonical for $ty {
            fn encode(&self, out: &mut Vec<u8>) {
                out.push(match self { $( $ty::$variant => $tag, )* });
            }
            fn decode(
                r: &mut $crate::codec::Reader<'_>,
            ) -> Result<Self, $crate::codec::CodecError> {
                match <u8 as $crate::codec::Canonical>::decode(r)? {
                    $( $tag => Ok($ty::$variant), )*
                    tag => Err($crate::codec::CodecError::InvalidTag { ty: stringify!($ty), tag }),
                }
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integers_are_big_endian() {
        assert_eq!(0x0102_0304u32.to_canonical_bytes(), vec![1, 2, 3, 4]);
        assert_eq!(
            vec![7u8].to_canonical_bytes(),
            vec![0, 0, 0, 0, 0, 0, 0, 1, 7]
        );
    }

    #[test]
    fn truncated_input_is_rejected() {
        let bytes = vec![1u64, 2, 3].to_canonical_bytes();
        let err = Vec::<u64>::from_canonical_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, CodecError::UnexpectedEof { .. }));
    }

    #[test]
    fn huge_length_prefix_does_not_allocate() {
        let bytes = u64::MAX.to_canonical_bytes();
        assert!(Vec::<u8>::from_canonical_bytes(&bytes).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = 5u32.to_canonical_bytes();
        bytes.push(0);
        assert_eq!(
            u32::from_canonical_bytes(&bytes),
            Err(CodecError::TrailingBytes(1))
        );
    }

    proptest! {
        #[test]
        fn nested_values_round_trip(
            v in proptest::collection::btree_map(any::<u64>(), proptest::collection::vec(any::<f64>(), 0..8), 0..8),
            s in ".*",
        ) {
            let value = (v, s, Some(true));
            let bytes = value.to_canonical_bytes();
            let back = <(BTreeMap<u64, Vec<f64>>, String, Option<bool>)>::from_canonical_bytes(&bytes).unwrap();
            // compare through bytes: NaN payloads survive bit-exactly
            prop_assert_eq!(back.to_canonical_bytes(), bytes);
        }
    }
}
