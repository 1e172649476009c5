//! Serialization seam.
//!
//! A [`Codec`] turns values of one Rust type into a `data_string` and back.
//! Codecs are registered under a string type tag in a [`CodecRegistry`];
//! the registry stores them type-erased as [`SharedCodec`] so the network
//! side can decode a frame without knowing the concrete type statically.
//!
//! The reference codecs ([`BytesCodec`], [`U64Codec`], [`StringCodec`]) use a
//! length-delimited layout: byte strings are a `u32` LE length followed by
//! the raw bytes, integers are `u64` LE. [`ByteReader`] and the `put_*`
//! helpers compose that layout for structured messages.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::any::{Any, TypeId};
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    Truncated { needed: usize, available: usize },
    TrailingBytes(usize),
    Invalid(&'static str),
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::Truncated { needed, available } => {
                write!(f, "need {needed} more bytes, {available} available")
            }
            DecodeError::TrailingBytes(n) => write!(f, "{n} trailing bytes after value"),
            DecodeError::Invalid(what) => write!(f, "invalid encoding: {what}"),
        }
    }
}

impl core::error::Error for DecodeError {}

/// Serializer/deserializer pair for one value type.
///
/// Implementations must satisfy `decode(encode(x)) == x`.
pub trait Codec: Send + Sync + 'static {
    type Value: Send + Sync + 'static;

    fn encode(&self, value: &Self::Value, out: &mut Vec<u8>);

    fn decode(&self, bytes: &[u8]) -> Result<Self::Value, DecodeError>;
}

/// The value handed to [`DynCodec::encode_any`] was not the codec's type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypeMismatch {
    pub expected: &'static str,
}

impl fmt::Display for TypeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "value is not a {}", self.expected)
    }
}

impl core::error::Error for TypeMismatch {}

/// Object-safe form of [`Codec`]. Implemented for every `Codec`.
pub trait DynCodec: Send + Sync {
    fn value_type(&self) -> TypeId;

    fn value_type_name(&self) -> &'static str;

    /// Identity of the concrete codec implementation.
    fn codec_type(&self) -> TypeId;

    /// True when the codec carries no state, so two instances of the same
    /// codec type are interchangeable.
    fn is_stateless(&self) -> bool;

    fn encode_any(&self, value: &dyn Any, out: &mut Vec<u8>) -> Result<(), TypeMismatch>;

    fn decode_any(&self, bytes: &[u8]) -> Result<Arc<dyn Any + Send + Sync>, DecodeError>;
}

impl<C: Codec> DynCodec for C {
    fn value_type(&self) -> TypeId {
        TypeId::of::<C::Value>()
    }

    fn value_type_name(&self) -> &'static str {
        core::any::type_name::<C::Value>()
    }

    fn codec_type(&self) -> TypeId {
        TypeId::of::<C>()
    }

    fn is_stateless(&self) -> bool {
        core::mem::size_of::<C>() == 0
    }

    fn encode_any(&self, value: &dyn Any, out: &mut Vec<u8>) -> Result<(), TypeMismatch> {
        let value = value.downcast_ref::<C::Value>().ok_or(TypeMismatch {
            expected: core::any::type_name::<C::Value>(),
        })?;
        self.encode(value, out);
        Ok(())
    }

    fn decode_any(&self, bytes: &[u8]) -> Result<Arc<dyn Any + Send + Sync>, DecodeError> {
        let value: Box<dyn Any + Send + Sync> = Box::new(self.decode(bytes)?);
        Ok(Arc::from(value))
    }
}

impl fmt::Debug for dyn DynCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynCodec")
            .field("value", &self.value_type_name())
            .finish()
    }
}

pub type SharedCodec = Arc<dyn DynCodec>;

fn same_codec(a: &SharedCodec, b: &SharedCodec) -> bool {
    Arc::ptr_eq(a, b) || (a.codec_type() == b.codec_type() && a.is_stateless())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryError {
    EmptyTag,
    /// `tag` is already bound to a different codec.
    DuplicateCodec { tag: String },
}

impl fmt::Display for RegistryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryError::EmptyTag => f.write_str("codec type tag is empty"),
            RegistryError::DuplicateCodec { tag } => {
                write!(f, "type tag {tag:?} is already bound to a different codec")
            }
        }
    }
}

impl core::error::Error for RegistryError {}

/// Type tag → codec table, with a reverse index from value type to tag.
///
/// When several tags share a value type, the first registered tag is the
/// one [`CodecRegistry::for_type`] reports.
#[derive(Debug, Default, Clone)]
pub struct CodecRegistry {
    by_tag: BTreeMap<String, SharedCodec>,
    by_type: BTreeMap<TypeId, String>,
}

impl CodecRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds `tag` to `codec`. Re-registering the same codec is a no-op.
    pub fn register(&mut self, tag: &str, codec: SharedCodec) -> Result<(), RegistryError> {
        if tag.is_empty() {
            return Err(RegistryError::EmptyTag);
        }
        if let Some(existing) = self.by_tag.get(tag) {
            return if same_codec(existing, &codec) {
                Ok(())
            } else {
                Err(RegistryError::DuplicateCodec {
                    tag: tag.to_string(),
                })
            };
        }
        self.by_type
            .entry(codec.value_type())
            .or_insert_with(|| tag.to_string());
        self.by_tag.insert(tag.to_string(), codec);
        Ok(())
    }

    pub fn register_codec<C: Codec>(&mut self, tag: &str, codec: C) -> Result<(), RegistryError> {
        self.register(tag, Arc::new(codec))
    }

    pub fn get(&self, tag: &str) -> Option<&SharedCodec> {
        self.by_tag.get(tag)
    }

    /// The tag and codec registered for values of type `type_id`.
    pub fn for_type(&self, type_id: TypeId) -> Option<(&str, &SharedCodec)> {
        let tag = self.by_type.get(&type_id)?;
        Some((tag.as_str(), &self.by_tag[tag]))
    }

    /// Serializes `value` with the codec registered for its type.
    pub fn serialize<T: Any>(&self, value: &T) -> Option<Vec<u8>> {
        let (_, codec) = self.for_type(TypeId::of::<T>())?;
        let mut out = Vec::new();
        codec.encode_any(value, &mut out).ok()?;
        Some(out)
    }

    /// Deserializes `bytes` with the codec bound to `tag`.
    pub fn deserialize(
        &self,
        tag: &str,
        bytes: &[u8],
    ) -> Option<Result<Arc<dyn Any + Send + Sync>, DecodeError>> {
        Some(self.get(tag)?.decode_any(bytes))
    }

    pub fn len(&self) -> usize {
        self.by_tag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_tag.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.by_tag.keys().map(String::as_str)
    }
}

pub fn put_u64(out: &mut Vec<u8>, value: u64) {
    out.extend_from_slice(&value.to_le_bytes());
}

/// Writes a `u32` LE length followed by `bytes`.
///
/// # Panics
///
/// If `bytes` is longer than `u32::MAX`.
pub fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    let len = u32::try_from(bytes.len()).expect("byte string longer than u32::MAX");
    out.reserve(4 + bytes.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Cursor over a buffer in the reference layout.
#[derive(Debug, Clone)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated {
                needed: n,
                available: self.buf.len(),
            });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        let mut word = [0u8; 8];
        word.copy_from_slice(b);
        Ok(u64::from_le_bytes(word))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    /// Fails if anything is left unread.
    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

/// `Vec<u8>` as `u32` LE length + raw bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BytesCodec;

impl Codec for BytesCodec {
    type Value = Vec<u8>;

    fn encode(&self, value: &Vec<u8>, out: &mut Vec<u8>) {
        put_bytes(out, value);
    }

    fn decode(&self, bytes: &[u8]) -> Result<Vec<u8>, DecodeError> {
        let mut r = ByteReader::new(bytes);
        let v = r.bytes()?.to_vec();
        r.finish()?;
        Ok(v)
    }
}

/// `u64` as 8 bytes little-endian.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct U64Codec;

impl Codec for U64Codec {
    type Value = u64;

    fn encode(&self, value: &u64, out: &mut Vec<u8>) {
        put_u64(out, *value);
    }

    fn decode(&self, bytes: &[u8]) -> Result<u64, DecodeError> {
        let mut r = ByteReader::new(bytes);
        let v = r.u64()?;
        r.finish()?;
        Ok(v)
    }
}

/// `String` in the byte-string layout, validated as UTF-8 on decode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StringCodec;

impl Codec for StringCodec {
    type Value = String;

    fn encode(&self, value: &String, out: &mut Vec<u8>) {
        put_bytes(out, value.as_bytes());
    }

    fn decode(&self, bytes: &[u8]) -> Result<String, DecodeError> {
        let mut r = ByteReader::new(bytes);
        let raw = r.bytes()?;
        r.finish()?;
        core::str::from_utf8(raw)
            .map(ToString::to_string)
            .map_err(|_| DecodeError::Invalid("string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Codec with state: two instances are not interchangeable.
    struct XorCodec(u8);

    impl Codec for XorCodec {
        type Value = Vec<u8>;

        fn encode(&self, value: &Vec<u8>, out: &mut Vec<u8>) {
            out.extend(value.iter().map(|b| b ^ self.0));
        }

        fn decode(&self, bytes: &[u8]) -> Result<Vec<u8>, DecodeError> {
            Ok(bytes.iter().map(|b| b ^ self.0).collect())
        }
    }

    #[test]
    fn reference_layouts() {
        let mut out = Vec::new();
        BytesCodec.encode(&vec![0xAA, 0xBB], &mut out);
        assert_eq!(out, [0x02, 0, 0, 0, 0xAA, 0xBB]);
        out.clear();
        U64Codec.encode(&0x0102, &mut out);
        assert_eq!(out, [0x02, 0x01, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(
            BytesCodec.decode(&[0x05, 0, 0, 0, 1]),
            Err(DecodeError::Truncated {
                needed: 5,
                available: 1
            })
        );
        assert_eq!(
            U64Codec.decode(&[0; 9]),
            Err(DecodeError::TrailingBytes(1))
        );
        assert_eq!(
            StringCodec.decode(&[0x01, 0, 0, 0, 0xFF]),
            Err(DecodeError::Invalid("string is not UTF-8"))
        );
    }

    #[test]
    fn identical_registration_is_idempotent() {
        let mut reg = CodecRegistry::new();
        reg.register_codec("bytes", BytesCodec).unwrap();
        reg.register_codec("bytes", BytesCodec).unwrap();
        let shared: SharedCodec = Arc::new(XorCodec(7));
        reg.register("xor", shared.clone()).unwrap();
        reg.register("xor", shared).unwrap();
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn different_codec_is_a_duplicate() {
        let mut reg = CodecRegistry::new();
        reg.register_codec("blob", BytesCodec).unwrap();
        assert_eq!(
            reg.register_codec("blob", XorCodec(1)),
            Err(RegistryError::DuplicateCodec { tag: "blob".into() })
        );
        reg.register_codec("x", XorCodec(1)).unwrap();
        assert!(reg.register_codec("x", XorCodec(1)).is_err());
    }

    #[test]
    fn empty_tag() {
        assert_eq!(
            CodecRegistry::new().register_codec("", U64Codec),
            Err(RegistryError::EmptyTag)
        );
    }

    #[test]
    fn serialize_matches_direct_codec_call() {
        let mut reg = CodecRegistry::new();
        reg.register_codec("xor", XorCodec(0x5A)).unwrap();
        let value = vec![1u8, 2, 3, 250];
        let mut direct = Vec::new();
        XorCodec(0x5A).encode(&value, &mut direct);
        assert_eq!(reg.serialize(&value), Some(direct));
        assert_eq!(reg.serialize(&5u64), None);
    }

    #[test]
    fn first_tag_wins_for_type_lookup() {
        let mut reg = CodecRegistry::new();
        reg.register_codec("a", BytesCodec).unwrap();
        reg.register_codec("b", XorCodec(3)).unwrap();
        assert_eq!(reg.for_type(TypeId::of::<Vec<u8>>()).unwrap().0, "a");
    }

    #[test]
    fn erased_decode_downcasts() {
        let mut reg = CodecRegistry::new();
        reg.register_codec("u64", U64Codec).unwrap();
        let any = reg.deserialize("u64", &42u64.to_le_bytes()).unwrap().unwrap();
        assert_eq!(any.downcast_ref::<u64>(), Some(&42));
        let mut out = Vec::new();
        assert!(reg.get("u64").unwrap().encode_any(&"nope", &mut out).is_err());
    }
}
