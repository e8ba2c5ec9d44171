//! Canonical binary encoding.
//!
//! Fixed field order, big-endian fixed-width integers and `u64` length
//! prefixes for every variable-length sequence. The same encoding is used
//! for hashing, signing, wire messages and ledger export files, so it must
//! never change shape silently.

use bincode::Options;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
#[error("canonical decoding failed: {0}")]
pub struct CodecError(#[from] bincode::Error);

fn options() -> impl Options {
    bincode::DefaultOptions::new().with_big_endian().with_fixint_encoding().reject_trailing_bytes()
}

/// Encodes a value with the canonical encoding.
pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    // Our types contain no maps with non-string keys or other constructs
    // bincode refuses, so serialization into a Vec cannot fail.
    options().serialize(value).expect("canonical encoding is infallible")
}

/// Size in bytes of the canonical encoding, without allocating it.
pub fn encoded_len<T: Serialize + ?Sized>(value: &T) -> usize {
    options().serialized_size(value).expect("canonical encoding is infallible") as usize
}

/// Decodes a value, rejecting trailing bytes.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    Ok(options().with_limit(bytes.len() as u64 + 64).deserialize(bytes)?)
}
