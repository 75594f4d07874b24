//! Canonical text encoding.
//!
//! Every persisted or hashed structure goes through this module: values are
//! lowered to a JSON tree whose objects are key-sorted maps, then written
//! without whitespace. Integers print in shortest decimal form, floats in
//! shortest round-trip form and byte fields as standard padded base64.
//! The output is therefore a pure function of the value.

use alloc::string::String;
use alloc::vec::Vec;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest as _, Sha256};

/// SHA-256 output.
pub type Digest = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonError {
    #[error("malformed canonical text: {0}")]
    Malformed(String),
    #[error("input is well-formed but not in canonical form")]
    NotCanonical,
}

/// Encodes `value` canonically.
pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    // Lowering to `Value` sorts object keys (the map is a BTreeMap).
    let tree = serde_json::to_value(value).expect("canonical types always serialize");
    serde_json::to_vec(&tree).expect("json value always serializes")
}

/// Encodes `value` canonically as a `String`.
pub fn encode_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(encode(value)).expect("json output is utf-8")
}

/// Decodes without insisting on canonical form.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonError> {
    serde_json::from_slice(bytes).map_err(|e| CanonError::Malformed(alloc::format!("{e}")))
}

/// Decodes and rejects any input that does not re-encode to the same bytes.
pub fn decode_strict<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, CanonError> {
    let value: T = decode(bytes)?;
    if encode(&value) != bytes {
        return Err(CanonError::NotCanonical);
    }
    Ok(value)
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

pub fn sha256_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn to_hex(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Serde adapter: `Vec<u8>` as base64.
pub mod b64 {
    use alloc::string::String;
    use alloc::vec::Vec;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter: 32-byte digest as base64.
pub mod b64_32 {
    use alloc::string::String;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let raw = STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
        raw.try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

/// Serde adapter: optional 32-byte tag as base64 or null.
pub mod b64_32_opt {
    use alloc::string::String;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Option<[u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
        match bytes {
            Some(b) => s.serialize_some(&STANDARD.encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[u8; 32]>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        match text {
            None => Ok(None),
            Some(t) => {
                let raw = STANDARD.decode(t.as_bytes()).map_err(serde::de::Error::custom)?;
                let arr: [u8; 32] = raw
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
                Ok(Some(arr))
            }
        }
    }
}
