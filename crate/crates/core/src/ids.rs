//! Identifiers shared by every subsystem.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Milliseconds since the Unix epoch, UTC.
pub type Timestamp = u64;

/// Converts a duration in seconds to milliseconds, saturating.
pub const fn secs_to_ms(secs: u64) -> u64 {
    secs.saturating_mul(1000)
}

/// 128-bit cube identifier, rendered as 32 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CubeId(pub u128);

impl CubeId {
    /// The all-zero id, used by audit records that do not concern a cube.
    pub const NIL: CubeId = CubeId(0);

    pub fn to_be_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn is_nil(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CubeId({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdError {
    #[error("cube id must be 32 lowercase hex characters, got {0:?}")]
    BadCubeId(String),
    #[error("principal id must match [a-z0-9:_-]{{1,64}}, got {0:?}")]
    BadPrincipal(String),
}

impl FromStr for CubeId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(IdError::BadCubeId(s.to_string()));
        }
        u128::from_str_radix(s, 16)
            .map(CubeId)
            .map_err(|_| IdError::BadCubeId(s.to_string()))
    }
}

impl Serialize for CubeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CubeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn is_ident_byte(b: u8) -> bool {
    matches!(b, b'a'..=b'z' | b'0'..=b'9' | b':' | b'_' | b'-')
}

/// Returns true when `s` matches `[a-z0-9:_-]{1,max}`.
pub(crate) fn matches_ident(s: &str, max: usize) -> bool {
    !s.is_empty() && s.len() <= max && s.bytes().all(is_ident_byte)
}

/// Label pattern `[a-z0-9:_-]{1,48}`.
pub fn is_valid_label(s: &str) -> bool {
    matches_ident(s, 48)
}

/// An acting principal. The wildcard `*` is not a principal; ACLs model it
/// separately.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrincipalId(String);

impl PrincipalId {
    pub fn new(s: impl Into<String>) -> Result<Self, IdError> {
        let s = s.into();
        if matches_ident(&s, 64) {
            Ok(PrincipalId(s))
        } else {
            Err(IdError::BadPrincipal(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrincipalId({})", self.0)
    }
}

impl FromStr for PrincipalId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrincipalId::new(s)
    }
}

impl Serialize for PrincipalId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PrincipalId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PrincipalId::new(s).map_err(serde::de::Error::custom)
    }
}
