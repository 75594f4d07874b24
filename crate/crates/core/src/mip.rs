//! The interchange archive.
//!
//! ```text
//! "MIP1" | u32 BE manifest_len | manifest | entry* | signature[32]
//! entry := u32 BE header_len | header | u64 BE payload_len | payload | sha256(payload)
//! ```
//!
//! The manifest, headers and payloads are canonical encodings. A header is
//! the cube without its payload and with behavioral indicators reset. The
//! signature is HMAC-SHA-256 over every preceding byte, or zeros if unsigned.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canon::{self, b64_32, Digest};
use crate::governance::{hmac_sha256, hmac_sha256_verify};
use crate::ids::{CubeId, PrincipalId, Timestamp};
use crate::memcube::{
    validate, BehavioralIndicators, DescriptiveMeta, GovernanceAttrs, MemCube, Payload, Sensitivity,
};

pub const MAGIC: &[u8; 4] = b"MIP1";
pub const SIGNATURE_LEN: usize = 32;
pub const LOCAL_VERSION: MipVersion = MipVersion { major: 1, minor: 0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MipVersion {
    pub major: u32,
    pub minor: u32,
}

impl fmt::Display for MipVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.major, self.minor)
    }
}

impl FromStr for MipVersion {
    type Err = ();

    /// Accepts only the form `<major>.<minor>` with plain decimal parts.
    fn from_str(s: &str) -> Result<Self, ()> {
        let (a, b) = s.split_once('.').ok_or(())?;
        let part = |p: &str| -> Result<u32, ()> {
            let plain = !p.is_empty() && p.bytes().all(|c| c.is_ascii_digit()) && (p == "0" || !p.starts_with('0'));
            if !plain {
                return Err(());
            }
            p.parse().map_err(|_| ())
        };
        Ok(MipVersion { major: part(a)?, minor: part(b)? })
    }
}

impl Serialize for MipVersion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MipVersion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|_| serde::de::Error::custom("mip_version must be <major>.<minor>"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub mip_version: MipVersion,
    pub producer: PrincipalId,
    pub created_at: Timestamp,
    pub cube_count: u64,
    #[serde(with = "b64_32")]
    pub content_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryHeader {
    id: CubeId,
    descriptive: DescriptiveMeta,
    governance: GovernanceAttrs,
    behavioral: BehavioralIndicators,
    version: u64,
    #[serde(with = "b64_32")]
    fingerprint: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrustPolicy {
    RequireSignature { key: Vec<u8> },
    AcceptUnsigned,
    RejectAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DigestScope {
    Entry(usize),
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MipError {
    #[error("archive does not start with MIP1")]
    BadMagic,
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("archive version {found} incompatible with local {local}")]
    VersionIncompatible { found: MipVersion, local: MipVersion },
    #[error("archive truncated or misframed at entry {entry}")]
    Truncated { entry: usize },
    #[error("digest mismatch ({0:?})")]
    DigestMismatch(DigestScope),
    #[error("manifest declares {declared} cubes, archive holds {found}")]
    CountMismatch { declared: u64, found: u64 },
    #[error("entry {index} invalid: {reason}")]
    InvalidEntry { index: usize, reason: String },
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("trust policy rejected the archive")]
    TrustRejected,
    #[error("restricted cube {0} cannot be exported unsigned")]
    RestrictedUnsigned(CubeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignatureStatus {
    Verified,
    Unsigned,
    /// Signed, but the policy carries no key to check it with.
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportReport {
    pub manifest: Manifest,
    /// Set when the archive's minor version is newer than ours.
    pub minor_version_warning: Option<MipVersion>,
    pub signature: SignatureStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub cubes: Vec<MemCube>,
    pub report: ImportReport,
}

fn entry_bytes(cube: &MemCube, out: &mut Vec<u8>) {
    let reset = cube.with_reset_behavior();
    let header = canon::encode(&EntryHeader {
        id: reset.id,
        descriptive: reset.descriptive,
        governance: reset.governance,
        behavioral: reset.behavioral,
        version: reset.version,
        fingerprint: reset.fingerprint,
    });
    let payload = cube.payload.canonical_bytes();
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_be_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&canon::sha256(&payload));
}

/// Serializes `cubes` in order. Permission checks are the caller's job.
pub fn dump(
    cubes: &[MemCube],
    producer: &PrincipalId,
    created_at: Timestamp,
    key: Option<&[u8]>,
) -> Result<Vec<u8>, MipError> {
    if key.is_none() {
        if let Some(c) = cubes.iter().find(|c| c.governance.sensitivity == Sensitivity::Restricted) {
            return Err(MipError::RestrictedUnsigned(c.id));
        }
    }
    let mut entries = Vec::new();
    for c in cubes {
        entry_bytes(c, &mut entries);
    }
    let manifest = canon::encode(&Manifest {
        mip_version: LOCAL_VERSION,
        producer: producer.clone(),
        created_at,
        cube_count: cubes.len() as u64,
        content_digest: canon::sha256(&entries),
    });
    let mut out = Vec::with_capacity(8 + manifest.len() + entries.len() + SIGNATURE_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_be_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&entries);
    let sig = match key {
        Some(k) => hmac_sha256(k, &[&out]),
        None => [0u8; SIGNATURE_LEN],
    };
    out.extend_from_slice(&sig);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: u64) -> Option<&'a [u8]> {
        let n = usize::try_from(n).ok()?;
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len())?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

struct RawEntry<'a> {
    header: &'a [u8],
    payload: &'a [u8],
}

/// Parses and checks `bytes` against `trust`, reporting the first failure in
/// the order magic, manifest, per-entry digests, content digest, count,
/// entry contents, signature, trust.
pub fn load(bytes: &[u8], trust: &TrustPolicy, local: MipVersion) -> Result<Loaded, MipError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(MipError::BadMagic);
    }
    if bytes.len() < 8 + SIGNATURE_LEN {
        return Err(MipError::Malformed("archive shorter than fixed framing".into()));
    }
    let (body, sig) = bytes.split_at(bytes.len() - SIGNATURE_LEN);
    let mut r = Reader { buf: body, pos: 4 };
    let mlen = r.u32().expect("length checked");
    let mbytes = r
        .take(mlen as u64)
        .ok_or_else(|| MipError::Malformed("manifest length exceeds archive".into()))?;
    let manifest: Manifest =
        canon::decode_strict(mbytes).map_err(|e| MipError::Malformed(alloc::format!("{e}")))?;
    if manifest.mip_version.major != local.major {
        return Err(MipError::VersionIncompatible { found: manifest.mip_version, local });
    }
    let minor_version_warning = (manifest.mip_version.minor > local.minor).then_some(manifest.mip_version);

    let entries_start = r.pos;
    let mut raw = Vec::new();
    while !r.done() {
        let entry = raw.len();
        let trunc = MipError::Truncated { entry };
        let hlen = r.u32().ok_or(trunc.clone())?;
        let header = r.take(hlen as u64).ok_or(trunc.clone())?;
        let plen = r.u64().ok_or(trunc.clone())?;
        let payload = r.take(plen).ok_or(trunc.clone())?;
        let digest = r.take(32).ok_or(trunc)?;
        if canon::sha256(payload) != digest {
            return Err(MipError::DigestMismatch(DigestScope::Entry(entry)));
        }
        raw.push(RawEntry { header, payload });
    }
    if canon::sha256(&body[entries_start..]) != manifest.content_digest {
        return Err(MipError::DigestMismatch(DigestScope::Content));
    }
    if manifest.cube_count != raw.len() as u64 {
        return Err(MipError::CountMismatch { declared: manifest.cube_count, found: raw.len() as u64 });
    }

    let mut cubes = Vec::with_capacity(raw.len());
    for (index, e) in raw.iter().enumerate() {
        let bad = |reason: String| MipError::InvalidEntry { index, reason };
        let h: EntryHeader = canon::decode_strict(e.header).map_err(|x| bad(alloc::format!("header: {x}")))?;
        let payload: Payload =
            canon::decode_strict(e.payload).map_err(|x| bad(alloc::format!("payload: {x}")))?;
        let cube = MemCube {
            id: h.id,
            descriptive: h.descriptive,
            governance: h.governance,
            behavioral: h.behavioral,
            payload,
            version: h.version,
            fingerprint: h.fingerprint,
        };
        if let Some(v) = validate(&cube).first() {
            return Err(bad(alloc::format!("{:?}", v.code)));
        }
        cubes.push(cube);
    }

    let zero = sig.iter().all(|b| *b == 0);
    let signature = match trust {
        TrustPolicy::RequireSignature { key } => {
            if zero {
                return Err(MipError::TrustRejected);
            }
            if !hmac_sha256_verify(key, &[body], sig) {
                return Err(MipError::SignatureInvalid);
            }
            SignatureStatus::Verified
        }
        TrustPolicy::AcceptUnsigned if zero => SignatureStatus::Unsigned,
        TrustPolicy::AcceptUnsigned => SignatureStatus::Unverified,
        TrustPolicy::RejectAll => return Err(MipError::TrustRejected),
    };
    Ok(Loaded { cubes, report: ImportReport { manifest, minor_version_warning, signature } })
}

/// Byte ranges of an archive, for tooling and corruption analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub manifest_len: core::ops::Range<usize>,
    pub manifest: core::ops::Range<usize>,
    pub entries: Vec<EntryLayout>,
    pub signature: core::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryLayout {
    pub header_len: core::ops::Range<usize>,
    pub header: core::ops::Range<usize>,
    pub payload_len: core::ops::Range<usize>,
    pub payload: core::ops::Range<usize>,
    pub digest: core::ops::Range<usize>,
}

/// Framing only; no digests or decoding. `None` if the framing is broken.
pub fn layout(bytes: &[u8]) -> Option<Layout> {
    if bytes.len() < 8 + SIGNATURE_LEN || &bytes[..4] != MAGIC {
        return None;
    }
    let body_len = bytes.len() - SIGNATURE_LEN;
    let mut r = Reader { buf: &bytes[..body_len], pos: 4 };
    let mlen = r.u32()? as usize;
    let mstart = r.pos;
    r.take(mlen as u64)?;
    let mut entries = Vec::new();
    while !r.done() {
        let a = r.pos;
        let hlen = r.u32()?;
        let b = r.pos;
        r.take(hlen as u64)?;
        let c = r.pos;
        let plen = r.u64()?;
        let d = r.pos;
        r.take(plen)?;
        let e = r.pos;
        r.take(32)?;
        entries.push(EntryLayout { header_len: a..b, header: b..c, payload_len: c..d, payload: d..e, digest: e..r.pos });
    }
    Some(Layout {
        manifest_len: 4..8,
        manifest: mstart..mstart + mlen,
        entries,
        signature: body_len..bytes.len(),
    })
}
