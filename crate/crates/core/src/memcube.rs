//! The MemCube data model: metadata header plus typed payload, its
//! fingerprint, and behavioral bookkeeping.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::canon::{self, b64, b64_32, b64_32_opt, CanonError, Digest};
use crate::ids::{is_valid_label, CubeId, PrincipalId, Timestamp};

/// Retained access history per cube.
pub const ACCESS_LOG_CAPACITY: usize = 1024;

/// Smoothing factor of the context-relevance EMA.
pub const RELEVANCE_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemoryClass {
    Parametric,
    Activation,
    Plaintext,
}

impl fmt::Display for MemoryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemoryClass::Parametric => "parametric",
            MemoryClass::Activation => "activation",
            MemoryClass::Plaintext => "plaintext",
        })
    }
}

/// Typed semantic payload. Encoded with its class as the `class` tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", deny_unknown_fields)]
pub enum Payload {
    Plaintext {
        text: String,
        format_tag: String,
    },
    Activation {
        template_text: String,
        #[serde(with = "b64")]
        kv_descriptor: Vec<u8>,
        token_estimate: u64,
    },
    Parametric {
        adapter_name: String,
        #[serde(with = "b64")]
        adapter_descriptor: Vec<u8>,
        domain_tags: Vec<String>,
    },
}

impl Payload {
    pub fn plaintext(text: impl Into<String>) -> Self {
        Payload::Plaintext { text: text.into(), format_tag: "text".into() }
    }

    pub fn class(&self) -> MemoryClass {
        match self {
            Payload::Plaintext { .. } => MemoryClass::Plaintext,
            Payload::Activation { .. } => MemoryClass::Activation,
            Payload::Parametric { .. } => MemoryClass::Parametric,
        }
    }

    /// Text used for embedding and rendering.
    pub fn semantic_text(&self) -> &str {
        match self {
            Payload::Plaintext { text, .. } => text,
            Payload::Activation { template_text, .. } => template_text,
            Payload::Parametric { adapter_name, .. } => adapter_name,
        }
    }

    /// Rendered form when injected into a reasoning context.
    pub fn render(&self) -> String {
        match self {
            Payload::Plaintext { text, .. } => text.clone(),
            Payload::Activation { template_text, .. } => template_text.clone(),
            Payload::Parametric { adapter_name, .. } => format!("[adapter:{adapter_name}]"),
        }
    }

    /// Token cost of injecting this payload.
    pub fn token_estimate(&self) -> u64 {
        match self {
            Payload::Activation { token_estimate, .. } => *token_estimate,
            Payload::Plaintext { text, .. } => estimate_tokens(text),
            Payload::Parametric { .. } => estimate_tokens(&self.render()),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canon::encode(self)
    }

    fn check(&self) -> Result<(), CubeError> {
        match self {
            Payload::Plaintext { text, .. } if text.is_empty() => {
                Err(CubeError::InvalidPayload("plaintext body is empty".into()))
            }
            Payload::Parametric { adapter_name, .. } if !is_valid_adapter_name(adapter_name) => {
                Err(CubeError::InvalidPayload(format!("adapter name {adapter_name:?}")))
            }
            _ => Ok(()),
        }
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// `[a-z0-9_-]{1,64}`
pub fn is_valid_adapter_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    UserInput,
    InferenceOutput,
    ExternalDoc,
    Transformation,
    Import,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SemanticType {
    UserPreference,
    TaskPrompt,
    DomainKnowledge,
    WorkingState,
    Other,
}

impl SemanticType {
    pub const ALL: [SemanticType; 5] = [
        SemanticType::UserPreference,
        SemanticType::TaskPrompt,
        SemanticType::DomainKnowledge,
        SemanticType::WorkingState,
        SemanticType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::UserPreference => "user_preference",
            SemanticType::TaskPrompt => "task_prompt",
            SemanticType::DomainKnowledge => "domain_knowledge",
            SemanticType::WorkingState => "working_state",
            SemanticType::Other => "other",
        }
    }
}

impl core::str::FromStr for SemanticType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "userpreference" | "user_preference" | "preference" => SemanticType::UserPreference,
            "taskprompt" | "task_prompt" | "prompt" => SemanticType::TaskPrompt,
            "domainknowledge" | "domain_knowledge" | "knowledge" => SemanticType::DomainKnowledge,
            "workingstate" | "working_state" | "state" => SemanticType::WorkingState,
            "other" => SemanticType::Other,
            _ => return Err(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptiveMeta {
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    pub origin: Origin,
    pub origin_detail: String,
    pub semantic_type: SemanticType,
    pub labels: BTreeSet<String>,
}

impl DescriptiveMeta {
    /// Metadata for fresh user input; timestamps are assigned at creation.
    pub fn new(semantic_type: SemanticType) -> Self {
        DescriptiveMeta {
            created_at: 0,
            updated_at: 0,
            origin: Origin::UserInput,
            origin_detail: String::new(),
            semantic_type,
            labels: BTreeSet::new(),
        }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_origin(mut self, origin: Origin, detail: impl Into<String>) -> Self {
        self.origin = origin;
        self.origin_detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Read,
    Write,
    Schedule,
    Export,
    Govern,
}

impl Action {
    pub const ALL: [Action; 5] =
        [Action::Read, Action::Write, Action::Schedule, Action::Export, Action::Govern];
}

/// ACL subject: a concrete principal or the `*` wildcard.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AclSubject {
    Anyone,
    Principal(PrincipalId),
}

impl Serialize for AclSubject {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AclSubject::Anyone => s.serialize_str("*"),
            AclSubject::Principal(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for AclSubject {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "*" {
            Ok(AclSubject::Anyone)
        } else {
            PrincipalId::new(s).map(AclSubject::Principal).map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AclEntry {
    pub subject: AclSubject,
    pub actions: BTreeSet<Action>,
}

impl AclEntry {
    pub fn new(subject: AclSubject, actions: impl IntoIterator<Item = Action>) -> Self {
        AclEntry { subject, actions: actions.into_iter().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sensitivity {
    Public,
    Internal,
    Confidential,
    Restricted,
}

/// Frequency-based decay: expire when fewer than `min_accesses` fall
/// inside the trailing `window_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decay {
    pub window_s: u64,
    pub min_accesses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernanceAttrs {
    pub owner: PrincipalId,
    pub acl: Vec<AclEntry>,
    pub ttl_s: Option<u64>,
    pub decay: Option<Decay>,
    pub priority: u8,
    pub sensitivity: Sensitivity,
    #[serde(with = "b64_32_opt")]
    pub watermark: Option<[u8; 32]>,
}

impl GovernanceAttrs {
    pub fn owned_by(owner: PrincipalId) -> Self {
        GovernanceAttrs {
            owner,
            acl: Vec::new(),
            ttl_s: None,
            decay: None,
            priority: 5,
            sensitivity: Sensitivity::Internal,
            watermark: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Inject,
    Search,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessEvent {
    pub at: Timestamp,
    pub kind: AccessKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BehavioralIndicators {
    pub access_count_total: u64,
    pub access_log: VecDeque<AccessEvent>,
    pub relevance_ema: f64,
    pub last_access: Option<Timestamp>,
}

impl BehavioralIndicators {
    /// Accesses whose timestamp lies in `[now - window_ms, now]`.
    pub fn accesses_within(&self, now: Timestamp, window_ms: u64) -> u64 {
        let floor = now.saturating_sub(window_ms);
        self.access_log.iter().filter(|e| e.at >= floor && e.at <= now).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemCube {
    pub id: CubeId,
    pub descriptive: DescriptiveMeta,
    pub governance: GovernanceAttrs,
    pub behavioral: BehavioralIndicators,
    pub payload: Payload,
    pub version: u64,
    #[serde(with = "b64_32")]
    pub fingerprint: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CubeError {
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("relevance {0} outside [0,1]")]
    InvalidRelevance(String),
    #[error("invalid governance attributes: {0}")]
    InvalidGovernance(String),
    #[error(transparent)]
    Decode(#[from] CanonError),
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    id: CubeId,
    version: u64,
    descriptive: &'a DescriptiveMeta,
    payload: &'a Payload,
}

/// Bytes hashed into the fingerprint: `(id, version, descriptive, payload)`.
pub fn fingerprint_input(
    id: CubeId,
    version: u64,
    descriptive: &DescriptiveMeta,
    payload: &Payload,
) -> Vec<u8> {
    canon::encode(&FingerprintInput { id, version, descriptive, payload })
}

pub fn compute_fingerprint(
    id: CubeId,
    version: u64,
    descriptive: &DescriptiveMeta,
    payload: &Payload,
) -> Digest {
    canon::sha256(&fingerprint_input(id, version, descriptive, payload))
}

fn check_labels(labels: &BTreeSet<String>) -> Result<(), CubeError> {
    match labels.iter().find(|l| !is_valid_label(l)) {
        Some(bad) => Err(CubeError::InvalidLabel(bad.clone())),
        None => Ok(()),
    }
}

/// Content rules shared by creation and every later commit.
pub fn check_content(descriptive: &DescriptiveMeta, payload: &Payload) -> Result<(), CubeError> {
    payload.check()?;
    check_labels(&descriptive.labels)
}

/// Builds version 1 of a new cube. `id` must be fresh within the vault.
pub fn create_cube(
    id: CubeId,
    payload: Payload,
    mut descriptive: DescriptiveMeta,
    governance: GovernanceAttrs,
    now: Timestamp,
) -> Result<MemCube, CubeError> {
    payload.check()?;
    check_labels(&descriptive.labels)?;
    if governance.priority > 9 {
        return Err(CubeError::InvalidGovernance(format!("priority {}", governance.priority)));
    }
    descriptive.created_at = now;
    descriptive.updated_at = now;
    let fingerprint = compute_fingerprint(id, 1, &descriptive, &payload);
    Ok(MemCube {
        id,
        descriptive,
        governance,
        behavioral: BehavioralIndicators::default(),
        payload,
        version: 1,
        fingerprint,
    })
}

impl MemCube {
    pub fn class(&self) -> MemoryClass {
        self.payload.class()
    }

    pub fn canonical_encode(&self) -> Vec<u8> {
        canon::encode(self)
    }

    /// Strict inverse of [`MemCube::canonical_encode`].
    pub fn canonical_decode(bytes: &[u8]) -> Result<MemCube, CubeError> {
        Ok(canon::decode_strict(bytes)?)
    }

    pub fn expected_fingerprint(&self) -> Digest {
        compute_fingerprint(self.id, self.version, &self.descriptive, &self.payload)
    }

    /// Next version carrying new content. Runtime fields are kept.
    pub fn next_version(
        &self,
        descriptive: DescriptiveMeta,
        payload: Payload,
        now: Timestamp,
    ) -> Result<MemCube, CubeError> {
        check_content(&descriptive, &payload)?;
        let mut descriptive = descriptive;
        descriptive.updated_at = now.max(descriptive.created_at);
        let version = self.version + 1;
        let fingerprint = compute_fingerprint(self.id, version, &descriptive, &payload);
        Ok(MemCube {
            id: self.id,
            descriptive,
            governance: self.governance.clone(),
            behavioral: self.behavioral.clone(),
            payload,
            version,
            fingerprint,
        })
    }

    /// Returns a copy with one more access recorded. Identity is untouched.
    pub fn record_access(
        &self,
        kind: AccessKind,
        relevance: Option<f64>,
        now: Timestamp,
    ) -> Result<MemCube, CubeError> {
        if let Some(r) = relevance {
            if !(0.0..=1.0).contains(&r) {
                return Err(CubeError::InvalidRelevance(format!("{r}")));
            }
        }
        let mut next = self.clone();
        let b = &mut next.behavioral;
        b.access_count_total += 1;
        if b.access_log.len() == ACCESS_LOG_CAPACITY {
            b.access_log.pop_front();
        }
        b.access_log.push_back(AccessEvent { at: now, kind });
        b.last_access = Some(now);
        if let Some(r) = relevance {
            let ema = (1.0 - RELEVANCE_ALPHA) * b.relevance_ema + RELEVANCE_ALPHA * r;
            b.relevance_ema = ema.clamp(0.0, 1.0);
        }
        Ok(next)
    }

    /// Same cube with behavioral indicators zeroed.
    pub fn with_reset_behavior(&self) -> MemCube {
        let mut c = self.clone();
        c.behavioral = BehavioralIndicators::default();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    EmptyPlaintext,
    BadAdapterName,
    BadLabel,
    ClockSkew,
    ZeroVersion,
    FingerprintMismatch,
    PriorityOutOfRange,
    RelevanceOutOfRange,
    AccessCountBelowLog,
    AccessLogOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

/// Checks every type invariant. An empty report means the cube is valid.
pub fn validate(cube: &MemCube) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, detail: String| out.push(Violation { code, detail });

    match &cube.payload {
        Payload::Plaintext { text, .. } if text.is_empty() => {
            push(ViolationCode::EmptyPlaintext, String::new())
        }
        Payload::Parametric { adapter_name, .. } if !is_valid_adapter_name(adapter_name) => {
            push(ViolationCode::BadAdapterName, adapter_name.clone())
        }
        _ => {}
    }
    for l in cube.descriptive.labels.iter().filter(|l| !is_valid_label(l)) {
        push(ViolationCode::BadLabel, l.clone());
    }
    if cube.descriptive.updated_at < cube.descriptive.created_at {
        push(
            ViolationCode::ClockSkew,
            format!("updated_at {} < created_at {}", cube.descriptive.updated_at, cube.descriptive.created_at),
        );
    }
    if cube.version == 0 {
        push(ViolationCode::ZeroVersion, String::new());
    }
    if cube.governance.priority > 9 {
        push(ViolationCode::PriorityOutOfRange, format!("{}", cube.governance.priority));
    }
    let b = &cube.behavioral;
    if !(0.0..=1.0).contains(&b.relevance_ema) {
        push(ViolationCode::RelevanceOutOfRange, format!("{}", b.relevance_ema));
    }
    if (b.access_log.len() as u64) > b.access_count_total {
        push(ViolationCode::AccessCountBelowLog, format!("{} < {}", b.access_count_total, b.access_log.len()));
    }
    if b.access_log.len() > ACCESS_LOG_CAPACITY {
        push(ViolationCode::AccessLogOverflow, format!("{}", b.access_log.len()));
    }
    if cube.fingerprint != cube.expected_fingerprint() {
        push(ViolationCode::FingerprintMismatch, String::new());
    }
    out
}
