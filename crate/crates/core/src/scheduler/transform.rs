//! Cross-class transformation engine.
//!
//! Three arrows exist: frequently read plaintext is promoted to an
//! activation template, stable and valued plaintext or activation memory is
//! distilled into a parametric adapter, and stale parametric memory is
//! externalized back to plaintext. When several rules fire, distill wins
//! over promote, which wins over externalize.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::{sha256, to_hex};
use crate::ids::{secs_to_ms, CubeId, Timestamp};
use crate::lifecycle::{
    Genesis, LifecycleError, LifecycleEvent, LifecycleHook, LifecycleRecord, LifecycleState,
};
use crate::memcube::{
    create_cube, estimate_tokens, CubeError, DescriptiveMeta, MemCube, MemoryClass, Origin,
    Payload,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    Promote { window_s: u64, min_accesses: u64 },
    Distill { min_accesses: u64, min_ema: f64, stable_s: u64 },
    Externalize { stale_after_s: u64 },
}

impl Trigger {
    fn precedence(&self) -> u8 {
        match self {
            Trigger::Distill { .. } => 0,
            Trigger::Promote { .. } => 1,
            Trigger::Externalize { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    PromoteToActivation,
    DistillToParametric,
    ExternalizeToPlaintext,
}

/// A transformation arrow with its trigger. Only the four legal
/// (from, to) pairs can be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRule")]
pub struct TransformationRule {
    from: MemoryClass,
    to: MemoryClass,
    trigger: Trigger,
}

#[derive(Deserialize)]
struct RawRule {
    from: MemoryClass,
    to: MemoryClass,
    trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("no transformation path {0} -> {1} with that trigger")]
    IllegalPath(MemoryClass, MemoryClass),
}

impl TryFrom<RawRule> for TransformationRule {
    type Error = RuleError;

    fn try_from(r: RawRule) -> Result<Self, Self::Error> {
        TransformationRule::new(r.from, r.to, r.trigger)
    }
}

pub const DEFAULT_PROMOTE_WINDOW_S: u64 = 3600;
pub const DEFAULT_PROMOTE_MIN_ACCESSES: u64 = 5;
pub const DEFAULT_DISTILL_MIN_ACCESSES: u64 = 20;
pub const DEFAULT_DISTILL_MIN_EMA: f64 = 0.7;
pub const DEFAULT_DISTILL_STABLE_S: u64 = 604_800;
pub const DEFAULT_STALE_AFTER_S: u64 = 2_592_000;

impl TransformationRule {
    pub fn new(from: MemoryClass, to: MemoryClass, trigger: Trigger) -> Result<Self, RuleError> {
        use MemoryClass::*;
        let ok = matches!(
            (from, to, &trigger),
            (Plaintext, Activation, Trigger::Promote { .. })
                | (Plaintext, Parametric, Trigger::Distill { .. })
                | (Activation, Parametric, Trigger::Distill { .. })
                | (Parametric, Plaintext, Trigger::Externalize { .. })
        );
        if ok {
            Ok(TransformationRule { from, to, trigger })
        } else {
            Err(RuleError::IllegalPath(from, to))
        }
    }

    pub fn promote(window_s: u64, min_accesses: u64) -> Self {
        TransformationRule {
            from: MemoryClass::Plaintext,
            to: MemoryClass::Activation,
            trigger: Trigger::Promote { window_s, min_accesses },
        }
    }

    /// `from` must be Plaintext or Activation.
    pub fn distill(from: MemoryClass, min_accesses: u64, min_ema: f64, stable_s: u64) -> Result<Self, RuleError> {
        Self::new(from, MemoryClass::Parametric, Trigger::Distill { min_accesses, min_ema, stable_s })
    }

    pub fn externalize(stale_after_s: u64) -> Self {
        TransformationRule {
            from: MemoryClass::Parametric,
            to: MemoryClass::Plaintext,
            trigger: Trigger::Externalize { stale_after_s },
        }
    }

    /// The default rule set: promote, distill from both sources, externalize.
    pub fn defaults() -> Vec<Self> {
        let distill = |from| {
            Self::distill(
                from,
                DEFAULT_DISTILL_MIN_ACCESSES,
                DEFAULT_DISTILL_MIN_EMA,
                DEFAULT_DISTILL_STABLE_S,
            )
            .expect("legal path")
        };
        alloc::vec![
            Self::promote(DEFAULT_PROMOTE_WINDOW_S, DEFAULT_PROMOTE_MIN_ACCESSES),
            distill(MemoryClass::Plaintext),
            distill(MemoryClass::Activation),
            Self::externalize(DEFAULT_STALE_AFTER_S),
        ]
    }

    pub fn from_class(&self) -> MemoryClass {
        self.from
    }

    pub fn to_class(&self) -> MemoryClass {
        self.to
    }

    pub fn trigger(&self) -> Trigger {
        self.trigger
    }

    pub fn kind(&self) -> TransformKind {
        match self.trigger {
            Trigger::Promote { .. } => TransformKind::PromoteToActivation,
            Trigger::Distill { .. } => TransformKind::DistillToParametric,
            Trigger::Externalize { .. } => TransformKind::ExternalizeToPlaintext,
        }
    }

    fn fires(&self, cube: &MemCube, record: &LifecycleRecord, now: Timestamp) -> bool {
        let b = &cube.behavioral;
        match self.trigger {
            Trigger::Promote { window_s, min_accesses } => {
                b.accesses_within(now, secs_to_ms(window_s)) >= min_accesses
            }
            Trigger::Distill { min_accesses, min_ema, stable_s } => {
                let quiet = record
                    .last_edit_at()
                    .is_none_or(|t| now.saturating_sub(t) > secs_to_ms(stable_s));
                b.access_count_total >= min_accesses && b.relevance_ema >= min_ema && quiet
            }
            Trigger::Externalize { stale_after_s } => b
                .last_access
                .is_none_or(|t| now.saturating_sub(t) > secs_to_ms(stale_after_s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformDecision {
    pub from: MemoryClass,
    pub to: MemoryClass,
    pub kind: TransformKind,
    pub rule: TransformationRule,
}

/// Picks at most one firing rule for an Active cube. Pure.
pub fn evaluate_transformations(
    cube: &MemCube,
    record: &LifecycleRecord,
    rules: &[TransformationRule],
    now: Timestamp,
) -> Option<TransformDecision> {
    if record.state != LifecycleState::Active {
        return None;
    }
    let class = cube.class();
    rules
        .iter()
        .filter(|r| r.from == class && r.fires(cube, record, now))
        .min_by_key(|r| r.trigger.precedence())
        .map(|r| TransformDecision { from: r.from, to: r.to, kind: r.kind(), rule: *r })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransformError {
    #[error("transformer failure: {0}")]
    TransformerFailure(String),
    #[error("decision does not apply to a {0} cube")]
    ClassMismatch(MemoryClass),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

/// Converts a payload between classes. Real model-backed implementations
/// plug in here.
pub trait PayloadTranscoder {
    fn transcode(&self, source: &MemCube, to: MemoryClass) -> Result<Payload, String>;
}

/// Deterministic stand-in transcoder.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubTranscoder;

impl PayloadTranscoder for StubTranscoder {
    fn transcode(&self, source: &MemCube, to: MemoryClass) -> Result<Payload, String> {
        match (&source.payload, to) {
            (Payload::Plaintext { text, .. }, MemoryClass::Activation) => Ok(Payload::Activation {
                template_text: text.clone(),
                kv_descriptor: Vec::new(),
                token_estimate: estimate_tokens(text),
            }),
            (Payload::Plaintext { .. } | Payload::Activation { .. }, MemoryClass::Parametric) => {
                let hex = source.id.to_string();
                Ok(Payload::Parametric {
                    adapter_name: format!("distilled-{}", &hex[..16]),
                    adapter_descriptor: sha256(&source.payload.canonical_bytes()).to_vec(),
                    domain_tags: source.descriptive.labels.iter().cloned().collect(),
                })
            }
            (Payload::Parametric { adapter_name, adapter_descriptor, domain_tags }, MemoryClass::Plaintext) => {
                let domains = if domain_tags.is_empty() {
                    String::from("none")
                } else {
                    domain_tags.join(", ")
                };
                Ok(Payload::Plaintext {
                    text: format!(
                        "adapter {adapter_name}; domains: {domains}; descriptor sha256 {}",
                        to_hex(&sha256(adapter_descriptor))
                    ),
                    format_tag: String::from("adapter-summary"),
                })
            }
            (p, to) => Err(format!("no stub path {} -> {to}", p.class())),
        }
    }
}


/// Result of applying a decision: the new cube and its record (Active),
/// plus the source record moved to Archived.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub cube: MemCube,
    pub record: LifecycleRecord,
    pub source_record: LifecycleRecord,
}

/// Lineage tag written into `origin_detail` of transformed cubes.
pub fn lineage_detail(source: CubeId, version: u64) -> String {
    format!("{source}@v{version}")
}

/// Parses a [`lineage_detail`] string.
pub fn parse_lineage_detail(detail: &str) -> Option<(CubeId, u64)> {
    let (id, v) = detail.split_once("@v")?;
    Some((id.parse().ok()?, v.parse().ok()?))
}

#[allow(clippy::too_many_arguments)]
pub fn apply_transformation(
    source: &MemCube,
    source_record: &LifecycleRecord,
    decision: &TransformDecision,
    transcoder: &dyn PayloadTranscoder,
    new_id: CubeId,
    now: Timestamp,
    hook: &mut dyn LifecycleHook,
) -> Result<Transformed, TransformError> {
    if decision.from != source.class() {
        return Err(TransformError::ClassMismatch(source.class()));
    }
    let payload = transcoder
        .transcode(source, decision.to)
        .map_err(TransformError::TransformerFailure)?;
    if payload.class() != decision.to {
        return Err(TransformError::TransformerFailure(format!(
            "transcoder produced {} instead of {}",
            payload.class(),
            decision.to
        )));
    }
    // Archive first so an illegal source state aborts before anything else.
    let archived = source_record.transition(&LifecycleEvent::Archive, now, hook)?;
    let descriptive = DescriptiveMeta {
        created_at: now,
        updated_at: now,
        origin: Origin::Transformation,
        origin_detail: lineage_detail(source.id, source.version),
        semantic_type: source.descriptive.semantic_type,
        labels: source.descriptive.labels.clone(),
    };
    let mut governance = source.governance.clone();
    governance.watermark = None;
    let cube = create_cube(new_id, payload, descriptive, governance, now)?;
    let genesis = Genesis::Transformed { from: source.id, version: source.version };
    let record = LifecycleRecord::genesis(&cube, genesis, now)
        .transition(&LifecycleEvent::Activate, now, hook)?;
    Ok(Transformed { cube, record, source_record: archived })
}
