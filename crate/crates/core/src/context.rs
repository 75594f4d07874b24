//! Injection context assembly and the stand-in model adapter.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::{self, b64_32, Digest};
use crate::ids::CubeId;
use crate::memcube::MemCube;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub cube_id: CubeId,
    pub text: String,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionContext {
    pub segments: Vec<Segment>,
    pub total_tokens: u64,
}

/// Renders `selected` in order. The selection is expected to come from the
/// scheduler and therefore already fit; cubes past `budget` are dropped
/// rather than overflowing it.
pub fn assemble_context(selected: &[MemCube], budget: u64) -> InjectionContext {
    let mut ctx = InjectionContext::default();
    for c in selected {
        let tokens = c.payload.token_estimate();
        if ctx.total_tokens + tokens > budget {
            break;
        }
        ctx.total_tokens += tokens;
        ctx.segments.push(Segment { cube_id: c.id, text: c.payload.render(), tokens });
    }
    ctx
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    #[serde(with = "b64_32")]
    pub context_digest: Digest,
}

pub trait ModelAdapter {
    fn respond(&self, prompt: &str, ctx: &InjectionContext) -> ModelResponse;
}

/// Deterministic adapter: the response is a digest of prompt and context.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockModel;

impl ModelAdapter for MockModel {
    fn respond(&self, prompt: &str, ctx: &InjectionContext) -> ModelResponse {
        let digest = canon::sha256_parts(&[prompt.as_bytes(), &[0], &canon::encode(ctx)]);
        ModelResponse {
            text: alloc::format!("mock:{}", canon::to_hex(&digest[..8])),
            context_digest: digest,
        }
    }
}
