//! Policy-driven memory scheduling: ranking, hot cache and class
//! transformations.

pub mod cache;
pub mod embed;
pub mod policy;
pub mod rank;
pub mod transform;

pub use cache::{CacheEntry, CacheError, HotCache};
pub use embed::{embed, fnv1a64, tokenize, Embedding, EMBED_DIM};
pub use policy::{
    label_match, labels_match, rank_candidates, schedule, ContextScope, LabelMode, PolicyError,
    QueryContext, Scheduled, SchedulingPolicy,
};
pub use rank::semantic_rank;
pub use transform::{
    apply_transformation, evaluate_transformations, lineage_detail, parse_lineage_detail,
    PayloadTranscoder, RuleError, StubTranscoder, TransformDecision, TransformError,
    TransformKind, Transformed, TransformationRule, Trigger,
};
