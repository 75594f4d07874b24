use alloc::vec::Vec;

use super::embed::Embedding;
use crate::ids::CubeId;

/// Exhaustive cosine ranking: scores `>= min_score`, descending, ties by
/// ascending id, at most `k` results. A zero query ranks nothing.
pub fn semantic_rank(
    query: &Embedding,
    candidates: &[(CubeId, Embedding)],
    k: usize,
    min_score: f64,
) -> Vec<(CubeId, f64)> {
    if query.is_zero() || k == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(CubeId, f64)> = candidates
        .iter()
        .map(|(id, e)| (*id, query.cosine(e)))
        .filter(|(_, s)| *s >= min_score)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
