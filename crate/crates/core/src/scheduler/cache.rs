//! Intermediate LRU tier in front of the vault.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::ids::CubeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub last_touch: u64,
    pub insertion_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CacheError {
    #[error("cache is empty")]
    EmptyCache,
    #[error("cache capacity must be at least 1")]
    ZeroCapacity,
}

/// LRU set keyed by cube id. The victim is the entry with the smallest
/// `last_touch`, ties going to the smallest `insertion_seq`.
#[derive(Debug, Clone)]
pub struct HotCache {
    capacity: usize,
    entries: BTreeMap<CubeId, CacheEntry>,
    order: BTreeSet<(u64, u64, CubeId)>,
    next_seq: u64,
    counter: u64,
}

impl HotCache {
    pub fn new(capacity: usize) -> Result<Self, CacheError> {
        if capacity == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(HotCache {
            capacity,
            entries: BTreeMap::new(),
            order: BTreeSet::new(),
            next_seq: 0,
            counter: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: CubeId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn entry(&self, id: CubeId) -> Option<CacheEntry> {
        self.entries.get(&id).copied()
    }

    /// Inserts or refreshes `id` at logical time `now_counter`. When a new
    /// entry would exceed capacity the LRU entry is evicted and returned.
    pub fn touch(&mut self, id: CubeId, now_counter: u64) -> Option<CubeId> {
        self.counter = self.counter.max(now_counter);
        if let Some(e) = self.entries.get_mut(&id) {
            self.order.remove(&(e.last_touch, e.insertion_seq, id));
            e.last_touch = now_counter;
            self.order.insert((e.last_touch, e.insertion_seq, id));
            return None;
        }
        let victim = if self.entries.len() >= self.capacity { self.evict().ok() } else { None };
        let entry = CacheEntry { last_touch: now_counter, insertion_seq: self.next_seq };
        self.next_seq += 1;
        self.entries.insert(id, entry);
        self.order.insert((entry.last_touch, entry.insertion_seq, id));
        victim
    }

    /// Touch using the cache's own monotonically increasing counter.
    pub fn touch_next(&mut self, id: CubeId) -> Option<CubeId> {
        let c = self.counter + 1;
        self.touch(id, c)
    }

    pub fn evict(&mut self) -> Result<CubeId, CacheError> {
        let first = *self.order.iter().next().ok_or(CacheError::EmptyCache)?;
        self.order.remove(&first);
        self.entries.remove(&first.2);
        Ok(first.2)
    }

    pub fn remove(&mut self, id: CubeId) -> bool {
        match self.entries.remove(&id) {
            Some(e) => {
                self.order.remove(&(e.last_touch, e.insertion_seq, id));
                true
            }
            None => false,
        }
    }

    /// Residents from most to least recently touched.
    pub fn most_recent_first(&self) -> Vec<CubeId> {
        self.order.iter().rev().map(|(_, _, id)| *id).collect()
    }
}
