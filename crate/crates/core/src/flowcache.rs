//! Shared LRU cache of flow fields with single-flight computation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowEstimator, FlowField};
use crate::videocore::VideoSequence;

/// Default capacity, in flow fields at 1920x1080.
pub const DEFAULT_CAPACITY_1080P: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub source_index: usize,
    pub target_index: usize,
    pub params_hash: u64,
}

impl FlowKey {
    pub fn new(source_index: usize, target_index: usize, params_hash: u64) -> Self {
        Self {
            source_index,
            target_index,
            params_hash,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

type Slot = Arc<Mutex<Option<Arc<FlowField>>>>;

struct Entry {
    slot: Slot,
    last_used: u64,
}

#[derive(Default)]
struct State {
    entries: HashMap<FlowKey, Entry>,
    tick: u64,
}

pub struct FlowCache {
    capacity: usize,
    state: Mutex<State>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
}

impl FlowCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            state: Mutex::new(State::default()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    /// Capacity scaled so the memory budget equals `fields_at_1080p` full-HD fields.
    pub fn for_frame_size(width: usize, height: usize, fields_at_1080p: usize) -> Self {
        let px = (width * height).max(1);
        Self::new((fields_at_1080p * 1920 * 1080 / px).max(1))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            evictions: self.evictions.load(Ordering::SeqCst),
        }
    }

    /// Returns the cached field for `key`, computing it with `estimator` on a miss.
    ///
    /// Concurrent requests for the same key wait for the first computation
    /// instead of repeating it.
    pub fn get_or_compute(
        &self,
        key: FlowKey,
        seq: &VideoSequence,
        estimator: &dyn FlowEstimator,
    ) -> Result<Arc<FlowField>> {
        for index in [key.source_index, key.target_index] {
            if index >= seq.len() {
                return Err(Error::IndexOutOfRange {
                    index,
                    len: seq.len(),
                });
            }
        }
        let slot = self.slot_for(key);
        let mut guard = slot.lock().unwrap();
        if let Some(field) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Arc::clone(field));
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let field = Arc::new(estimator.flow(seq, key.source_index, key.target_index)?);
        *guard = Some(Arc::clone(&field));
        Ok(field)
    }

    /// Convenience wrapper keyed by the estimator fingerprint.
    pub fn flow(
        &self,
        seq: &VideoSequence,
        source: usize,
        target: usize,
        estimator: &dyn FlowEstimator,
    ) -> Result<Arc<FlowField>> {
        self.get_or_compute(
            FlowKey::new(source, target, estimator.fingerprint()),
            seq,
            estimator,
        )
    }

    fn slot_for(&self, key: FlowKey) -> Slot {
        let mut st = self.state.lock().unwrap();
        st.tick += 1;
        let tick = st.tick;
        if let Some(e) = st.entries.get_mut(&key) {
            e.last_used = tick;
            return Arc::clone(&e.slot);
        }
        let slot: Slot = Arc::new(Mutex::new(None));
        st.entries.insert(
            key,
            Entry {
                slot: Arc::clone(&slot),
                last_used: tick,
            },
        );
        while st.entries.len() > self.capacity {
            let victim = st
                .entries
                .iter()
                .filter(|(k, _)| **k != key)
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| *k);
            match victim {
                Some(k) => {
                    st.entries.remove(&k);
                    self.evictions.fetch_add(1, Ordering::SeqCst);
                }
                None => break,
            }
        }
        slot
    }
}
