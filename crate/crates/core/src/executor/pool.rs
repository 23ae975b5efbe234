use std::num::NonZeroUsize;

use lru::LruCache;
use serde::Serialize;

use super::CompiledModule;
use crate::wasm_tools::ContentHash;

pub const DEFAULT_POOL_CAPACITY: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PoolStats {
    pub size: usize,
    pub hits: u64,
    pub misses: u64,
}

/// LRU cache of compiled modules. `get` counts hits and misses; `insert`
/// does not.
pub(super) struct ModulePool {
    cache: LruCache<ContentHash, CompiledModule>,
    hits: u64,
    misses: u64,
}

impl ModulePool {
    pub(super) fn new(capacity: usize) -> Self {
        let capacity = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        ModulePool {
            cache: LruCache::new(capacity),
            hits: 0,
            misses: 0,
        }
    }

    pub(super) fn get(&mut self, key: &ContentHash) -> Option<CompiledModule> {
        let found = self.cache.get(key).cloned();
        if found.is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        found
    }

    pub(super) fn insert(&mut self, module: CompiledModule) {
        self.cache.put(module.key.clone(), module);
    }

    pub(super) fn stats(&self) -> PoolStats {
        PoolStats {
            size: self.cache.len(),
            hits: self.hits,
            misses: self.misses,
        }
    }
}
