//! In-process key/value store with per-key version counters.
//!
//! This is the only place stages share mutable state. Writers either put
//! unconditionally, compare-and-put against a version they read, or run a
//! closure inside [`StateStore::transact`], which buffers writes and commits
//! them only if every key it read is still at the version it saw.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::error::StoreError;

/// A value together with the version that wrote it. Version 0 means "never
/// written"; the first put yields version 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Versioned<V> {
    pub value: V,
    pub version: u64,
}

#[derive(Debug)]
pub struct StateStore<V> {
    namespace: String,
    entries: RwLock<HashMap<String, Versioned<V>>>,
}

impl<V: Clone> StateStore<V> {
    pub fn new(namespace: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn shared(namespace: impl Into<String>) -> Arc<Self> {
        Arc::new(Self::new(namespace))
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Versioned<V>> {
        self.entries.read().get(key).cloned()
    }

    /// Current version of `key`, 0 when absent.
    pub fn version(&self, key: &str) -> u64 {
        self.entries.read().get(key).map_or(0, |v| v.version)
    }

    /// Unconditional write; returns the new version.
    pub fn put(&self, key: &str, value: V) -> u64 {
        let mut entries = self.entries.write();
        write_entry(&mut entries, key, value)
    }

    /// Writes only if the key is still at `expected_version` (0 for absent).
    pub fn compare_and_put(&self, key: &str, expected_version: u64, value: V) -> Result<u64, StoreError> {
        let mut entries = self.entries.write();
        let found = entries.get(key).map_or(0, |v| v.version);
        if found != expected_version {
            return Err(StoreError::VersionConflict {
                key: key.to_string(),
                expected: expected_version,
                found,
            });
        }
        Ok(write_entry(&mut entries, key, value))
    }

    pub fn txn(&self) -> StoreTxn<'_, V> {
        StoreTxn {
            store: self,
            reads: HashMap::new(),
            writes: BTreeMap::new(),
        }
    }

    /// Runs `f` optimistically, retrying up to `max_attempts` times when a
    /// concurrent writer invalidates one of its reads. Writes from a failed or
    /// conflicted attempt are discarded.
    pub fn transact<O, E, F>(&self, max_attempts: usize, mut f: F) -> Result<O, TransactError<E>>
    where
        F: FnMut(&mut StoreTxn<'_, V>) -> Result<O, E>,
    {
        let mut last = None;
        for _ in 0..max_attempts.max(1) {
            let mut txn = self.txn();
            let out = f(&mut txn).map_err(TransactError::Aborted)?;
            match txn.commit() {
                Ok(()) => return Ok(out),
                Err(conflict) => last = Some(conflict),
            }
        }
        Err(TransactError::Conflict(last.expect("at least one attempt")))
    }
}

fn write_entry<V>(entries: &mut HashMap<String, Versioned<V>>, key: &str, value: V) -> u64 {
    match entries.get_mut(key) {
        Some(slot) => {
            slot.version += 1;
            slot.value = value;
            slot.version
        }
        None => {
            entries.insert(key.to_string(), Versioned { value, version: 1 });
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransactError<E> {
    Aborted(E),
    Conflict(StoreError),
}

/// Buffered view over a store. Reads see the transaction's own writes.
pub struct StoreTxn<'a, V> {
    store: &'a StateStore<V>,
    reads: HashMap<String, u64>,
    writes: BTreeMap<String, V>,
}

impl<V: Clone> StoreTxn<'_, V> {
    pub fn get(&mut self, key: &str) -> Option<V> {
        if let Some(v) = self.writes.get(key) {
            return Some(v.clone());
        }
        let current = self.store.get(key);
        self.reads
            .entry(key.to_string())
            .or_insert_with(|| current.as_ref().map_or(0, |v| v.version));
        current.map(|v| v.value)
    }

    pub fn put(&mut self, key: &str, value: V) {
        self.writes.insert(key.to_string(), value);
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }

    /// Validates every observed version and applies all writes atomically.
    pub fn commit(self) -> Result<(), StoreError> {
        if self.writes.is_empty() {
            return Ok(());
        }
        let mut entries = self.store.entries.write();
        for (key, &expected) in &self.reads {
            let found = entries.get(key).map_or(0, |v| v.version);
            if found != expected {
                return Err(StoreError::VersionConflict {
                    key: key.clone(),
                    expected,
                    found,
                });
            }
        }
        for (key, value) in self.writes {
            write_entry(&mut entries, &key, value);
        }
        Ok(())
    }
}

/// A splitter-local copy of read-mostly keys, refreshed from the shared store
/// once an entry is older than `max_staleness_ms`. With the default of 0 every
/// read goes through to the store.
pub struct LocalReplica<V> {
    store: Arc<StateStore<V>>,
    max_staleness_ms: u64,
    cache: HashMap<String, (Option<Versioned<V>>, u64)>,
}

impl<V: Clone> LocalReplica<V> {
    pub fn new(store: Arc<StateStore<V>>, max_staleness_ms: u64) -> Self {
        Self {
            store,
            max_staleness_ms,
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, key: &str, now_ms: u64) -> Option<Versioned<V>> {
        if self.max_staleness_ms == 0 {
            return self.store.get(key);
        }
        if let Some((v, fetched)) = self.cache.get(key) {
            if now_ms.saturating_sub(*fetched) <= self.max_staleness_ms {
                return v.clone();
            }
        }
        let fresh = self.store.get(key);
        self.cache.insert(key.to_string(), (fresh.clone(), now_ms));
        fresh
    }

    pub fn invalidate(&mut self, key: &str) {
        self.cache.remove(key);
    }
}
