//! Splitters route elements to their next stage(s). A stateless splitter
//! decides from the element alone; a memory splitter may also read and write
//! a shared [`StateStore`], and its writes are committed before its routing
//! decision is released.
//!
//! Unlike a filter, a splitter must route: an empty decision is an error and
//! the element is dead-lettered.

use std::sync::Arc;

use crate::envelope::{ElementId, Envelope};
use crate::error::StageError;
use crate::pipeline::StageContext;
use crate::store::{StateStore, StoreTxn, TransactError};

/// Optimistic retries before a memory split gives up on a contended key.
pub const MAX_COMMIT_ATTEMPTS: usize = 64;

pub trait Splitter<P>: Send {
    fn split(&mut self, e: &Envelope<P>, ctx: &StageContext) -> Result<RouteDecision<P>, StageError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision<P> {
    pub targets: Vec<(String, Envelope<P>)>,
}

impl<P> Default for RouteDecision<P> {
    fn default() -> Self {
        Self { targets: Vec::new() }
    }
}

impl<P> RouteDecision<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(route: impl Into<String>, e: Envelope<P>) -> Self {
        Self {
            targets: vec![(route.into(), e)],
        }
    }

    pub fn to(mut self, route: impl Into<String>, e: Envelope<P>) -> Self {
        self.targets.push((route.into(), e));
        self
    }

    pub fn push(&mut self, route: impl Into<String>, e: Envelope<P>) {
        self.targets.push((route.into(), e));
    }

    pub fn routes(&self) -> impl Iterator<Item = &str> {
        self.targets.iter().map(|(r, _)| r.as_str())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Checks the decision made for `input`: at least one target, the input
    /// itself forwarded at most once, and every other target derived from it.
    pub fn validate(&self, input: &ElementId) -> Result<(), StageError> {
        if self.targets.is_empty() {
            return Err(StageError::NoRouteProduced);
        }
        let mut forwarded = 0;
        for (_, e) in &self.targets {
            match e.parent_id() {
                None if e.element_id() == input => forwarded += 1,
                Some(parent) if parent == input => {}
                _ => {
                    return Err(StageError::LogicFailure(format!(
                        "target {} is not derived from {input}",
                        e.element_id()
                    )))
                }
            }
        }
        if forwarded > 1 {
            return Err(StageError::DuplicateForward);
        }
        Ok(())
    }
}

/// Runs `logic` on `e` alone and validates the result.
pub fn stateless_split<P, F>(logic: F, e: &Envelope<P>) -> Result<RouteDecision<P>, StageError>
where
    F: Fn(&Envelope<P>) -> Result<RouteDecision<P>, String>,
{
    let decision = logic(e).map_err(StageError::LogicFailure)?;
    decision.validate(e.element_id())?;
    Ok(decision)
}

/// Runs `logic` inside a store transaction. The transaction commits before
/// the decision is returned; on failure its writes are dropped.
pub fn memory_split<P, V, F>(store: &StateStore<V>, mut logic: F, e: &Envelope<P>) -> Result<RouteDecision<P>, StageError>
where
    V: Clone,
    F: FnMut(&mut StoreTxn<'_, V>, &Envelope<P>) -> Result<RouteDecision<P>, String>,
{
    let decision = store
        .transact(MAX_COMMIT_ATTEMPTS, |txn| {
            let d = logic(txn, e)?;
            d.validate(e.element_id()).map_err(|err| err.to_string())?;
            Ok(d)
        })
        .map_err(|err| match err {
            TransactError::Aborted(msg) => StageError::LogicFailure(msg),
            TransactError::Conflict(c) => StageError::LogicFailure(format!("gave up after conflicts: {c}")),
        })?;
    Ok(decision)
}

pub struct StatelessSplitter<F> {
    logic: F,
}

impl<F> StatelessSplitter<F> {
    pub fn new(logic: F) -> Self {
        Self { logic }
    }
}

impl<P, F> Splitter<P> for StatelessSplitter<F>
where
    F: Fn(&Envelope<P>) -> Result<RouteDecision<P>, String> + Send,
{
    fn split(&mut self, e: &Envelope<P>, _ctx: &StageContext) -> Result<RouteDecision<P>, StageError> {
        stateless_split(&self.logic, e)
    }
}

/// A splitter over a store shared with other instances.
pub struct MemorySplitter<V, F> {
    store: Arc<StateStore<V>>,
    logic: F,
}

impl<V, F> MemorySplitter<V, F> {
    pub fn new(store: Arc<StateStore<V>>, logic: F) -> Self {
        Self { store, logic }
    }

    pub fn store(&self) -> &Arc<StateStore<V>> {
        &self.store
    }
}

impl<P, V, F> Splitter<P> for MemorySplitter<V, F>
where
    V: Clone + Send + Sync,
    F: FnMut(&mut StoreTxn<'_, V>, &Envelope<P>) -> Result<RouteDecision<P>, String> + Send,
{
    fn split(&mut self, e: &Envelope<P>, _ctx: &StageContext) -> Result<RouteDecision<P>, StageError> {
        memory_split(&self.store, &mut self.logic, e)
    }
}
