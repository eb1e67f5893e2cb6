//! The unit of work that flows between stages.

use std::fmt;
use std::sync::Arc;

/// Identity of an element. Assigned by whoever submits it and kept stable
/// across rehydrations; ordering is plain lexicographic on the string.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementId(Arc<str>);

impl ElementId {
    pub fn new(id: impl AsRef<str>) -> Self {
        Self(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl From<String> for ElementId {
    fn from(s: String) -> Self {
        Self(Arc::from(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    External,
    Rehydrated,
}

/// Payload plus identity, timing and retry metadata.
///
/// `retry_count == 0` exactly when `origin == External`; the only way to
/// obtain a `Rehydrated` envelope is [`Envelope::rehydrated`].
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<P> {
    element_id: ElementId,
    parent_id: Option<ElementId>,
    payload: P,
    event_time_ms: u64,
    first_seen_ms: u64,
    retry_count: u32,
    origin: Origin,
}

impl<P> Envelope<P> {
    /// A fresh external element admitted at `now_ms`.
    pub fn new(id: impl Into<ElementId>, payload: P, event_time_ms: u64, now_ms: u64) -> Self {
        Self {
            element_id: id.into(),
            parent_id: None,
            payload,
            event_time_ms,
            first_seen_ms: now_ms,
            retry_count: 0,
            origin: Origin::External,
        }
    }

    /// A derivative of this envelope with its own identity. Timing and
    /// retry metadata are inherited; the parent link records lineage.
    pub fn derive<Q>(&self, id: impl Into<ElementId>, payload: Q) -> Envelope<Q> {
        Envelope {
            element_id: id.into(),
            parent_id: Some(self.element_id.clone()),
            payload,
            event_time_ms: self.event_time_ms,
            first_seen_ms: self.first_seen_ms,
            retry_count: self.retry_count,
            origin: self.origin,
        }
    }

    /// The same element re-entering the pipeline after a dehydration.
    pub fn rehydrated(mut self) -> Self {
        self.retry_count += 1;
        self.origin = Origin::Rehydrated;
        self
    }

    pub(crate) fn admitted_at(mut self, now_ms: u64) -> Self {
        self.first_seen_ms = now_ms;
        self.retry_count = 0;
        self.origin = Origin::External;
        self
    }

    pub fn element_id(&self) -> &ElementId {
        &self.element_id
    }

    pub fn parent_id(&self) -> Option<&ElementId> {
        self.parent_id.as_ref()
    }

    pub fn is_derived(&self) -> bool {
        self.parent_id.is_some()
    }

    pub fn payload(&self) -> &P {
        &self.payload
    }

    pub fn into_payload(self) -> P {
        self.payload
    }

    pub fn event_time_ms(&self) -> u64 {
        self.event_time_ms
    }

    pub fn first_seen_ms(&self) -> u64 {
        self.first_seen_ms
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Milliseconds since the element was first admitted.
    pub fn age_ms(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.first_seen_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_envelope_has_no_retries() {
        let e = Envelope::new("q1", 7u32, 100, 120);
        assert_eq!(e.origin(), Origin::External);
        assert_eq!(e.retry_count(), 0);
        assert_eq!(e.first_seen_ms(), 120);
        assert_eq!(e.age_ms(150), 30);
        assert_eq!(e.age_ms(10), 0);
    }

    #[test]
    fn rehydration_keeps_identity() {
        let e = Envelope::new("q1", (), 0, 0).rehydrated().rehydrated();
        assert_eq!(e.element_id().as_str(), "q1");
        assert_eq!(e.retry_count(), 2);
        assert_eq!(e.origin(), Origin::Rehydrated);
    }

    #[test]
    fn derived_envelope_links_parent() {
        let e = Envelope::new("q1", 1u8, 5, 5);
        let d = e.derive("q1/req", "x");
        assert_eq!(d.parent_id().map(ElementId::as_str), Some("q1"));
        assert!(d.is_derived());
        assert!(!e.is_derived());
        assert_eq!(d.event_time_ms(), 5);
    }

    #[test]
    fn ids_order_lexicographically() {
        let mut ids: Vec<ElementId> = ["b", "a10", "a2"].into_iter().map(ElementId::from).collect();
        ids.sort();
        let s: Vec<&str> = ids.iter().map(ElementId::as_str).collect();
        assert_eq!(s, ["a10", "a2", "b"]);
    }
}
