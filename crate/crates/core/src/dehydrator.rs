//! Time-indexed holding area for elements that arrived before their context.
//!
//! An element handed to the dehydrator gets a ticket with a wake time. Polling
//! at `now_ms` releases every ticket with `wake_at_ms <= now_ms`, in
//! `(wake_at_ms, element_id)` order, either back into the pipeline with its
//! retry count bumped or, once it is too old or has been retried too often,
//! onto the retire route. The retirement check runs both when an element is
//! stored and when it is released.
//!
//! Retry intervals grow geometrically with the retry count up to a cap, so an
//! element is looked at less often the longer it has waited.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::envelope::{ElementId, Envelope};
use crate::error::DehydrateError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DehydrationPolicy {
    /// Elements older than this (since first admission) are retired.
    pub max_age_ms: u64,
    pub base_interval_ms: u64,
    pub backoff_factor: f64,
    pub max_interval_ms: u64,
    /// Retire instead of performing retry number `max_retries + 1`.
    pub max_retries: Option<u32>,
}

impl Default for DehydrationPolicy {
    fn default() -> Self {
        Self {
            max_age_ms: 15 * 60 * 1000,
            base_interval_ms: 1000,
            backoff_factor: 2.0,
            max_interval_ms: 60_000,
            max_retries: None,
        }
    }
}

impl DehydrationPolicy {
    pub fn validate(&self) -> Result<(), DehydrateError> {
        if self.base_interval_ms < 1 {
            return Err(DehydrateError::InvalidPolicy("base_interval_ms must be >= 1".into()));
        }
        if self.max_interval_ms < self.base_interval_ms {
            return Err(DehydrateError::InvalidPolicy(
                "max_interval_ms must be >= base_interval_ms".into(),
            ));
        }
        if !(self.backoff_factor >= 1.0) || !self.backoff_factor.is_finite() {
            return Err(DehydrateError::InvalidPolicy("backoff_factor must be finite and >= 1.0".into()));
        }
        Ok(())
    }

    pub fn with_max_age(mut self, max_age_ms: u64) -> Self {
        self.max_age_ms = max_age_ms;
        self
    }

    pub fn should_retire(&self, age_ms: u64, retry_count: u32) -> bool {
        age_ms > self.max_age_ms || self.max_retries.is_some_and(|m| retry_count > m)
    }
}

/// `min(base * factor^retry_count, max_interval)`, floored to whole ms.
pub fn next_interval(retry_count: u32, policy: &DehydrationPolicy) -> u64 {
    let exp = i32::try_from(retry_count).unwrap_or(i32::MAX);
    let raw = policy.base_interval_ms as f64 * policy.backoff_factor.powi(exp);
    let capped = raw.min(policy.max_interval_ms as f64);
    capped.floor() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ticket {
    pub ticket_id: u64,
    pub element_id: ElementId,
    pub wake_at_ms: u64,
    pub inserted_at_ms: u64,
    /// Replaces the store's policy for this element when present.
    pub policy_override: Option<DehydrationPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DehydrateOutcome<P> {
    Stored(Ticket),
    /// The element was already past retirement; nothing was stored.
    Retired(Envelope<P>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollResult<P> {
    pub rehydrated: Vec<Envelope<P>>,
    pub retired: Vec<Envelope<P>>,
}

impl<P> Default for PollResult<P> {
    fn default() -> Self {
        Self {
            rehydrated: Vec::new(),
            retired: Vec::new(),
        }
    }
}

impl<P> PollResult<P> {
    pub fn is_empty(&self) -> bool {
        self.rehydrated.is_empty() && self.retired.is_empty()
    }
}

#[derive(Debug)]
struct Held<P> {
    ticket: Ticket,
    envelope: Envelope<P>,
}

/// Ordered index of wake times plus a per-element lookup, kept in step.
#[derive(Debug)]
pub struct TimeIndexedStore<P> {
    policy: DehydrationPolicy,
    index: BTreeSet<(u64, ElementId)>,
    by_element: HashMap<ElementId, Held<P>>,
    next_ticket: u64,
}

pub type SharedDehydrator<P> = Arc<Mutex<TimeIndexedStore<P>>>;

impl<P> TimeIndexedStore<P> {
    pub fn new(policy: DehydrationPolicy) -> Result<Self, DehydrateError> {
        policy.validate()?;
        Ok(Self {
            policy,
            index: BTreeSet::new(),
            by_element: HashMap::new(),
            next_ticket: 1,
        })
    }

    pub fn shared(policy: DehydrationPolicy) -> Result<SharedDehydrator<P>, DehydrateError> {
        Ok(Arc::new(Mutex::new(Self::new(policy)?)))
    }

    pub fn policy(&self) -> &DehydrationPolicy {
        &self.policy
    }

    pub fn len(&self) -> usize {
        self.by_element.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_element.is_empty()
    }

    pub fn contains(&self, id: &ElementId) -> bool {
        self.by_element.contains_key(id)
    }

    pub fn ticket(&self, id: &ElementId) -> Option<&Ticket> {
        self.by_element.get(id).map(|h| &h.ticket)
    }

    /// Earliest pending wake time.
    pub fn next_wake(&self) -> Option<u64> {
        self.index.first().map(|(w, _)| *w)
    }

    pub fn dehydrate(
        &mut self,
        e: Envelope<P>,
        now_ms: u64,
        policy_override: Option<DehydrationPolicy>,
    ) -> Result<DehydrateOutcome<P>, DehydrateError> {
        if self.by_element.contains_key(e.element_id()) {
            return Err(DehydrateError::DuplicateTicket(e.element_id().clone()));
        }
        if let Some(p) = &policy_override {
            p.validate()?;
        }
        let policy = policy_override.as_ref().unwrap_or(&self.policy);
        if policy.should_retire(e.age_ms(now_ms), e.retry_count()) {
            return Ok(DehydrateOutcome::Retired(e));
        }
        let wake_at_ms = now_ms.saturating_add(next_interval(e.retry_count(), policy));
        let ticket = Ticket {
            ticket_id: self.next_ticket,
            element_id: e.element_id().clone(),
            wake_at_ms,
            inserted_at_ms: now_ms,
            policy_override,
        };
        self.next_ticket += 1;
        self.index.insert((wake_at_ms, ticket.element_id.clone()));
        self.by_element.insert(
            ticket.element_id.clone(),
            Held {
                ticket: ticket.clone(),
                envelope: e,
            },
        );
        Ok(DehydrateOutcome::Stored(ticket))
    }

    /// Releases every ticket due at `now_ms`.
    pub fn poll(&mut self, now_ms: u64) -> PollResult<P> {
        let mut out = PollResult::default();
        while let Some((wake, _)) = self.index.first() {
            if *wake > now_ms {
                break;
            }
            let (_, id) = self.index.pop_first().expect("checked non-empty");
            let held = self
                .by_element
                .remove(&id)
                .expect("index and by_element out of step");
            let policy = held.ticket.policy_override.unwrap_or(self.policy);
            let age = held.envelope.age_ms(now_ms);
            if policy.should_retire(age, held.envelope.retry_count() + 1) {
                out.retired.push(held.envelope);
            } else {
                out.rehydrated.push(held.envelope.rehydrated());
            }
        }
        out
    }

    /// Removes a pending ticket; the element will never be rehydrated.
    pub fn cancel(&mut self, id: &ElementId) -> Option<(Ticket, Envelope<P>)> {
        let held = self.by_element.remove(id)?;
        self.index.remove(&(held.ticket.wake_at_ms, id.clone()));
        Some((held.ticket, held.envelope))
    }

    /// Pulls a pending ticket's wake time forward to `now_ms`. Returns whether
    /// the ticket existed and was not already due.
    pub fn expedite(&mut self, id: &ElementId, now_ms: u64) -> bool {
        let Some(held) = self.by_element.get_mut(id) else {
            return false;
        };
        if held.ticket.wake_at_ms <= now_ms {
            return false;
        }
        self.index.remove(&(held.ticket.wake_at_ms, id.clone()));
        held.ticket.wake_at_ms = now_ms.max(held.ticket.inserted_at_ms);
        self.index.insert((held.ticket.wake_at_ms, id.clone()));
        true
    }

    /// Both views hold exactly the same tickets.
    pub fn is_consistent(&self) -> bool {
        self.index.len() == self.by_element.len()
            && self.index.iter().all(|(w, id)| {
                self.by_element
                    .get(id)
                    .is_some_and(|h| h.ticket.wake_at_ms == *w && &h.ticket.element_id == id)
            })
    }

    /// Drops every pending ticket and returns the held envelopes.
    pub fn drain(&mut self) -> Vec<Envelope<P>> {
        self.index.clear();
        let mut held: Vec<_> = self.by_element.drain().map(|(_, h)| h).collect();
        held.sort_by(|a, b| {
            (a.ticket.wake_at_ms, &a.ticket.element_id).cmp(&(b.ticket.wake_at_ms, &b.ticket.element_id))
        });
        held.into_iter().map(|h| h.envelope).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::Origin;

    fn policy() -> DehydrationPolicy {
        DehydrationPolicy {
            max_age_ms: 15 * 60 * 1000,
            base_interval_ms: 1000,
            backoff_factor: 2.0,
            max_interval_ms: 60_000,
            max_retries: None,
        }
    }

    fn doubling_oracle(retry: u32, base: u64, cap: u64) -> u64 {
        let mut v = base;
        for _ in 0..retry {
            v = v.saturating_mul(2);
            if v >= cap {
                return cap;
            }
        }
        v.min(cap)
    }

    #[test]
    fn interval_examples() {
        let p = policy();
        assert_eq!(next_interval(0, &p), 1000);
        assert_eq!(next_interval(3, &p), 8000);
        assert_eq!(next_interval(10, &p), 60_000);
        for r in 0..40 {
            assert_eq!(next_interval(r, &p), doubling_oracle(r, 1000, 60_000), "retry {r}");
        }
        assert_eq!(next_interval(u32::MAX, &p), 60_000);
    }

    #[test]
    fn fractional_backoff_floors() {
        let p = DehydrationPolicy {
            base_interval_ms: 3,
            backoff_factor: 1.5,
            max_interval_ms: 100,
            ..policy()
        };
        // 3, 4.5, 6.75, 10.125
        let got: Vec<u64> = (0..4).map(|r| next_interval(r, &p)).collect();
        assert_eq!(got, [3, 4, 6, 10]);
    }

    #[test]
    fn invalid_policies() {
        for bad in [
            DehydrationPolicy { base_interval_ms: 0, ..policy() },
            DehydrationPolicy { max_interval_ms: 10, ..policy() },
            DehydrationPolicy { backoff_factor: 0.5, ..policy() },
            DehydrationPolicy { backoff_factor: f64::NAN, ..policy() },
        ] {
            assert!(TimeIndexedStore::<()>::new(bad).is_err());
        }
    }

    #[test]
    fn first_wake_uses_base_interval() {
        let mut s = TimeIndexedStore::new(policy()).unwrap();
        let out = s.dehydrate(Envelope::new("q", (), 0, 500), 500, None).unwrap();
        match out {
            DehydrateOutcome::Stored(t) => {
                assert_eq!(t.wake_at_ms, 1500);
                assert_eq!(t.inserted_at_ms, 500);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(s.next_wake(), Some(1500));
    }

    #[test]
    fn too_old_is_retired_without_ticket() {
        let mut s = TimeIndexedStore::new(policy().with_max_age(1000)).unwrap();
        let e = Envelope::new("q", (), 0, 0);
        assert!(matches!(s.dehydrate(e, 1001, None).unwrap(), DehydrateOutcome::Retired(_)));
        assert!(s.is_empty());
        let e = Envelope::new("q", (), 0, 0);
        assert!(matches!(s.dehydrate(e, 1000, None).unwrap(), DehydrateOutcome::Stored(_)));
    }

    #[test]
    fn duplicate_ticket_is_rejected() {
        let mut s = TimeIndexedStore::new(policy()).unwrap();
        s.dehydrate(Envelope::new("q", (), 0, 0), 0, None).unwrap();
        assert_eq!(
            s.dehydrate(Envelope::new("q", (), 0, 0), 10, None),
            Err(DehydrateError::DuplicateTicket("q".into()))
        );
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn due_boundary_is_inclusive() {
        let mut s = TimeIndexedStore::new(DehydrationPolicy {
            base_interval_ms: 10_000,
            ..policy()
        })
        .unwrap();
        s.dehydrate(Envelope::new("q", (), 0, 0), 0, None).unwrap();
        assert!(s.poll(9_999).is_empty());
        let r = s.poll(10_000);
        assert_eq!(r.rehydrated.len(), 1);
        assert_eq!(r.rehydrated[0].retry_count(), 1);
        assert_eq!(r.rehydrated[0].origin(), Origin::Rehydrated);
        assert!(s.is_empty());
    }

    #[test]
    fn same_wake_releases_in_id_order() {
        let mut s = TimeIndexedStore::new(policy()).unwrap();
        for id in ["b", "c", "a"] {
            s.dehydrate(Envelope::new(id, (), 0, 0), 0, None).unwrap();
        }
        assert!(s.poll(999).is_empty());
        let ids: Vec<String> = s.poll(1000).rehydrated.iter().map(|e| e.element_id().to_string()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn retirement_on_poll() {
        // admitted at 0, max age 2500; wakes at 1000 (retry 1, age 1000) and
        // 1000 + 2000 = 3000 (age 3000 > 2500) which retires.
        let mut s = TimeIndexedStore::new(policy().with_max_age(2500)).unwrap();
        s.dehydrate(Envelope::new("q", (), 0, 0), 0, None).unwrap();
        let first = s.poll(1000);
        assert_eq!(first.rehydrated.len(), 1);
        let e = first.rehydrated.into_iter().next().unwrap();
        s.dehydrate(e, 1000, None).unwrap();
        assert_eq!(s.next_wake(), Some(3000));
        let second = s.poll(3000);
        assert!(second.rehydrated.is_empty());
        assert_eq!(second.retired.len(), 1);
    }

    #[test]
    fn max_retries_caps_rehydration() {
        let mut s = TimeIndexedStore::new(DehydrationPolicy {
            max_retries: Some(1),
            ..policy()
        })
        .unwrap();
        s.dehydrate(Envelope::new("q", (), 0, 0), 0, None).unwrap();
        let e = s.poll(1000).rehydrated.pop().unwrap();
        s.dehydrate(e, 1000, None).unwrap();
        let r = s.poll(3000);
        assert_eq!(r.retired.len(), 1);
        assert_eq!(r.retired[0].retry_count(), 1);
    }

    #[test]
    fn override_replaces_policy() {
        let mut s = TimeIndexedStore::new(policy()).unwrap();
        let fast = DehydrationPolicy {
            base_interval_ms: 5,
            max_interval_ms: 5,
            max_age_ms: 7,
            ..policy()
        };
        s.dehydrate(Envelope::new("q", (), 0, 0), 0, Some(fast)).unwrap();
        assert_eq!(s.next_wake(), Some(5));
        let e = s.poll(5).rehydrated.pop().unwrap();
        s.dehydrate(e, 5, Some(fast)).unwrap();
        assert_eq!(s.poll(10).retired.len(), 1);
    }

    #[test]
    fn cancel_and_expedite() {
        let mut s = TimeIndexedStore::new(policy()).unwrap();
        s.dehydrate(Envelope::new("a", (), 0, 0), 0, None).unwrap();
        s.dehydrate(Envelope::new("b", (), 0, 0), 0, None).unwrap();
        assert!(s.cancel(&"a".into()).is_some());
        assert!(s.cancel(&"a".into()).is_none());
        assert!(s.cancel(&"zzz".into()).is_none());
        assert!(s.expedite(&"b".into(), 200));
        assert!(!s.expedite(&"b".into(), 300));
        assert!(s.is_consistent());
        let r = s.poll(200);
        assert_eq!(r.rehydrated.len(), 1);
        assert_eq!(r.rehydrated[0].element_id().as_str(), "b");
        assert!(s.poll(10_000).is_empty());
    }

    #[test]
    fn cancelled_element_never_returns() {
        let mut s = TimeIndexedStore::new(policy()).unwrap();
        s.dehydrate(Envelope::new("a", (), 0, 0), 0, None).unwrap();
        s.cancel(&"a".into());
        assert!(s.poll(5_000).is_empty());
    }
}
