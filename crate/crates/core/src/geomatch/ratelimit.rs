//! Per-candidate token bucket for location-update requests.
//!
//! Each consumed token comes back exactly `refill_interval_ms` after it was
//! taken. That makes the bound a sliding-window one: no half-open window of
//! `refill_interval_ms` milliseconds ever holds more than `capacity`
//! consumptions, whatever the alignment.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    pub capacity: u32,
    pub refill_interval_ms: u64,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            capacity: 3,
            refill_interval_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateLimiterState {
    pub capacity: u32,
    pub refill_interval_ms: u64,
    pub tokens: u32,
    pub last_refill_ms: u64,
    /// Consumption times of the tokens currently out, oldest first.
    outstanding: VecDeque<u64>,
}

impl RateLimiterState {
    pub fn new(limit: RateLimit, now_ms: u64) -> Self {
        Self {
            capacity: limit.capacity,
            refill_interval_ms: limit.refill_interval_ms,
            tokens: limit.capacity,
            last_refill_ms: now_ms,
            outstanding: VecDeque::new(),
        }
    }

    /// Returns every token whose interval has elapsed by `now_ms`.
    pub fn refill(&mut self, now_ms: u64) {
        while let Some(&t) = self.outstanding.front() {
            if t.saturating_add(self.refill_interval_ms) > now_ms {
                break;
            }
            self.outstanding.pop_front();
            self.tokens += 1;
        }
        self.last_refill_ms = self.last_refill_ms.max(now_ms);
    }

    pub fn available(&mut self, now_ms: u64) -> u32 {
        self.refill(now_ms);
        self.tokens
    }

    /// Takes one token if there is one.
    pub fn try_consume(&mut self, now_ms: u64) -> bool {
        self.refill(now_ms);
        if self.tokens == 0 {
            return false;
        }
        self.tokens -= 1;
        self.outstanding.push_back(now_ms);
        true
    }
}

/// Largest number of timestamps (sorted ascending) falling in any half-open
/// window `[t, t + window_ms)`. Used to audit action logs.
pub fn max_in_window(sorted_ms: &[u64], window_ms: u64) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..sorted_ms.len() {
        while sorted_ms[hi] - sorted_ms[lo] >= window_ms {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limit(capacity: u32, refill: u64) -> RateLimit {
        RateLimit {
            capacity,
            refill_interval_ms: refill,
        }
    }

    #[test]
    fn empties_then_refills_per_token() {
        let mut b = RateLimiterState::new(limit(2, 100), 0);
        assert!(b.try_consume(0));
        assert!(b.try_consume(10));
        assert!(!b.try_consume(50));
        assert_eq!(b.available(99), 0);
        assert_eq!(b.available(100), 1);
        assert!(b.try_consume(100));
        assert!(!b.try_consume(109));
        assert!(b.try_consume(110));
        assert_eq!(b.tokens, 0);
    }

    #[test]
    fn zero_capacity_never_grants() {
        let mut b = RateLimiterState::new(limit(0, 100), 0);
        assert!(!b.try_consume(0));
        assert!(!b.try_consume(1_000_000));
    }

    #[test]
    fn window_audit() {
        assert_eq!(max_in_window(&[], 10), 0);
        assert_eq!(max_in_window(&[0, 5, 9, 10, 19, 20], 10), 3);
        assert_eq!(max_in_window(&[0, 10, 20], 10), 1);
    }

    #[test]
    fn greedy_consumer_respects_sliding_window() {
        let mut b = RateLimiterState::new(limit(3, 1000), 0);
        let mut granted = Vec::new();
        for t in (0..20_000).step_by(7) {
            if b.try_consume(t) {
                granted.push(t);
            }
            assert!(b.tokens <= b.capacity);
        }
        assert!(granted.len() >= 3 * 19);
        assert_eq!(max_in_window(&granted, 1000), 3);
    }
}
