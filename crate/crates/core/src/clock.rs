//! Time source for a pipeline run.
//!
//! Milliseconds everywhere, scenario epoch at 0. A simulated clock only moves
//! when told to; a wall clock reads a monotonic `Instant`.

use std::time::Instant;

use crate::error::ClockError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Simulated,
    WallClock,
}

#[derive(Debug, Clone)]
pub struct Clock {
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Simulated { now_ms: u64 },
    WallClock { epoch: Instant },
}

impl Clock {
    pub fn simulated() -> Self {
        Self::simulated_at(0)
    }

    pub fn simulated_at(now_ms: u64) -> Self {
        Self {
            inner: Inner::Simulated { now_ms },
        }
    }

    /// A wall clock whose epoch is the moment of construction.
    pub fn wall() -> Self {
        Self {
            inner: Inner::WallClock {
                epoch: Instant::now(),
            },
        }
    }

    pub fn mode(&self) -> ClockMode {
        match self.inner {
            Inner::Simulated { .. } => ClockMode::Simulated,
            Inner::WallClock { .. } => ClockMode::WallClock,
        }
    }

    pub fn now_ms(&self) -> u64 {
        match &self.inner {
            Inner::Simulated { now_ms } => *now_ms,
            Inner::WallClock { epoch } => epoch.elapsed().as_millis() as u64,
        }
    }

    /// Moves simulated time forward and returns the new `now_ms`.
    pub fn advance(&mut self, delta_ms: u64) -> Result<u64, ClockError> {
        match &mut self.inner {
            Inner::Simulated { now_ms } => {
                *now_ms = now_ms.checked_add(delta_ms).ok_or(ClockError::Overflow)?;
                Ok(*now_ms)
            }
            Inner::WallClock { .. } => Err(ClockError::WallClockAdvance),
        }
    }

    /// Moves simulated time forward to `target_ms`; earlier targets leave the
    /// clock where it is.
    pub fn advance_to(&mut self, target_ms: u64) -> Result<u64, ClockError> {
        let now = self.now_ms();
        self.advance(target_ms.saturating_sub(now))
    }
}
