//! What to do with a question, given what the index currently knows.

use std::sync::Arc;

use crate::dehydrator::DehydrationPolicy;
use crate::store::StoreTxn;

use super::index::{CandidateHit, Matches};
use super::model::{ActionEvent, Question};
use super::ratelimit::{RateLimit, RateLimiterState};

/// Values kept in the shared decision store.
#[derive(Debug, Clone, PartialEq)]
pub enum GeoState {
    /// The keyed (question, candidate) pair has been sent.
    Sent,
    /// The keyed question got an answer and is closed.
    Answered,
    Bucket(RateLimiterState),
}

const SEP: char = '\u{1f}';

pub fn sent_key(question_id: &str, candidate_id: &str) -> String {
    format!("sent{SEP}{question_id}{SEP}{candidate_id}")
}

pub fn bucket_key(candidate_id: &str) -> String {
    format!("bucket{SEP}{candidate_id}")
}

pub fn answered_key(question_id: &str) -> String {
    format!("answered{SEP}{question_id}")
}

/// Every knob of the reference pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoConfig {
    /// Absolute edge band; when absent the band is `edge_band_ratio * radius`.
    pub edge_band_m: Option<f64>,
    pub edge_band_ratio: f64,
    /// Most location-update requests issued by one decision.
    pub requests_per_decision: usize,
    pub rate_limit: RateLimit,
    /// Scales R-tree search rectangles. Anything under 1.0 can miss matches.
    pub rtree_inflation: f64,
    /// Backoff schedule; `max_age_ms` is replaced by each question's own.
    pub policy: DehydrationPolicy,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            edge_band_m: None,
            edge_band_ratio: 0.1,
            requests_per_decision: 3,
            rate_limit: RateLimit::default(),
            rtree_inflation: 1.0,
            policy: DehydrationPolicy::default(),
        }
    }
}

impl GeoConfig {
    pub fn edge_band_for(&self, q: &Question) -> f64 {
        self.edge_band_m.unwrap_or(self.edge_band_ratio * q.radius_m).max(0.0)
    }

    pub fn policy_for(&self, q: &Question) -> DehydrationPolicy {
        self.policy.clone().with_max_age(q.max_age_ms)
    }
}

/// The branch a decision took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Send,
    Dehydrate,
    Retire,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    /// Send or RequestLocationUpdate actions followed by Dehydrate. Retire
    /// carries no actions here; the retire sink logs it.
    pub actions: Vec<ActionEvent>,
}

/// Decides for `q` at `now_ms`, recording sends and token use in `txn`.
///
/// - Too old: retire.
/// - Otherwise send to the nearest inside candidate not yet sent this
///   question.
/// - Otherwise ask up to `requests_per_decision` near-edge candidates, nearest
///   first, that have a token and have not been sent this question, then
///   dehydrate.
pub fn business_decide(
    matches: &Matches,
    txn: &mut StoreTxn<'_, GeoState>,
    cfg: &GeoConfig,
    q: &Question,
    now_ms: u64,
) -> Decision {
    if q.age_ms(now_ms) > q.max_age_ms {
        return Decision {
            verdict: Verdict::Retire,
            actions: Vec::new(),
        };
    }
    let unsent = |txn: &mut StoreTxn<'_, GeoState>, c: &CandidateHit| {
        txn.get(&sent_key(&q.question_id, &c.candidate_id)).is_none()
    };
    if let Some(c) = matches.inside.iter().find(|c| unsent(txn, c)) {
        txn.put(&sent_key(&q.question_id, &c.candidate_id), GeoState::Sent);
        return Decision {
            verdict: Verdict::Send,
            actions: vec![ActionEvent::send(&q.question_id, &c.candidate_id, now_ms)],
        };
    }
    let mut actions = Vec::new();
    for c in &matches.near_edge {
        if actions.len() >= cfg.requests_per_decision {
            break;
        }
        if !unsent(txn, c) {
            continue;
        }
        let key = bucket_key(&c.candidate_id);
        let mut bucket = match txn.get(&key) {
            Some(GeoState::Bucket(b)) => b,
            _ => RateLimiterState::new(cfg.rate_limit, now_ms),
        };
        if bucket.try_consume(now_ms) {
            txn.put(&key, GeoState::Bucket(bucket));
            actions.push(ActionEvent::request(&q.question_id, &c.candidate_id, now_ms));
        }
    }
    actions.push(ActionEvent::dehydrate(&q.question_id, now_ms));
    Decision {
        verdict: Verdict::Dehydrate,
        actions,
    }
}

/// Shorthand for tests and benchmarks.
pub fn hit(id: &str, distance_m: f64) -> CandidateHit {
    CandidateHit {
        candidate_id: Arc::from(id),
        distance_m,
    }
}
