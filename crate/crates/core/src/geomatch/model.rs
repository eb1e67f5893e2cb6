use std::fmt;
use std::sync::Arc;

use super::geo::LatLon;

pub type GeoId = Arc<str>;

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub question_id: GeoId,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub radius_m: f64,
    pub created_ms: u64,
    pub max_age_ms: u64,
}

impl Question {
    pub fn new(id: &str, lat_deg: f64, lon_deg: f64, radius_m: f64, created_ms: u64, max_age_ms: u64) -> Self {
        Self {
            question_id: Arc::from(id),
            lat_deg,
            lon_deg,
            radius_m,
            created_ms,
            max_age_ms,
        }
    }

    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat_deg, self.lon_deg)
    }

    pub fn is_valid(&self) -> bool {
        self.radius_m > 0.0 && self.radius_m.is_finite() && self.position().is_valid()
    }

    pub fn age_ms(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.created_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLocation {
    pub candidate_id: GeoId,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub reported_ms: u64,
}

impl CandidateLocation {
    pub fn new(id: &str, lat_deg: f64, lon_deg: f64, reported_ms: u64) -> Self {
        Self {
            candidate_id: Arc::from(id),
            lat_deg,
            lon_deg,
            reported_ms,
        }
    }

    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat_deg, self.lon_deg)
    }
}

/// Payload of the reference pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum GeoEvent {
    Question(Question),
    Candidate(CandidateLocation),
    /// A candidate answered; the question needs no further retries.
    Answer { question_id: GeoId, candidate_id: GeoId },
}

/// Variant order is the tie-break order within one millisecond of the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    Send,
    RequestLocationUpdate,
    Dehydrate,
    Retire,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Send => "Send",
            ActionKind::RequestLocationUpdate => "RequestLocationUpdate",
            ActionKind::Dehydrate => "Dehydrate",
            ActionKind::Retire => "Retire",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Send" => Some(ActionKind::Send),
            "RequestLocationUpdate" => Some(ActionKind::RequestLocationUpdate),
            "Dehydrate" => Some(ActionKind::Dehydrate),
            "Retire" => Some(ActionKind::Retire),
            _ => None,
        }
    }
}

/// An output of the pipeline. Field order is the log's sort order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionEvent {
    pub at_ms: u64,
    pub kind: ActionKind,
    pub question_id: GeoId,
    pub candidate_id: Option<GeoId>,
}

impl ActionEvent {
    pub fn send(q: &GeoId, c: &GeoId, at_ms: u64) -> Self {
        Self::with(ActionKind::Send, q, Some(c), at_ms)
    }

    pub fn request(q: &GeoId, c: &GeoId, at_ms: u64) -> Self {
        Self::with(ActionKind::RequestLocationUpdate, q, Some(c), at_ms)
    }

    pub fn dehydrate(q: &GeoId, at_ms: u64) -> Self {
        Self::with(ActionKind::Dehydrate, q, None, at_ms)
    }

    pub fn retire(q: &GeoId, at_ms: u64) -> Self {
        Self::with(ActionKind::Retire, q, None, at_ms)
    }

    fn with(kind: ActionKind, q: &GeoId, c: Option<&GeoId>, at_ms: u64) -> Self {
        Self {
            at_ms,
            kind,
            question_id: Arc::clone(q),
            candidate_id: c.map(Arc::clone),
        }
    }
}

/// `KIND question_id candidate_id|- at_ms`
impl fmt::Display for ActionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.kind.as_str(),
            self.question_id,
            self.candidate_id.as_deref().unwrap_or("-"),
            self.at_ms
        )
    }
}
