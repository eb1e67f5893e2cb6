//! R-tree backed candidate and question caches.
//!
//! Candidates are stored as points. A question query searches the degree
//! rectangles returned by [`cap_bounds`] and then applies the exact haversine
//! test, so the rectangle pre-filter can only widen the search, never prune a
//! true match. Questions are stored as their bounding rectangles and probed
//! with a candidate's point for the reverse direction.

use std::collections::HashMap;
use std::sync::Arc;

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};

use super::geo::{cap_bounds, haversine_m, DegreeRect, LatLon};
use super::model::{CandidateLocation, GeoId, Question};

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateHit {
    pub candidate_id: GeoId,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionHit {
    pub question_id: GeoId,
    pub distance_m: f64,
    /// distance / radius; lower is a better fit.
    pub ratio: f64,
}

/// Result of matching one question: candidates inside its radius and those in
/// the band just beyond it, each sorted by distance then id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matches {
    pub inside: Vec<CandidateHit>,
    pub near_edge: Vec<CandidateHit>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Upsert {
    Inserted,
    /// Replaced an older location, which is returned.
    Updated(CandidateLocation),
    /// The stored location is newer; nothing changed.
    Stale,
}

/// The matcher's cache. Implemented here with R-trees; a full-scan version
/// serves as the test oracle.
pub trait GeoIndex: Send + Sync {
    fn upsert_candidate(&mut self, c: CandidateLocation) -> Upsert;
    fn candidate(&self, id: &str) -> Option<&CandidateLocation>;
    fn candidate_count(&self) -> usize;
    /// Adds or replaces a live question.
    fn insert_question(&mut self, q: &Question);
    fn remove_question(&mut self, id: &str) -> bool;
    fn has_question(&self, id: &str) -> bool;
    fn question_count(&self) -> usize;
    fn match_question(&self, q: &Question, edge_band_m: f64) -> Matches;
    /// Live questions whose radius contains `c`, by (ratio, question_id).
    fn match_candidate(&self, c: &CandidateLocation) -> Vec<QuestionHit>;
}

pub fn sort_candidate_hits(hits: &mut [CandidateHit]) {
    hits.sort_by(|a, b| {
        a.distance_m
            .total_cmp(&b.distance_m)
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
    });
}

pub fn sort_question_hits(hits: &mut [QuestionHit]) {
    hits.sort_by(|a, b| a.ratio.total_cmp(&b.ratio).then_with(|| a.question_id.cmp(&b.question_id)));
}

/// Splits `candidates` at `radius_m` and `radius_m + edge_band_m`.
pub fn classify(
    center: LatLon,
    radius_m: f64,
    edge_band_m: f64,
    candidates: impl Iterator<Item = (GeoId, LatLon)>,
) -> Matches {
    let outer = radius_m + edge_band_m.max(0.0);
    let mut m = Matches::default();
    for (id, p) in candidates {
        let d = haversine_m(center, p);
        if d <= radius_m {
            m.inside.push(CandidateHit {
                candidate_id: id,
                distance_m: d,
            });
        } else if d <= outer {
            m.near_edge.push(CandidateHit {
                candidate_id: id,
                distance_m: d,
            });
        }
    }
    sort_candidate_hits(&mut m.inside);
    sort_candidate_hits(&mut m.near_edge);
    m
}

fn aabb(r: &DegreeRect) -> AABB<[f64; 2]> {
    AABB::from_corners([r.min_lon, r.min_lat], [r.max_lon, r.max_lat])
}

type PointEntry = GeomWithData<[f64; 2], u32>;
type RectEntry = GeomWithData<Rectangle<[f64; 2]>, u32>;

pub struct RTreeGeoIndex {
    inflation: f64,
    points: RTree<PointEntry>,
    candidates: Vec<CandidateLocation>,
    candidate_slot: HashMap<GeoId, u32>,
    rects: RTree<RectEntry>,
    questions: Vec<Option<(Question, Vec<RectEntry>)>>,
    free_question_slots: Vec<u32>,
    question_slot: HashMap<GeoId, u32>,
}

impl Default for RTreeGeoIndex {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl RTreeGeoIndex {
    /// `inflation` scales every search radius before it is turned into
    /// rectangles. 1.0 is exact; values below 1.0 lose matches and exist only
    /// to check that the oracle notices.
    pub fn new(inflation: f64) -> Self {
        Self {
            inflation,
            points: RTree::new(),
            candidates: Vec::new(),
            candidate_slot: HashMap::new(),
            rects: RTree::new(),
            questions: Vec::new(),
            free_question_slots: Vec::new(),
            question_slot: HashMap::new(),
        }
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    /// Bulk-loads an initial candidate set. Later duplicates of an id follow
    /// the usual latest-report-wins rule.
    pub fn with_candidates(inflation: f64, candidates: impl IntoIterator<Item = CandidateLocation>) -> Self {
        let mut index = Self::new(inflation);
        for c in candidates {
            match index.candidate_slot.get(&c.candidate_id) {
                Some(&slot) => {
                    if c.reported_ms >= index.candidates[slot as usize].reported_ms {
                        index.candidates[slot as usize] = c;
                    }
                }
                None => {
                    index
                        .candidate_slot
                        .insert(Arc::clone(&c.candidate_id), index.candidates.len() as u32);
                    index.candidates.push(c);
                }
            }
        }
        let entries = index
            .candidates
            .iter()
            .enumerate()
            .map(|(slot, c)| PointEntry::new([c.lon_deg, c.lat_deg], slot as u32))
            .collect();
        index.points = RTree::bulk_load(entries);
        index
    }

    fn question_rects(&self, q: &Question, slot: u32) -> Vec<RectEntry> {
        cap_bounds(q.position(), q.radius_m, self.inflation)
            .iter()
            .map(|r| RectEntry::new(Rectangle::from_aabb(aabb(r)), slot))
            .collect()
    }
}

impl GeoIndex for RTreeGeoIndex {
    fn upsert_candidate(&mut self, c: CandidateLocation) -> Upsert {
        let point = [c.lon_deg, c.lat_deg];
        match self.candidate_slot.get(&c.candidate_id) {
            Some(&slot) => {
                let stored = &self.candidates[slot as usize];
                if c.reported_ms < stored.reported_ms {
                    return Upsert::Stale;
                }
                let old_point = [stored.lon_deg, stored.lat_deg];
                self.points.remove(&PointEntry::new(old_point, slot));
                self.points.insert(PointEntry::new(point, slot));
                let previous = std::mem::replace(&mut self.candidates[slot as usize], c);
                Upsert::Updated(previous)
            }
            None => {
                let slot = self.candidates.len() as u32;
                self.candidate_slot.insert(Arc::clone(&c.candidate_id), slot);
                self.candidates.push(c);
                self.points.insert(PointEntry::new(point, slot));
                Upsert::Inserted
            }
        }
    }

    fn candidate(&self, id: &str) -> Option<&CandidateLocation> {
        self.candidate_slot.get(id).map(|&s| &self.candidates[s as usize])
    }

    fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    fn insert_question(&mut self, q: &Question) {
        self.remove_question(&q.question_id);
        let slot = self
            .free_question_slots
            .pop()
            .unwrap_or_else(|| {
                self.questions.push(None);
                (self.questions.len() - 1) as u32
            });
        let rects = self.question_rects(q, slot);
        for r in &rects {
            self.rects.insert(r.clone());
        }
        self.questions[slot as usize] = Some((q.clone(), rects));
        self.question_slot.insert(Arc::clone(&q.question_id), slot);
    }

    fn remove_question(&mut self, id: &str) -> bool {
        let Some(slot) = self.question_slot.remove(id) else {
            return false;
        };
        if let Some((_, rects)) = self.questions[slot as usize].take() {
            for r in &rects {
                self.rects.remove(r);
            }
        }
        self.free_question_slots.push(slot);
        true
    }

    fn has_question(&self, id: &str) -> bool {
        self.question_slot.contains_key(id)
    }

    fn question_count(&self) -> usize {
        self.question_slot.len()
    }

    fn match_question(&self, q: &Question, edge_band_m: f64) -> Matches {
        let reach = q.radius_m + edge_band_m.max(0.0);
        let found = cap_bounds(q.position(), reach, self.inflation)
            .into_iter()
            .flat_map(|r| self.points.locate_in_envelope(&aabb(&r)))
            .map(|entry| {
                let c = &self.candidates[entry.data as usize];
                (Arc::clone(&c.candidate_id), c.position())
            });
        classify(q.position(), q.radius_m, edge_band_m, found)
    }

    fn match_candidate(&self, c: &CandidateLocation) -> Vec<QuestionHit> {
        let p = c.position();
        let mut slots: Vec<u32> = self
            .rects
            .locate_all_at_point(&[p.lon_deg, p.lat_deg])
            .map(|e| e.data)
            .collect();
        slots.sort_unstable();
        slots.dedup();
        let mut hits: Vec<QuestionHit> = slots
            .into_iter()
            .filter_map(|slot| {
                let (q, _) = self.questions[slot as usize].as_ref()?;
                let d = haversine_m(q.position(), p);
                (d <= q.radius_m).then(|| QuestionHit {
                    question_id: Arc::clone(&q.question_id),
                    distance_m: d,
                    ratio: d / q.radius_m,
                })
            })
            .collect();
        sort_question_hits(&mut hits);
        hits
    }
}
