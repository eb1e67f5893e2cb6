//! Independent checks for the R-tree pipeline.
//!
//! [`BruteForceIndex`] scans every entry. [`simulate`] is a plain event loop
//! that reproduces the reference pipeline's observable behaviour (backoff,
//! wake-ups on candidate arrival, dedup, rate limits, retirement) without any
//! of its stages, queues or stores. [`oracle_check`] runs both against the
//! real thing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use fsd_core::geomatch::{
    haversine_m, ActionEvent, CandidateHit, CandidateLocation, GeoConfig, GeoId, GeoIndex, Matches, Question,
    QuestionHit, RTreeGeoIndex, Upsert,
};

use crate::config::Config;
use crate::replay::{replay_with_index, ReplayError};
use crate::scenario::ScenarioEvent;

fn by_distance(a: &CandidateHit, b: &CandidateHit) -> std::cmp::Ordering {
    a.distance_m.total_cmp(&b.distance_m).then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Full-scan index.
#[derive(Debug, Default)]
pub struct BruteForceIndex {
    candidates: BTreeMap<GeoId, CandidateLocation>,
    questions: BTreeMap<GeoId, Question>,
}

impl GeoIndex for BruteForceIndex {
    fn upsert_candidate(&mut self, c: CandidateLocation) -> Upsert {
        match self.candidates.get(&c.candidate_id) {
            Some(old) if old.reported_ms > c.reported_ms => Upsert::Stale,
            Some(_) => Upsert::Updated(self.candidates.insert(Arc::clone(&c.candidate_id), c).expect("present")),
            None => {
                self.candidates.insert(Arc::clone(&c.candidate_id), c);
                Upsert::Inserted
            }
        }
    }

    fn candidate(&self, id: &str) -> Option<&CandidateLocation> {
        self.candidates.get(id)
    }

    fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    fn insert_question(&mut self, q: &Question) {
        self.questions.insert(Arc::clone(&q.question_id), q.clone());
    }

    fn remove_question(&mut self, id: &str) -> bool {
        self.questions.remove(id).is_some()
    }

    fn has_question(&self, id: &str) -> bool {
        self.questions.contains_key(id)
    }

    fn question_count(&self) -> usize {
        self.questions.len()
    }

    fn match_question(&self, q: &Question, edge_band_m: f64) -> Matches {
        let mut m = Matches::default();
        for c in self.candidates.values() {
            let d = haversine_m(q.position(), c.position());
            let hit = CandidateHit {
                candidate_id: Arc::clone(&c.candidate_id),
                distance_m: d,
            };
            if d <= q.radius_m {
                m.inside.push(hit);
            } else if d <= q.radius_m + edge_band_m.max(0.0) {
                m.near_edge.push(hit);
            }
        }
        m.inside.sort_by(by_distance);
        m.near_edge.sort_by(by_distance);
        m
    }

    fn match_candidate(&self, c: &CandidateLocation) -> Vec<QuestionHit> {
        let mut hits: Vec<QuestionHit> = self
            .questions
            .values()
            .filter_map(|q| {
                let d = haversine_m(q.position(), c.position());
                (d <= q.radius_m).then(|| QuestionHit {
                    question_id: Arc::clone(&q.question_id),
                    distance_m: d,
                    ratio: d / q.radius_m,
                })
            })
            .collect();
        hits.sort_by(|a, b| a.ratio.total_cmp(&b.ratio).then_with(|| a.question_id.cmp(&b.question_id)));
        hits
    }
}

struct Live {
    q: Question,
    wake_ms: u64,
    retries: u32,
}

/// Event-loop model of the reference pipeline. Assumes question ids are
/// unique within a scenario.
struct Model<'a> {
    cfg: &'a GeoConfig,
    now: u64,
    candidates: BTreeMap<GeoId, CandidateLocation>,
    live: BTreeMap<GeoId, Live>,
    sent: HashSet<(GeoId, GeoId)>,
    answered: HashSet<GeoId>,
    grants: HashMap<GeoId, Vec<u64>>,
    log: Vec<ActionEvent>,
}

impl Model<'_> {
    fn interval(&self, retries: u32) -> u64 {
        let p = &self.cfg.policy;
        let raw = p.base_interval_ms as f64 * p.backoff_factor.powi(retries as i32);
        raw.min(p.max_interval_ms as f64).floor() as u64
    }

    fn too_many(&self, retries: u32) -> bool {
        self.cfg.policy.max_retries.is_some_and(|m| retries > m)
    }

    fn has_token(&mut self, c: &GeoId) -> bool {
        let limit = self.cfg.rate_limit;
        let now = self.now;
        let g = self.grants.entry(Arc::clone(c)).or_default();
        let outstanding = g.iter().filter(|&&t| t + limit.refill_interval_ms > now).count();
        if outstanding < limit.capacity as usize {
            g.push(now);
            true
        } else {
            false
        }
    }

    fn nearby(&self, q: &Question) -> (Vec<(f64, GeoId)>, Vec<(f64, GeoId)>) {
        let band = self.cfg.edge_band_m.unwrap_or(self.cfg.edge_band_ratio * q.radius_m).max(0.0);
        let mut inside = Vec::new();
        let mut near = Vec::new();
        for c in self.candidates.values() {
            let d = haversine_m(q.position(), c.position());
            if d <= q.radius_m {
                inside.push((d, Arc::clone(&c.candidate_id)));
            } else if d <= q.radius_m + band {
                near.push((d, Arc::clone(&c.candidate_id)));
            }
        }
        let order = |a: &(f64, GeoId), b: &(f64, GeoId)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1));
        inside.sort_by(order);
        near.sort_by(order);
        (inside, near)
    }

    fn decide(&mut self, q: Question, retries: u32) {
        let id = Arc::clone(&q.question_id);
        if self.answered.contains(&id) {
            return;
        }
        if self.now - q.created_ms > q.max_age_ms {
            self.log.push(ActionEvent::retire(&id, self.now));
            return;
        }
        let (inside, near) = self.nearby(&q);
        let pair = |c: &GeoId| (Arc::clone(&id), Arc::clone(c));
        if let Some((_, c)) = inside.iter().find(|(_, c)| !self.sent.contains(&pair(c))) {
            self.sent.insert(pair(c));
            self.log.push(ActionEvent::send(&id, c, self.now));
            return;
        }
        let mut asked = 0;
        for (_, c) in &near {
            if asked == self.cfg.requests_per_decision {
                break;
            }
            if self.sent.contains(&pair(c)) {
                continue;
            }
            if self.has_token(c) {
                asked += 1;
                self.log.push(ActionEvent::request(&id, c, self.now));
            }
        }
        self.log.push(ActionEvent::dehydrate(&id, self.now));
        if self.too_many(retries) {
            self.log.push(ActionEvent::retire(&id, self.now));
            return;
        }
        let wake_ms = self.now + self.interval(retries);
        self.live.insert(id, Live { q, wake_ms, retries });
    }

    /// Handles every wake-up due at the current time.
    fn release_due(&mut self) {
        let mut due: Vec<(u64, GeoId)> = self
            .live
            .iter()
            .filter(|(_, l)| l.wake_ms <= self.now)
            .map(|(id, l)| (l.wake_ms, Arc::clone(id)))
            .collect();
        due.sort();
        let mut again = Vec::new();
        for (_, id) in due {
            let l = self.live.remove(&id).expect("due question is live");
            let retries = l.retries + 1;
            if self.now - l.q.created_ms > l.q.max_age_ms || self.too_many(retries) {
                self.log.push(ActionEvent::retire(&id, self.now));
            } else {
                again.push((l.q, retries));
            }
        }
        for (q, retries) in again {
            self.decide(q, retries);
        }
    }

    fn advance_to(&mut self, target: u64) {
        while let Some(w) = self.live.values().map(|l| l.wake_ms).filter(|&w| w <= target).min() {
            self.now = self.now.max(w);
            self.release_due();
        }
        self.now = self.now.max(target);
    }

    fn apply(&mut self, ev: &ScenarioEvent) {
        match ev {
            ScenarioEvent::Advance(d) => self.advance_to(self.now + d),
            ScenarioEvent::Question(q) => {
                self.advance_to(q.created_ms);
                if q.is_valid() {
                    self.decide(q.clone(), 0);
                }
            }
            ScenarioEvent::Candidate(c) => {
                self.advance_to(c.reported_ms);
                if !c.position().is_valid() {
                    return;
                }
                if let Some(old) = self.candidates.get(&c.candidate_id) {
                    if old.reported_ms > c.reported_ms {
                        return;
                    }
                }
                self.candidates.insert(Arc::clone(&c.candidate_id), c.clone());
                let now = self.now;
                for l in self.live.values_mut() {
                    if haversine_m(l.q.position(), c.position()) <= l.q.radius_m {
                        l.wake_ms = l.wake_ms.min(now);
                    }
                }
                self.release_due();
            }
            ScenarioEvent::Answer { question_id, t_ms, .. } => {
                self.advance_to(*t_ms);
                self.answered.insert(Arc::clone(question_id));
                self.live.remove(question_id);
            }
        }
    }
}

/// The model's action log, in canonical order.
pub fn simulate(events: &[ScenarioEvent], cfg: &GeoConfig) -> Vec<ActionEvent> {
    let mut m = Model {
        cfg,
        now: 0,
        candidates: BTreeMap::new(),
        live: BTreeMap::new(),
        sent: HashSet::new(),
        answered: HashSet::new(),
        grants: HashMap::new(),
        log: Vec::new(),
    };
    for ev in events {
        m.apply(ev);
    }
    m.log.sort();
    m.log
}

#[derive(Debug, Clone, PartialEq)]
pub enum Divergence {
    /// A match query disagreed with the full scan.
    Match { event: usize, detail: String },
    /// The action logs differ; `line` is the first differing line (0-based).
    Log { line: usize, pipeline: Option<String>, oracle: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub match_queries: usize,
    pub log_lines: usize,
    pub divergence: Option<Divergence>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

fn ids<T>(v: &[T], f: impl Fn(&T) -> &str) -> Vec<String> {
    v.iter().map(|x| f(x).to_string()).collect()
}

/// Feeds the scenario's candidates and questions to an R-tree and a full scan
/// side by side and compares every question and candidate query.
pub fn compare_indexes(events: &[ScenarioEvent], cfg: &GeoConfig) -> (usize, Option<Divergence>) {
    let mut rtree = RTreeGeoIndex::new(cfg.rtree_inflation);
    let mut brute = BruteForceIndex::default();
    let mut queries = 0;
    for (i, ev) in events.iter().enumerate() {
        match ev {
            ScenarioEvent::Candidate(c) => {
                let a = rtree.upsert_candidate(c.clone());
                let b = brute.upsert_candidate(c.clone());
                if a != b {
                    return (queries, Some(Divergence::Match {
                        event: i,
                        detail: format!("upsert {}: {a:?} vs {b:?}", c.candidate_id),
                    }));
                }
                queries += 1;
                let a = rtree.match_candidate(c);
                let b = brute.match_candidate(c);
                let (a, b) = (ids(&a, |h| &h.question_id), ids(&b, |h| &h.question_id));
                if a != b {
                    return (queries, Some(Divergence::Match {
                        event: i,
                        detail: format!("candidate {}: rtree {a:?} scan {b:?}", c.candidate_id),
                    }));
                }
            }
            ScenarioEvent::Question(q) => {
                queries += 1;
                let band = cfg.edge_band_for(q);
                let a = rtree.match_question(q, band);
                let b = brute.match_question(q, band);
                let pa = (ids(&a.inside, |h| &h.candidate_id), ids(&a.near_edge, |h| &h.candidate_id));
                let pb = (ids(&b.inside, |h| &h.candidate_id), ids(&b.near_edge, |h| &h.candidate_id));
                if pa != pb {
                    return (queries, Some(Divergence::Match {
                        event: i,
                        detail: format!("question {}: rtree {pa:?} scan {pb:?}", q.question_id),
                    }));
                }
                rtree.insert_question(q);
                brute.insert_question(q);
            }
            ScenarioEvent::Answer { question_id, .. } => {
                if rtree.remove_question(question_id) != brute.remove_question(question_id) {
                    return (queries, Some(Divergence::Match {
                        event: i,
                        detail: format!("remove {question_id}"),
                    }));
                }
            }
            ScenarioEvent::Advance(_) => {}
        }
    }
    (queries, None)
}

pub fn first_log_difference(a: &[ActionEvent], b: &[ActionEvent]) -> Option<Divergence> {
    let n = a.len().max(b.len());
    (0..n)
        .find(|&i| a.get(i) != b.get(i))
        .map(|line| Divergence::Log {
            line,
            pipeline: a.get(line).map(ToString::to_string),
            oracle: b.get(line).map(ToString::to_string),
        })
}

/// Index comparison first, then the pipeline's log against the model's.
pub fn oracle_check(events: &[ScenarioEvent], cfg: &Config) -> Result<OracleReport, ReplayError> {
    let (match_queries, divergence) = compare_indexes(events, &cfg.geo);
    if divergence.is_some() {
        return Ok(OracleReport {
            match_queries,
            log_lines: 0,
            divergence,
        });
    }
    let run = replay_with_index(events, cfg, Box::new(RTreeGeoIndex::new(cfg.geo.rtree_inflation)))?;
    let expected = simulate(events, &cfg.geo);
    Ok(OracleReport {
        match_queries,
        log_lines: run.actions.len(),
        divergence: first_log_difference(&run.actions, &expected),
    })
}
