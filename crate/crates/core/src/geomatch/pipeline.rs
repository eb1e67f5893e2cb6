//! The question/candidate matching topology.
//!
//! ```text
//! validate -> router -match-> matcher -> logic -send-> sent
//!               |                ^        |-retire-> retired
//!               |                |        '-dehydrate-> dehydrator
//!               |                '----rehydrate------------'  |-retire-> retired
//!               '-answer-> answers
//! ```
//!
//! The matcher keeps the index current: questions are cached and passed on,
//! candidate reports are absorbed and wake any dehydrated question whose
//! radius they now fall in. The logic splitter runs [`business_decide`]
//! against a shared store holding sent pairs and rate-limit buckets.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::clock::Clock;
use crate::dehydrator::{SharedDehydrator, TimeIndexedStore};
use crate::envelope::{ElementId, Envelope};
use crate::error::{StageError, SubmitError, TopologyError};
use crate::filters::{Filter, FilterDecision};
use crate::pipeline::{DehydratorStage, ExecutionReport, Pipeline, Sink, Stage, StageContext};
use crate::splitters::{memory_split, RouteDecision, Splitter};
use crate::store::StateStore;
use crate::topology::{build_topology, TopologySpec};

use super::decide::{answered_key, business_decide, Decision, GeoConfig, GeoState, Verdict};
use super::index::{GeoIndex, RTreeGeoIndex, Upsert};
use super::model::{ActionEvent, GeoEvent};

pub const ROUTE_MATCH: &str = "match";
pub const ROUTE_ANSWER: &str = "answer";
pub const ROUTE_SEND: &str = "send";
pub const ROUTE_DEHYDRATE: &str = "dehydrate";

pub const REFERENCE_TOPOLOGY: &str = "\
stage validate filter
stage router splitter
stage matcher filter
stage logic splitter
stage dehydrator dehydrator
stage sent sink
stage retired sink
stage answers sink
edge validate router pass
edge router matcher match
edge router answers answer
edge matcher logic pass
edge logic sent send
edge logic dehydrator dehydrate
edge logic retired retire
edge dehydrator matcher rehydrate feedback
edge dehydrator retired retire
entry validate
";

pub type SharedIndex = Arc<RwLock<Box<dyn GeoIndex>>>;
pub type ActionLog = Arc<Mutex<Vec<ActionEvent>>>;

fn reject(msg: &str) -> StageError {
    StageError::LogicFailure(msg.to_string())
}

/// Drops malformed questions and candidate reports.
pub struct ValidateFilter;

impl Filter<GeoEvent> for ValidateFilter {
    fn decide(&mut self, e: &Envelope<GeoEvent>, _ctx: &StageContext) -> Result<FilterDecision<GeoEvent>, StageError> {
        let ok = match e.payload() {
            GeoEvent::Question(q) => q.is_valid(),
            GeoEvent::Candidate(c) => c.position().is_valid(),
            GeoEvent::Answer { .. } => true,
        };
        Ok(if ok { FilterDecision::Pass } else { FilterDecision::Drop })
    }
}

/// Answers go to the answer sink; everything else to the matcher.
pub struct EventRouter;

impl Splitter<GeoEvent> for EventRouter {
    fn split(&mut self, e: &Envelope<GeoEvent>, _ctx: &StageContext) -> Result<RouteDecision<GeoEvent>, StageError> {
        let route = match e.payload() {
            GeoEvent::Answer { .. } => ROUTE_ANSWER,
            _ => ROUTE_MATCH,
        };
        Ok(RouteDecision::single(route, e.clone()))
    }
}

pub struct MatcherFilter {
    index: SharedIndex,
    store: Arc<StateStore<GeoState>>,
    dehydrator: SharedDehydrator<GeoEvent>,
}

impl Filter<GeoEvent> for MatcherFilter {
    fn decide(&mut self, e: &Envelope<GeoEvent>, ctx: &StageContext) -> Result<FilterDecision<GeoEvent>, StageError> {
        match e.payload() {
            GeoEvent::Question(q) => {
                if self.store.get(&answered_key(&q.question_id)).is_some() {
                    self.index.write().remove_question(&q.question_id);
                    return Ok(FilterDecision::Drop);
                }
                self.index.write().insert_question(q);
                Ok(FilterDecision::Pass)
            }
            GeoEvent::Candidate(c) => {
                let hits = {
                    let mut index = self.index.write();
                    match index.upsert_candidate(c.clone()) {
                        Upsert::Stale => Vec::new(),
                        _ => index.match_candidate(c),
                    }
                };
                if !hits.is_empty() {
                    let mut store = self.dehydrator.lock();
                    for h in hits {
                        store.expedite(&ElementId::from(&*h.question_id), ctx.now_ms);
                    }
                }
                Ok(FilterDecision::Drop)
            }
            GeoEvent::Answer { .. } => Err(reject("answer reached the matcher")),
        }
    }
}

pub struct LogicSplitter {
    cfg: GeoConfig,
    index: SharedIndex,
    store: Arc<StateStore<GeoState>>,
    log: ActionLog,
}

impl Splitter<GeoEvent> for LogicSplitter {
    fn split(&mut self, e: &Envelope<GeoEvent>, ctx: &StageContext) -> Result<RouteDecision<GeoEvent>, StageError> {
        let GeoEvent::Question(q) = e.payload() else {
            return Err(reject("logic expects questions"));
        };
        let matches = self.index.read().match_question(q, self.cfg.edge_band_for(q));
        let mut decision = None;
        let routed = memory_split(
            &self.store,
            |txn, e| {
                let d: Decision = business_decide(&matches, txn, &self.cfg, q, ctx.now_ms);
                let route = match d.verdict {
                    Verdict::Send => ROUTE_SEND,
                    Verdict::Dehydrate => ROUTE_DEHYDRATE,
                    Verdict::Retire => crate::topology::RETIRE,
                };
                decision = Some(d);
                Ok(RouteDecision::single(route, e.clone()))
            },
            e,
        )?;
        let d = decision.expect("logic ran");
        if d.verdict == Verdict::Send {
            self.index.write().remove_question(&q.question_id);
        }
        self.log.lock().extend(d.actions);
        Ok(routed)
    }
}

/// Terminal for sent questions.
pub struct SentSink;

impl Sink<GeoEvent> for SentSink {
    fn accept(&mut self, _e: Envelope<GeoEvent>, _ctx: &StageContext) {}
}

/// Logs `Retire` and forgets the question.
pub struct RetireSink {
    index: SharedIndex,
    log: ActionLog,
}

impl Sink<GeoEvent> for RetireSink {
    fn accept(&mut self, e: Envelope<GeoEvent>, ctx: &StageContext) {
        if let GeoEvent::Question(q) = e.payload() {
            self.index.write().remove_question(&q.question_id);
            self.log.lock().push(ActionEvent::retire(&q.question_id, ctx.now_ms));
        }
    }
}

/// Closes the answered question: cancels its pending retry and marks it so a
/// copy already in flight is dropped by the matcher.
pub struct AnswerSink {
    index: SharedIndex,
    store: Arc<StateStore<GeoState>>,
    dehydrator: SharedDehydrator<GeoEvent>,
}

impl Sink<GeoEvent> for AnswerSink {
    fn accept(&mut self, e: Envelope<GeoEvent>, _ctx: &StageContext) {
        if let GeoEvent::Answer { question_id, .. } = e.payload() {
            self.store.put(&answered_key(question_id), GeoState::Answered);
            self.dehydrator.lock().cancel(&ElementId::from(&**question_id));
            self.index.write().remove_question(question_id);
        }
    }
}

/// Wraps `ev` for submission; `seq` must be unique per submitter.
pub fn geo_envelope(ev: GeoEvent, seq: u64, now_ms: u64) -> Envelope<GeoEvent> {
    let (id, event_time) = match &ev {
        GeoEvent::Question(q) => (q.question_id.to_string(), q.created_ms),
        GeoEvent::Candidate(c) => (format!("{}@{}", c.candidate_id, seq), c.reported_ms),
        GeoEvent::Answer { .. } => (format!("A#{seq}"), now_ms),
    };
    Envelope::new(id, ev, event_time, now_ms)
}

/// The reference pipeline plus handles on its shared state.
pub struct GeoPipeline {
    pipeline: Pipeline<GeoEvent>,
    cfg: GeoConfig,
    index: SharedIndex,
    store: Arc<StateStore<GeoState>>,
    dehydrator: SharedDehydrator<GeoEvent>,
    log: ActionLog,
    seq: u64,
}

impl GeoPipeline {
    pub fn reference(cfg: GeoConfig, clock: Clock) -> Result<Self, TopologyError> {
        let index = RTreeGeoIndex::new(cfg.rtree_inflation);
        let spec = TopologySpec::parse(REFERENCE_TOPOLOGY)?;
        Self::build(cfg, clock, &spec, Box::new(index))
    }

    /// Binds the standard stage implementations by name to `spec`. Stage
    /// names must come from the reference topology; the wiring may differ.
    pub fn build(
        cfg: GeoConfig,
        clock: Clock,
        spec: &TopologySpec,
        index: Box<dyn GeoIndex>,
    ) -> Result<Self, TopologyError> {
        let topology = build_topology(spec)?;
        let index: SharedIndex = Arc::new(RwLock::new(index));
        let store = StateStore::shared("geomatch");
        let dehydrator = TimeIndexedStore::shared(cfg.policy.clone())
            .map_err(|e| TopologyError::InvalidStage {
                stage: "dehydrator".into(),
                message: e.to_string(),
            })?;
        let log: ActionLog = Arc::default();

        let override_cfg = cfg.clone();
        let mut bindings: HashMap<String, Stage<GeoEvent>> = HashMap::new();
        bindings.insert("validate".into(), Stage::filter(ValidateFilter));
        bindings.insert("router".into(), Stage::splitter(EventRouter));
        bindings.insert(
            "matcher".into(),
            Stage::filter(MatcherFilter {
                index: Arc::clone(&index),
                store: Arc::clone(&store),
                dehydrator: Arc::clone(&dehydrator),
            }),
        );
        bindings.insert(
            "logic".into(),
            Stage::splitter(LogicSplitter {
                cfg: cfg.clone(),
                index: Arc::clone(&index),
                store: Arc::clone(&store),
                log: Arc::clone(&log),
            }),
        );
        bindings.insert(
            "dehydrator".into(),
            Stage::Dehydrator(DehydratorStage::new(Arc::clone(&dehydrator)).with_override(move |e| match e.payload() {
                GeoEvent::Question(q) => Some(override_cfg.policy_for(q)),
                _ => None,
            })),
        );
        bindings.insert("sent".into(), Stage::sink(SentSink));
        bindings.insert(
            "retired".into(),
            Stage::retire_sink(RetireSink {
                index: Arc::clone(&index),
                log: Arc::clone(&log),
            }),
        );
        bindings.insert(
            "answers".into(),
            Stage::sink(AnswerSink {
                index: Arc::clone(&index),
                store: Arc::clone(&store),
                dehydrator: Arc::clone(&dehydrator),
            }),
        );
        // Stages the topology does not mention are simply left unbound.
        let names: Vec<String> = topology.stages().iter().map(|s| s.name.clone()).collect();
        bindings.retain(|k, _| names.contains(k));
        let pipeline = Pipeline::new(topology, bindings, clock)?;
        Ok(Self {
            pipeline,
            cfg,
            index,
            store,
            dehydrator,
            log,
            seq: 0,
        })
    }

    pub fn config(&self) -> &GeoConfig {
        &self.cfg
    }

    /// Wraps `ev` in an envelope. Questions keep their own id so a rehydrated
    /// copy is the same element; candidate reports and answers get a
    /// sequence suffix since they repeat.
    pub fn envelope(&mut self, ev: GeoEvent, now_ms: u64) -> Envelope<GeoEvent> {
        self.seq += 1;
        geo_envelope(ev, self.seq, now_ms)
    }

    pub fn submit(&mut self, ev: GeoEvent) -> Result<(), SubmitError> {
        let e = self.envelope(ev, self.pipeline.now_ms());
        self.pipeline.submit(e)
    }

    pub fn pipeline(&self) -> &Pipeline<GeoEvent> {
        &self.pipeline
    }

    pub fn pipeline_mut(&mut self) -> &mut Pipeline<GeoEvent> {
        &mut self.pipeline
    }

    pub fn run_until_idle(&mut self) -> ExecutionReport {
        self.pipeline.run_until_idle()
    }

    pub fn index(&self) -> &SharedIndex {
        &self.index
    }

    pub fn store(&self) -> &Arc<StateStore<GeoState>> {
        &self.store
    }

    pub fn dehydrator(&self) -> &SharedDehydrator<GeoEvent> {
        &self.dehydrator
    }

    /// The action log in its canonical order.
    pub fn actions(&self) -> Vec<ActionEvent> {
        let mut v = self.log.lock().clone();
        v.sort();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomatch::model::{CandidateLocation, Question};

    fn lines(p: &GeoPipeline) -> Vec<String> {
        p.actions().iter().map(ToString::to_string).collect()
    }

    fn run(p: &mut GeoPipeline, at: u64, ev: GeoEvent) {
        p.pipeline_mut().advance_to(at).unwrap();
        p.submit(ev).unwrap();
        p.run_until_idle();
    }

    fn question(id: &str, lon: f64, t: u64, max_age: u64) -> GeoEvent {
        GeoEvent::Question(Question::new(id, 0.0, lon, 1000.0, t, max_age))
    }

    fn candidate(id: &str, lon: f64, t: u64) -> GeoEvent {
        GeoEvent::Candidate(CandidateLocation::new(id, 0.0, lon, t))
    }

    #[test]
    fn reference_topology_builds() {
        let p = GeoPipeline::reference(GeoConfig::default(), Clock::simulated()).unwrap();
        let t = p.pipeline().topology();
        assert_eq!(t.feedback_edges().count(), 1);
        assert_eq!(t.name(t.entry()), "validate");
    }

    #[test]
    fn candidate_after_question_triggers_send() {
        let mut p = GeoPipeline::reference(GeoConfig::default(), Clock::simulated()).unwrap();
        run(&mut p, 0, question("q1", 0.0, 0, 900_000));
        run(&mut p, 0, candidate("c1", 0.005, 0));
        assert_eq!(lines(&p), ["Send q1 c1 0", "Dehydrate q1 - 0"]);
        let c = p.pipeline().report().conservation;
        assert!(c.holds(), "{c:?}");
        assert_eq!(c.dehydrated, 0);
        assert_eq!(p.index().read().question_count(), 0);
    }

    #[test]
    fn candidate_first_sends_immediately() {
        let mut p = GeoPipeline::reference(GeoConfig::default(), Clock::simulated()).unwrap();
        run(&mut p, 0, candidate("c1", 0.005, 0));
        run(&mut p, 10, question("q1", 0.0, 10, 900_000));
        assert_eq!(lines(&p), ["Send q1 c1 10"]);
    }

    #[test]
    fn unmatched_question_backs_off_then_retires() {
        let mut p = GeoPipeline::reference(GeoConfig::default(), Clock::simulated()).unwrap();
        run(&mut p, 0, question("q1", 0.0, 0, 5_000));
        p.pipeline_mut().advance_to(20_000).unwrap();
        // Wakes at 1000, 3000 (1000 + 2000); at 7000 it is over age.
        assert_eq!(
            lines(&p),
            ["Dehydrate q1 - 0", "Dehydrate q1 - 1000", "Dehydrate q1 - 3000", "Retire q1 - 7000"]
        );
        let c = p.pipeline().report().conservation;
        assert!(c.holds());
        assert_eq!(c.retired, 1);
    }

    #[test]
    fn answer_cancels_the_retry() {
        let mut p = GeoPipeline::reference(GeoConfig::default(), Clock::simulated()).unwrap();
        run(&mut p, 0, question("q1", 0.0, 0, 60_000));
        run(
            &mut p,
            500,
            GeoEvent::Answer {
                question_id: Arc::from("q1"),
                candidate_id: Arc::from("c9"),
            },
        );
        p.pipeline_mut().advance_to(100_000).unwrap();
        assert_eq!(lines(&p), ["Dehydrate q1 - 0"]);
        let c = p.pipeline().report().conservation;
        assert!(c.holds(), "{c:?}");
        assert_eq!(c.cancelled, 1);
        assert!(p.dehydrator().lock().is_empty());
    }

    #[test]
    fn invalid_events_are_dropped() {
        let mut p = GeoPipeline::reference(GeoConfig::default(), Clock::simulated()).unwrap();
        run(&mut p, 0, GeoEvent::Question(Question::new("q", 95.0, 0.0, 10.0, 0, 1)));
        run(&mut p, 0, GeoEvent::Candidate(CandidateLocation::new("c", 0.0, 200.0, 0)));
        assert!(p.actions().is_empty());
        let c = p.pipeline().report().conservation;
        assert_eq!((c.submitted, c.dropped), (2, 2));
    }

    #[test]
    fn near_edge_candidate_is_asked_and_rate_limited() {
        let cfg = GeoConfig {
            edge_band_m: Some(200.0),
            ..Default::default()
        };
        let mut p = GeoPipeline::reference(cfg, Clock::simulated()).unwrap();
        // about 1100 m out
        run(&mut p, 0, candidate("c1", 0.009_893, 0));
        run(&mut p, 0, question("q1", 0.0, 0, 20_000));
        p.pipeline_mut().advance_to(100_000).unwrap();
        let log = lines(&p);
        let requests = log.iter().filter(|l| l.starts_with("RequestLocationUpdate")).count();
        assert_eq!(requests, 3, "{log:?}");
        assert_eq!(log.last().unwrap(), "Retire q1 - 31000");
        assert!(p.pipeline().report().conservation.holds());
    }
}
