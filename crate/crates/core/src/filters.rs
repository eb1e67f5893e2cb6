//! Filters reduce the flow. A stateless filter looks only at the element in
//! hand; an aggregation filter also keeps a bounded summary of what it has
//! seen and answers with a soft, scored decision.
//!
//! Filters never modify payloads. A soft decision carrying a candidate set lets
//! the input through only while the input is itself a member of that set.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::envelope::{ElementId, Envelope};
use crate::error::{FilterError, StageError};
use crate::pipeline::StageContext;

/// A filter stage.
pub trait Filter<P>: Send {
    fn decide(&mut self, e: &Envelope<P>, ctx: &StageContext) -> Result<FilterDecision<P>, StageError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterDecision<P> {
    Pass,
    Drop,
    Soft(SoftDecision<P>),
}

/// Scored outcome. The margin is carried for the application and never
/// interpreted here.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDecision<P> {
    pub score: Option<f64>,
    pub margin_of_error: Option<f64>,
    /// Best elements so far, descending score then ascending element id.
    pub candidate_set: Option<Vec<Envelope<P>>>,
}

impl<P> SoftDecision<P> {
    pub fn scored(score: f64, margin_of_error: f64) -> Self {
        Self {
            score: Some(score),
            margin_of_error: Some(margin_of_error.abs()),
            candidate_set: None,
        }
    }

    /// Whether the element should continue downstream.
    pub fn admits(&self, id: &ElementId) -> bool {
        match &self.candidate_set {
            Some(set) => set.iter().any(|c| c.element_id() == id),
            None => true,
        }
    }

    pub fn candidate_ids(&self) -> Vec<&ElementId> {
        self.candidate_set
            .iter()
            .flatten()
            .map(Envelope::element_id)
            .collect()
    }
}

impl<P> FilterDecision<P> {
    pub fn is_pass(&self) -> bool {
        matches!(self, FilterDecision::Pass)
    }
}

/// Applies `predicate` to `e` alone.
pub fn stateless_filter<P, F>(predicate: F, e: &Envelope<P>) -> Result<FilterDecision<P>, StageError>
where
    F: Fn(&Envelope<P>) -> Result<bool, String>,
{
    match predicate(e) {
        Ok(true) => Ok(FilterDecision::Pass),
        Ok(false) => Ok(FilterDecision::Drop),
        Err(msg) => Err(StageError::PredicateFailure(msg)),
    }
}

/// Pass/drop filter around a fallible predicate.
pub struct StatelessFilter<F> {
    predicate: F,
}

impl<F> StatelessFilter<F> {
    pub fn new(predicate: F) -> Self {
        Self { predicate }
    }
}

impl<P, F> Filter<P> for StatelessFilter<F>
where
    F: Fn(&Envelope<P>) -> Result<bool, String> + Send,
{
    fn decide(&mut self, e: &Envelope<P>, _ctx: &StageContext) -> Result<FilterDecision<P>, StageError> {
        stateless_filter(&self.predicate, e)
    }
}

pub type ScoreFn<P> = Arc<dyn Fn(&Envelope<P>) -> Result<f64, String> + Send + Sync>;

#[derive(Clone)]
pub struct AggregationFilterConfig<P> {
    pub x: usize,
    pub score_fn: ScoreFn<P>,
    pub tier_index: usize,
}

impl<P> AggregationFilterConfig<P> {
    pub fn new<F>(x: usize, score_fn: F) -> Self
    where
        F: Fn(&Envelope<P>) -> Result<f64, String> + Send + Sync + 'static,
    {
        Self {
            x,
            score_fn: Arc::new(score_fn),
            tier_index: 0,
        }
    }

    pub fn tier(mut self, tier_index: usize) -> Self {
        self.tier_index = tier_index;
        self
    }
}

impl<P> fmt::Debug for AggregationFilterConfig<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AggregationFilterConfig")
            .field("x", &self.x)
            .field("tier_index", &self.tier_index)
            .finish_non_exhaustive()
    }
}

/// Total order on scores; `-0.0` is folded into `0.0`.
#[derive(Debug, Clone, Copy)]
struct Score(f64);

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Ascending order of this key is descending score, then ascending id.
type RankKey = (Reverse<Score>, ElementId);

/// Exact bounded top-X over everything seen. Holds at most `x` entries plus a
/// running count.
pub struct AggregationFilter<P> {
    cfg: AggregationFilterConfig<P>,
    top: BTreeMap<RankKey, Envelope<P>>,
    scores: HashMap<ElementId, Score>,
    seen: u64,
}

impl<P: Clone> AggregationFilter<P> {
    pub fn new(cfg: AggregationFilterConfig<P>) -> Result<Self, FilterError> {
        if cfg.x == 0 {
            return Err(FilterError::ZeroWidth);
        }
        Ok(Self {
            top: BTreeMap::new(),
            scores: HashMap::with_capacity(cfg.x + 1),
            seen: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &AggregationFilterConfig<P> {
        &self.cfg
    }

    /// Number of elements folded into the state so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Folds `e` into the state and returns the current top-X.
    pub fn step(&mut self, e: &Envelope<P>) -> Result<FilterDecision<P>, StageError> {
        let score = self.absorb(e)?;
        Ok(FilterDecision::Soft(SoftDecision {
            score: Some(score),
            margin_of_error: None,
            candidate_set: Some(self.candidates()),
        }))
    }

    pub fn candidates(&self) -> Vec<Envelope<P>> {
        self.top.values().cloned().collect()
    }

    pub fn reset(&mut self) {
        self.top.clear();
        self.scores.clear();
        self.seen = 0;
    }

    fn absorb(&mut self, e: &Envelope<P>) -> Result<f64, StageError> {
        let raw = (self.cfg.score_fn)(e).map_err(StageError::ScoreFailure)?;
        if raw.is_nan() {
            return Err(StageError::ScoreFailure(format!(
                "score for {} is NaN",
                e.element_id()
            )));
        }
        let score = Score(if raw == 0.0 { 0.0 } else { raw });
        self.seen += 1;

        let id = e.element_id().clone();
        if let Some(old) = self.scores.remove(&id) {
            self.top.remove(&(Reverse(old), id.clone()));
        }
        let key = (Reverse(score), id.clone());
        let admit = self.top.len() < self.cfg.x
            || self.top.last_key_value().is_some_and(|(worst, _)| key < *worst);
        if admit {
            self.top.insert(key, e.clone());
            self.scores.insert(id, score);
            if self.top.len() > self.cfg.x {
                if let Some(((_, evicted), _)) = self.top.pop_last() {
                    self.scores.remove(&evicted);
                }
            }
        }
        Ok(score.0)
    }
}

impl<P: Clone + Send> Filter<P> for AggregationFilter<P> {
    fn decide(&mut self, e: &Envelope<P>, _ctx: &StageContext) -> Result<FilterDecision<P>, StageError> {
        self.step(e)
    }
}

/// Chain of aggregation filters. Each tier keeps private state and consumes
/// the previous tier's current candidate set; the output is the last tier's
/// soft decision.
pub struct TieredFilter<P> {
    tiers: Vec<AggregationFilter<P>>,
}

pub fn compose_tiers<P: Clone>(tiers: Vec<AggregationFilter<P>>) -> Result<TieredFilter<P>, FilterError> {
    if tiers.is_empty() {
        return Err(FilterError::EmptyTierList);
    }
    Ok(TieredFilter { tiers })
}

impl<P: Clone> TieredFilter<P> {
    pub fn tiers(&self) -> &[AggregationFilter<P>] {
        &self.tiers
    }

    pub fn step(&mut self, e: &Envelope<P>) -> Result<FilterDecision<P>, StageError> {
        let (first, rest) = self.tiers.split_first_mut().expect("at least one tier");
        let score = first.absorb(e)?;
        let mut upstream = first.candidates();
        for tier in rest {
            tier.reset();
            for c in &upstream {
                tier.absorb(c)?;
            }
            upstream = tier.candidates();
        }
        Ok(FilterDecision::Soft(SoftDecision {
            score: Some(score),
            margin_of_error: None,
            candidate_set: Some(upstream),
        }))
    }
}

impl<P: Clone + Send> Filter<P> for TieredFilter<P> {
    fn decide(&mut self, e: &Envelope<P>, _ctx: &StageContext) -> Result<FilterDecision<P>, StageError> {
        self.step(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(id: &str, score: f64) -> Envelope<f64> {
        Envelope::new(id, score, 0, 0)
    }

    fn by_payload(x: usize) -> AggregationFilter<f64> {
        AggregationFilter::new(AggregationFilterConfig::new(x, |e: &Envelope<f64>| Ok(*e.payload()))).unwrap()
    }

    fn scores(d: &FilterDecision<f64>) -> Vec<f64> {
        match d {
            FilterDecision::Soft(s) => s.candidate_set.iter().flatten().map(|e| *e.payload()).collect(),
            other => panic!("expected soft decision, got {other:?}"),
        }
    }

    fn ids(d: &FilterDecision<f64>) -> Vec<String> {
        match d {
            FilterDecision::Soft(s) => s.candidate_ids().into_iter().map(|i| i.to_string()).collect(),
            other => panic!("expected soft decision, got {other:?}"),
        }
    }

    #[test]
    fn stateless_radius_predicate() {
        let positive = |e: &Envelope<f64>| Ok(*e.payload() > 0.0);
        assert!(stateless_filter(positive, &env("q", 500.0)).unwrap().is_pass());
        assert_eq!(stateless_filter(positive, &env("q", 0.0)).unwrap(), FilterDecision::Drop);
    }

    #[test]
    fn stateless_predicate_error_is_reported() {
        let boom = |_: &Envelope<f64>| Err::<bool, _>("bad".to_string());
        assert_eq!(
            stateless_filter(boom, &env("q", 1.0)),
            Err(StageError::PredicateFailure("bad".into()))
        );
    }

    #[test]
    fn top_two_of_stream() {
        let mut f = by_payload(2);
        let mut last = None;
        for (i, s) in [5.0, 3.0, 9.0, 1.0].into_iter().enumerate() {
            last = Some(f.step(&env(&format!("e{i}"), s)).unwrap());
        }
        assert_eq!(scores(&last.unwrap()), [9.0, 5.0]);
        assert_eq!(f.seen(), 4);
    }

    #[test]
    fn top_one_single_element() {
        let mut f = by_payload(1);
        assert_eq!(scores(&f.step(&env("a", 7.0)).unwrap()), [7.0]);
    }

    #[test]
    fn equal_scores_keep_lowest_ids() {
        let mut f = by_payload(3);
        let mut last = None;
        for id in ["e5", "e2", "e9", "e1", "e7", "e3"] {
            last = Some(f.step(&env(id, 4.0)).unwrap());
        }
        assert_eq!(ids(&last.unwrap()), ["e1", "e2", "e3"]);
    }

    #[test]
    fn zero_width_and_nan_are_rejected() {
        assert!(matches!(
            AggregationFilter::new(AggregationFilterConfig::new(0, |_: &Envelope<f64>| Ok(0.0))),
            Err(FilterError::ZeroWidth)
        ));
        let mut f = by_payload(2);
        assert!(matches!(f.step(&env("n", f64::NAN)), Err(StageError::ScoreFailure(_))));
        assert_eq!(f.seen(), 0);
    }

    #[test]
    fn resubmitted_id_replaces_its_entry() {
        let mut f = by_payload(2);
        f.step(&env("a", 1.0)).unwrap();
        f.step(&env("b", 2.0)).unwrap();
        let d = f.step(&env("a", 3.0)).unwrap();
        assert_eq!(ids(&d), ["a", "b"]);
        assert_eq!(scores(&d), [3.0, 2.0]);
    }

    #[test]
    fn two_tiers_match_global_top() {
        let mut t = compose_tiers(vec![by_payload(4), by_payload(2)]).unwrap();
        let mut last = None;
        for (i, s) in [8.0, 1.0, 6.0, 3.0, 9.0, 2.0].into_iter().enumerate() {
            last = Some(t.step(&env(&format!("e{i}"), s)).unwrap());
        }
        assert_eq!(scores(&last.unwrap()), [9.0, 8.0]);
    }

    #[test]
    fn single_tier_is_identity() {
        let mut t = compose_tiers(vec![by_payload(3)]).unwrap();
        let mut f = by_payload(3);
        for (i, s) in [2.0, 7.0, 7.0, 1.0, 5.0].into_iter().enumerate() {
            let e = env(&format!("e{i}"), s);
            assert_eq!(t.step(&e).unwrap(), f.step(&e).unwrap());
        }
    }

    #[test]
    fn narrow_first_tier_bottlenecks() {
        let mut t = compose_tiers(vec![by_payload(1), by_payload(5)]).unwrap();
        for (i, s) in [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0].into_iter().enumerate() {
            let d = t.step(&env(&format!("e{i}"), s)).unwrap();
            assert_eq!(scores(&d).len(), 1);
        }
    }

    #[test]
    fn empty_tier_list() {
        assert!(matches!(compose_tiers::<f64>(vec![]), Err(FilterError::EmptyTierList)));
    }

    #[test]
    fn soft_admission() {
        let d = SoftDecision {
            score: Some(1.0),
            margin_of_error: None,
            candidate_set: Some(vec![env("a", 1.0)]),
        };
        assert!(d.admits(&"a".into()));
        assert!(!d.admits(&"b".into()));
        assert!(SoftDecision::<f64>::scored(0.5, -0.1).admits(&"z".into()));
    }
}
