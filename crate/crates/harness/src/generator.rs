//! Seeded random scenarios.

use std::sync::Arc;

use fsd_core::geomatch::{CandidateLocation, Question};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::ScenarioEvent;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub candidates: usize,
    pub questions: usize,
    /// Location reports after the initial one, spread over the run.
    pub moves: usize,
    pub answers: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Side of the square, in degrees, that positions are drawn from.
    pub span_deg: f64,
    pub radius_min_m: f64,
    pub radius_max_m: f64,
    pub max_age_ms: u64,
    /// Events are spread over `[0, duration_ms]`.
    pub duration_ms: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            candidates: 1000,
            questions: 100,
            moves: 200,
            answers: 10,
            center_lat: 52.52,
            center_lon: 13.405,
            span_deg: 0.1,
            radius_min_m: 200.0,
            radius_max_m: 2000.0,
            max_age_ms: 120_000,
            duration_ms: 60_000,
        }
    }
}

pub fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        -180.0
    } else {
        w
    }
}

/// Draws positions and times around the configured center.
pub struct Sampler {
    rng: ChaCha8Rng,
    cfg: GenConfig,
}

impl Sampler {
    pub fn new(cfg: &GenConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg: cfg.clone(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn position(&mut self) -> (f64, f64) {
        let h = self.cfg.span_deg / 2.0;
        let lat = (self.cfg.center_lat + self.rng.gen_range(-h..=h)).clamp(-90.0, 90.0);
        let lon = wrap_lon(self.cfg.center_lon + self.rng.gen_range(-h..=h));
        (lat, lon)
    }

    pub fn radius(&mut self) -> f64 {
        let (lo, hi) = (self.cfg.radius_min_m, self.cfg.radius_max_m.max(self.cfg.radius_min_m));
        // Whole decimetres keep scenario files short.
        (self.rng.gen_range(lo..=hi) * 10.0).round().max(1.0) / 10.0
    }

    pub fn time(&mut self) -> u64 {
        self.rng.gen_range(0..=self.cfg.duration_ms)
    }

    pub fn candidate(&mut self, i: usize, t: u64) -> CandidateLocation {
        let (lat, lon) = self.position();
        CandidateLocation::new(&format!("c{i}"), lat, lon, t)
    }

    pub fn question(&mut self, i: usize, t: u64) -> Question {
        let (lat, lon) = self.position();
        let r = self.radius();
        Question::new(&format!("q{i}"), lat, lon, r, t, self.cfg.max_age_ms)
    }
}

/// Initial candidate reports at t=0, then questions, moves and answers at
/// random times, then a clock advance long enough for every question to
/// reach a terminal outcome.
pub fn generate(cfg: &GenConfig) -> Vec<ScenarioEvent> {
    let mut s = Sampler::new(cfg);
    let mut events: Vec<ScenarioEvent> = (0..cfg.candidates)
        .map(|i| ScenarioEvent::Candidate(s.candidate(i, 0)))
        .collect();
    let mut timed: Vec<(u64, ScenarioEvent)> = Vec::new();
    for i in 0..cfg.questions {
        let t = s.time();
        timed.push((t, ScenarioEvent::Question(s.question(i, t))));
    }
    if cfg.candidates > 0 {
        for _ in 0..cfg.moves {
            let t = s.time();
            let i = s.rng().gen_range(0..cfg.candidates);
            timed.push((t, ScenarioEvent::Candidate(s.candidate(i, t))));
        }
    }
    if cfg.questions > 0 && cfg.candidates > 0 {
        for _ in 0..cfg.answers {
            let t = s.time();
            let q = s.rng().gen_range(0..cfg.questions);
            let c = s.rng().gen_range(0..cfg.candidates);
            timed.push((
                t,
                ScenarioEvent::Answer {
                    question_id: Arc::from(format!("q{q}")),
                    candidate_id: Arc::from(format!("c{c}")),
                    t_ms: t,
                },
            ));
        }
    }
    timed.sort_by_key(|(t, _)| *t);
    let last = timed.last().map_or(0, |(t, _)| *t);
    events.extend(timed.into_iter().map(|(_, e)| e));
    if cfg.questions > 0 {
        let horizon = cfg.duration_ms + cfg.max_age_ms * 2 + 1;
        events.push(ScenarioEvent::Advance(horizon.saturating_sub(last)));
    }
    events
}
