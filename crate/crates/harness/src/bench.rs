//! Wall-clock benchmarks.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use fsd_core::geomatch::{business_decide, geo_envelope, GeoEvent, GeoIndex, GeoState, RTreeGeoIndex};
use fsd_core::{Clock, ConcurrentOptions, StateStore, TopologyError};
use rand::Rng;

use crate::config::Config;
use crate::generator::Sampler;
use crate::replay::build_pipeline;
use crate::report::{decision_latency, Metric, RunReport};

/// Runs the pipeline on its concurrent scheduler against the wall clock.
///
/// All candidates report first. Then passes of `questions` questions mixed
/// with `moves` location updates are fed as fast as the pipeline accepts
/// them, until `seconds` have elapsed (at least one pass always runs).
pub fn bench(cfg: &Config, seconds: f64) -> Result<RunReport, TopologyError> {
    let gen = cfg.generator.clone();
    let mut p = build_pipeline(cfg, Clock::wall(), Box::new(RTreeGeoIndex::new(cfg.geo.rtree_inflation)))?;
    let clock = p.pipeline().clock().clone();
    let created: Arc<Mutex<HashMap<String, u64>>> = Arc::default();
    let mut sampler = Sampler::new(&gen);
    let per_pass = gen.questions + gen.moves;
    let budget = Duration::from_secs_f64(seconds.max(0.0));
    let start = Instant::now();
    let mut seq = 0u64;
    let mut pass = 0usize;
    let mut i = 0usize;

    let created_in = Arc::clone(&created);
    let initial: Vec<_> = (0..gen.candidates).map(|c| sampler.candidate(c, 0)).collect();
    let mut initial = initial.into_iter();
    let input = std::iter::from_fn(|| {
        let now = clock.now_ms();
        seq += 1;
        if let Some(mut c) = initial.next() {
            c.reported_ms = now;
            return Some(geo_envelope(GeoEvent::Candidate(c), seq, now));
        }
        if per_pass == 0 {
            return None;
        }
        if i == per_pass {
            if start.elapsed() >= budget {
                return None;
            }
            i = 0;
            pass += 1;
        }
        i += 1;
        // Questions spread evenly through the pass.
        let ev = if gen.candidates == 0 || sampler.rng().gen_range(0..per_pass) < gen.questions {
            let mut q = sampler.question(0, now);
            q.question_id = Arc::from(format!("q{seq}.{pass}"));
            created_in.lock().expect("poisoned").insert(q.question_id.to_string(), now);
            GeoEvent::Question(q)
        } else {
            let k = sampler.rng().gen_range(0..gen.candidates);
            GeoEvent::Candidate(sampler.candidate(k, now))
        };
        Some(geo_envelope(ev, seq, now))
    });
    let exec = p.pipeline_mut().run_concurrent(input, ConcurrentOptions::default());
    let elapsed = start.elapsed().as_secs_f64();
    let events = exec.conservation.submitted as usize;
    let actions = p.actions();
    let created = created.lock().expect("poisoned");
    let created_ref: HashMap<&str, u64> = created.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    Ok(RunReport {
        events,
        latency: decision_latency(&actions, &created_ref),
        actions,
        stages: exec.stages,
        conservation: exec.conservation,
        dead_letters: p.pipeline().dead_letters().len(),
        elapsed_s: Some(elapsed),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchDecideReport {
    pub candidates: usize,
    pub ops: usize,
    pub elapsed_s: f64,
    pub sends: usize,
    /// Candidates returned inside or near the edge, summed over all ops.
    pub hits: usize,
}

impl MatchDecideReport {
    pub fn ops_per_s(&self) -> f64 {
        if self.elapsed_s > 0.0 {
            self.ops as f64 / self.elapsed_s
        } else {
            f64::INFINITY
        }
    }

    pub fn hits_per_op(&self) -> f64 {
        self.hits as f64 / self.ops.max(1) as f64
    }

    pub fn metrics(&self) -> Vec<Metric> {
        vec![
            Metric::new("match_decide.candidates", self.candidates as f64, "count"),
            Metric::new("match_decide.ops", self.ops as f64, "count"),
            Metric::new("match_decide.elapsed", self.elapsed_s, "s"),
            Metric::new("match_decide.throughput", self.ops_per_s(), "ops/s"),
            Metric::new("match_decide.hits_per_op", self.hits_per_op(), "count"),
        ]
    }
}

/// One thread, no pipeline: match a fresh question against the index and
/// run the decision in a store transaction, `ops` times.
pub fn bench_match_decide(cfg: &Config, candidates: usize, ops: usize) -> MatchDecideReport {
    let mut sampler = Sampler::new(&cfg.generator);
    let index = RTreeGeoIndex::with_candidates(
        cfg.geo.rtree_inflation,
        (0..candidates).map(|i| sampler.candidate(i, 0)).collect::<Vec<_>>(),
    );
    let questions: Vec<_> = (0..ops).map(|i| sampler.question(i, 0)).collect();
    let store: StateStore<GeoState> = StateStore::new("bench");
    let mut sends = 0;
    let mut hits = 0;
    let start = Instant::now();
    for q in &questions {
        let m = index.match_question(q, cfg.geo.edge_band_for(q));
        hits += m.inside.len() + m.near_edge.len();
        let mut txn = store.txn();
        let d = business_decide(&m, &mut txn, &cfg.geo, q, 0);
        sends += (d.verdict == fsd_core::geomatch::Verdict::Send) as usize;
        txn.commit().expect("single writer");
    }
    MatchDecideReport {
        candidates,
        ops,
        elapsed_s: start.elapsed().as_secs_f64(),
        sends,
        hits,
    }
}
