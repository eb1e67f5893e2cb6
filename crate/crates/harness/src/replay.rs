//! Deterministic replay of a scenario through the reference pipeline.

use std::collections::HashMap;

use fsd_core::geomatch::{GeoIndex, GeoPipeline, RTreeGeoIndex, REFERENCE_TOPOLOGY};
use fsd_core::{Clock, ClockError, SubmitError, TopologyError, TopologySpec};
use thiserror::Error;

use crate::config::Config;
use crate::report::{decision_latency, RunReport};
use crate::scenario::ScenarioEvent;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("clock: {0}")]
    Clock(#[from] ClockError),
    #[error("submit: {0}")]
    Submit(#[from] SubmitError),
}

pub fn build_pipeline(cfg: &Config, clock: Clock, index: Box<dyn GeoIndex>) -> Result<GeoPipeline, TopologyError> {
    let spec = match &cfg.topology {
        Some(t) => t.clone(),
        None => TopologySpec::parse(REFERENCE_TOPOLOGY)?,
    };
    GeoPipeline::build(cfg.geo.clone(), clock, &spec, index)
}

/// Replays with the R-tree index.
pub fn replay(events: &[ScenarioEvent], cfg: &Config) -> Result<RunReport, ReplayError> {
    let index = Box::new(RTreeGeoIndex::new(cfg.geo.rtree_inflation));
    replay_with_index(events, cfg, index)
}

/// Each timestamped event moves the simulated clock to its time (releasing
/// everything due on the way), is submitted, and runs to quiescence. `T`
/// only moves the clock.
pub fn replay_with_index(
    events: &[ScenarioEvent],
    cfg: &Config,
    index: Box<dyn GeoIndex>,
) -> Result<RunReport, ReplayError> {
    let mut p = build_pipeline(cfg, Clock::simulated(), index)?;
    for ev in events {
        match ev {
            ScenarioEvent::Advance(d) => {
                let target = p.pipeline().now_ms().saturating_add(*d);
                p.pipeline_mut().advance_to(target)?;
            }
            _ => {
                let t = ev.time_ms().expect("timestamped event");
                p.pipeline_mut().advance_to(t)?;
                p.submit(ev.to_geo_event().expect("payload event"))?;
                p.run_until_idle();
            }
        }
    }
    let created: HashMap<&str, u64> = events
        .iter()
        .filter_map(|e| match e {
            ScenarioEvent::Question(q) => Some((&*q.question_id, q.created_ms)),
            _ => None,
        })
        .collect();
    let actions = p.actions();
    let exec = p.pipeline().report();
    Ok(RunReport {
        events: events.len(),
        latency: decision_latency(&actions, &created),
        actions,
        stages: exec.stages,
        conservation: exec.conservation,
        dead_letters: p.pipeline().dead_letters().len(),
        elapsed_s: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    fn run(text: &str, cfg: &Config) -> RunReport {
        replay(&parse_scenario(text).unwrap(), cfg).unwrap()
    }

    #[test]
    fn empty_scenario_empty_log() {
        let r = run("", &Config::default());
        assert!(r.actions.is_empty());
        assert_eq!(r.conservation, Default::default());
        assert!(r.stages.iter().all(|s| s.processed == 0));
    }

    #[test]
    fn question_then_candidate_sends() {
        let r = run("Q q1 0.0 0.0 1000 0 900000\nC c1 0.0 0.005 0\n", &Config::default());
        assert!(r.log_text().contains("Send q1 c1 0\n"));
        assert!(r.conservation.holds());
    }

    #[test]
    fn custom_topology_from_config() {
        // Without an answers stage an answer exits the router unrouted.
        let mut cfg = Config::parse(REFERENCE_TOPOLOGY).unwrap();
        let spec = cfg.topology.as_mut().unwrap();
        spec.stages.retain(|s| s.name != "answers");
        spec.edges.retain(|e| e.to != "answers");
        let r = run("Q q1 0 0 1000 0 5000\nA q1 c1 10\nT 100000", &cfg);
        assert!(r.log_text().contains("Retire q1 - "));
        assert_eq!(r.dead_letters, 1);
        assert!(r.conservation.holds());
    }
}
