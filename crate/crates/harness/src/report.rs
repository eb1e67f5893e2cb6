use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use fsd_core::geomatch::{ActionEvent, ActionKind};
use fsd_core::{Conservation, StageStats};
use serde_json::json;

/// Latency samples in milliseconds with power-of-two buckets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyHistogram {
    samples: Vec<u64>,
}

impl LatencyHistogram {
    pub fn record(&mut self, ms: u64) {
        self.samples.push(ms);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Nearest-rank percentile, `p` in (0, 100].
    pub fn percentile(&self, p: f64) -> Option<u64> {
        if self.samples.is_empty() {
            return None;
        }
        let mut s = self.samples.clone();
        s.sort_unstable();
        let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
        Some(s[rank.min(s.len()) - 1])
    }

    pub fn max(&self) -> Option<u64> {
        self.samples.iter().copied().max()
    }

    /// `(upper_bound_ms, count)` for buckets [0], [1], [2,3], [4,7], ...
    pub fn buckets(&self) -> Vec<(u64, u64)> {
        let mut counts: Vec<u64> = Vec::new();
        for &s in &self.samples {
            let b = (64 - s.leading_zeros()) as usize;
            if counts.len() <= b {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(b, n)| (if b == 0 { 0 } else { (1u64 << b) - 1 }, n))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub events: usize,
    pub stages: Vec<StageStats>,
    /// In canonical order.
    pub actions: Vec<ActionEvent>,
    /// Time from a question's arrival to its first decision.
    pub latency: LatencyHistogram,
    pub conservation: Conservation,
    pub dead_letters: usize,
    pub elapsed_s: Option<f64>,
}

impl RunReport {
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for a in &self.actions {
            let _ = writeln!(out, "{a}");
        }
        out
    }

    pub fn count(&self, kind: ActionKind) -> usize {
        self.actions.iter().filter(|a| a.kind == kind).count()
    }

    pub fn throughput_eps(&self) -> Option<f64> {
        self.elapsed_s.filter(|&s| s > 0.0).map(|s| self.events as f64 / s)
    }

    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = vec![Metric::new("events", self.events as f64, "count")];
        for k in [
            ActionKind::Send,
            ActionKind::RequestLocationUpdate,
            ActionKind::Dehydrate,
            ActionKind::Retire,
        ] {
            m.push(Metric::new(&format!("actions.{}", k.as_str()), self.count(k) as f64, "count"));
        }
        for s in &self.stages {
            m.push(Metric::new(&format!("stage.{}.processed", s.name), s.processed as f64, "count"));
        }
        let c = &self.conservation;
        for (name, v) in [
            ("submitted", c.submitted),
            ("derived", c.derived),
            ("emitted", c.emitted),
            ("dropped", c.dropped),
            ("dead_lettered", c.dead_lettered),
            ("retired", c.retired),
            ("cancelled", c.cancelled),
            ("dehydrated", c.dehydrated),
            ("in_flight", c.in_flight),
        ] {
            m.push(Metric::new(&format!("conservation.{name}"), v as f64, "count"));
        }
        m.push(Metric::new("conservation.holds", c.holds() as u8 as f64, "bool"));
        for (name, p) in [("p50", 50.0), ("p99", 99.0)] {
            if let Some(v) = self.latency.percentile(p) {
                m.push(Metric::new(&format!("latency.{name}"), v as f64, "ms"));
            }
        }
        if let Some(v) = self.latency.max() {
            m.push(Metric::new("latency.max", v as f64, "ms"));
        }
        if let Some(s) = self.elapsed_s {
            m.push(Metric::new("elapsed", s, "s"));
        }
        if let Some(t) = self.throughput_eps() {
            m.push(Metric::new("throughput", t, "events/s"));
        }
        m
    }
}

/// Latency of each question's first logged action.
pub fn decision_latency(actions: &[ActionEvent], created: &HashMap<&str, u64>) -> LatencyHistogram {
    let mut first: HashMap<&str, u64> = HashMap::new();
    for a in actions {
        let e = first.entry(&a.question_id).or_insert(a.at_ms);
        *e = (*e).min(a.at_ms);
    }
    let mut h = LatencyHistogram::default();
    let mut ids: Vec<_> = first.into_iter().collect();
    ids.sort();
    for (q, at) in ids {
        if let Some(&c) = created.get(q) {
            h.record(at.saturating_sub(c));
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

impl Metric {
    pub fn new(name: &str, value: f64, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            value,
            unit: unit.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricsFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for MetricsFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(MetricsFormat::Csv),
            "jsonl" => Ok(MetricsFormat::Jsonl),
            _ => Err(format!("unknown metrics format `{s}` (csv or jsonl)")),
        }
    }
}

pub fn render_metrics(metrics: &[Metric], format: MetricsFormat) -> String {
    let mut out = String::new();
    match format {
        MetricsFormat::Csv => {
            out.push_str("name,value,unit\n");
            for m in metrics {
                let _ = writeln!(out, "{},{},{}", m.name, m.value, m.unit);
            }
        }
        MetricsFormat::Jsonl => {
            for m in metrics {
                let _ = writeln!(out, "{}", json!({"name": m.name, "value": m.value, "unit": m.unit}));
            }
        }
    }
    out
}
