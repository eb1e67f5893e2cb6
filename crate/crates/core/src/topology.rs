//! Stage graph description and validation.
//!
//! Cycles are only legal when they pass through a dehydrator: edges leaving a
//! dehydrator are released by its clock, never synchronously, so removing them
//! must leave an acyclic graph.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::TopologyError;

/// Route used by filters for everything they let through.
pub const PASS: &str = "pass";
/// Route a dehydrator uses to re-introduce due elements.
pub const REHYDRATE: &str = "rehydrate";
/// Route a dehydrator uses for elements it retires.
pub const RETIRE: &str = "retire";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Filter,
    Splitter,
    Dehydrator,
    Sink,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Filter => "filter",
            StageKind::Splitter => "splitter",
            StageKind::Dehydrator => "dehydrator",
            StageKind::Sink => "sink",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "filter" => Ok(StageKind::Filter),
            "splitter" => Ok(StageKind::Splitter),
            "dehydrator" => Ok(StageKind::Dehydrator),
            "sink" => Ok(StageKind::Sink),
            other => Err(format!("unknown stage kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub route: String,
    pub feedback: bool,
}

/// Unvalidated description of a topology.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopologySpec {
    pub stages: Vec<StageSpec>,
    pub edges: Vec<EdgeSpec>,
    /// Defaults to the first declared stage.
    pub entry: Option<String>,
}

impl TopologySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(mut self, name: &str, kind: StageKind) -> Self {
        self.stages.push(StageSpec {
            name: name.to_string(),
            kind,
        });
        self
    }

    pub fn edge(mut self, from: &str, to: &str, route: &str) -> Self {
        self.edges.push(EdgeSpec {
            from: from.to_string(),
            to: to.to_string(),
            route: route.to_string(),
            feedback: false,
        });
        self
    }

    /// A dehydrator re-entry edge on the [`REHYDRATE`] route.
    pub fn feedback(mut self, from: &str, to: &str) -> Self {
        self.edges.push(EdgeSpec {
            from: from.to_string(),
            to: to.to_string(),
            route: REHYDRATE.to_string(),
            feedback: true,
        });
        self
    }

    pub fn entry(mut self, name: &str) -> Self {
        self.entry = Some(name.to_string());
        self
    }

    /// Parses the line grammar
    ///
    /// ```text
    /// stage <name> <filter|splitter|dehydrator|sink>
    /// edge <from> <to> <route> [feedback]
    /// entry <name>
    /// ```
    ///
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut spec = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            spec.apply_line(line)
                .map_err(|message| TopologyError::Parse { line: i + 1, message })?;
        }
        Ok(spec)
    }

    /// Applies one directive of the line grammar accepted by [`TopologySpec::parse`].
    pub fn apply_line(&mut self, line: &str) -> Result<(), String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["stage", name, kind] => {
                let kind = kind.parse()?;
                self.stages.push(StageSpec {
                    name: name.to_string(),
                    kind,
                });
            }
            ["edge", from, to, route] => self.edges.push(EdgeSpec {
                from: from.to_string(),
                to: to.to_string(),
                route: route.to_string(),
                feedback: false,
            }),
            ["edge", from, to, route, "feedback"] => self.edges.push(EdgeSpec {
                from: from.to_string(),
                to: to.to_string(),
                route: route.to_string(),
                feedback: true,
            }),
            ["entry", name] => self.entry = Some(name.to_string()),
            _ => return Err(format!("unrecognised topology directive `{line}`")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub route: String,
    pub feedback: bool,
}

/// A validated stage graph. Stages are addressed by their declaration index.
#[derive(Debug, Clone)]
pub struct Topology {
    stages: Vec<StageSpec>,
    edges: Vec<Edge>,
    entry: usize,
    order: Vec<usize>,
    routes: Vec<HashMap<String, usize>>,
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    if spec.stages.is_empty() {
        return Err(TopologyError::Empty);
    }
    let mut index = HashMap::with_capacity(spec.stages.len());
    for (i, s) in spec.stages.iter().enumerate() {
        if index.insert(s.name.as_str(), i).is_some() {
            return Err(TopologyError::DuplicateStageName(s.name.clone()));
        }
    }

    let mut edges = Vec::with_capacity(spec.edges.len());
    let mut routes: Vec<HashMap<String, usize>> = vec![HashMap::new(); spec.stages.len()];
    for e in &spec.edges {
        let lookup = |name: &str| {
            index.get(name).copied().ok_or_else(|| TopologyError::DanglingEdge {
                from: e.from.clone(),
                to: e.to.clone(),
                missing: name.to_string(),
            })
        };
        let from = lookup(&e.from)?;
        let to = lookup(&e.to)?;
        if e.feedback && spec.stages[from].kind != StageKind::Dehydrator {
            return Err(TopologyError::FeedbackNotFromDehydrator {
                from: e.from.clone(),
                to: e.to.clone(),
            });
        }
        if routes[from].insert(e.route.clone(), to).is_some() {
            return Err(TopologyError::DuplicateRoute {
                stage: e.from.clone(),
                route: e.route.clone(),
            });
        }
        edges.push(Edge {
            from,
            to,
            route: e.route.clone(),
            feedback: e.feedback,
        });
    }

    let order = synchronous_order(&spec.stages, &edges)?;

    let entry = match &spec.entry {
        Some(name) => *index
            .get(name.as_str())
            .ok_or_else(|| TopologyError::UnknownEntry(name.clone()))?,
        None => 0,
    };

    Ok(Topology {
        stages: spec.stages.clone(),
        edges,
        entry,
        order,
        routes,
    })
}

/// Kahn's algorithm over the edges that do not leave a dehydrator. Ties are
/// broken by declaration order so the schedule is reproducible.
fn synchronous_order(stages: &[StageSpec], edges: &[Edge]) -> Result<Vec<usize>, TopologyError> {
    let n = stages.len();
    let mut indegree = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for e in edges {
        if stages[e.from].kind == StageKind::Dehydrator {
            continue;
        }
        indegree[e.to] += 1;
        succ[e.from].push(e.to);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(TopologyError::IllegalCycle(stages[stuck].name.clone()));
    }
    Ok(order)
}

impl Topology {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn feedback_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.feedback)
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    pub fn name(&self, stage: usize) -> &str {
        &self.stages[stage].name
    }

    pub fn kind(&self, stage: usize) -> StageKind {
        self.stages[stage].kind
    }

    /// Stage reached from `stage` on `route`, if such an edge exists.
    pub fn target(&self, stage: usize, route: &str) -> Option<usize> {
        self.routes[stage].get(route).copied()
    }

    /// Stage indices in the order the simulated scheduler drains them.
    pub fn schedule(&self) -> &[usize] {
        &self.order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo_shape() -> TopologySpec {
        TopologySpec::new()
            .stage("matcher", StageKind::Filter)
            .stage("logic", StageKind::Splitter)
            .stage("dehydrator", StageKind::Dehydrator)
            .edge("matcher", "logic", PASS)
            .edge("logic", "dehydrator", "dehydrate")
            .feedback("dehydrator", "matcher")
    }

    #[test]
    fn feedback_loop_through_dehydrator_is_valid() {
        let t = build_topology(&geo_shape()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.feedback_edges().count(), 1);
        assert_eq!(t.schedule(), &[0, 1, 2]);
        assert_eq!(t.target(2, REHYDRATE), Some(0));
        assert_eq!(t.entry(), 0);
    }

    #[test]
    fn single_stage_is_valid() {
        let t = build_topology(&TopologySpec::new().stage("only", StageKind::Filter)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.edges().is_empty());
    }

    #[test]
    fn cycle_without_dehydrator_is_rejected() {
        let spec = TopologySpec::new()
            .stage("logic", StageKind::Splitter)
            .stage("matcher", StageKind::Filter)
            .edge("logic", "matcher", "x")
            .edge("matcher", "logic", PASS);
        assert!(matches!(build_topology(&spec), Err(TopologyError::IllegalCycle(_))));
    }

    #[test]
    fn duplicate_names_and_dangling_edges() {
        let dup = TopologySpec::new()
            .stage("a", StageKind::Filter)
            .stage("a", StageKind::Sink);
        assert_eq!(
            build_topology(&dup).unwrap_err(),
            TopologyError::DuplicateStageName("a".into())
        );
        let dangling = TopologySpec::new()
            .stage("a", StageKind::Filter)
            .edge("a", "b", PASS);
        assert!(matches!(
            build_topology(&dangling),
            Err(TopologyError::DanglingEdge { missing, .. }) if missing == "b"
        ));
    }

    #[test]
    fn route_keys_are_unique_per_stage() {
        let spec = TopologySpec::new()
            .stage("s", StageKind::Splitter)
            .stage("a", StageKind::Sink)
            .stage("b", StageKind::Sink)
            .edge("s", "a", "x")
            .edge("s", "b", "x");
        assert!(matches!(build_topology(&spec), Err(TopologyError::DuplicateRoute { .. })));
    }

    #[test]
    fn feedback_must_leave_a_dehydrator() {
        let spec = TopologySpec::new()
            .stage("a", StageKind::Filter)
            .stage("b", StageKind::Filter)
            .feedback("a", "b");
        assert!(matches!(
            build_topology(&spec),
            Err(TopologyError::FeedbackNotFromDehydrator { .. })
        ));
    }

    #[test]
    fn parses_line_grammar() {
        let text = "# geo\nstage matcher filter\nstage logic splitter\nstage dehydrator dehydrator\n\
                    edge matcher logic pass\nedge logic dehydrator dehydrate\n\
                    edge dehydrator matcher rehydrate feedback\nentry matcher\n";
        let spec = TopologySpec::parse(text).unwrap();
        assert_eq!(spec, geo_shape().entry("matcher"));
        let err = TopologySpec::parse("stage x blender\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 1, .. }));
    }

    #[test]
    fn schedule_respects_edges_not_declaration() {
        let spec = TopologySpec::new()
            .stage("sink", StageKind::Sink)
            .stage("src", StageKind::Filter)
            .edge("src", "sink", PASS)
            .entry("src");
        let t = build_topology(&spec).unwrap();
        assert_eq!(t.schedule(), &[1, 0]);
        assert_eq!(t.entry(), 1);
    }
}
