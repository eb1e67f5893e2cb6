//! Executes a [`Topology`] whose stages have been bound to implementations.
//!
//! Two schedulers share the same per-envelope step:
//!
//! - [`Pipeline::run_until_idle`] is single threaded. Stages drain in
//!   topological order; then every dehydrator is polled at the current clock
//!   time and whatever it releases is queued for the next pass. The loop ends
//!   when no queue holds work and nothing is due.
//! - [`Pipeline::run_concurrent`] gives every stage its own thread and a
//!   bounded input queue (dehydrators get an unbounded one since they are a
//!   store anyway) and runs against the wall clock.
//!
//! Every envelope is accounted for: see [`Conservation`].

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Mutex, RwLock};

use crate::clock::{Clock, ClockMode};
use crate::dehydrator::{DehydrateOutcome, DehydrationPolicy, PollResult, SharedDehydrator};
use crate::envelope::Envelope;
use crate::error::{ClockError, DehydrateError, StageError, SubmitError, TopologyError};
use crate::filters::{Filter, FilterDecision};
use crate::splitters::Splitter;
use crate::topology::{StageKind, Topology, PASS, REHYDRATE, RETIRE};

/// What a stage knows about the moment it runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageContext {
    pub now_ms: u64,
}

/// Terminal stage.
pub trait Sink<P>: Send {
    fn accept(&mut self, e: Envelope<P>, ctx: &StageContext);
}

/// Whether arrivals at a sink count as output or as retirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkRole {
    Output,
    Retire,
}

pub type OverrideFn<P> = Box<dyn Fn(&Envelope<P>) -> Option<DehydrationPolicy> + Send>;

pub struct DehydratorStage<P> {
    store: SharedDehydrator<P>,
    policy_override: Option<OverrideFn<P>>,
}

impl<P> DehydratorStage<P> {
    pub fn new(store: SharedDehydrator<P>) -> Self {
        Self {
            store,
            policy_override: None,
        }
    }

    /// Per-element policy replacing the store default, e.g. a lifetime carried
    /// in the payload.
    pub fn with_override<F>(mut self, f: F) -> Self
    where
        F: Fn(&Envelope<P>) -> Option<DehydrationPolicy> + Send + 'static,
    {
        self.policy_override = Some(Box::new(f));
        self
    }

    pub fn store(&self) -> &SharedDehydrator<P> {
        &self.store
    }
}

pub enum Stage<P> {
    Filter(Box<dyn Filter<P>>),
    Splitter(Box<dyn Splitter<P>>),
    Dehydrator(DehydratorStage<P>),
    Sink(Box<dyn Sink<P>>, SinkRole),
}

impl<P> Stage<P> {
    pub fn filter(f: impl Filter<P> + 'static) -> Self {
        Stage::Filter(Box::new(f))
    }

    pub fn splitter(s: impl Splitter<P> + 'static) -> Self {
        Stage::Splitter(Box::new(s))
    }

    pub fn dehydrator(store: SharedDehydrator<P>) -> Self {
        Stage::Dehydrator(DehydratorStage::new(store))
    }

    pub fn sink(s: impl Sink<P> + 'static) -> Self {
        Stage::Sink(Box::new(s), SinkRole::Output)
    }

    pub fn retire_sink(s: impl Sink<P> + 'static) -> Self {
        Stage::Sink(Box::new(s), SinkRole::Retire)
    }

    pub fn kind(&self) -> StageKind {
        match self {
            Stage::Filter(_) => StageKind::Filter,
            Stage::Splitter(_) => StageKind::Splitter,
            Stage::Dehydrator(_) => StageKind::Dehydrator,
            Stage::Sink(..) => StageKind::Sink,
        }
    }
}

/// Sink that keeps everything it receives behind a shared handle.
pub struct CollectSink<P> {
    items: Arc<Mutex<Vec<Envelope<P>>>>,
}

impl<P> CollectSink<P> {
    pub fn new() -> (Self, Arc<Mutex<Vec<Envelope<P>>>>) {
        let items = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                items: Arc::clone(&items),
            },
            items,
        )
    }
}

impl<P: Send> Sink<P> for CollectSink<P> {
    fn accept(&mut self, e: Envelope<P>, _ctx: &StageContext) {
        self.items.lock().push(e);
    }
}

/// Sink that only counts.
#[derive(Debug, Default)]
pub struct CountSink {
    pub count: u64,
}

impl<P> Sink<P> for CountSink {
    fn accept(&mut self, _e: Envelope<P>, _ctx: &StageContext) {
        self.count += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadLetter<P> {
    pub stage: String,
    pub envelope: Envelope<P>,
    pub error: StageError,
    pub at_ms: u64,
}

/// Where every admitted or derived envelope currently is.
///
/// `submitted + derived == emitted + dropped + dead_lettered + retired +
/// cancelled + dehydrated + in_flight` at all times. After
/// [`Pipeline::run_until_idle`] `in_flight` is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Conservation {
    pub submitted: u64,
    /// Derivatives created by splitters.
    pub derived: u64,
    /// Arrivals at output sinks, plus envelopes routed out of a stage that has
    /// no edge for the route.
    pub emitted: u64,
    /// Filter drops and splitter inputs that were replaced by derivatives.
    pub dropped: u64,
    pub dead_lettered: u64,
    pub retired: u64,
    /// Tickets removed from a dehydrator store by application code.
    pub cancelled: u64,
    pub dehydrated: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn inputs(&self) -> u64 {
        self.submitted + self.derived
    }

    pub fn accounted(&self) -> u64 {
        self.emitted + self.dropped + self.dead_lettered + self.retired + self.cancelled + self.dehydrated + self.in_flight
    }

    pub fn holds(&self) -> bool {
        self.inputs() == self.accounted()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageStats {
    pub name: String,
    pub kind: Option<StageKind>,
    pub processed: u64,
    pub dropped: u64,
    pub dead_lettered: u64,
    pub rehydrated: u64,
    pub retired: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionReport {
    pub now_ms: u64,
    pub stages: Vec<StageStats>,
    pub conservation: Conservation,
}

impl ExecutionReport {
    pub fn processed(&self, stage: &str) -> u64 {
        self.stages.iter().find(|s| s.name == stage).map_or(0, |s| s.processed)
    }
}

/// Running tallies, kept per thread in the concurrent scheduler and summed.
#[derive(Debug, Clone, Default)]
struct Tally {
    derived: u64,
    emitted: u64,
    dropped: u64,
    dead_lettered: u64,
    retired: u64,
    stored: u64,
    released: u64,
    stages: Vec<StageStats>,
}

impl Tally {
    fn for_topology(t: &Topology) -> Self {
        Self {
            stages: t
                .stages()
                .iter()
                .map(|s| StageStats {
                    name: s.name.clone(),
                    kind: Some(s.kind),
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        }
    }

    fn merge(&mut self, other: &Tally) {
        self.derived += other.derived;
        self.emitted += other.emitted;
        self.dropped += other.dropped;
        self.dead_lettered += other.dead_lettered;
        self.retired += other.retired;
        self.stored += other.stored;
        self.released += other.released;
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            a.processed += b.processed;
            a.dropped += b.dropped;
            a.dead_lettered += b.dead_lettered;
            a.rehydrated += b.rehydrated;
            a.retired += b.retired;
        }
    }
}

/// Runs one envelope through one stage. `send` receives `(target, envelope)`
/// for every envelope that moves along an edge.
#[allow(clippy::too_many_arguments)]
fn step<P: Clone>(
    topology: &Topology,
    idx: usize,
    stage: &mut Stage<P>,
    e: Envelope<P>,
    ctx: &StageContext,
    tally: &mut Tally,
    dead: &mut Vec<DeadLetter<P>>,
    send: &mut dyn FnMut(usize, Envelope<P>),
) {
    tally.stages[idx].processed += 1;
    let mut fail = |tally: &mut Tally, e: Envelope<P>, error: StageError| {
        tally.dead_lettered += 1;
        tally.stages[idx].dead_lettered += 1;
        dead.push(DeadLetter {
            stage: topology.name(idx).to_string(),
            envelope: e,
            error,
            at_ms: ctx.now_ms,
        });
    };
    match stage {
        Stage::Filter(f) => match f.decide(&e, ctx) {
            Ok(FilterDecision::Pass) => forward(topology, idx, PASS, e, tally, send),
            Ok(FilterDecision::Soft(d)) if d.admits(e.element_id()) => forward(topology, idx, PASS, e, tally, send),
            Ok(FilterDecision::Drop | FilterDecision::Soft(_)) => {
                tally.dropped += 1;
                tally.stages[idx].dropped += 1;
            }
            Err(err) => fail(tally, e, err),
        },
        Stage::Splitter(s) => {
            let decision = s
                .split(&e, ctx)
                .and_then(|d| d.validate(e.element_id()).map(|_| d))
                .and_then(|d| {
                    let unknown = d.routes().find(|r| topology.target(idx, r).is_none()).map(str::to_string);
                    match unknown {
                        Some(r) => Err(StageError::UnknownRoute(r)),
                        None => Ok(d),
                    }
                });
            match decision {
                Ok(d) => {
                    let mut forwarded_input = false;
                    for (route, out) in d.targets {
                        if out.is_derived() && out.parent_id() == Some(e.element_id()) {
                            tally.derived += 1;
                        } else {
                            forwarded_input = true;
                        }
                        forward(topology, idx, &route, out, tally, send);
                    }
                    if !forwarded_input {
                        tally.dropped += 1;
                        tally.stages[idx].dropped += 1;
                    }
                }
                Err(err) => fail(tally, e, err),
            }
        }
        Stage::Dehydrator(d) => {
            let policy = d.policy_override.as_ref().and_then(|f| f(&e));
            if let Some(Err(err)) = policy.as_ref().map(DehydrationPolicy::validate) {
                fail(tally, e, err.into());
                return;
            }
            let mut store = d.store.lock();
            if store.contains(e.element_id()) {
                let id = e.element_id().clone();
                drop(store);
                fail(tally, e, DehydrateError::DuplicateTicket(id).into());
                return;
            }
            match store.dehydrate(e, ctx.now_ms, policy) {
                Ok(DehydrateOutcome::Stored(_)) => tally.stored += 1,
                Ok(DehydrateOutcome::Retired(e)) => {
                    drop(store);
                    tally.stages[idx].retired += 1;
                    retire(topology, idx, e, tally, send);
                }
                Err(_) => unreachable!("duplicate ticket and policy validity checked above"),
            }
        }
        Stage::Sink(sink, role) => {
            match role {
                SinkRole::Output => tally.emitted += 1,
                SinkRole::Retire => tally.retired += 1,
            }
            sink.accept(e, ctx);
        }
    }
}

fn forward<P>(
    topology: &Topology,
    idx: usize,
    route: &str,
    e: Envelope<P>,
    tally: &mut Tally,
    send: &mut dyn FnMut(usize, Envelope<P>),
) {
    match topology.target(idx, route) {
        Some(t) => send(t, e),
        None => tally.emitted += 1,
    }
}

fn retire<P>(topology: &Topology, idx: usize, e: Envelope<P>, tally: &mut Tally, send: &mut dyn FnMut(usize, Envelope<P>)) {
    match topology.target(idx, RETIRE) {
        Some(t) => send(t, e),
        None => tally.retired += 1,
    }
}

fn release<P>(
    topology: &Topology,
    idx: usize,
    polled: PollResult<P>,
    tally: &mut Tally,
    send: &mut dyn FnMut(usize, Envelope<P>),
) {
    tally.released += (polled.rehydrated.len() + polled.retired.len()) as u64;
    tally.stages[idx].rehydrated += polled.rehydrated.len() as u64;
    tally.stages[idx].retired += polled.retired.len() as u64;
    for e in polled.rehydrated {
        forward(topology, idx, REHYDRATE, e, tally, send);
    }
    for e in polled.retired {
        retire(topology, idx, e, tally, send);
    }
}

/// Tuning for [`Pipeline::run_concurrent`].
#[derive(Debug, Clone, Copy)]
pub struct ConcurrentOptions {
    /// Capacity of each non-dehydrator stage's input queue.
    pub queue_capacity: usize,
    /// How often idle stages wake to poll their dehydrator or check for stop.
    pub poll_interval: Duration,
}

impl Default for ConcurrentOptions {
    fn default() -> Self {
        Self {
            queue_capacity: 1024,
            poll_interval: Duration::from_millis(1),
        }
    }
}

pub struct Pipeline<P> {
    topology: Topology,
    stages: Vec<Stage<P>>,
    queues: Vec<VecDeque<Envelope<P>>>,
    clock: Clock,
    submitted: u64,
    tally: Tally,
    dead_letters: Vec<DeadLetter<P>>,
    draining: bool,
}

impl<P: Clone + Send> Pipeline<P> {
    /// Binds an implementation to every stage of `topology`.
    pub fn new(topology: Topology, mut bindings: HashMap<String, Stage<P>>, clock: Clock) -> Result<Self, TopologyError> {
        let mut stages = Vec::with_capacity(topology.len());
        for spec in topology.stages() {
            let stage = bindings
                .remove(&spec.name)
                .ok_or_else(|| TopologyError::UnboundStage(spec.name.clone()))?;
            if stage.kind() != spec.kind {
                return Err(TopologyError::KindMismatch {
                    stage: spec.name.clone(),
                    declared: spec.kind.as_str(),
                    bound: stage.kind().as_str(),
                });
            }
            stages.push(stage);
        }
        Ok(Self {
            queues: (0..topology.len()).map(|_| VecDeque::new()).collect(),
            tally: Tally::for_topology(&topology),
            topology,
            stages,
            clock,
            submitted: 0,
            dead_letters: Vec::new(),
            draining: false,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn dead_letters(&self) -> &[DeadLetter<P>] {
        &self.dead_letters
    }

    /// Admits `e` at the entry stage as an external element first seen now.
    pub fn submit(&mut self, e: Envelope<P>) -> Result<(), SubmitError> {
        if self.draining {
            return Err(SubmitError::ShuttingDown);
        }
        let e = e.admitted_at(self.clock.now_ms());
        self.submitted += 1;
        self.queues[self.topology.entry()].push_back(e);
        Ok(())
    }

    /// Stops accepting submissions. Work already admitted still runs.
    pub fn drain(&mut self) {
        self.draining = true;
    }

    pub fn is_draining(&self) -> bool {
        self.draining
    }

    pub fn advance_clock(&mut self, delta_ms: u64) -> Result<u64, ClockError> {
        self.clock.advance(delta_ms)
    }

    /// Earliest wake time across all dehydrators.
    pub fn next_wake(&self) -> Option<u64> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Dehydrator(d) => d.store.lock().next_wake(),
                _ => None,
            })
            .min()
    }

    /// Processes queued work and due dehydrated elements until nothing is left
    /// to do at the current clock time.
    pub fn run_until_idle(&mut self) -> ExecutionReport {
        let Self {
            topology,
            stages,
            queues,
            clock,
            tally,
            dead_letters,
            ..
        } = self;
        let ctx = StageContext { now_ms: clock.now_ms() };
        loop {
            let mut progressed = false;
            for &idx in topology.schedule() {
                while let Some(e) = queues[idx].pop_front() {
                    progressed = true;
                    let mut send = |t: usize, e: Envelope<P>| queues[t].push_back(e);
                    step(topology, idx, &mut stages[idx], e, &ctx, tally, dead_letters, &mut send);
                }
            }
            for &idx in topology.schedule() {
                if let Stage::Dehydrator(d) = &stages[idx] {
                    let polled = d.store.lock().poll(ctx.now_ms);
                    if !polled.is_empty() {
                        progressed = true;
                        let mut send = |t: usize, e: Envelope<P>| queues[t].push_back(e);
                        release(topology, idx, polled, tally, &mut send);
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        self.report()
    }

    /// Moves a simulated clock to `target_ms`, stopping at every intermediate
    /// wake time so dehydrated elements are released exactly when due.
    pub fn advance_to(&mut self, target_ms: u64) -> Result<ExecutionReport, ClockError> {
        if self.clock.mode() != ClockMode::Simulated {
            return Err(ClockError::WallClockAdvance);
        }
        self.run_until_idle();
        while let Some(w) = self.next_wake().filter(|&w| w <= target_ms) {
            self.clock.advance_to(w)?;
            self.run_until_idle();
        }
        self.clock.advance_to(target_ms)?;
        Ok(self.run_until_idle())
    }

    pub fn report(&self) -> ExecutionReport {
        let dehydrated: u64 = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::Dehydrator(d) => d.store.lock().len() as u64,
                _ => 0,
            })
            .sum();
        let in_flight: u64 = self.queues.iter().map(|q| q.len() as u64).sum();
        let t = &self.tally;
        ExecutionReport {
            now_ms: self.clock.now_ms(),
            stages: t.stages.clone(),
            conservation: Conservation {
                submitted: self.submitted,
                derived: t.derived,
                emitted: t.emitted,
                dropped: t.dropped,
                dead_lettered: t.dead_lettered,
                retired: t.retired,
                cancelled: (t.stored - t.released).saturating_sub(dehydrated),
                dehydrated,
                in_flight,
            },
        }
    }
}

impl<P: Clone + Send> Pipeline<P> {
    /// Runs every stage on its own thread against a wall clock, feeding
    /// `input` from the calling thread. Returns once the input is exhausted
    /// and no envelope is queued or being processed; elements still held by a
    /// dehydrator stay there.
    pub fn run_concurrent<I>(&mut self, input: I, opts: ConcurrentOptions) -> ExecutionReport
    where
        I: IntoIterator<Item = Envelope<P>>,
    {
        let n = self.topology.len();
        let mut senders: Vec<Sender<Envelope<P>>> = Vec::with_capacity(n);
        let mut receivers: Vec<Receiver<Envelope<P>>> = Vec::with_capacity(n);
        for idx in 0..n {
            let (tx, rx) = match self.topology.kind(idx) {
                StageKind::Dehydrator => unbounded(),
                _ => bounded(opts.queue_capacity.max(1)),
            };
            senders.push(tx);
            receivers.push(rx);
        }
        let in_flight = Arc::new(AtomicUsize::new(0));
        let leftovers: Vec<(usize, Envelope<P>)> = self
            .queues
            .iter_mut()
            .enumerate()
            .flat_map(|(idx, q)| q.drain(..).map(move |e| (idx, e)))
            .collect();

        let stop = Arc::new(AtomicBool::new(false));
        let phase = Arc::new(RwLock::new(()));
        let clock = self.clock.clone();
        let topology = &self.topology;
        let entry = topology.entry();
        let draining = self.draining;

        let mut stages = std::mem::take(&mut self.stages);
        let results: Vec<(Tally, Vec<DeadLetter<P>>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = stages
                .iter_mut()
                .enumerate()
                .zip(receivers)
                .map(|((idx, stage), rx)| {
                    let senders = senders.clone();
                    let in_flight = Arc::clone(&in_flight);
                    let stop = Arc::clone(&stop);
                    let phase = Arc::clone(&phase);
                    let clock = clock.clone();
                    scope.spawn(move || {
                        let mut tally = Tally::for_topology(topology);
                        let mut dead = Vec::new();
                        let mut send = |t: usize, e: Envelope<P>| {
                            in_flight.fetch_add(1, Ordering::SeqCst);
                            senders[t].send(e).expect("stage threads outlive the run");
                        };
                        loop {
                            if let Stage::Dehydrator(d) = stage {
                                let _guard = phase.read();
                                if !stop.load(Ordering::SeqCst) {
                                    let polled = d.store.lock().poll(clock.now_ms());
                                    if !polled.is_empty() {
                                        release(topology, idx, polled, &mut tally, &mut send);
                                    }
                                }
                            }
                            match rx.recv_timeout(opts.poll_interval) {
                                Ok(e) => {
                                    let ctx = StageContext { now_ms: clock.now_ms() };
                                    step(topology, idx, stage, e, &ctx, &mut tally, &mut dead, &mut send);
                                    in_flight.fetch_sub(1, Ordering::SeqCst);
                                }
                                Err(RecvTimeoutError::Timeout) => {
                                    if stop.load(Ordering::SeqCst) && rx.is_empty() {
                                        break;
                                    }
                                }
                                Err(RecvTimeoutError::Disconnected) => break,
                            }
                        }
                        (tally, dead)
                    })
                })
                .collect();

            for (idx, e) in leftovers {
                in_flight.fetch_add(1, Ordering::SeqCst);
                senders[idx].send(e).expect("stage alive");
            }
            let mut submitted = 0u64;
            if !draining {
                for e in input {
                    let e = e.admitted_at(clock.now_ms());
                    in_flight.fetch_add(1, Ordering::SeqCst);
                    senders[entry].send(e).expect("entry stage alive");
                    submitted += 1;
                }
            }
            loop {
                {
                    let _guard = phase.write();
                    if in_flight.load(Ordering::SeqCst) == 0 {
                        stop.store(true, Ordering::SeqCst);
                        break;
                    }
                }
                std::thread::sleep(opts.poll_interval);
            }
            self.submitted += submitted;
            handles.into_iter().map(|h| h.join().expect("stage thread panicked")).collect()
        });
        self.stages = stages;
        for (t, dead) in results {
            self.tally.merge(&t);
            self.dead_letters.extend(dead);
        }
        self.report()
    }
}
