//! Filter-split-dehydrate stream processing.
//!
//! Elements flow through three kinds of stages wired into a [`Topology`]:
//! filters that reduce the flow, splitters that route it, and dehydrators
//! that hold elements which arrived before their context and re-introduce
//! them later along a feedback edge. [`geomatch`] builds the reference
//! question/candidate matching pipeline on top of these pieces.

pub mod clock;
pub mod dehydrator;
pub mod envelope;
pub mod error;
pub mod filters;
pub mod geomatch;
pub mod pipeline;
pub mod splitters;
pub mod store;
pub mod topology;

pub use clock::{Clock, ClockMode};
pub use dehydrator::{next_interval, DehydrateOutcome, DehydrationPolicy, PollResult, SharedDehydrator, Ticket, TimeIndexedStore};
pub use envelope::{ElementId, Envelope, Origin};
pub use error::{ClockError, DehydrateError, FilterError, StageError, StoreError, SubmitError, TopologyError};
pub use filters::{
    compose_tiers, stateless_filter, AggregationFilter, AggregationFilterConfig, Filter, FilterDecision, SoftDecision,
    StatelessFilter, TieredFilter,
};
pub use pipeline::{
    CollectSink, ConcurrentOptions, Conservation, CountSink, DeadLetter, DehydratorStage, ExecutionReport, Pipeline,
    Sink, SinkRole, Stage, StageContext, StageStats,
};
pub use splitters::{memory_split, stateless_split, MemorySplitter, RouteDecision, Splitter, StatelessSplitter};
pub use store::{LocalReplica, StateStore, StoreTxn, TransactError, Versioned};
pub use topology::{build_topology, Edge, EdgeSpec, StageKind, StageSpec, Topology, TopologySpec, PASS, REHYDRATE, RETIRE};
