use thiserror::Error;

use crate::envelope::ElementId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("cannot advance a wall clock")]
    WallClockAdvance,
    #[error("clock overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate stage name `{0}`")]
    DuplicateStageName(String),
    #[error("edge {from} -> {to} references unknown stage `{missing}`")]
    DanglingEdge {
        from: String,
        to: String,
        missing: String,
    },
    #[error("cycle without a dehydrator through stage `{0}`")]
    IllegalCycle(String),
    #[error("stage `{stage}` has more than one outgoing edge for route `{route}`")]
    DuplicateRoute { stage: String, route: String },
    #[error("feedback edge {from} -> {to} does not leave a dehydrator")]
    FeedbackNotFromDehydrator { from: String, to: String },
    #[error("topology has no stages")]
    Empty,
    #[error("entry stage `{0}` does not exist")]
    UnknownEntry(String),
    #[error("no implementation bound for stage `{0}`")]
    UnboundStage(String),
    #[error("implementation for stage `{stage}` is a {bound}, topology declares a {declared}")]
    KindMismatch {
        stage: String,
        declared: &'static str,
        bound: &'static str,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stage `{stage}`: {message}")]
    InvalidStage { stage: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("pipeline is shutting down")]
    ShuttingDown,
}

/// Failure raised by application code inside a stage. The envelope that
/// triggered it goes to the dead-letter sink.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageError {
    #[error("predicate failed: {0}")]
    PredicateFailure(String),
    #[error("score function failed: {0}")]
    ScoreFailure(String),
    #[error("splitter logic failed: {0}")]
    LogicFailure(String),
    #[error("splitter produced no route")]
    NoRouteProduced,
    #[error("route `{0}` has no outgoing edge")]
    UnknownRoute(String),
    #[error("splitter forwarded the input element more than once")]
    DuplicateForward,
    #[error("dehydration failed: {0}")]
    Dehydration(#[from] DehydrateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("version conflict on `{key}`: expected {expected}, found {found}")]
    VersionConflict {
        key: String,
        expected: u64,
        found: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DehydrateError {
    #[error("element {0} already has a live ticket")]
    DuplicateTicket(ElementId),
    #[error("invalid dehydration policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("tier list is empty")]
    EmptyTierList,
    #[error("top-X bound must be at least 1")]
    ZeroWidth,
}
