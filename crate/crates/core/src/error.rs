use thiserror::Error;

/// Errors raised by the trajectory toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("subject `{subject}`: time {time} is not on the visit schedule")]
    TimeOffSchedule { subject: String, time: f64 },
    #[error("subject `{subject}`: visit times are not strictly increasing")]
    UnorderedTimes { subject: String },
    #[error("subject `{subject}`: {times} times but {values} values")]
    LengthMismatch {
        subject: String,
        times: usize,
        values: usize,
    },
    #[error("subject `{0}` has no observed values")]
    AllMissing(String),
    #[error("invalid visit schedule: {0}")]
    InvalidSchedule(String),
    #[error("empty cohort: {0}")]
    EmptyCohort(String),
    #[error("subject `{0}` is incomplete on the schedule")]
    IncompleteSubject(String),
    #[error("subject `{0}` has only a baseline observation")]
    BaselineOnly(String),
    #[error("subject `{0}` has no baseline observation")]
    MissingBaseline(String),
    #[error("degenerate baseline: component `{0}` has zero standard deviation")]
    DegenerateBaseline(String),
    #[error("no observed values at time {0}")]
    UnavailableTimepoint(f64),
    #[error("subject `{subject}`: missing value at time {time} is not bracketed by observations")]
    NotBracketed { subject: String, time: f64 },
    #[error("subject `{subject}`: leading gap before the first observation at time {time}")]
    LeadingGap { subject: String, time: f64 },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),
    #[error("invalid spans: {0}")]
    InvalidSpans(String),
    #[error("partitions share no subjects")]
    EmptyIntersection,
    #[error("zero expected count in contingency table; use Fisher's exact test")]
    ZeroExpectedCount,
    #[error("table must be 2x2, found {rows}x{cols}")]
    NotTwoByTwo { rows: usize, cols: usize },
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
