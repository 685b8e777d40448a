//! Core value types and the deployment lifecycle.
//!
//! Time is integer milliseconds on the simulation clock and token amounts are
//! integer base units. Fractional quantities (weights, scores) are `f64`.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Milliseconds since the start of the simulation clock.
pub type Timestamp = u64;
/// Milliseconds.
pub type Duration = u64;
/// Token amount in integer base units.
pub type Amount = u64;
/// Base units per whole token (six decimals).
pub const UNITS_PER_TOKEN: Amount = 1_000_000;

/// Converts a real token quantity to base units, rounding to nearest.
pub fn tokens_to_units(tokens: f64) -> Amount {
    (tokens * UNITS_PER_TOKEN as f64).round() as Amount
}

pub fn units_to_tokens(units: Amount) -> f64 {
    units as f64 / UNITS_PER_TOKEN as f64
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeploymentId(pub u64);

impl fmt::Display for DeploymentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("min_reputation must lie in [0, 1), got {0}")]
    InvalidMinReputation(f64),
    #[error("illegal transition from {from:?} on {event}")]
    IllegalTransition {
        from: StateKind,
        event: &'static str,
    },
}

/// Recurring execution plan of a deployment.
///
/// Execution `k` (1-based) occupies
/// `[start + delay + (k-1)·interval, … + duration)` where `delay` is chosen
/// by the matcher within `[0, max_start_delay]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: Timestamp,
    pub end: Timestamp,
    pub interval: Duration,
    pub duration: Duration,
    pub max_start_delay: Duration,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.start >= self.end {
            return Err(DomainError::InvalidSchedule("start must precede end"));
        }
        if self.duration == 0 {
            return Err(DomainError::InvalidSchedule("duration must be positive"));
        }
        if self.duration > self.interval {
            return Err(DomainError::InvalidSchedule("duration exceeds interval"));
        }
        match self.start.checked_add(self.duration) {
            Some(first_end) if first_end <= self.end => Ok(()),
            _ => Err(DomainError::InvalidSchedule("no execution fits before end")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceRequirements {
    pub memory: u64,
    pub network_requests: u64,
    pub storage: u64,
}

/// A consumer's job registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub id: DeploymentId,
    pub consumer: AccountId,
    pub schedule: Schedule,
    pub reward_per_execution: Amount,
    #[serde(default)]
    pub min_reputation: Option<f64>,
    #[serde(default)]
    pub min_security_level: Option<u8>,
    /// Opaque settlement target, carried through to success reports.
    #[serde(default)]
    pub destination: String,
    #[serde(default)]
    pub resource_requirements: ResourceRequirements,
}

impl DeploymentSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.schedule.validate()?;
        if let Some(min) = self.min_reputation {
            if !(0.0..1.0).contains(&min) {
                return Err(DomainError::InvalidMinReputation(min));
            }
        }
        Ok(())
    }
}

/// Per-execution success/failure counts recorded when a deployment finishes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub succeeded: u32,
    pub failed: u32,
}

impl OutcomeTally {
    pub fn total(&self) -> u32 {
        self.succeeded + self.failed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeploymentState {
    Open,
    Matched,
    Assigned,
    Done { outcome: OutcomeTally },
}

/// State discriminant without payload, used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateKind {
    Open,
    Matched,
    Assigned,
    Done,
}

impl DeploymentState {
    pub fn kind(&self) -> StateKind {
        match self {
            Self::Open => StateKind::Open,
            Self::Matched => StateKind::Matched,
            Self::Assigned => StateKind::Assigned,
            Self::Done { .. } => StateKind::Done,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Done { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    Matched,
    AcknowledgedAllSlots,
    AllExecutionsReported { outcome: OutcomeTally },
}

impl LifecycleEvent {
    fn name(&self) -> &'static str {
        match self {
            Self::Matched => "matched",
            Self::AcknowledgedAllSlots => "acknowledged_all_slots",
            Self::AllExecutionsReported { .. } => "all_executions_reported",
        }
    }
}

/// Advances the lifecycle along `OPEN → MATCHED → ASSIGNED → DONE`.
pub fn transition(
    state: DeploymentState,
    event: LifecycleEvent,
) -> Result<DeploymentState, DomainError> {
    use DeploymentState as S;
    use LifecycleEvent as E;
    match (state, event) {
        (S::Open, E::Matched) => Ok(S::Matched),
        (S::Matched, E::AcknowledgedAllSlots) => Ok(S::Assigned),
        (S::Assigned, E::AllExecutionsReported { outcome }) => Ok(S::Done { outcome }),
        (from, event) => Err(DomainError::IllegalTransition {
            from: from.kind(),
            event: event.name(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutionOutcome {
    Success { settlement_ref: String },
    Failure { error: String },
}

impl ExecutionOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Self::Success { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionReport {
    pub deployment: DeploymentId,
    /// 1-based execution index.
    pub execution: u32,
    pub outcome: ExecutionOutcome,
    pub reported_at: Timestamp,
}
