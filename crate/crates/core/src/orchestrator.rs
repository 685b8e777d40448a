//! The marketplace: deployment registration, processor advertisements,
//! matching, report intake, escrow and reputation feeding.
//!
//! The orchestrator is a single-threaded command processor. Each command
//! (`register_deployment`, `match_deployment`, `submit_report`,
//! `advance_time`) mutates the state, appends structured [`Event`]s to the
//! event buffer and leaves the escrow ledger balanced.
//!
//! Escrow is per execution: registration locks `K · reward` where `K` is the
//! slot count at delay 0, and each slot later either releases its price to
//! the processor or refunds the consumer.

use crate::attestation::AttestationRegistry;
use crate::domain::{
    AccountId, Amount, DeploymentId, DeploymentSpec, DeploymentState, DomainError, Duration,
    ExecutionReport, LifecycleEvent, OutcomeTally, Schedule, StateKind, Timestamp,
};
use crate::reputation::{ReputationAccumulator, ReputationError, ReputationParams};
use crate::scheduler::{
    acceptance_window, classify_report, enumerate_executions, execution_count, find_start_delay,
    ExecutionSlot, ProcessorCalendar, ReportTiming, SchedulerError,
};
use crate::staked::BenchmarkVector;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("{account} holds {available}, needs {required}")]
    InsufficientFunds {
        account: AccountId,
        available: Amount,
        required: Amount,
    },
    #[error(transparent)]
    InvalidSchedule(#[from] DomainError),
    #[error("reward per execution must be positive")]
    ZeroReward,
    #[error("deployment {0} already registered")]
    DuplicateDeployment(DeploymentId),
    #[error("unknown deployment {0}")]
    UnknownDeployment(DeploymentId),
    #[error("deployment {deployment} is {state:?}")]
    WrongState {
        deployment: DeploymentId,
        state: StateKind,
    },
    #[error("execution {execution} of deployment {deployment} already reported")]
    DuplicateReport {
        deployment: DeploymentId,
        execution: u32,
    },
    #[error("deployment {deployment} has no execution {execution}")]
    UnknownExecution {
        deployment: DeploymentId,
        execution: u32,
    },
    #[error("clock moved backwards from {clock} to {now}")]
    ClockRegression { clock: Timestamp, now: Timestamp },
    #[error("unknown processor {0}")]
    UnknownProcessor(AccountId),
    #[error(transparent)]
    Reputation(#[from] ReputationError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorAdvertisement {
    pub processor: AccountId,
    #[serde(default)]
    pub benchmark: BenchmarkVector,
    pub ask_price_per_execution: Amount,
    #[serde(default)]
    pub calendar: ProcessorCalendar,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

impl ProcessorAdvertisement {
    pub fn new(processor: impl Into<AccountId>, ask: Amount) -> Self {
        Self {
            processor: processor.into(),
            benchmark: BenchmarkVector::default(),
            ask_price_per_execution: ask,
            calendar: ProcessorCalendar::new(),
            active: true,
        }
    }
}

/// Index of a processor inside one orchestrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessorHandle(usize);

/// A candidate's price for one specific deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quote {
    pub processor: ProcessorHandle,
    pub ask: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub deployment: DeploymentId,
    pub processor: AccountId,
    pub start_delay: Duration,
    pub slots: Vec<ExecutionSlot>,
    pub agreed_price_per_execution: Amount,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sinks {
    pub treasury: Amount,
    pub burn: Amount,
    pub collators: Amount,
}

/// Token balances and per-deployment escrow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    balances: BTreeMap<AccountId, Amount>,
    locked: BTreeMap<DeploymentId, Amount>,
    pub sinks: Sinks,
    minted: u128,
    balance_total: u128,
    locked_total: u128,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates tokens in `account`.
    pub fn mint(&mut self, account: &AccountId, amount: Amount) {
        *self.balances.entry(account.clone()).or_default() += amount;
        self.minted += u128::from(amount);
        self.balance_total += u128::from(amount);
    }

    pub fn balance(&self, account: &AccountId) -> Amount {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn locked(&self, deployment: DeploymentId) -> Amount {
        self.locked.get(&deployment).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<AccountId, Amount> {
        &self.balances
    }

    pub fn minted(&self) -> u128 {
        self.minted
    }

    fn lock(
        &mut self,
        account: &AccountId,
        deployment: DeploymentId,
        amount: Amount,
    ) -> Result<(), OrchestratorError> {
        let available = self.balance(account);
        if available < amount {
            return Err(OrchestratorError::InsufficientFunds {
                account: account.clone(),
                available,
                required: amount,
            });
        }
        self.balances.insert(account.clone(), available - amount);
        *self.locked.entry(deployment).or_default() += amount;
        self.balance_total -= u128::from(amount);
        self.locked_total += u128::from(amount);
        Ok(())
    }

    /// Moves `amount` out of a deployment's escrow into `to`.
    fn release(&mut self, deployment: DeploymentId, to: &AccountId, amount: Amount) {
        let locked = self.locked.get_mut(&deployment).expect("escrow exists");
        assert!(*locked >= amount, "escrow underflow for {deployment}");
        *locked -= amount;
        if *locked == 0 {
            self.locked.remove(&deployment);
        }
        *self.balances.entry(to.clone()).or_default() += amount;
        self.locked_total -= u128::from(amount);
        self.balance_total += u128::from(amount);
    }

    /// Running totals agree with the minted supply.
    pub fn is_balanced(&self) -> bool {
        let sinks = &self.sinks;
        let sunk =
            u128::from(sinks.treasury) + u128::from(sinks.burn) + u128::from(sinks.collators);
        self.minted == self.balance_total + self.locked_total + sunk
    }

    /// Recomputes every sum from the maps and checks conservation.
    pub fn verify(&self) -> bool {
        let balances: u128 = self.balances.values().map(|b| u128::from(*b)).sum();
        let locked: u128 = self.locked.values().map(|b| u128::from(*b)).sum();
        balances == self.balance_total && locked == self.locked_total && self.is_balanced()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Registered,
    Expired,
    Assigned,
    Paid,
    Refunded,
    Favorable,
    Unfavorable,
    Malus,
    Done,
}

impl EventKind {
    pub fn is_reputation_update(self) -> bool {
        matches!(self, Self::Favorable | Self::Unfavorable | Self::Malus)
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: Timestamp,
    pub kind: EventKind,
    pub deployment: DeploymentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processor: Option<AccountId>,
    pub amount: Amount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reputation_after: Option<f64>,
}

impl Event {
    fn new(time: Timestamp, kind: EventKind, deployment: DeploymentId) -> Self {
        Self {
            time,
            kind,
            deployment,
            execution: None,
            processor: None,
            amount: 0,
            reputation_after: None,
        }
    }

    fn execution(mut self, index: u32) -> Self {
        self.execution = Some(index);
        self
    }

    fn processor(mut self, processor: &AccountId) -> Self {
        self.processor = Some(processor.clone());
        self
    }

    fn amount(mut self, amount: Amount) -> Self {
        self.amount = amount;
        self
    }

    fn reputation(mut self, score: f64) -> Self {
        self.reputation_after = Some(score);
        self
    }

    fn sort_key(&self) -> (Timestamp, DeploymentId, u32) {
        (
            self.time,
            self.deployment,
            self.execution.unwrap_or(u32::MAX),
        )
    }
}

/// Writes events as JSON lines.
pub fn write_event_log<W: std::io::Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_event_log<R: std::io::BufRead>(input: R) -> Result<Vec<Event>, serde_json::Error> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if !line.trim().is_empty() {
            events.push(serde_json::from_str(&line)?);
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorConfig {
    #[serde(default)]
    pub reputation: ReputationParams,
    /// Report grace after slot end, in thousandths of the slot duration.
    #[serde(default = "default_grace_permille")]
    pub report_grace_permille: u64,
    /// Break equal asks by reputation score. Off only in baselines that run
    /// without a reputation system.
    #[serde(default = "yes")]
    pub rank_by_reputation: bool,
}

fn default_grace_permille() -> u64 {
    100
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            reputation: ReputationParams::default(),
            report_grace_permille: default_grace_permille(),
            rank_by_reputation: true,
        }
    }
}

impl OrchestratorConfig {
    pub fn report_grace(&self, duration: Duration) -> Duration {
        duration * self.report_grace_permille / 1000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Pending,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub spec: DeploymentSpec,
    pub state: DeploymentState,
    pub registered_at: Timestamp,
    pub assignment: Option<Assignment>,
    pub slots: Vec<SlotStatus>,
}

impl DeploymentRecord {
    fn tally(&self) -> OutcomeTally {
        let mut tally = OutcomeTally::default();
        for s in &self.slots {
            match s {
                SlotStatus::Succeeded => tally.succeeded += 1,
                SlotStatus::Failed => tally.failed += 1,
                SlotStatus::Pending => {}
            }
        }
        tally
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorEntry {
    pub advertisement: ProcessorAdvertisement,
    pub reputation: ReputationAccumulator,
}

impl ProcessorEntry {
    pub fn score(&self) -> f64 {
        self.reputation.score()
    }
}

/// Why a candidate cannot take a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ineligibility {
    Inactive,
    Attestation,
    SecurityLevel,
    MinReputation,
    Price,
    NoFeasibleStartDelay,
}

impl Ineligibility {
    pub fn reason(self) -> &'static str {
        match self {
            Self::Inactive => "inactive",
            Self::Attestation => "attestation",
            Self::SecurityLevel => "security_level",
            Self::MinReputation => "min_reputation",
            Self::Price => "price",
            Self::NoFeasibleStartDelay => "no feasible start delay",
        }
    }
}

impl std::fmt::Display for Ineligibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.reason())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub processor: AccountId,
    pub ask: Amount,
    pub score: f64,
    pub verdict: Result<Duration, Ineligibility>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAck {
    pub deployment: DeploymentId,
    pub execution: u32,
    pub timing: ReportTiming,
    pub favorable: bool,
    pub paid: Amount,
    pub refunded: Amount,
    pub reputation_after: f64,
    pub done: bool,
}

/// Marketplace state and command loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Orchestrator {
    config: OrchestratorConfig,
    clock: Timestamp,
    attestations: AttestationRegistry,
    processors: Vec<ProcessorEntry>,
    index: BTreeMap<AccountId, usize>,
    /// Processor indices sorted by (ask, account id); rebuilt lazily.
    #[serde(skip)]
    by_ask: Vec<usize>,
    #[serde(skip)]
    by_ask_dirty: bool,
    deployments: BTreeMap<DeploymentId, DeploymentRecord>,
    /// (window close, deployment, execution) for every unresolved slot.
    pending_windows: BTreeSet<(Timestamp, DeploymentId, u32)>,
    /// (first instant no slot can start, deployment) for OPEN deployments.
    open_deadlines: BTreeSet<(Timestamp, DeploymentId)>,
    ledger: Ledger,
    #[serde(skip)]
    events: Vec<Event>,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig, attestations: AttestationRegistry) -> Self {
        Self {
            config,
            clock: 0,
            attestations,
            processors: Vec::new(),
            index: BTreeMap::new(),
            by_ask: Vec::new(),
            by_ask_dirty: false,
            deployments: BTreeMap::new(),
            pending_windows: BTreeSet::new(),
            open_deadlines: BTreeSet::new(),
            ledger: Ledger::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn attestations(&self) -> &AttestationRegistry {
        &self.attestations
    }

    pub fn attestations_mut(&mut self) -> &mut AttestationRegistry {
        &mut self.attestations
    }

    pub fn deployment(&self, id: DeploymentId) -> Option<&DeploymentRecord> {
        self.deployments.get(&id)
    }

    pub fn deployments(&self) -> impl Iterator<Item = &DeploymentRecord> {
        self.deployments.values()
    }

    pub fn processor(&self, id: &AccountId) -> Option<&ProcessorEntry> {
        self.index.get(id).map(|i| &self.processors[*i])
    }

    pub fn processors(&self) -> impl Iterator<Item = &ProcessorEntry> {
        self.index.values().map(|i| &self.processors[*i])
    }

    /// Takes all buffered events.
    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Adds a processor or updates the ask, benchmark and activity of a known
    /// one. The orchestrator's calendar of a known processor is kept.
    pub fn advertise(&mut self, ad: ProcessorAdvertisement) {
        match self.index.get(&ad.processor) {
            Some(&i) => {
                let current = &mut self.processors[i].advertisement;
                current.benchmark = ad.benchmark;
                current.ask_price_per_execution = ad.ask_price_per_execution;
                current.active = ad.active;
            }
            None => {
                self.index
                    .insert(ad.processor.clone(), self.processors.len());
                self.processors.push(ProcessorEntry {
                    advertisement: ad,
                    reputation: ReputationAccumulator::new(self.config.reputation),
                });
            }
        }
        self.by_ask_dirty = true;
    }

    pub fn set_ask(&mut self, processor: &AccountId, ask: Amount) -> Result<(), OrchestratorError> {
        let i = self.processor_index(processor)?;
        self.processors[i].advertisement.ask_price_per_execution = ask;
        self.by_ask_dirty = true;
        Ok(())
    }

    pub fn set_reputation(
        &mut self,
        processor: &AccountId,
        reputation: ReputationAccumulator,
    ) -> Result<(), OrchestratorError> {
        let i = self.processor_index(processor)?;
        self.processors[i].reputation = reputation;
        Ok(())
    }

    fn processor_index(&self, processor: &AccountId) -> Result<usize, OrchestratorError> {
        self.index
            .get(processor)
            .copied()
            .ok_or_else(|| OrchestratorError::UnknownProcessor(processor.clone()))
    }

    fn check_clock(&self, now: Timestamp) -> Result<(), OrchestratorError> {
        if now < self.clock {
            return Err(OrchestratorError::ClockRegression {
                clock: self.clock,
                now,
            });
        }
        Ok(())
    }

    fn record(&mut self, event: Event) {
        self.events.push(event);
    }

    fn finish_command(&self) {
        assert!(self.ledger.is_balanced(), "ledger conservation violated");
    }

    /// Registers a deployment and locks `K · reward` from the consumer.
    pub fn register_deployment(
        &mut self,
        spec: DeploymentSpec,
        now: Timestamp,
    ) -> Result<DeploymentId, OrchestratorError> {
        self.check_clock(now)?;
        spec.validate()?;
        if spec.reward_per_execution == 0 {
            return Err(OrchestratorError::ZeroReward);
        }
        if self.deployments.contains_key(&spec.id) {
            return Err(OrchestratorError::DuplicateDeployment(spec.id));
        }
        let k = execution_count(&spec.schedule, 0);
        let amount = Amount::from(k) * spec.reward_per_execution;
        self.ledger.lock(&spec.consumer, spec.id, amount)?;
        let id = spec.id;
        let latest = spec.schedule.start + spec.schedule.max_start_delay;
        self.open_deadlines.insert((latest + 1, id));
        self.record(
            Event::new(now, EventKind::Registered, id)
                .processor(&spec.consumer)
                .amount(amount),
        );
        self.deployments.insert(
            id,
            DeploymentRecord {
                spec,
                state: DeploymentState::Open,
                registered_at: now,
                assignment: None,
                slots: Vec::new(),
            },
        );
        self.finish_command();
        Ok(id)
    }

    fn rebuild_order(&mut self) {
        if self.by_ask_dirty || self.by_ask.len() != self.processors.len() {
            let mut order: Vec<usize> = (0..self.processors.len()).collect();
            order.sort_by(|a, b| {
                let pa = &self.processors[*a].advertisement;
                let pb = &self.processors[*b].advertisement;
                (pa.ask_price_per_execution, &pa.processor)
                    .cmp(&(pb.ask_price_per_execution, &pb.processor))
            });
            self.by_ask = order;
            self.by_ask_dirty = false;
        }
    }

    /// Checks everything except calendar feasibility.
    fn static_check(
        &self,
        entry: &ProcessorEntry,
        ask: Amount,
        spec: &DeploymentSpec,
        now: Timestamp,
    ) -> Result<(), Ineligibility> {
        let ad = &entry.advertisement;
        if !ad.active {
            return Err(Ineligibility::Inactive);
        }
        if ask > spec.reward_per_execution {
            return Err(Ineligibility::Price);
        }
        if let Some(min) = spec.min_reputation {
            if entry.score() < min {
                return Err(Ineligibility::MinReputation);
            }
        }
        if !self.attestations.is_valid(&ad.processor, now) {
            return Err(Ineligibility::Attestation);
        }
        if let Some(level) = spec.min_security_level {
            if self.attestations.security_level(&ad.processor).unwrap_or(0) < level {
                return Err(Ineligibility::SecurityLevel);
            }
        }
        Ok(())
    }

    fn feasible_delay(
        calendar: &ProcessorCalendar,
        schedule: &Schedule,
        now: Timestamp,
    ) -> Option<Duration> {
        let offset = now.saturating_sub(schedule.start);
        if offset > schedule.max_start_delay {
            return None;
        }
        let shifted = Schedule {
            start: schedule.start + offset,
            max_start_delay: schedule.max_start_delay - offset,
            ..*schedule
        };
        if shifted.start >= shifted.end {
            return None;
        }
        find_start_delay(&shifted, calendar).map(|d| d + offset)
    }

    fn check(
        &self,
        entry: &ProcessorEntry,
        ask: Amount,
        spec: &DeploymentSpec,
        now: Timestamp,
    ) -> Result<Duration, Ineligibility> {
        self.static_check(entry, ask, spec, now)?;
        Self::feasible_delay(&entry.advertisement.calendar, &spec.schedule, now)
            .ok_or(Ineligibility::NoFeasibleStartDelay)
    }

    fn open_spec(&self, id: DeploymentId) -> Result<&DeploymentSpec, OrchestratorError> {
        let record = self
            .deployments
            .get(&id)
            .ok_or(OrchestratorError::UnknownDeployment(id))?;
        if record.state != DeploymentState::Open {
            return Err(OrchestratorError::WrongState {
                deployment: id,
                state: record.state.kind(),
            });
        }
        Ok(&record.spec)
    }

    /// Verdict for every known processor, in account order. Does not mutate.
    pub fn explain(
        &self,
        id: DeploymentId,
        now: Timestamp,
    ) -> Result<Vec<CandidateVerdict>, OrchestratorError> {
        let spec = self.open_spec(id)?;
        Ok(self
            .processors()
            .map(|entry| CandidateVerdict {
                processor: entry.advertisement.processor.clone(),
                ask: entry.advertisement.ask_price_per_execution,
                score: entry.score(),
                verdict: self.check(
                    entry,
                    entry.advertisement.ask_price_per_execution,
                    spec,
                    now,
                ),
            })
            .collect())
    }

    pub fn handle(&self, processor: &AccountId) -> Option<ProcessorHandle> {
        self.index.get(processor).copied().map(ProcessorHandle)
    }

    /// True when `(ask, i)` ranks strictly before `(best_ask, b)`.
    fn ranks_before(&self, ask: Amount, i: usize, best_ask: Amount, b: usize) -> bool {
        if ask != best_ask {
            return ask < best_ask;
        }
        if self.config.rank_by_reputation {
            let (si, sb) = (self.processors[i].score(), self.processors[b].score());
            if si != sb {
                return si > sb;
            }
        }
        self.processors[i].advertisement.processor < self.processors[b].advertisement.processor
    }

    /// Picks the cheapest qualifying processor (ties: higher score, then
    /// account id) among all advertisements and assigns the deployment.
    pub fn match_deployment(
        &mut self,
        id: DeploymentId,
        now: Timestamp,
    ) -> Result<Option<Assignment>, OrchestratorError> {
        self.check_clock(now)?;
        self.rebuild_order();
        let spec = self.open_spec(id)?;
        let mut best: Option<(usize, Duration)> = None;
        for &i in &self.by_ask {
            let entry = &self.processors[i];
            let ask = entry.advertisement.ask_price_per_execution;
            if ask > spec.reward_per_execution {
                break;
            }
            if let Some((b, _)) = best {
                let leader = &self.processors[b];
                if ask > leader.advertisement.ask_price_per_execution {
                    break;
                }
                if !self.config.rank_by_reputation || entry.score() <= leader.score() {
                    continue;
                }
            }
            if let Ok(delay) = self.check(entry, ask, spec, now) {
                best = Some((i, delay));
                if !self.config.rank_by_reputation {
                    break;
                }
            }
        }
        match best {
            Some((winner, delay)) => self.assign(id, winner, delay, now).map(Some),
            None => Ok(None),
        }
    }

    /// Like [`match_deployment`](Self::match_deployment), but over the given
    /// candidates only, each quoting its own ask for this deployment.
    pub fn match_quotes(
        &mut self,
        id: DeploymentId,
        quotes: &[Quote],
        now: Timestamp,
    ) -> Result<Option<Assignment>, OrchestratorError> {
        self.check_clock(now)?;
        let spec = self.open_spec(id)?;
        let mut best: Option<(usize, Amount, Duration)> = None;
        for q in quotes {
            let i = q.processor.0;
            let entry = self.processors.get(i).ok_or_else(|| {
                OrchestratorError::UnknownProcessor(AccountId::new(format!("#{i}")))
            })?;
            if q.ask > spec.reward_per_execution {
                continue;
            }
            if let Some((b, best_ask, _)) = best {
                if !self.ranks_before(q.ask, i, best_ask, b) {
                    continue;
                }
            }
            if let Ok(delay) = self.check(entry, q.ask, spec, now) {
                best = Some((i, q.ask, delay));
            }
        }
        match best {
            Some((winner, _, delay)) => self.assign(id, winner, delay, now).map(Some),
            None => Ok(None),
        }
    }

    fn assign(
        &mut self,
        id: DeploymentId,
        winner: usize,
        delay: Duration,
        now: Timestamp,
    ) -> Result<Assignment, OrchestratorError> {
        let spec = self.deployments[&id].spec.clone();
        let slots = enumerate_executions(id, &spec.schedule, delay)?;
        self.processors[winner]
            .advertisement
            .calendar
            .insert_slots(&slots)?;
        let processor = self.processors[winner].advertisement.processor.clone();
        let assignment = Assignment {
            deployment: id,
            processor: processor.clone(),
            start_delay: delay,
            slots: slots.clone(),
            agreed_price_per_execution: spec.reward_per_execution,
        };

        let latest = spec.schedule.start + spec.schedule.max_start_delay;
        self.open_deadlines.remove(&(latest + 1, id));
        let grace = self.config.report_grace(spec.schedule.duration);
        for slot in &slots {
            self.pending_windows
                .insert((acceptance_window(slot, grace).end, id, slot.index));
        }
        let record = self.deployments.get_mut(&id).expect("checked open");
        record.state = crate::domain::transition(record.state, LifecycleEvent::Matched)?;
        record.state =
            crate::domain::transition(record.state, LifecycleEvent::AcknowledgedAllSlots)?;
        record.slots = vec![SlotStatus::Pending; slots.len()];
        record.assignment = Some(assignment.clone());
        self.record(
            Event::new(now, EventKind::Assigned, id)
                .processor(&processor)
                .amount(spec.reward_per_execution),
        );

        let k0 = Amount::from(execution_count(&spec.schedule, 0));
        let surplus = (k0 - slots.len() as Amount) * spec.reward_per_execution;
        if surplus > 0 {
            self.ledger.release(id, &spec.consumer, surplus);
            self.record(
                Event::new(now, EventKind::Refunded, id)
                    .processor(&spec.consumer)
                    .amount(surplus),
            );
        }
        self.finish_command();
        Ok(assignment)
    }

    /// Settles one execution. Timing is judged by the submission time `now`.
    pub fn submit_report(
        &mut self,
        report: &ExecutionReport,
        now: Timestamp,
    ) -> Result<ReportAck, OrchestratorError> {
        self.check_clock(now)?;
        let id = report.deployment;
        let record = self
            .deployments
            .get(&id)
            .ok_or(OrchestratorError::UnknownDeployment(id))?;
        if record.state != DeploymentState::Assigned {
            return Err(OrchestratorError::WrongState {
                deployment: id,
                state: record.state.kind(),
            });
        }
        let slot_pos = (report.execution as usize)
            .checked_sub(1)
            .filter(|p| *p < record.slots.len())
            .ok_or(OrchestratorError::UnknownExecution {
                deployment: id,
                execution: report.execution,
            })?;
        if record.slots[slot_pos] != SlotStatus::Pending {
            return Err(OrchestratorError::DuplicateReport {
                deployment: id,
                execution: report.execution,
            });
        }
        let assignment = record.assignment.as_ref().expect("assigned");
        let slot = assignment.slots[slot_pos];
        let grace = self.config.report_grace(record.spec.schedule.duration);
        let timing = classify_report(&slot, now, grace);
        let favorable = timing == ReportTiming::InWindow && report.outcome.is_success();
        self.pending_windows
            .remove(&(acceptance_window(&slot, grace).end, id, slot.index));
        self.settle(id, slot_pos, favorable, timing, now)
    }

    fn settle(
        &mut self,
        id: DeploymentId,
        slot_pos: usize,
        favorable: bool,
        timing: ReportTiming,
        now: Timestamp,
    ) -> Result<ReportAck, OrchestratorError> {
        let record = &self.deployments[&id];
        let assignment = record.assignment.as_ref().expect("assigned");
        let processor = assignment.processor.clone();
        let price = assignment.agreed_price_per_execution;
        let consumer = record.spec.consumer.clone();
        let execution = assignment.slots[slot_pos].index;

        let pi = self.processor_index(&processor)?;
        let updated = self.processors[pi]
            .reputation
            .record_outcome(favorable, price)?;
        self.processors[pi].reputation = updated;
        let score = updated.score();

        let (paid, refunded) = if favorable {
            self.ledger.release(id, &processor, price);
            (price, 0)
        } else {
            self.ledger.release(id, &consumer, price);
            (0, price)
        };

        let kind = match (favorable, timing) {
            (true, _) => EventKind::Favorable,
            (false, ReportTiming::InWindow) => EventKind::Unfavorable,
            (false, ReportTiming::OutOfWindow) => EventKind::Malus,
        };
        let rep_event = Event::new(now, kind, id)
            .execution(execution)
            .processor(&processor)
            .reputation(score);
        if favorable {
            self.record(
                Event::new(now, EventKind::Paid, id)
                    .execution(execution)
                    .processor(&processor)
                    .amount(price),
            );
            self.record(rep_event);
        } else {
            self.record(rep_event);
            self.record(
                Event::new(now, EventKind::Refunded, id)
                    .execution(execution)
                    .processor(&consumer)
                    .amount(price),
            );
        }

        let record = self.deployments.get_mut(&id).expect("exists");
        record.slots[slot_pos] = if favorable {
            SlotStatus::Succeeded
        } else {
            SlotStatus::Failed
        };
        let done = record.slots.iter().all(|s| *s != SlotStatus::Pending);
        if done {
            let outcome = record.tally();
            record.state = crate::domain::transition(
                record.state,
                LifecycleEvent::AllExecutionsReported { outcome },
            )?;
            self.record(
                Event::new(now, EventKind::Done, id)
                    .processor(&processor)
                    .amount(Amount::from(outcome.succeeded) * price),
            );
        }
        self.finish_command();
        Ok(ReportAck {
            deployment: id,
            execution,
            timing,
            favorable,
            paid,
            refunded,
            reputation_after: score,
            done,
        })
    }

    /// Moves the clock to `now`: closes elapsed acceptance windows as malus
    /// with refund, expires OPEN deployments that can no longer start, and
    /// prunes calendars. Returns the emitted events in (time, deployment,
    /// slot) order.
    pub fn advance_time(&mut self, now: Timestamp) -> Result<Vec<Event>, OrchestratorError> {
        self.check_clock(now)?;
        let first_new = self.events.len();

        while let Some(&(close, id, execution)) = self.pending_windows.first() {
            if close > now {
                break;
            }
            self.pending_windows.pop_first();
            self.settle(
                id,
                execution as usize - 1,
                false,
                ReportTiming::OutOfWindow,
                close,
            )?;
        }

        while let Some(&(deadline, id)) = self.open_deadlines.first() {
            if deadline > now {
                break;
            }
            self.open_deadlines.pop_first();
            let consumer = self.deployments[&id].spec.consumer.clone();
            let locked = self.ledger.locked(id);
            if locked > 0 {
                self.ledger.release(id, &consumer, locked);
            }
            self.record(
                Event::new(deadline, EventKind::Expired, id)
                    .processor(&consumer)
                    .amount(locked),
            );
        }

        for entry in &mut self.processors {
            entry.advertisement.calendar.prune_before(now);
        }
        self.clock = now;
        self.events[first_new..].sort_by_key(Event::sort_key);
        self.finish_command();
        Ok(self.events[first_new..].to_vec())
    }

    /// OPEN deployments that expired without a match are no longer tracked
    /// for expiry.
    pub fn is_expired(&self, id: DeploymentId) -> bool {
        self.deployments.get(&id).is_some_and(|r| {
            r.state == DeploymentState::Open
                && !self.open_deadlines.contains(&(
                    r.spec.schedule.start + r.spec.schedule.max_start_delay + 1,
                    id,
                ))
        })
    }
}
