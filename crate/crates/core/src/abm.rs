//! Agent-based evaluation of reputation-gated matching.
//!
//! Processors are split into equal groups that differ only in the
//! probability that an execution succeeds. Every step each consumer posts
//! one single-execution deployment; some consumers require a minimum
//! reputation. The orchestrator matches each deployment as it arrives,
//! processors run and report, and the resulting event stream is folded into
//! per-group rewards, deployment shares, the failure rate of allocated
//! executions and the Gini coefficient of processor rewards.
//!
//! A step offers every processor `slots_per_processor` back-to-back
//! execution slots, so supply exceeds demand and the choice of processor
//! (rather than mere availability) decides who earns. Every processor quotes
//! a fresh price for each deployment and the cheapest eligible quote wins,
//! so among eligible processors the winner is effectively drawn at random.

use crate::attestation::{AttestationRecord, AttestationRegistry};
use crate::domain::{
    tokens_to_units, units_to_tokens, AccountId, Amount, DeploymentId, DeploymentSpec,
    ExecutionOutcome, ExecutionReport, ResourceRequirements, Schedule, Timestamp,
};
use crate::orchestrator::{
    Event, EventKind, Orchestrator, OrchestratorConfig, OrchestratorError, ProcessorAdvertisement,
    Quote,
};
use crate::reputation::{ReputationAccumulator, ReputationParams, DEFAULT_LAMBDA};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbmError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },
    #[error("gini of an empty list")]
    EmptyInput,
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> AbmError {
    AbmError::ConfigInvalid {
        field,
        reason: reason.into(),
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_processors: usize,
    pub n_consumers: usize,
    pub steps: u32,
    pub iterations: u32,
    pub group_success_rates: Vec<f64>,
    pub reputation_enabled: bool,
    /// Probability that a consumer sets a minimum reputation.
    pub p_min_rep_consumer: f64,
    pub min_rep_distribution: Range,
    /// Reward per execution, in tokens.
    pub reward_distribution: Range,
    /// Processor quote per execution, in tokens, drawn afresh by every
    /// processor for every deployment.
    pub ask_distribution: Range,
    pub slots_per_processor: u32,
    pub execution_ms: u64,
    pub lambda: f64,
    pub report_grace_permille: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_processors: 300,
            n_consumers: 900,
            steps: 200,
            iterations: 10,
            group_success_rates: vec![0.8, 0.9, 0.99],
            reputation_enabled: true,
            p_min_rep_consumer: 0.5,
            min_rep_distribution: Range::new(0.8, 1.0),
            reward_distribution: Range::new(90.0, 110.0),
            ask_distribution: Range::new(70.0, 90.0),
            slots_per_processor: 10,
            execution_ms: 1_000,
            lambda: DEFAULT_LAMBDA,
            report_grace_permille: 100,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), AbmError> {
        let groups = self.group_success_rates.len();
        if groups == 0 {
            return Err(invalid(
                "group_success_rates",
                "at least one group required",
            ));
        }
        if !self.n_processors.is_multiple_of(groups) {
            return Err(invalid(
                "n_processors",
                format!("{} is not divisible by {groups} groups", self.n_processors),
            ));
        }
        if self
            .group_success_rates
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(invalid("group_success_rates", "rates must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_min_rep_consumer) {
            return Err(invalid("p_min_rep_consumer", "must lie in [0, 1]"));
        }
        let m = self.min_rep_distribution;
        if !m.is_valid() || m.lo < 0.0 || m.hi > 1.0 {
            return Err(invalid(
                "min_rep_distribution",
                "must be a sub-interval of [0, 1]",
            ));
        }
        let r = self.reward_distribution;
        if !r.is_valid() || tokens_to_units(r.lo) == 0 {
            return Err(invalid(
                "reward_distribution",
                "must be a positive interval",
            ));
        }
        let a = self.ask_distribution;
        if !a.is_valid() || a.lo < 0.0 {
            return Err(invalid(
                "ask_distribution",
                "must be a non-negative interval",
            ));
        }
        if self.slots_per_processor == 0 {
            return Err(invalid("slots_per_processor", "must be positive"));
        }
        if self.execution_ms == 0 {
            return Err(invalid("execution_ms", "must be positive"));
        }
        ReputationParams::new(self.lambda).map_err(|e| invalid("lambda", e.to_string()))?;
        Ok(())
    }

    pub fn groups(&self) -> usize {
        self.group_success_rates.len()
    }

    /// Length of one step: the processor slots plus one slot of slack for
    /// late reports to close.
    pub fn step_ms(&self) -> u64 {
        (u64::from(self.slots_per_processor) + 1) * self.execution_ms
    }

    pub fn processor_id(&self, index: usize) -> AccountId {
        AccountId::new(format!("p{index:04}"))
    }

    /// Groups are interleaved over processor ids so that account-id
    /// tie-breaks do not favor a group.
    pub fn group_of(&self, index: usize) -> usize {
        index % self.groups()
    }

    pub fn iteration_seed(&self, iteration: u32) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(iteration));
        rng.gen()
    }
}

/// Random streams of one iteration, one per agent class.
struct Streams {
    consumers: ChaCha8Rng,
    processors: ChaCha8Rng,
    outcomes: ChaCha8Rng,
    order: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |n: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            rng
        };
        Self {
            consumers: stream(1),
            processors: stream(2),
            outcomes: stream(3),
            order: stream(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Mean cumulative reward per processor, in tokens, per group.
    pub group_mean_reward: Vec<f64>,
    /// Fraction of allocated executions per group.
    pub group_share: Vec<f64>,
    pub failure_rate: f64,
    pub gini: f64,
    pub allocated: u64,
    pub failed: u64,
    /// `trajectory[step][group]` is the group's mean score after the step.
    pub trajectory: Vec<Vec<f64>>,
}

/// Folds an event stream into [`SimMetrics`]. Steps are delimited by event
/// time, so the same fold over a stored log reproduces the live result.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    groups: usize,
    step_ms: u64,
    index: BTreeMap<AccountId, usize>,
    group_of: Vec<usize>,
    rewards: Vec<Amount>,
    scores: Vec<f64>,
    assigned: Vec<u64>,
    allocated: u64,
    failed: u64,
    trajectory: Vec<Vec<f64>>,
}

impl MetricsAccumulator {
    pub fn new(config: &SimConfig) -> Self {
        let params = ReputationParams::new(config.lambda).unwrap_or_default();
        let initial = ReputationAccumulator::new(params).score();
        let n = config.n_processors;
        Self {
            groups: config.groups(),
            step_ms: config.step_ms(),
            index: (0..n).map(|i| (config.processor_id(i), i)).collect(),
            group_of: (0..n).map(|i| config.group_of(i)).collect(),
            rewards: vec![0; n],
            scores: vec![initial; n],
            assigned: vec![0; config.groups()],
            allocated: 0,
            failed: 0,
            trajectory: Vec::new(),
        }
    }

    fn close_steps_before(&mut self, step: usize) {
        while self.trajectory.len() < step {
            let mut sum = vec![0.0; self.groups];
            let mut count = vec![0usize; self.groups];
            for (i, s) in self.scores.iter().enumerate() {
                sum[self.group_of[i]] += s;
                count[self.group_of[i]] += 1;
            }
            let means = sum
                .iter()
                .zip(&count)
                .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
                .collect();
            self.trajectory.push(means);
        }
    }

    pub fn observe(&mut self, event: &Event) {
        self.close_steps_before((event.time / self.step_ms) as usize);
        let Some(&p) = event.processor.as_ref().and_then(|id| self.index.get(id)) else {
            return;
        };
        match event.kind {
            EventKind::Assigned => self.assigned[self.group_of[p]] += 1,
            EventKind::Paid => self.rewards[p] += event.amount,
            EventKind::Favorable | EventKind::Unfavorable | EventKind::Malus => {
                self.allocated += 1;
                if event.kind != EventKind::Favorable {
                    self.failed += 1;
                }
                if let Some(score) = event.reputation_after {
                    self.scores[p] = score;
                }
            }
            _ => {}
        }
    }

    pub fn rewards(&self) -> &[Amount] {
        &self.rewards
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn finish(mut self, steps: u32) -> SimMetrics {
        self.close_steps_before(steps as usize);
        let mut reward_sum = vec![0u128; self.groups];
        let mut members = vec![0usize; self.groups];
        for (i, r) in self.rewards.iter().enumerate() {
            reward_sum[self.group_of[i]] += u128::from(*r);
            members[self.group_of[i]] += 1;
        }
        let group_mean_reward = reward_sum
            .iter()
            .zip(&members)
            .map(|(s, m)| {
                if *m == 0 {
                    0.0
                } else {
                    units_to_tokens(*s as Amount) / *m as f64
                }
            })
            .collect();
        let total_assigned: u64 = self.assigned.iter().sum();
        let group_share = self
            .assigned
            .iter()
            .map(|a| {
                if total_assigned == 0 {
                    0.0
                } else {
                    *a as f64 / total_assigned as f64
                }
            })
            .collect();
        let failure_rate = if self.allocated == 0 {
            0.0
        } else {
            self.failed as f64 / self.allocated as f64
        };
        let gini = gini(&self.rewards).unwrap_or(0.0);
        SimMetrics {
            group_mean_reward,
            group_share,
            failure_rate,
            gini,
            allocated: self.allocated,
            failed: self.failed,
            trajectory: self.trajectory,
        }
    }
}

/// Gini coefficient `Σᵢ Σⱼ |xᵢ − xⱼ| / (2 n² x̄)`, evaluated exactly on
/// the sorted values; 0 when every value is 0.
pub fn gini(values: &[Amount]) -> Result<f64, AbmError> {
    if values.is_empty() {
        return Err(AbmError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u128;
    let total: u128 = sorted.iter().map(|v| u128::from(*v)).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let ranked: u128 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (i as u128 + 1) * u128::from(*v))
        .sum();
    let numerator = 2 * ranked - (n + 1) * total;
    Ok(numerator as f64 / (n * total) as f64)
}

/// Final state of one processor in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorRecord {
    pub iteration: u32,
    pub processor: AccountId,
    pub group: usize,
    pub reputation: f64,
    /// Tokens.
    pub cumulative_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: u32,
    pub seed: u64,
    pub metrics: SimMetrics,
    pub processors: Vec<ProcessorRecord>,
    /// Full event log, when requested.
    #[serde(skip)]
    pub log: Option<Vec<Event>>,
}

fn setup(config: &SimConfig) -> Result<Orchestrator, AbmError> {
    let orchestrator_config = OrchestratorConfig {
        reputation: ReputationParams::new(config.lambda)
            .map_err(|e| invalid("lambda", e.to_string()))?,
        report_grace_permille: config.report_grace_permille,
        rank_by_reputation: config.reputation_enabled,
    };
    let mut registry = AttestationRegistry::new();
    for i in 0..config.n_processors {
        registry
            .register(AttestationRecord {
                processor: config.processor_id(i),
                device_model: "simulated".into(),
                security_level: 0,
                issued_at: 0,
                expires_at: u64::MAX,
                revoked: false,
            })
            .expect("ids are unique");
    }
    let mut orchestrator = Orchestrator::new(orchestrator_config, registry);
    for i in 0..config.n_processors {
        orchestrator.advertise(ProcessorAdvertisement::new(config.processor_id(i), 0));
    }
    Ok(orchestrator)
}

/// Runs one iteration. Deterministic in `(config, seed)`.
pub fn run_iteration(
    config: &SimConfig,
    iteration: u32,
    seed: u64,
    keep_log: bool,
) -> Result<IterationOutcome, AbmError> {
    config.validate()?;
    let mut orchestrator = setup(config)?;
    let mut streams = Streams::new(seed);
    let mut metrics = MetricsAccumulator::new(config);
    let mut log = keep_log.then(Vec::new);
    let step_ms = config.step_ms();
    let exec = config.execution_ms;
    let slots = u64::from(config.slots_per_processor);
    let consumers: Vec<AccountId> = (0..config.n_consumers)
        .map(|c| AccountId::new(format!("c{c:04}")))
        .collect();
    let processor_ids: Vec<AccountId> = (0..config.n_processors)
        .map(|i| config.processor_id(i))
        .collect();
    let mut quotes: Vec<Quote> = processor_ids
        .iter()
        .map(|id| Quote {
            processor: orchestrator.handle(id).expect("advertised"),
            ask: 0,
        })
        .collect();
    let mut order: Vec<usize> = (0..config.n_consumers).collect();
    let mut assigned = Vec::with_capacity(config.n_consumers);

    let mut flush = |orchestrator: &mut Orchestrator, metrics: &mut MetricsAccumulator| {
        let events = orchestrator.drain_events();
        for e in &events {
            metrics.observe(e);
        }
        if let Some(log) = log.as_mut() {
            log.extend(events);
        }
    };

    for step in 0..u64::from(config.steps) {
        let t0: Timestamp = step * step_ms;
        orchestrator.advance_time(t0)?;
        order.shuffle(&mut streams.order);
        assigned.clear();
        for &c in &order {
            let reward = tokens_to_units(config.reward_distribution.sample(&mut streams.consumers));
            let gated = streams.consumers.gen_bool(config.p_min_rep_consumer);
            let threshold = config
                .min_rep_distribution
                .sample(&mut streams.consumers)
                .min(1.0 - f64::EPSILON);
            let id = DeploymentId(step * config.n_consumers as u64 + c as u64);
            let spec = DeploymentSpec {
                id,
                consumer: consumers[c].clone(),
                schedule: Schedule {
                    start: t0,
                    end: t0 + slots * exec,
                    interval: slots * exec,
                    duration: exec,
                    max_start_delay: (slots - 1) * exec,
                },
                reward_per_execution: reward,
                min_reputation: (config.reputation_enabled && gated).then_some(threshold),
                min_security_level: None,
                destination: String::new(),
                resource_requirements: ResourceRequirements::default(),
            };
            orchestrator.ledger_mut().mint(&spec.consumer, reward);
            orchestrator.register_deployment(spec, t0)?;
            for q in quotes.iter_mut() {
                q.ask = tokens_to_units(config.ask_distribution.sample(&mut streams.processors));
            }
            if let Some(a) = orchestrator.match_quotes(id, &quotes, t0)? {
                assigned.push(a);
            }
        }
        assigned.sort_by_key(|a| (a.slots[0].end, a.deployment));
        for a in &assigned {
            let index: usize = a.processor.as_str()[1..].parse().expect("simulated id");
            let p = config.group_success_rates[config.group_of(index)];
            let ok = streams.outcomes.gen_bool(p);
            let slot = a.slots[0];
            let outcome = if ok {
                ExecutionOutcome::Success {
                    settlement_ref: String::new(),
                }
            } else {
                ExecutionOutcome::Failure {
                    error: "execution failed".into(),
                }
            };
            let report = ExecutionReport {
                deployment: a.deployment,
                execution: slot.index,
                outcome,
                reported_at: slot.end,
            };
            orchestrator.submit_report(&report, slot.end)?;
        }
        flush(&mut orchestrator, &mut metrics);
    }
    orchestrator.advance_time(u64::from(config.steps) * step_ms)?;
    flush(&mut orchestrator, &mut metrics);
    debug_assert!(orchestrator.ledger().verify());

    let processors = (0..config.n_processors)
        .map(|i| {
            let entry = orchestrator
                .processor(&processor_ids[i])
                .expect("registered");
            ProcessorRecord {
                iteration,
                processor: processor_ids[i].clone(),
                group: config.group_of(i),
                reputation: entry.score(),
                cumulative_reward: units_to_tokens(metrics.rewards()[i]),
            }
        })
        .collect();
    Ok(IterationOutcome {
        iteration,
        seed,
        metrics: metrics.finish(config.steps),
        processors,
        log,
    })
}

/// Recomputes an iteration's metrics from its event log.
pub fn metrics_from_log(config: &SimConfig, events: &[Event]) -> SimMetrics {
    let mut acc = MetricsAccumulator::new(config);
    for e in events {
        acc.observe(e);
    }
    acc.finish(config.steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: SimConfig,
    pub iterations: Vec<IterationOutcome>,
    /// Means over iterations.
    pub aggregate: SimMetrics,
}

impl ExperimentResult {
    pub fn processor_records(&self) -> impl Iterator<Item = &ProcessorRecord> {
        self.iterations.iter().flat_map(|i| i.processors.iter())
    }
}

fn mean_metrics(runs: &[SimMetrics], groups: usize, steps: usize) -> SimMetrics {
    let n = runs.len().max(1) as f64;
    let mean_vec = |f: &dyn Fn(&SimMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..groups)
            .map(|g| runs.iter().map(|r| f(r)[g]).sum::<f64>() / n)
            .collect()
    };
    SimMetrics {
        group_mean_reward: mean_vec(&|r| &r.group_mean_reward),
        group_share: mean_vec(&|r| &r.group_share),
        failure_rate: runs.iter().map(|r| r.failure_rate).sum::<f64>() / n,
        gini: runs.iter().map(|r| r.gini).sum::<f64>() / n,
        allocated: runs.iter().map(|r| r.allocated).sum(),
        failed: runs.iter().map(|r| r.failed).sum(),
        trajectory: (0..steps)
            .map(|s| {
                (0..groups)
                    .map(|g| runs.iter().map(|r| r.trajectory[s][g]).sum::<f64>() / n)
                    .collect()
            })
            .collect(),
    }
}

/// Runs `config.iterations` independent iterations in parallel.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult, AbmError> {
    config.validate()?;
    let iterations = (0..config.iterations)
        .into_par_iter()
        .map(|i| run_iteration(config, i, config.iteration_seed(i), false))
        .collect::<Result<Vec<_>, _>>()?;
    let runs: Vec<SimMetrics> = iterations.iter().map(|i| i.metrics.clone()).collect();
    let aggregate = mean_metrics(&runs, config.groups(), config.steps as usize);
    Ok(ExperimentResult {
        config: config.clone(),
        iterations,
        aggregate,
    })
}

/// Reputation-on versus reputation-off over the same iteration seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub with_reputation: ExperimentResult,
    pub without_reputation: ExperimentResult,
}

impl PairedComparison {
    pub fn run(config: &SimConfig) -> Result<Self, AbmError> {
        let with_reputation = run_experiment(&SimConfig {
            reputation_enabled: true,
            ..config.clone()
        })?;
        let without_reputation = run_experiment(&SimConfig {
            reputation_enabled: false,
            ..config.clone()
        })?;
        Ok(Self {
            with_reputation,
            without_reputation,
        })
    }

    /// `(off − on) / off` of the aggregate failure rate.
    pub fn failure_rate_reduction(&self) -> f64 {
        let off = self.without_reputation.aggregate.failure_rate;
        (off - self.with_reputation.aggregate.failure_rate) / off
    }

    /// `(on − off) / off` of a group's mean reward.
    pub fn income_change(&self, group: usize) -> f64 {
        let off = self.without_reputation.aggregate.group_mean_reward[group];
        (self.with_reputation.aggregate.group_mean_reward[group] - off) / off
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&SimMetrics, &SimMetrics)> {
        self.with_reputation
            .iterations
            .iter()
            .zip(&self.without_reputation.iterations)
            .map(|(on, off)| (&on.metrics, &off.metrics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise_gini(values: &[Amount]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().map(|v| *v as f64).sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for a in values {
            for b in values {
                sum += (*a as f64 - *b as f64).abs();
            }
        }
        sum / (2.0 * n * n * mean)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5, 5, 5]).unwrap(), 0.0);
        assert_eq!(gini(&[0, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[1, 2, 3, 4]).unwrap(), 0.25);
        assert_eq!(pairwise_gini(&[1, 2, 3, 4]), 0.25);
        for n in 1..20u64 {
            let mut v = vec![0; n as usize];
            v[0] = 7;
            assert!((gini(&v).unwrap() - (n - 1) as f64 / n as f64).abs() < 1e-15);
        }
        assert_eq!(gini(&[]), Err(AbmError::EmptyInput));
    }

    proptest::proptest! {
        #[test]
        fn gini_matches_pairwise_oracle(values in proptest::collection::vec(0u64..1_000_000, 1..60)) {
            let fast = gini(&values).unwrap();
            proptest::prop_assert!((fast - pairwise_gini(&values)).abs() < 1e-12);
            proptest::prop_assert!((0.0..1.0).contains(&fast));
        }
    }

    fn small() -> SimConfig {
        SimConfig {
            n_processors: 30,
            n_consumers: 90,
            steps: 40,
            iterations: 3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn config_validation_names_the_field() {
        let bad = SimConfig {
            n_processors: 31,
            ..small()
        };
        assert!(matches!(
            bad.validate(),
            Err(AbmError::ConfigInvalid {
                field: "n_processors",
                ..
            })
        ));
        let bad = SimConfig {
            group_success_rates: vec![0.5, 1.5],
            n_processors: 30,
            ..small()
        };
        assert!(matches!(
            bad.validate(),
            Err(AbmError::ConfigInvalid {
                field: "group_success_rates",
                ..
            })
        ));
        let bad = SimConfig {
            lambda: 1.0,
            ..small()
        };
        assert!(matches!(
            bad.validate(),
            Err(AbmError::ConfigInvalid {
                field: "lambda",
                ..
            })
        ));
    }

    #[test]
    fn zero_steps_gives_empty_metrics() {
        let out = run_iteration(
            &SimConfig {
                steps: 0,
                ..small()
            },
            0,
            1,
            false,
        )
        .unwrap();
        assert_eq!(out.metrics.allocated, 0);
        assert_eq!(out.metrics.failure_rate, 0.0);
        assert_eq!(out.metrics.gini, 0.0);
        assert!(out.metrics.trajectory.is_empty());
        assert!(out.metrics.group_share.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn perfect_processors_never_fail() {
        let config = SimConfig {
            group_success_rates: vec![1.0, 1.0, 1.0],
            ..small()
        };
        let out = run_iteration(&config, 0, 9, false).unwrap();
        assert_eq!(out.metrics.failure_rate, 0.0);
        assert!(out.metrics.gini < 0.2);
    }

    #[test]
    fn ungated_deployments_are_all_allocated() {
        let config = SimConfig {
            reputation_enabled: false,
            ..small()
        };
        let out = run_iteration(&config, 0, 5, false).unwrap();
        assert_eq!(
            out.metrics.allocated,
            u64::from(config.steps) * config.n_consumers as u64
        );
        let share: f64 = out.metrics.group_share.iter().sum();
        assert!((share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_replay_from_log() {
        let config = small();
        let out = run_iteration(&config, 0, 77, true).unwrap();
        let log = out.log.unwrap();
        let mut buf = Vec::new();
        crate::orchestrator::write_event_log(&log, &mut buf).unwrap();
        let back = crate::orchestrator::read_event_log(&buf[..]).unwrap();
        assert_eq!(metrics_from_log(&config, &back), out.metrics);
    }

    #[test]
    fn iterations_are_deterministic() {
        let config = small();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.processor_records().count(), 90);
        assert_ne!(a.iterations[0].metrics, a.iterations[1].metrics);
    }

    #[test]
    fn scores_in_records_match_log() {
        let config = small();
        let out = run_iteration(&config, 0, 3, true).unwrap();
        let mut acc = MetricsAccumulator::new(&config);
        for e in out.log.as_ref().unwrap() {
            acc.observe(e);
        }
        for (i, r) in out.processors.iter().enumerate() {
            assert_eq!(r.reputation, acc.scores()[i]);
        }
    }
}
