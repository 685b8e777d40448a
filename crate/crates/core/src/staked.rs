//! Epoch economy for staked compute.
//!
//! Every epoch the emission is split into a staked-compute pool, a base
//! benchmark pool, the treasury and the collators. Both compute pools are
//! further divided into four benchmark metric pools (CPU single core, CPU
//! multi core, RAM, storage) by fixed weights. Inside a metric pool a
//! committer's score is its staking weight capped by the target weight times
//! its committed compute:
//!
//! ```text
//! W_c = s_c · τ_c / τ_max            W_D = Σ_d s_d · τ_d / τ_max
//! T_p = 0.8 · S / M_p                θ_c = min(W_c + W_D, T_p · m_c)
//! r_c = R_p · θ_c / Σ θ
//! ```
//!
//! Committers that fall short of their committed compute are slashed by
//! `s · ρ · Σ_p w_p · δ_p`, at most `ρ · s` per epoch; 90% of a slash is
//! burned and 10% goes to the slasher.
//!
//! Token amounts are integers; every split floors and assigns the residue
//! deterministically (pool residues to the treasury, delegation residues to
//! the committer, slash residues to the committer's own stake).

use crate::domain::{AccountId, Amount};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Epoch length in milliseconds (1.5 hours).
pub const EPOCH_MS: u64 = 90 * 60 * 1000;
/// Heartbeat cadence in milliseconds (30 minutes).
pub const HEARTBEAT_MS: u64 = 30 * 60 * 1000;
pub const HEARTBEATS_PER_EPOCH: u64 = EPOCH_MS / HEARTBEAT_MS;
/// Maximum cooldown of about 3.68 years, in epochs.
pub const DEFAULT_TAU_MAX: u64 = 21_491;
/// 0.003424657534% per epoch.
pub const DEFAULT_MAX_SLASH_RATE: f64 = 0.003424657534 / 100.0;
pub const DEFAULT_EXECUTION_BONUS: f64 = 1.10;
/// Committed compute may be at most this fraction of measured compute.
pub const COMMIT_CAP: f64 = 0.8;
/// Share of total supply targeted for staking in the target weight.
pub const TARGET_STAKE_SHARE: f64 = 0.8;
/// Fraction of a slash paid to the slasher; the rest is burned.
pub const SLASHER_SHARE_PERCENT: u64 = 10;
/// Own stake must be at least 1/10 of the total commitment stake.
pub const MAX_DELEGATION_RATIO: u64 = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StakingError {
    #[error("cooldown {cooldown} outside (0, {tau_max}]")]
    CooldownOutOfRange { cooldown: u64, tau_max: u64 },
    #[error("metric total is zero, pool distributes nothing")]
    EmptyPool,
    #[error("committer and delegator weights are both zero")]
    ZeroWeight,
    #[error("commitment of {0} is not in the required status")]
    WrongStatus(AccountId),
    #[error("cooldown of {committer} ends at epoch {ready_at}")]
    CooldownNotElapsed { committer: AccountId, ready_at: u64 },
    #[error("delegation fee may only decrease ({current} -> {requested})")]
    FeeIncrease { current: f64, requested: f64 },
    #[error("invalid commitment: {0}")]
    InvalidCommitment(String),
    #[error("invalid inflation config: {0}")]
    InvalidConfig(String),
    #[error("delegation rejected: {0}")]
    DelegationRejected(DelegationRejection),
    #[error("unknown committer {0}")]
    UnknownCommitter(AccountId),
    #[error("{account} holds {available}, needs {required}")]
    InsufficientFunds {
        account: AccountId,
        available: Amount,
        required: Amount,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CpuSingle,
    CpuMulti,
    Ram,
    Storage,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::CpuSingle,
        Metric::CpuMulti,
        Metric::Ram,
        Metric::Storage,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::CpuSingle => "cpu_single",
            Metric::CpuMulti => "cpu_multi",
            Metric::Ram => "ram",
            Metric::Storage => "storage",
        }
    }

    /// Table weight in units of 1e-4. The four entries sum to 9998.
    pub fn raw_weight(self) -> u64 {
        RAW_WEIGHTS[self.index()]
    }

    /// Table weight normalized so the four weights sum to one.
    pub fn weight(self) -> f64 {
        self.raw_weight() as f64 / RAW_WEIGHT_SUM as f64
    }
}

const RAW_WEIGHTS: [u64; 4] = [2307, 2307, 4615, 769];
const RAW_WEIGHT_SUM: u64 = 2307 + 2307 + 4615 + 769;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkVector {
    pub cpu_single: f64,
    pub cpu_multi: f64,
    pub ram: f64,
    pub storage: f64,
}

impl BenchmarkVector {
    pub fn new(cpu_single: f64, cpu_multi: f64, ram: f64, storage: f64) -> Self {
        Self {
            cpu_single,
            cpu_multi,
            ram,
            storage,
        }
    }

    pub fn splat(v: f64) -> Self {
        Self::new(v, v, v, v)
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::CpuSingle => self.cpu_single,
            Metric::CpuMulti => self.cpu_multi,
            Metric::Ram => self.ram,
            Metric::Storage => self.storage,
        }
    }

    pub fn get_mut(&mut self, metric: Metric) -> &mut f64 {
        match metric {
            Metric::CpuSingle => &mut self.cpu_single,
            Metric::CpuMulti => &mut self.cpu_multi,
            Metric::Ram => &mut self.ram,
            Metric::Storage => &mut self.storage,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.cpu_single * factor,
            self.cpu_multi * factor,
            self.ram * factor,
            self.storage * factor,
        )
    }

    pub fn is_valid(&self) -> bool {
        Metric::ALL.iter().all(|m| {
            let v = self.get(*m);
            v.is_finite() && v >= 0.0
        })
    }

    /// Component-wise mean; the zero vector for an empty input.
    pub fn mean(samples: &[BenchmarkVector]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sum = Self::default();
        for s in samples {
            for m in Metric::ALL {
                *sum.get_mut(m) += s.get(m);
            }
        }
        sum.scaled(1.0 / samples.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CommitmentStatus {
    Active,
    CoolingDown { since: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Delegation {
    pub delegator: AccountId,
    pub stake: Amount,
    /// Epochs.
    pub cooldown: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakeCommitment {
    pub committer: AccountId,
    pub stake: Amount,
    /// Epochs.
    pub cooldown: u64,
    pub committed: BenchmarkVector,
    pub fee: f64,
    pub delegations: Vec<Delegation>,
    pub status: CommitmentStatus,
}

impl StakeCommitment {
    pub fn delegated(&self) -> Amount {
        self.delegations.iter().map(|d| d.stake).sum()
    }

    pub fn total_stake(&self) -> Amount {
        self.stake + self.delegated()
    }

    pub fn is_cooling_down(&self) -> bool {
        matches!(self.status, CommitmentStatus::CoolingDown { .. })
    }

    pub fn committer_weight(&self, tau_max: u64) -> Result<f64, StakingError> {
        staking_weight(self.stake, self.cooldown, tau_max, self.is_cooling_down())
    }

    pub fn delegation_weights(&self, tau_max: u64) -> Result<Vec<f64>, StakingError> {
        self.delegations
            .iter()
            .map(|d| staking_weight(d.stake, d.cooldown, tau_max, self.is_cooling_down()))
            .collect()
    }

    /// Lowers the delegation fee. Raising it is refused.
    pub fn set_fee(&mut self, fee: f64) -> Result<(), StakingError> {
        if fee > self.fee || !(0.0..=1.0).contains(&fee) {
            return Err(StakingError::FeeIncrease {
                current: self.fee,
                requested: fee,
            });
        }
        self.fee = fee;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionSplit {
    pub staked_pool: f64,
    pub treasury: f64,
    pub base_benchmark: f64,
    pub collators: f64,
}

impl Default for EmissionSplit {
    fn default() -> Self {
        Self {
            staked_pool: 0.70,
            treasury: 0.15,
            base_benchmark: 0.10,
            collators: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationConfig {
    pub emission_per_epoch: Amount,
    #[serde(default)]
    pub split: EmissionSplit,
    #[serde(default = "default_max_slash_rate")]
    pub max_slash_rate: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: u64,
    #[serde(default = "default_execution_bonus")]
    pub execution_bonus: f64,
}

fn default_max_slash_rate() -> f64 {
    DEFAULT_MAX_SLASH_RATE
}

fn default_tau_max() -> u64 {
    DEFAULT_TAU_MAX
}

fn default_execution_bonus() -> f64 {
    DEFAULT_EXECUTION_BONUS
}

impl Default for InflationConfig {
    fn default() -> Self {
        Self {
            emission_per_epoch: 1_000_000_000,
            split: EmissionSplit::default(),
            max_slash_rate: DEFAULT_MAX_SLASH_RATE,
            tau_max: DEFAULT_TAU_MAX,
            execution_bonus: DEFAULT_EXECUTION_BONUS,
        }
    }
}

const PPB: u128 = 1_000_000_000;

fn to_ppb(fraction: f64) -> u128 {
    (fraction * PPB as f64).round() as u128
}

impl InflationConfig {
    pub fn validate(&self) -> Result<(), StakingError> {
        let s = &self.split;
        let parts = [s.staked_pool, s.treasury, s.base_benchmark, s.collators];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(StakingError::InvalidConfig(
                "split fractions must lie in [0, 1]".into(),
            ));
        }
        if parts.iter().map(|p| to_ppb(*p)).sum::<u128>() != PPB {
            return Err(StakingError::InvalidConfig(
                "split fractions must sum to 1".into(),
            ));
        }
        if !(self.max_slash_rate >= 0.0 && self.max_slash_rate <= 1.0) {
            return Err(StakingError::InvalidConfig(
                "max_slash_rate must lie in [0, 1]".into(),
            ));
        }
        if self.tau_max == 0 {
            return Err(StakingError::InvalidConfig(
                "tau_max must be positive".into(),
            ));
        }
        if !(self.execution_bonus.is_finite() && self.execution_bonus >= 1.0) {
            return Err(StakingError::InvalidConfig(
                "execution_bonus must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Integer split of one epoch's emission. Flooring residue goes to the
    /// treasury.
    pub fn split_emission(&self, emission: Amount) -> EmissionTranches {
        let e = u128::from(emission);
        let part = |f: f64| (e * to_ppb(f) / PPB) as Amount;
        let staked_pool = part(self.split.staked_pool);
        let base_benchmark = part(self.split.base_benchmark);
        let collators = part(self.split.collators);
        let treasury = emission - staked_pool - base_benchmark - collators;
        EmissionTranches {
            staked_pool,
            base_benchmark,
            collators,
            treasury,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionTranches {
    pub staked_pool: Amount,
    pub base_benchmark: Amount,
    pub collators: Amount,
    pub treasury: Amount,
}

/// Splits `amount` over the four metric pools by table weight, flooring.
pub fn split_by_metric(amount: Amount) -> [Amount; 4] {
    let a = u128::from(amount);
    let mut out = [0; 4];
    for m in Metric::ALL {
        out[m.index()] = (a * u128::from(m.raw_weight()) / u128::from(RAW_WEIGHT_SUM)) as Amount;
    }
    out
}

/// `s · τ / τ_max`, halved while the owner is cooling down.
pub fn staking_weight(
    stake: Amount,
    cooldown: u64,
    tau_max: u64,
    cooling_down: bool,
) -> Result<f64, StakingError> {
    if cooldown == 0 || cooldown > tau_max {
        return Err(StakingError::CooldownOutOfRange { cooldown, tau_max });
    }
    let weight = stake as f64 * cooldown as f64 / tau_max as f64;
    Ok(if cooling_down { weight * 0.5 } else { weight })
}

/// `0.8 · S / M_p`.
pub fn target_weight(total_supply: u128, metric_total: f64) -> Result<f64, StakingError> {
    if metric_total.is_nan() || metric_total <= 0.0 {
        return Err(StakingError::EmptyPool);
    }
    Ok(TARGET_STAKE_SHARE * total_supply as f64 / metric_total)
}

pub fn committer_score(
    committer_weight: f64,
    delegators_weight: f64,
    target: f64,
    committed: f64,
) -> f64 {
    (committer_weight + delegators_weight).min(target * committed)
}

/// Real-valued delegator reward `W_d(1-φ)r_c/(W_c+W_D) - ψ_d`, floored at 0.
pub fn delegator_reward(
    delegator_weight: f64,
    fee: f64,
    committer_reward: f64,
    committer_weight: f64,
    delegators_weight: f64,
    slash: f64,
) -> Result<f64, StakingError> {
    let total = committer_weight + delegators_weight;
    if total.is_nan() || total <= 0.0 {
        return Err(StakingError::ZeroWeight);
    }
    Ok((delegator_weight * (1.0 - fee) * committer_reward / total - slash).max(0.0))
}

/// What the committer keeps before slashing: `r_c(W_c + φ·W_D)/(W_c+W_D)`.
pub fn committer_take(
    fee: f64,
    committer_reward: f64,
    committer_weight: f64,
    delegators_weight: f64,
) -> Result<f64, StakingError> {
    let total = committer_weight + delegators_weight;
    if total.is_nan() || total <= 0.0 {
        return Err(StakingError::ZeroWeight);
    }
    Ok(committer_reward * (committer_weight + fee * delegators_weight) / total)
}

/// Integer split of a committer's reward with its delegators. Delegator
/// takes are floored; the residue stays with the committer.
pub fn split_with_delegators(
    reward: Amount,
    fee: f64,
    committer_weight: f64,
    delegation_weights: &[f64],
) -> Result<(Amount, Vec<Amount>), StakingError> {
    let delegators_weight: f64 = delegation_weights.iter().sum();
    let total = committer_weight + delegators_weight;
    if total.is_nan() || total <= 0.0 {
        return Err(StakingError::ZeroWeight);
    }
    let r = reward as f64;
    let mut takes: Vec<Amount> = delegation_weights
        .iter()
        .map(|w| (w * (1.0 - fee) * r / total).floor() as Amount)
        .collect();
    // float rounding can push the floored sum past the reward
    let mut paid: Amount = takes.iter().sum();
    while paid > reward {
        if let Some(max) = takes.iter_mut().max() {
            *max -= 1;
        }
        paid -= 1;
    }
    Ok((reward - paid, takes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelegationRejection {
    /// Own stake would fall below a tenth of the commitment.
    Ratio,
    /// Commitment would exceed `T_p · m_c` in the named pool.
    Cap(Metric),
}

impl std::fmt::Display for DelegationRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Ratio => f.write_str("own stake below 1/10 of total"),
            Self::Cap(m) => write!(f, "total stake exceeds target cap in {} pool", m.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelegationVerdict {
    Accept,
    Reject(DelegationRejection),
}

/// Checks both delegation limits. `targets[p]` is `T_p`; a pool without
/// compute (`None`) imposes no cap.
pub fn validate_delegation(
    commitment: &StakeCommitment,
    new_stake: Amount,
    targets: &[Option<f64>; 4],
) -> DelegationVerdict {
    let total_after = u128::from(commitment.total_stake()) + u128::from(new_stake);
    if u128::from(commitment.stake) * u128::from(MAX_DELEGATION_RATIO + 1) < total_after {
        return DelegationVerdict::Reject(DelegationRejection::Ratio);
    }
    if let Some(metric) = exceeded_cap(total_after, &commitment.committed, targets) {
        return DelegationVerdict::Reject(DelegationRejection::Cap(metric));
    }
    DelegationVerdict::Accept
}

fn exceeded_cap(
    total: u128,
    committed: &BenchmarkVector,
    targets: &[Option<f64>; 4],
) -> Option<Metric> {
    Metric::ALL.into_iter().find(|m| match targets[m.index()] {
        Some(t) => total as f64 > t * committed.get(*m),
        None => false,
    })
}

/// Result of slashing one commitment for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlashOutcome {
    pub penalty: Amount,
    pub to_slasher: Amount,
    pub burned: Amount,
    /// Portion taken from the committer's own stake.
    pub from_committer: Amount,
    /// Portions taken from each delegation, in delegation order.
    pub from_delegations: Vec<Amount>,
}

/// `δ_p = max(0, (committed - current)/committed)`, zero when nothing is
/// committed.
pub fn shortfall(committed: f64, current: f64) -> f64 {
    if committed > 0.0 {
        ((committed - current) / committed).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Real-valued penalty `min(Σ_p s·ρ·w_p·δ_p, ρ·s)`.
pub fn slash_amount(
    stake: Amount,
    committed: &BenchmarkVector,
    current: &BenchmarkVector,
    rate: f64,
) -> f64 {
    let s = stake as f64;
    let raw: f64 = Metric::ALL
        .iter()
        .map(|m| s * rate * m.weight() * shortfall(committed.get(*m), current.get(*m)))
        .sum();
    raw.min(rate * s)
}

/// Slashes a commitment for measured compute below its commitment. Applies
/// equally during cooldown.
pub fn slash(
    commitment: &StakeCommitment,
    current: &BenchmarkVector,
    config: &InflationConfig,
) -> SlashOutcome {
    let total = commitment.total_stake();
    let penalty = slash_amount(total, &commitment.committed, current, config.max_slash_rate).floor()
        as Amount;
    let penalty = penalty.min(total);
    let to_slasher = penalty * SLASHER_SHARE_PERCENT / 100;
    let burned = penalty - to_slasher;
    let from_delegations: Vec<Amount> = commitment
        .delegations
        .iter()
        .map(|d| (u128::from(penalty) * u128::from(d.stake) / u128::from(total.max(1))) as Amount)
        .collect();
    let from_committer = penalty - from_delegations.iter().sum::<Amount>();
    SlashOutcome {
        penalty,
        to_slasher,
        burned,
        from_committer,
        from_delegations,
    }
}

impl SlashOutcome {
    /// Deducts the penalty from the commitment's stakes.
    pub fn apply(&self, commitment: &mut StakeCommitment) {
        commitment.stake -= self.from_committer;
        for (d, cut) in commitment
            .delegations
            .iter_mut()
            .zip(&self.from_delegations)
        {
            d.stake -= cut;
        }
    }
}

pub fn begin_cooldown(
    commitment: &StakeCommitment,
    epoch: u64,
) -> Result<StakeCommitment, StakingError> {
    if commitment.is_cooling_down() {
        return Err(StakingError::WrongStatus(commitment.committer.clone()));
    }
    Ok(StakeCommitment {
        status: CommitmentStatus::CoolingDown { since: epoch },
        ..commitment.clone()
    })
}

/// Stakes released when a cooldown completes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Release {
    pub committer: AccountId,
    pub payouts: Vec<(AccountId, Amount)>,
}

pub fn settle_cooldown(commitment: &StakeCommitment, epoch: u64) -> Result<Release, StakingError> {
    let CommitmentStatus::CoolingDown { since } = commitment.status else {
        return Err(StakingError::WrongStatus(commitment.committer.clone()));
    };
    let ready_at = since + commitment.cooldown;
    if epoch < ready_at {
        return Err(StakingError::CooldownNotElapsed {
            committer: commitment.committer.clone(),
            ready_at,
        });
    }
    let mut payouts = vec![(commitment.committer.clone(), commitment.stake)];
    payouts.extend(
        commitment
            .delegations
            .iter()
            .map(|d| (d.delegator.clone(), d.stake)),
    );
    Ok(Release {
        committer: commitment.committer.clone(),
        payouts,
    })
}

/// Measurements and flags for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochState {
    pub epoch: u64,
    pub emission: Amount,
    pub current_compute: BTreeMap<AccountId, BenchmarkVector>,
    pub executed_deployment: BTreeSet<AccountId>,
    pub total_supply: u128,
}

impl EpochState {
    /// Current compute of each provider is the mean of its heartbeats.
    pub fn from_heartbeats(
        epoch: u64,
        emission: Amount,
        total_supply: u128,
        heartbeats: &BTreeMap<AccountId, Vec<BenchmarkVector>>,
        executed_deployment: BTreeSet<AccountId>,
    ) -> Self {
        let current_compute = heartbeats
            .iter()
            .filter(|(_, samples)| !samples.is_empty())
            .map(|(id, samples)| (id.clone(), BenchmarkVector::mean(samples)))
            .collect();
        Self {
            epoch,
            emission,
            current_compute,
            executed_deployment,
            total_supply,
        }
    }

    /// Network total per metric, `M_p`.
    pub fn totals(&self) -> BenchmarkVector {
        let mut sum = BenchmarkVector::default();
        for v in self.current_compute.values() {
            for m in Metric::ALL {
                *sum.get_mut(m) += v.get(m);
            }
        }
        sum
    }

    pub fn targets(&self) -> [Option<f64>; 4] {
        let totals = self.totals();
        Metric::ALL.map(|m| target_weight(self.total_supply, totals.get(m)).ok())
    }

    fn bonus(&self, account: &AccountId, config: &InflationConfig) -> f64 {
        if self.executed_deployment.contains(account) {
            config.execution_bonus
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolShare {
    pub committer: AccountId,
    pub metric: Metric,
    pub theta: f64,
    pub reward: Amount,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    /// Net staked-pool reward after the delegation split.
    pub staked: Amount,
    pub base: Amount,
}

impl Payout {
    pub fn total(&self) -> Amount {
        self.staked + self.base
    }
}

/// Distribution of one epoch's emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub epoch: u64,
    pub emission: Amount,
    pub staked_tranches: [Amount; 4],
    pub base_tranches: [Amount; 4],
    pub pool_shares: Vec<PoolShare>,
    /// Gross staked reward per committer before the delegation split.
    pub committer_rewards: BTreeMap<AccountId, Amount>,
    pub payouts: BTreeMap<AccountId, Payout>,
    /// Treasury tranche plus every residue and undistributed pool.
    pub treasury: Amount,
    pub collators: Amount,
    /// Part of `treasury` that came from rounding or empty pools.
    pub carried: Amount,
}

impl RewardLedger {
    pub fn paid_out(&self) -> Amount {
        self.payouts.values().map(Payout::total).sum()
    }

    /// Everything the ledger accounts for; equals the emission.
    pub fn accounted(&self) -> Amount {
        self.paid_out() + self.treasury + self.collators
    }
}

/// Pro-rata integer split: floors each share, returns shares and residue.
fn pro_rata(amount: Amount, scores: &[f64]) -> (Vec<Amount>, Amount) {
    let total: f64 = scores.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return (vec![0; scores.len()], amount);
    }
    let a = amount as f64;
    let mut shares: Vec<Amount> = scores
        .iter()
        .map(|s| ((a * s / total).floor() as Amount).min(amount))
        .collect();
    let mut paid: Amount = shares.iter().sum();
    while paid > amount {
        if let Some(max) = shares.iter_mut().max() {
            *max -= 1;
        }
        paid -= 1;
    }
    (shares, amount - paid)
}

/// Distributes one epoch's emission over commitments and providers.
pub fn distribute_epoch(
    epoch: &EpochState,
    commitments: &[StakeCommitment],
    config: &InflationConfig,
) -> Result<RewardLedger, StakingError> {
    let tranches = config.split_emission(epoch.emission);
    let staked_tranches = split_by_metric(tranches.staked_pool);
    let base_tranches = split_by_metric(tranches.base_benchmark);
    let mut carried = tranches.staked_pool - staked_tranches.iter().sum::<Amount>()
        + (tranches.base_benchmark - base_tranches.iter().sum::<Amount>());

    let targets = epoch.targets();
    let mut weights = Vec::with_capacity(commitments.len());
    for c in commitments {
        let wc = c.committer_weight(config.tau_max)?;
        let wd = c.delegation_weights(config.tau_max)?;
        weights.push((wc, wd));
    }

    let mut pool_shares = Vec::new();
    let mut committer_rewards: BTreeMap<AccountId, Amount> = BTreeMap::new();
    for metric in Metric::ALL {
        let tranche = staked_tranches[metric.index()];
        let Some(target) = targets[metric.index()] else {
            carried += tranche;
            continue;
        };
        let thetas: Vec<f64> = commitments
            .iter()
            .zip(&weights)
            .map(|(c, (wc, wd))| {
                let committed = c.committed.get(metric) * epoch.bonus(&c.committer, config);
                committer_score(*wc, wd.iter().sum(), target, committed)
            })
            .collect();
        let (shares, residue) = pro_rata(tranche, &thetas);
        carried += residue;
        for ((c, theta), reward) in commitments.iter().zip(thetas).zip(shares) {
            *committer_rewards.entry(c.committer.clone()).or_default() += reward;
            pool_shares.push(PoolShare {
                committer: c.committer.clone(),
                metric,
                theta,
                reward,
            });
        }
    }

    let mut payouts: BTreeMap<AccountId, Payout> = BTreeMap::new();
    for (c, (wc, wd)) in commitments.iter().zip(&weights) {
        let gross = committer_rewards.get(&c.committer).copied().unwrap_or(0);
        if gross == 0 {
            continue;
        }
        let (keep, takes) = split_with_delegators(gross, c.fee, *wc, wd)?;
        payouts.entry(c.committer.clone()).or_default().staked += keep;
        for (d, take) in c.delegations.iter().zip(takes) {
            payouts.entry(d.delegator.clone()).or_default().staked += take;
        }
    }

    let providers: Vec<&AccountId> = epoch.current_compute.keys().collect();
    for metric in Metric::ALL {
        let tranche = base_tranches[metric.index()];
        let scores: Vec<f64> = epoch
            .current_compute
            .iter()
            .map(|(id, v)| v.get(metric) * epoch.bonus(id, config))
            .collect();
        let (shares, residue) = pro_rata(tranche, &scores);
        carried += residue;
        for (id, share) in providers.iter().zip(shares) {
            if share > 0 {
                payouts.entry((*id).clone()).or_default().base += share;
            }
        }
    }

    Ok(RewardLedger {
        epoch: epoch.epoch,
        emission: epoch.emission,
        staked_tranches,
        base_tranches,
        pool_shares,
        committer_rewards,
        payouts,
        treasury: tranches.treasury + carried,
        collators: tranches.collators,
        carried,
    })
}

/// One output record per (epoch, account, pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub account: AccountId,
    pub pool: String,
    pub theta: f64,
    pub reward: Amount,
    pub slash: Amount,
    pub burned: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub ledger: RewardLedger,
    pub slashes: BTreeMap<AccountId, SlashOutcome>,
    pub released: Vec<Release>,
    pub burned: Amount,
    pub to_slasher: Amount,
}

impl EpochReport {
    pub fn records(&self) -> Vec<EpochRecord> {
        let mut out = Vec::new();
        for share in &self.ledger.pool_shares {
            out.push(EpochRecord {
                epoch: self.epoch,
                account: share.committer.clone(),
                pool: share.metric.name().to_owned(),
                theta: share.theta,
                reward: share.reward,
                slash: 0,
                burned: 0,
            });
        }
        let mut accounts: BTreeSet<&AccountId> = self.ledger.payouts.keys().collect();
        accounts.extend(self.slashes.keys());
        for account in accounts {
            let payout = self
                .ledger
                .payouts
                .get(account)
                .cloned()
                .unwrap_or_default();
            let slash = self.slashes.get(account);
            out.push(EpochRecord {
                epoch: self.epoch,
                account: account.clone(),
                pool: "payout".to_owned(),
                theta: 0.0,
                reward: payout.total(),
                slash: slash.map_or(0, |s| s.penalty),
                burned: slash.map_or(0, |s| s.burned),
            });
        }
        for (name, amount) in [
            ("treasury", self.ledger.treasury),
            ("collators", self.ledger.collators),
        ] {
            out.push(EpochRecord {
                epoch: self.epoch,
                account: AccountId::new(name),
                pool: "sink".to_owned(),
                theta: 0.0,
                reward: amount,
                slash: 0,
                burned: 0,
            });
        }
        out
    }
}

/// Stateful multi-epoch economy: liquid balances, commitments and sinks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Economy {
    pub config: InflationConfig,
    pub epoch: u64,
    pub balances: BTreeMap<AccountId, Amount>,
    pub commitments: BTreeMap<AccountId, StakeCommitment>,
    pub treasury: u128,
    pub collators: u128,
    pub burned: u128,
    pub slasher: AccountId,
    /// Circulating supply: balances + stakes + treasury + collators.
    pub total_supply: u128,
    pub emitted: u128,
    /// Last measured compute per provider, used to size new commitments.
    pub last_compute: BTreeMap<AccountId, BenchmarkVector>,
}

impl Economy {
    pub fn new(
        config: InflationConfig,
        balances: BTreeMap<AccountId, Amount>,
        slasher: AccountId,
    ) -> Result<Self, StakingError> {
        config.validate()?;
        let total_supply = balances.values().map(|b| u128::from(*b)).sum();
        Ok(Self {
            config,
            epoch: 0,
            balances,
            commitments: BTreeMap::new(),
            treasury: 0,
            collators: 0,
            burned: 0,
            slasher,
            total_supply,
            emitted: 0,
            last_compute: BTreeMap::new(),
        })
    }

    pub fn balance(&self, account: &AccountId) -> Amount {
        self.balances.get(account).copied().unwrap_or(0)
    }

    fn debit(&mut self, account: &AccountId, amount: Amount) -> Result<(), StakingError> {
        let available = self.balance(account);
        if available < amount {
            return Err(StakingError::InsufficientFunds {
                account: account.clone(),
                available,
                required: amount,
            });
        }
        self.balances.insert(account.clone(), available - amount);
        Ok(())
    }

    fn credit(&mut self, account: &AccountId, amount: Amount) {
        *self.balances.entry(account.clone()).or_default() += amount;
    }

    pub fn set_compute(&mut self, provider: AccountId, compute: BenchmarkVector) {
        self.last_compute.insert(provider, compute);
    }

    fn targets(&self) -> [Option<f64>; 4] {
        let mut totals = BenchmarkVector::default();
        for v in self.last_compute.values() {
            for m in Metric::ALL {
                *totals.get_mut(m) += v.get(m);
            }
        }
        Metric::ALL.map(|m| target_weight(self.total_supply, totals.get(m)).ok())
    }

    /// Locks own stake into a new commitment.
    pub fn commit(
        &mut self,
        committer: AccountId,
        stake: Amount,
        cooldown: u64,
        committed: BenchmarkVector,
        fee: f64,
    ) -> Result<(), StakingError> {
        if self.commitments.contains_key(&committer) {
            return Err(StakingError::InvalidCommitment(format!(
                "{committer} already committed"
            )));
        }
        if cooldown == 0 || cooldown > self.config.tau_max {
            return Err(StakingError::CooldownOutOfRange {
                cooldown,
                tau_max: self.config.tau_max,
            });
        }
        if !(0.0..=1.0).contains(&fee) {
            return Err(StakingError::InvalidCommitment(
                "fee must lie in [0, 1]".into(),
            ));
        }
        if !committed.is_valid() {
            return Err(StakingError::InvalidCommitment(
                "committed compute must be finite and >= 0".into(),
            ));
        }
        let current = self
            .last_compute
            .get(&committer)
            .copied()
            .unwrap_or_default();
        if let Some(m) = Metric::ALL
            .into_iter()
            .find(|m| committed.get(*m) > COMMIT_CAP * current.get(*m) + 1e-9 * current.get(*m))
        {
            return Err(StakingError::InvalidCommitment(format!(
                "committed {} exceeds 80% of measured compute",
                m.name()
            )));
        }
        if let Some(m) = exceeded_cap(u128::from(stake), &committed, &self.targets()) {
            return Err(StakingError::DelegationRejected(DelegationRejection::Cap(
                m,
            )));
        }
        self.debit(&committer, stake)?;
        self.commitments.insert(
            committer.clone(),
            StakeCommitment {
                committer,
                stake,
                cooldown,
                committed,
                fee,
                delegations: Vec::new(),
                status: CommitmentStatus::Active,
            },
        );
        Ok(())
    }

    pub fn delegate(
        &mut self,
        committer: &AccountId,
        delegation: Delegation,
    ) -> Result<(), StakingError> {
        let targets = self.targets();
        let tau_max = self.config.tau_max;
        let commitment = self
            .commitments
            .get(committer)
            .ok_or_else(|| StakingError::UnknownCommitter(committer.clone()))?;
        if commitment.is_cooling_down() {
            return Err(StakingError::WrongStatus(committer.clone()));
        }
        if delegation.cooldown == 0 || delegation.cooldown > tau_max {
            return Err(StakingError::CooldownOutOfRange {
                cooldown: delegation.cooldown,
                tau_max,
            });
        }
        if let DelegationVerdict::Reject(reason) =
            validate_delegation(commitment, delegation.stake, &targets)
        {
            return Err(StakingError::DelegationRejected(reason));
        }
        self.debit(&delegation.delegator, delegation.stake)?;
        self.commitments
            .get_mut(committer)
            .expect("checked above")
            .delegations
            .push(delegation);
        Ok(())
    }

    /// Removes a delegation and returns its stake to the delegator.
    pub fn undelegate(
        &mut self,
        committer: &AccountId,
        delegator: &AccountId,
    ) -> Result<Amount, StakingError> {
        let commitment = self
            .commitments
            .get_mut(committer)
            .ok_or_else(|| StakingError::UnknownCommitter(committer.clone()))?;
        let pos = commitment
            .delegations
            .iter()
            .position(|d| &d.delegator == delegator)
            .ok_or_else(|| StakingError::UnknownCommitter(delegator.clone()))?;
        let d = commitment.delegations.remove(pos);
        self.credit(delegator, d.stake);
        Ok(d.stake)
    }

    pub fn request_unstake(&mut self, committer: &AccountId) -> Result<(), StakingError> {
        let epoch = self.epoch;
        let commitment = self
            .commitments
            .get_mut(committer)
            .ok_or_else(|| StakingError::UnknownCommitter(committer.clone()))?;
        *commitment = begin_cooldown(commitment, epoch)?;
        Ok(())
    }

    pub fn staked_total(&self) -> u128 {
        self.commitments
            .values()
            .map(|c| u128::from(c.total_stake()))
            .sum()
    }

    pub fn balances_total(&self) -> u128 {
        self.balances.values().map(|b| u128::from(*b)).sum()
    }

    /// Σ balances + Σ stakes + treasury + collators equals supply, and
    /// supply equals initial supply + emitted - burned.
    pub fn is_conserved(&self, initial_supply: u128) -> bool {
        let held = self.balances_total() + self.staked_total() + self.treasury + self.collators;
        held == self.total_supply
            && initial_supply + self.emitted == self.total_supply + self.burned
    }

    /// Runs one epoch: measure, slash, distribute, settle cooldowns.
    pub fn run_epoch(
        &mut self,
        heartbeats: &BTreeMap<AccountId, Vec<BenchmarkVector>>,
        executed: BTreeSet<AccountId>,
    ) -> Result<EpochReport, StakingError> {
        let epoch = self.epoch;
        let emission = self.config.emission_per_epoch;
        let state =
            EpochState::from_heartbeats(epoch, emission, self.total_supply, heartbeats, executed);
        for (id, v) in &state.current_compute {
            self.last_compute.insert(id.clone(), *v);
        }

        let mut slashes = BTreeMap::new();
        let mut burned = 0;
        let mut to_slasher = 0;
        for commitment in self.commitments.values_mut() {
            let current = state
                .current_compute
                .get(&commitment.committer)
                .copied()
                .unwrap_or_default();
            let outcome = slash(commitment, &current, &self.config);
            if outcome.penalty > 0 {
                outcome.apply(commitment);
                burned += outcome.burned;
                to_slasher += outcome.to_slasher;
                slashes.insert(commitment.committer.clone(), outcome);
            }
        }
        let slasher = self.slasher.clone();
        self.credit(&slasher, to_slasher);
        self.burned += u128::from(burned);
        self.total_supply -= u128::from(burned);

        let commitments: Vec<StakeCommitment> = self.commitments.values().cloned().collect();
        let ledger = distribute_epoch(&state, &commitments, &self.config)?;
        for (account, payout) in &ledger.payouts {
            self.credit(account, payout.total());
        }
        self.treasury += u128::from(ledger.treasury);
        self.collators += u128::from(ledger.collators);
        self.emitted += u128::from(emission);
        self.total_supply += u128::from(emission);

        self.epoch += 1;
        let mut released = Vec::new();
        let ready: Vec<AccountId> = self
            .commitments
            .values()
            .filter(|c| settle_cooldown(c, self.epoch).is_ok())
            .map(|c| c.committer.clone())
            .collect();
        for committer in ready {
            let commitment = self.commitments.remove(&committer).expect("listed above");
            let release = settle_cooldown(&commitment, self.epoch)?;
            for (account, amount) in &release.payouts {
                self.credit(account, *amount);
            }
            released.push(release);
        }

        Ok(EpochReport {
            epoch,
            ledger,
            slashes,
            released,
            burned,
            to_slasher,
        })
    }
}
