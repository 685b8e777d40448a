//! Scenario files: TOML documents with `sim`, `reputation`, `scheduler`,
//! `economy` and `attestations` sections. Every key is optional and unknown
//! keys are rejected.

use crate::CliError;
use marketsim_core::abm::{Range, SimConfig};
use marketsim_core::attestation::{AttestationRecord, AttestationRegistry};
use marketsim_core::reputation::{ReputationParams, DEFAULT_LAMBDA};
use marketsim_core::staked::{
    BenchmarkVector, Delegation, EmissionSplit, InflationConfig, DEFAULT_EXECUTION_BONUS,
    DEFAULT_MAX_SLASH_RATE, DEFAULT_TAU_MAX,
};
use marketsim_core::{Amount, UNITS_PER_TOKEN};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub sim: SimSection,
    pub reputation: ReputationSection,
    pub scheduler: SchedulerSection,
    pub economy: EconomySection,
    pub attestations: Vec<AttestationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub seed: u64,
    pub n_processors: usize,
    pub n_consumers: usize,
    pub steps: u32,
    pub iterations: u32,
    pub reputation_enabled: bool,
    pub p_min_rep_consumer: f64,
    pub slots_per_processor: u32,
    pub execution_ms: u64,
    pub group_success_rates: Vec<f64>,
    pub min_rep_distribution: Range,
    pub reward_distribution: Range,
    pub ask_distribution: Range,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            seed: d.seed,
            n_processors: d.n_processors,
            n_consumers: d.n_consumers,
            steps: d.steps,
            iterations: d.iterations,
            reputation_enabled: d.reputation_enabled,
            p_min_rep_consumer: d.p_min_rep_consumer,
            slots_per_processor: d.slots_per_processor,
            execution_ms: d.execution_ms,
            group_success_rates: d.group_success_rates,
            min_rep_distribution: d.min_rep_distribution,
            reward_distribution: d.reward_distribution,
            ask_distribution: d.ask_distribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReputationSection {
    pub lambda: f64,
}

impl Default for ReputationSection {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    /// Grace after slot end, in thousandths of the slot duration.
    pub report_grace_permille: u64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            report_grace_permille: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountEntry {
    pub id: String,
    pub balance: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    pub id: String,
    pub compute: BenchmarkVector,
    #[serde(default)]
    pub executes_deployments: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitmentEntry {
    pub committer: String,
    pub stake: Amount,
    pub cooldown: u64,
    pub committed: BenchmarkVector,
    pub fee: f64,
    #[serde(default)]
    pub delegations: Vec<Delegation>,
}

/// Scales a provider's measured compute by `factor` in epochs
/// `[from_epoch, to_epoch)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortfallEntry {
    pub provider: String,
    pub from_epoch: u64,
    pub to_epoch: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnstakeEntry {
    pub committer: String,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconomySection {
    pub epochs: u64,
    /// Base units (10^6 per token).
    pub emission_per_epoch: Amount,
    pub max_slash_rate: f64,
    pub tau_max: u64,
    pub execution_bonus: f64,
    pub slasher: String,
    pub split: EmissionSplit,
    pub accounts: Vec<AccountEntry>,
    pub providers: Vec<ProviderEntry>,
    pub commitments: Vec<CommitmentEntry>,
    pub shortfalls: Vec<ShortfallEntry>,
    pub unstake: Vec<UnstakeEntry>,
}

impl Default for EconomySection {
    fn default() -> Self {
        let compute = BenchmarkVector::new(1_000.0, 4_000.0, 8_000.0, 256_000.0);
        Self {
            epochs: 10,
            emission_per_epoch: 1_000 * UNITS_PER_TOKEN,
            max_slash_rate: DEFAULT_MAX_SLASH_RATE,
            tau_max: DEFAULT_TAU_MAX,
            execution_bonus: DEFAULT_EXECUTION_BONUS,
            slasher: "slasher".into(),
            split: EmissionSplit::default(),
            accounts: vec![
                AccountEntry {
                    id: "alice".into(),
                    balance: 1_000_000 * UNITS_PER_TOKEN,
                },
                AccountEntry {
                    id: "bob".into(),
                    balance: 500_000 * UNITS_PER_TOKEN,
                },
                AccountEntry {
                    id: "carol".into(),
                    balance: 250_000 * UNITS_PER_TOKEN,
                },
            ],
            providers: vec![
                ProviderEntry {
                    id: "alice".into(),
                    compute,
                    executes_deployments: true,
                },
                ProviderEntry {
                    id: "carol".into(),
                    compute: compute.scaled(0.5),
                    executes_deployments: false,
                },
            ],
            commitments: vec![CommitmentEntry {
                committer: "alice".into(),
                stake: 100_000 * UNITS_PER_TOKEN,
                cooldown: DEFAULT_TAU_MAX,
                committed: compute.scaled(0.8),
                fee: 0.1,
                delegations: vec![Delegation {
                    delegator: "bob".into(),
                    stake: 200_000 * UNITS_PER_TOKEN,
                    cooldown: DEFAULT_TAU_MAX / 2,
                }],
            }],
            shortfalls: vec![ShortfallEntry {
                provider: "alice".into(),
                from_epoch: 5,
                to_epoch: 7,
                factor: 0.5,
            }],
            unstake: vec![UnstakeEntry {
                committer: "alice".into(),
                epoch: 8,
            }],
        }
    }
}

impl EconomySection {
    pub fn inflation(&self) -> InflationConfig {
        InflationConfig {
            emission_per_epoch: self.emission_per_epoch,
            split: self.split,
            max_slash_rate: self.max_slash_rate,
            tau_max: self.tau_max,
            execution_bonus: self.execution_bonus,
        }
    }
}

fn config_error(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {reason}"))
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let scenario: Self = toml::from_str(text)
            .map_err(|e| CliError::Config(e.to_string().trim_end().to_owned()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        ReputationParams::new(self.reputation.lambda)
            .map_err(|e| config_error("reputation.lambda", e))?;
        self.sim_config().validate().map_err(|e| match e {
            marketsim_core::abm::AbmError::ConfigInvalid { field, reason } => {
                config_error(&format!("sim.{field}"), reason)
            }
            other => config_error("sim", other),
        })?;
        self.economy
            .inflation()
            .validate()
            .map_err(|e| config_error("economy", e))?;
        AttestationRegistry::from_records(self.attestations.clone())
            .map_err(|e| config_error("attestations", e))?;
        for (i, s) in self.economy.shortfalls.iter().enumerate() {
            if !(s.factor.is_finite() && s.factor >= 0.0) {
                return Err(config_error(
                    &format!("economy.shortfalls[{i}].factor"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            n_processors: s.n_processors,
            n_consumers: s.n_consumers,
            steps: s.steps,
            iterations: s.iterations,
            group_success_rates: s.group_success_rates.clone(),
            reputation_enabled: s.reputation_enabled,
            p_min_rep_consumer: s.p_min_rep_consumer,
            min_rep_distribution: s.min_rep_distribution,
            reward_distribution: s.reward_distribution,
            ask_distribution: s.ask_distribution,
            slots_per_processor: s.slots_per_processor,
            execution_ms: s.execution_ms,
            lambda: self.reputation.lambda,
            report_grace_permille: self.scheduler.report_grace_permille,
            seed: s.seed,
        }
    }

    /// Canonical TOML text: every default filled in, fixed key order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let d = ScenarioFile::default();
        let text = d.canonical();
        assert_eq!(ScenarioFile::parse(&text).unwrap(), d);
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ScenarioFile::parse("").unwrap(), ScenarioFile::default());
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = ScenarioFile::parse("[sim]\nn_procesors = 3\n").unwrap_err();
        assert!(err.to_string().contains("n_procesors"), "{err}");
    }

    #[test]
    fn invalid_value_names_the_field() {
        let err = ScenarioFile::parse("[sim]\nn_processors = 301\n").unwrap_err();
        assert!(err.to_string().contains("sim.n_processors"), "{err}");
        let err = ScenarioFile::parse("[reputation]\nlambda = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("reputation.lambda"), "{err}");
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ScenarioFile::parse("[sim]\nsteps = 5\n").unwrap();
        let b = ScenarioFile::parse("# comment\n[sim]\nsteps   =   5\n\n").unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_ne!(a.sha256(), ScenarioFile::default().sha256());
    }
}
