use crate::output::{csv_bytes, Format, OutputSet};
use crate::scenario::ScenarioFile;
use crate::CliError;
use anyhow::Context;
use marketsim_core::attestation::{AttestationRecord, AttestationRegistry};
use marketsim_core::domain::DeploymentSpec;
use marketsim_core::orchestrator::{Orchestrator, OrchestratorConfig, ProcessorAdvertisement};
use marketsim_core::reputation::{ReputationAccumulator, ReputationParams};
use marketsim_core::{Amount, DeploymentId};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One past outcome replayed into the candidate's reputation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PastOutcome {
    pub favorable: bool,
    pub reward: Amount,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub advertisement: ProcessorAdvertisement,
    #[serde(default)]
    pub attestation: Option<AttestationRecord>,
    #[serde(default)]
    pub history: Vec<PastOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    pub deployment: DeploymentId,
    pub status: &'static str,
    pub processor: Option<String>,
    pub start_delay: Option<u64>,
    pub executions: usize,
    pub agreed_price_per_execution: Option<Amount>,
    /// `processor: reason` for every rejected candidate.
    pub reasons: Vec<String>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    deployment: DeploymentId,
    status: &'a str,
    processor: &'a str,
    start_delay: Option<u64>,
    executions: usize,
    agreed_price_per_execution: Option<Amount>,
    reasons: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Matches deployments in file order; each assignment books calendar time
/// that later deployments see.
pub fn match_all(
    scenario: &ScenarioFile,
    deployments: Vec<DeploymentSpec>,
    candidates: Vec<Candidate>,
    now: u64,
) -> Result<Vec<MatchRecord>, CliError> {
    let params = ReputationParams::new(scenario.reputation.lambda)
        .map_err(|e| CliError::Config(format!("field `reputation.lambda`: {e}")))?;
    let mut attestations = AttestationRegistry::from_records(scenario.attestations.clone())
        .map_err(|e| CliError::Config(format!("field `attestations`: {e}")))?;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(record) = &c.attestation {
            attestations
                .register(record.clone())
                .map_err(|e| CliError::Config(format!("candidate {i} attestation: {e}")))?;
        }
    }
    let config = OrchestratorConfig {
        reputation: params,
        report_grace_permille: scenario.scheduler.report_grace_permille,
        ..OrchestratorConfig::default()
    };
    let mut orch = Orchestrator::new(config, attestations);
    for (i, c) in candidates.into_iter().enumerate() {
        let id = c.advertisement.processor.clone();
        if orch.processor(&id).is_some() {
            return Err(CliError::Config(format!(
                "candidate {i}: duplicate processor {id}"
            )));
        }
        let mut reputation = ReputationAccumulator::new(params);
        for (j, h) in c.history.iter().enumerate() {
            reputation = reputation
                .record_outcome(h.favorable, h.reward)
                .map_err(|e| CliError::Config(format!("candidate {i} history[{j}]: {e}")))?;
        }
        orch.advertise(c.advertisement);
        orch.set_reputation(&id, reputation)
            .context("setting reputation")?;
    }

    let mut records = Vec::new();
    for spec in deployments {
        let id = spec.id;
        let k = marketsim_core::scheduler::execution_count(&spec.schedule, 0);
        let reward = spec.reward_per_execution;
        orch.ledger_mut()
            .mint(&spec.consumer, Amount::from(k) * reward);
        if let Err(e) = orch.register_deployment(spec, now) {
            records.push(MatchRecord {
                deployment: id,
                status: "rejected",
                processor: None,
                start_delay: None,
                executions: 0,
                agreed_price_per_execution: None,
                reasons: vec![e.to_string()],
            });
            continue;
        }
        let reasons: Vec<String> = orch
            .explain(id, now)
            .context("explaining candidates")?
            .into_iter()
            .filter_map(|v| v.verdict.err().map(|r| format!("{}: {}", v.processor, r)))
            .collect();
        let record = match orch.match_deployment(id, now).context("matching")? {
            Some(a) => MatchRecord {
                deployment: id,
                status: "assigned",
                processor: Some(a.processor.0.clone()),
                start_delay: Some(a.start_delay),
                executions: a.slots.len(),
                agreed_price_per_execution: Some(a.agreed_price_per_execution),
                reasons,
            },
            None => MatchRecord {
                deployment: id,
                status: "unmatched",
                processor: None,
                start_delay: None,
                executions: 0,
                agreed_price_per_execution: None,
                reasons,
            },
        };
        records.push(record);
    }
    Ok(records)
}

fn csv_rows(records: &[MatchRecord]) -> Vec<CsvRow<'_>> {
    records
        .iter()
        .map(|r| CsvRow {
            deployment: r.deployment,
            status: r.status,
            processor: r.processor.as_deref().unwrap_or(""),
            start_delay: r.start_delay,
            executions: r.executions,
            agreed_price_per_execution: r.agreed_price_per_execution,
            reasons: r.reasons.join("; "),
        })
        .collect()
}

pub fn run(
    scenario: &ScenarioFile,
    deployments: &Path,
    advertisements: &Path,
    now: u64,
    out: Option<&Path>,
    format: Format,
) -> Result<(), CliError> {
    let specs: Vec<DeploymentSpec> = read_json(deployments)?;
    let candidates: Vec<Candidate> = read_json(advertisements)?;
    let records = match_all(scenario, specs, candidates, now)?;
    match out {
        Some(dir) => {
            let mut set = OutputSet::new(format);
            match format {
                Format::Csv => set.table("matches", &csv_rows(&records))?,
                Format::Json => set.table("matches", &records)?,
            }
            set.write(dir, "match", &scenario.sha256(), None)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match format {
                Format::Csv => lock
                    .write_all(&csv_bytes(&csv_rows(&records))?)
                    .context("writing stdout")?,
                Format::Json => {
                    for r in &records {
                        let line = serde_json::to_string(r).context("encoding record")?;
                        writeln!(lock, "{line}").context("writing stdout")?;
                    }
                }
            }
        }
    }
    Ok(())
}
