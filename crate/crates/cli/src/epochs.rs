use crate::output::{Format, OutputSet};
use crate::scenario::ScenarioFile;
use crate::CliError;
use anyhow::Context;
use marketsim_core::staked::{BenchmarkVector, Economy, EpochRecord, HEARTBEATS_PER_EPOCH};
use marketsim_core::AccountId;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Serialize)]
struct BalanceRow<'a> {
    epoch: u64,
    account: &'a str,
    liquid: u64,
    staked: u64,
}

#[derive(Serialize)]
struct SummaryRow {
    metric: &'static str,
    value: u128,
}

fn config_error(field: String, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {reason}"))
}

/// Builds the economy at epoch 0: balances, measured compute, commitments.
pub fn setup(scenario: &ScenarioFile) -> Result<Economy, CliError> {
    let eco = &scenario.economy;
    let mut balances = BTreeMap::new();
    for (i, a) in eco.accounts.iter().enumerate() {
        if balances
            .insert(AccountId::new(a.id.clone()), a.balance)
            .is_some()
        {
            return Err(config_error(
                format!("economy.accounts[{i}].id"),
                format!("duplicate account {}", a.id),
            ));
        }
    }
    let mut economy = Economy::new(
        eco.inflation(),
        balances,
        AccountId::new(eco.slasher.clone()),
    )
    .map_err(|e| config_error("economy".into(), e))?;
    for (i, p) in eco.providers.iter().enumerate() {
        if !p.compute.is_valid() {
            return Err(config_error(
                format!("economy.providers[{i}].compute"),
                "must be finite and >= 0",
            ));
        }
        economy.set_compute(AccountId::new(p.id.clone()), p.compute);
    }
    for (i, c) in eco.commitments.iter().enumerate() {
        let committer = AccountId::new(c.committer.clone());
        economy
            .commit(committer.clone(), c.stake, c.cooldown, c.committed, c.fee)
            .map_err(|e| config_error(format!("economy.commitments[{i}]"), e))?;
        for (j, d) in c.delegations.iter().enumerate() {
            economy.delegate(&committer, d.clone()).map_err(|e| {
                config_error(format!("economy.commitments[{i}].delegations[{j}]"), e)
            })?;
        }
    }
    let providers: BTreeSet<&str> = eco.providers.iter().map(|p| p.id.as_str()).collect();
    for (i, s) in eco.shortfalls.iter().enumerate() {
        if !providers.contains(s.provider.as_str()) {
            return Err(config_error(
                format!("economy.shortfalls[{i}].provider"),
                format!("unknown provider {}", s.provider),
            ));
        }
    }
    for (i, u) in eco.unstake.iter().enumerate() {
        if !economy
            .commitments
            .contains_key(&AccountId::new(u.committer.clone()))
        {
            return Err(config_error(
                format!("economy.unstake[{i}].committer"),
                format!("no commitment for {}", u.committer),
            ));
        }
    }
    Ok(economy)
}

/// Heartbeats for `epoch`: each provider reports its compute, scaled by any
/// shortfall covering the epoch.
pub fn heartbeats(
    scenario: &ScenarioFile,
    epoch: u64,
) -> BTreeMap<AccountId, Vec<BenchmarkVector>> {
    scenario
        .economy
        .providers
        .iter()
        .map(|p| {
            let factor = scenario
                .economy
                .shortfalls
                .iter()
                .filter(|s| s.provider == p.id && (s.from_epoch..s.to_epoch).contains(&epoch))
                .map(|s| s.factor)
                .product::<f64>();
            let v = p.compute.scaled(factor);
            (
                AccountId::new(p.id.clone()),
                vec![v; HEARTBEATS_PER_EPOCH as usize],
            )
        })
        .collect()
}

pub struct EpochRun {
    pub economy: Economy,
    pub initial_supply: u128,
    pub records: Vec<EpochRecord>,
    pub balances: Vec<(u64, AccountId, u64, u64)>,
}

pub fn simulate(scenario: &ScenarioFile) -> Result<EpochRun, CliError> {
    let mut economy = setup(scenario)?;
    let initial_supply = economy.total_supply;
    let executed: BTreeSet<AccountId> = scenario
        .economy
        .providers
        .iter()
        .filter(|p| p.executes_deployments)
        .map(|p| AccountId::new(p.id.clone()))
        .collect();
    let mut records = Vec::new();
    let mut balances = Vec::new();
    for epoch in 0..scenario.economy.epochs {
        for u in scenario.economy.unstake.iter().filter(|u| u.epoch == epoch) {
            let committer = AccountId::new(u.committer.clone());
            if economy.commitments.contains_key(&committer) {
                economy
                    .request_unstake(&committer)
                    .with_context(|| format!("unstake {committer} at epoch {epoch}"))?;
            }
        }
        let report = economy
            .run_epoch(&heartbeats(scenario, epoch), executed.clone())
            .with_context(|| format!("epoch {epoch}"))?;
        records.extend(report.records());
        let mut staked: BTreeMap<&AccountId, u64> = BTreeMap::new();
        for c in economy.commitments.values() {
            *staked.entry(&c.committer).or_default() += c.stake;
            for d in &c.delegations {
                *staked.entry(&d.delegator).or_default() += d.stake;
            }
        }
        let accounts: BTreeSet<&AccountId> = economy
            .balances
            .keys()
            .chain(staked.keys().copied())
            .collect();
        for account in accounts {
            balances.push((
                epoch,
                account.clone(),
                economy.balance(account),
                staked.get(account).copied().unwrap_or(0),
            ));
        }
        if !economy.is_conserved(initial_supply) {
            return Err(anyhow::anyhow!("supply not conserved after epoch {epoch}").into());
        }
    }
    Ok(EpochRun {
        economy,
        initial_supply,
        records,
        balances,
    })
}

pub fn run(scenario: &ScenarioFile, out: &Path, format: Format) -> Result<(), CliError> {
    let result = simulate(scenario)?;
    let eco = &result.economy;
    let expected_emission =
        u128::from(scenario.economy.emission_per_epoch) * u128::from(scenario.economy.epochs);
    let summary = vec![
        SummaryRow {
            metric: "epochs",
            value: u128::from(scenario.economy.epochs),
        },
        SummaryRow {
            metric: "initial_supply",
            value: result.initial_supply,
        },
        SummaryRow {
            metric: "emitted",
            value: eco.emitted,
        },
        SummaryRow {
            metric: "expected_emission",
            value: expected_emission,
        },
        SummaryRow {
            metric: "burned",
            value: eco.burned,
        },
        SummaryRow {
            metric: "treasury",
            value: eco.treasury,
        },
        SummaryRow {
            metric: "collators",
            value: eco.collators,
        },
        SummaryRow {
            metric: "liquid",
            value: eco.balances_total(),
        },
        SummaryRow {
            metric: "staked",
            value: eco.staked_total(),
        },
        SummaryRow {
            metric: "total_supply",
            value: eco.total_supply,
        },
        SummaryRow {
            metric: "conserved",
            value: u128::from(
                eco.is_conserved(result.initial_supply) && eco.emitted == expected_emission,
            ),
        },
    ];
    let balances: Vec<BalanceRow> = result
        .balances
        .iter()
        .map(|(epoch, account, liquid, staked)| BalanceRow {
            epoch: *epoch,
            account: &account.0,
            liquid: *liquid,
            staked: *staked,
        })
        .collect();

    let mut set = OutputSet::new(format);
    set.table("epochs", &result.records)?;
    set.table("balances", &balances)?;
    set.table("summary", &summary)?;
    set.write(out, "epochs", &scenario.sha256(), None)?;
    eprintln!(
        "{} epochs: emitted {} burned {} treasury {} supply {}",
        scenario.economy.epochs, eco.emitted, eco.burned, eco.treasury, eco.total_supply
    );
    Ok(())
}
