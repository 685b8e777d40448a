use crate::output::{Format, OutputSet};
use crate::scenario::ScenarioFile;
use crate::CliError;
use anyhow::Context;
use marketsim_core::abm::{run_experiment, ExperimentResult, SimConfig};
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct ProcessorRow<'a> {
    scenario: &'a str,
    iteration: u32,
    processor: &'a str,
    group: usize,
    reputation: f64,
    cumulative_reward: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    group: usize,
    mean_reward: f64,
    share: f64,
    failure_rate: f64,
    gini: f64,
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    scenario: &'a str,
    step: usize,
    group: usize,
    mean_score: f64,
}

fn scenario_name(config: &SimConfig) -> &'static str {
    if config.reputation_enabled {
        "reputation"
    } else {
        "no_reputation"
    }
}

pub fn run(
    scenario: &ScenarioFile,
    paired: bool,
    out: &Path,
    format: Format,
) -> Result<(), CliError> {
    let base = scenario.sim_config();
    let configs = if paired {
        vec![
            SimConfig {
                reputation_enabled: true,
                ..base.clone()
            },
            SimConfig {
                reputation_enabled: false,
                ..base
            },
        ]
    } else {
        vec![base]
    };
    let results = configs
        .iter()
        .map(|c| run_experiment(c).context("simulation failed"))
        .collect::<anyhow::Result<Vec<ExperimentResult>>>()?;

    let mut processors = Vec::new();
    let mut summary = Vec::new();
    let mut trajectory = Vec::new();
    for result in &results {
        let name = scenario_name(&result.config);
        processors.extend(result.processor_records().map(|r| ProcessorRow {
            scenario: name,
            iteration: r.iteration,
            processor: &r.processor.0,
            group: r.group,
            reputation: r.reputation,
            cumulative_reward: r.cumulative_reward,
        }));
        let agg = &result.aggregate;
        summary.extend((0..result.config.groups()).map(|g| SummaryRow {
            scenario: name,
            group: g,
            mean_reward: agg.group_mean_reward[g],
            share: agg.group_share[g],
            failure_rate: agg.failure_rate,
            gini: agg.gini,
        }));
        for (step, row) in agg.trajectory.iter().enumerate() {
            trajectory.extend(
                row.iter()
                    .enumerate()
                    .map(|(group, &mean_score)| TrajectoryRow {
                        scenario: name,
                        step,
                        group,
                        mean_score,
                    }),
            );
        }
    }

    let mut set = OutputSet::new(format);
    set.table("processors", &processors)?;
    set.table("summary", &summary)?;
    set.table("trajectory", &trajectory)?;
    let command = if paired {
        "simulate --paired"
    } else {
        "simulate"
    };
    set.write(out, command, &scenario.sha256(), Some(scenario.sim.seed))?;
    for row in &summary {
        eprintln!(
            "{:<14} group {} mean_reward {:>10.3} share {:.4} failure_rate {:.4} gini {:.4}",
            row.scenario, row.group, row.mean_reward, row.share, row.failure_rate, row.gini
        );
    }
    Ok(())
}
