use std::fmt::Write as _;

use batchrl::agents::Algorithm;
use batchrl::data::{coverage_holes, save_dataset, BehavioralPolicy};
use batchrl::mdp::{expected_episode_return, make_env, value_iteration, Env, QTable};
use serde::Serialize;

use crate::config::SuiteConfig;
use crate::data::{batch_from_policy, behavioral_policy};
use crate::error::Result;
use crate::experiment::{run_experiment_on, ExperimentReport, DATASET_FILE};
use crate::metrics::{create, write_csv};

pub const SUITE_SUMMARY_FILE: &str = "suite.csv";
pub const BEHAVIORAL_ROW: &str = "behavioral";
pub const ORACLE_ROW: &str = "oracle";

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub env: String,
    pub name: String,
    pub final_windowed_return: f64,
    pub return_std: f64,
    pub max_value_estimate: Option<f64>,
    pub diverged_seeds: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct EnvReport {
    pub env: String,
    /// Exact expected return of the noisy behavioral policy.
    pub behavioral_return: f64,
    /// Exact expected return of the optimal policy.
    pub oracle_return: f64,
    pub value_bound: f64,
    pub coverage_holes: usize,
    pub runs: Vec<(Algorithm, std::result::Result<ExperimentReport, String>)>,
}

impl EnvReport {
    pub fn run(&self, algorithm: Algorithm) -> Option<&ExperimentReport> {
        self.runs
            .iter()
            .find(|(a, _)| *a == algorithm)
            .and_then(|(_, r)| r.as_ref().ok())
    }
}

#[derive(Debug)]
pub struct SuiteReport {
    pub envs: Vec<EnvReport>,
    /// Per env: algorithms ranked by final windowed return, then the
    /// reference rows.
    pub rows: Vec<SuiteRow>,
    pub window: usize,
}

impl SuiteReport {
    pub fn env(&self, name: &str) -> Option<&EnvReport> {
        self.envs.iter().find(|e| e.env == name)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<12} {:>10} {:>8} {:>12} {:>9}\n",
            "env", "agent", "return", "std", "max value", "diverged"
        );
        for r in &self.rows {
            let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
            let _ = write!(
                out,
                "{:<16} {:<12} {:>10.3} {:>8.3} {:>12} {:>9}",
                r.env,
                r.name,
                r.final_windowed_return,
                r.return_std,
                opt(r.max_value_estimate.map(|v| format!("{v:.3}"))),
                opt(r.diverged_seeds.map(|d| d.to_string())),
            );
            if let Some(e) = &r.error {
                let _ = write!(out, "  error: {e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Exact finite-horizon return of the greedy optimal policy.
pub fn oracle_return(env: &Env) -> Result<f64> {
    let q: QTable<f64> = value_iteration(env.spec(), 1e-10)?;
    Ok(expected_episode_return(
        env.spec(),
        &q.greedy(),
        env.max_steps(),
    ))
}

/// Trains every algorithm on one shared batch per env and ranks them.
pub fn run_benchmark_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    config.validate()?;
    let mut envs = Vec::new();
    let mut rows = Vec::new();
    for name in &config.envs {
        let env = make_env(name)?;
        let policy = behavioral_policy(&env, &config.generation)?;
        let ds = batch_from_policy(&env, &policy, &config.generation)?;
        let dataset_path = config.output_dir.join(name).join(DATASET_FILE);
        create(&dataset_path)?;
        save_dataset(&ds, &dataset_path)?;
        let report = EnvReport {
            env: name.clone(),
            behavioral_return: policy_return(&env, &policy)?,
            oracle_return: oracle_return(&env)?,
            value_bound: env.spec().value_bound(),
            coverage_holes: coverage_holes(env.spec(), ds.state_action_counts()?)?.len(),
            runs: config
                .algorithms
                .iter()
                .map(|&algo| {
                    let cfg = config.experiment(name, algo, Some(dataset_path.clone()));
                    (
                        algo,
                        run_experiment_on(&cfg, &env, &ds).map_err(|e| e.to_string()),
                    )
                })
                .collect(),
        };
        rows.extend(env_rows(&report, config.window));
        envs.push(report);
    }
    write_csv(&config.output_dir.join(SUITE_SUMMARY_FILE), None, &rows)?;
    Ok(SuiteReport {
        envs,
        rows,
        window: config.window,
    })
}

fn policy_return(env: &Env, policy: &BehavioralPolicy) -> Result<f64> {
    Ok(policy.reference_return(env)?)
}

fn env_rows(report: &EnvReport, window: usize) -> Vec<SuiteRow> {
    let mut rows: Vec<SuiteRow> = report
        .runs
        .iter()
        .map(|(algo, run)| match run {
            Ok(r) => SuiteRow {
                env: report.env.clone(),
                name: algo.to_string(),
                final_windowed_return: r.final_windowed_return(window),
                return_std: r.final_windowed_return_std(window),
                max_value_estimate: Some(
                    r.seeds
                        .iter()
                        .map(|s| s.max_value_estimate())
                        .fold(f64::NEG_INFINITY, f64::max),
                ),
                diverged_seeds: Some(r.seeds.iter().filter(|s| s.diverged_at.is_some()).count()),
                error: None,
            },
            Err(e) => SuiteRow {
                env: report.env.clone(),
                name: algo.to_string(),
                final_windowed_return: f64::NAN,
                return_std: f64::NAN,
                max_value_estimate: None,
                diverged_seeds: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    rows.sort_by(|a, b| b.final_windowed_return.total_cmp(&a.final_windowed_return));
    for (name, value) in [
        (BEHAVIORAL_ROW, report.behavioral_return),
        (ORACLE_ROW, report.oracle_return),
    ] {
        rows.push(SuiteRow {
            env: report.env.clone(),
            name: name.into(),
            final_windowed_return: value,
            return_std: 0.0,
            max_value_estimate: None,
            diverged_seeds: None,
            error: None,
        });
    }
    rows
}
