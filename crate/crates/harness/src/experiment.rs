use std::path::{Path, PathBuf};
use std::time::Instant;

use batchrl::agents::{AgentConfig, Algorithm};
use batchrl::data::{load_dataset, save_dataset, BatchDataset};
use batchrl::mdp::{make_env, Env};
use batchrl::{Agent, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{check_dataset, generate_dataset};
use crate::error::{HarnessError, Result};
use crate::metrics::{
    aggregate, mean, population_std, windowed, write_csv, write_metrics, write_timing,
    AggregateRecord, MetricsRecord, AGGREGATE_FILE, STD_NOTE,
};

pub const MANIFEST_FILE: &str = "run.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DATASET_FILE: &str = "dataset.bin";
/// Evaluation points averaged for the per-seed final return.
pub const RETURN_WINDOW: usize = 5;

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const ESTIMATE_STREAM: u64 = 2;

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Iteration whose update produced a non-finite loss.
    pub diverged_at: Option<u64>,
    pub last_finite_value_estimate: f64,
    /// Environment steps taken outside evaluation rollouts; always zero.
    pub training_env_steps: u64,
}

impl SeedReport {
    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_eval_return).collect()
    }

    pub fn value_estimates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_value_estimate).collect()
    }

    pub fn max_value_estimate(&self) -> f64 {
        self.value_estimates()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean return over the last `window` evaluation points.
    pub fn final_windowed_return(&self, window: usize) -> f64 {
        *windowed(&self.returns(), window)
            .last()
            .expect("at least the iteration-0 record")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub env: String,
    pub algorithm: Algorithm,
    pub agent: AgentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Vec<AggregateRecord>,
    /// `r_max / (1 - γ)` of the env.
    pub value_bound: f64,
    pub output_dir: PathBuf,
}

impl ExperimentReport {
    /// Cross-seed mean of the per-seed windowed final returns.
    pub fn final_windowed_return(&self, window: usize) -> f64 {
        mean(
            &self
                .seeds
                .iter()
                .map(|s| s.final_windowed_return(window))
                .collect::<Vec<_>>(),
        )
    }

    pub fn final_windowed_return_std(&self, window: usize) -> f64 {
        population_std(
            &self
                .seeds
                .iter()
                .map(|s| s.final_windowed_return(window))
                .collect::<Vec<_>>(),
        )
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    env: &'a str,
    algorithm: Algorithm,
    iterations: u64,
    eval_interval: u64,
    eval_episodes: usize,
    seeds: &'a [u64],
    value_estimate_minibatches: usize,
    dataset_descriptor: &'a str,
    dataset_seed: u64,
    dataset_transitions: usize,
    agent: &'a AgentConfig,
}

/// Just enough of `run.toml` to label plot data.
#[derive(Debug, Deserialize)]
pub(crate) struct ManifestLabel {
    pub env: String,
    pub algorithm: Algorithm,
}

#[derive(Serialize)]
struct SummaryRow {
    seed: u64,
    final_return: f64,
    windowed_return: f64,
    max_value_estimate: f64,
    diverged_at: Option<u64>,
    last_finite_value_estimate: f64,
}

/// Loads or generates the batch, trains every seed and writes the metrics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let env = make_env(&config.env)?;
    let ds = match &config.dataset {
        Some(path) => load_dataset(path)?,
        None => {
            let (ds, _) = generate_dataset(&env, &config.generation)?;
            let path = config.output_dir.join(DATASET_FILE);
            crate::metrics::create(&path)?;
            save_dataset(&ds, &path)?;
            ds
        }
    };
    run_experiment_on(config, &env, &ds)
}

/// Like [`run_experiment`] with the batch already in hand.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    env: &Env,
    ds: &BatchDataset,
) -> Result<ExperimentReport> {
    config.validate()?;
    check_dataset(env, ds)?;
    let agent = config.agent_config(env)?;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &agent, env, ds, seed))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Vec<MetricsRecord>> = seeds.iter().map(|s| s.records.clone()).collect();
    let agg = aggregate(&runs)?;

    let out = &config.output_dir;
    for run in &runs {
        write_metrics(out, run)?;
    }
    write_csv(&out.join(AGGREGATE_FILE), Some(STD_NOTE), &agg)?;
    write_timing(out, &runs)?;
    let summary: Vec<SummaryRow> = seeds
        .iter()
        .map(|s| SummaryRow {
            seed: s.seed,
            final_return: s.records.last().map_or(f64::NAN, |r| r.mean_eval_return),
            windowed_return: s.final_windowed_return(RETURN_WINDOW),
            max_value_estimate: s.max_value_estimate(),
            diverged_at: s.diverged_at,
            last_finite_value_estimate: s.last_finite_value_estimate,
        })
        .collect();
    write_csv(&out.join(SUMMARY_FILE), None, &summary)?;
    write_manifest(out, config, &agent, ds)?;

    Ok(ExperimentReport {
        env: config.env.clone(),
        algorithm: config.algorithm,
        agent,
        seeds,
        aggregate: agg,
        value_bound: env.spec().value_bound(),
        output_dir: out.clone(),
    })
}

fn write_manifest(
    out: &Path,
    config: &ExperimentConfig,
    agent: &AgentConfig,
    ds: &BatchDataset,
) -> Result<()> {
    let manifest = RunManifest {
        env: &config.env,
        algorithm: config.algorithm,
        iterations: config.iterations,
        eval_interval: config.eval_interval,
        eval_episodes: config.eval_episodes,
        seeds: &config.seeds,
        value_estimate_minibatches: config.value_estimate_minibatches,
        dataset_descriptor: ds.policy_descriptor(),
        dataset_seed: ds.seed(),
        dataset_transitions: ds.len(),
        agent,
    };
    let text = toml::to_string(&manifest).map_err(|e| HarnessError::config(e.to_string()))?;
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| HarnessError::io(path, e))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn run_seed(
    config: &ExperimentConfig,
    agent_config: &AgentConfig,
    env: &Env,
    ds: &BatchDataset,
    seed: u64,
) -> Result<SeedReport> {
    let start = Instant::now();
    let env = env.clone();
    let mut rng = stream(seed, TRAIN_STREAM);
    let mut eval_rng = stream(seed, EVAL_STREAM);
    let mut estimate_rng = stream(seed, ESTIMATE_STREAM);
    let mut agent = Agent::new(
        agent_config.clone(),
        env.obs_dim(),
        env.num_actions(),
        &mut rng,
    )?;
    if agent_config.algorithm == Algorithm::Spibb {
        agent = agent
            .with_counts(ds.state_action_counts()?.clone())?
            .with_state_encoding(env.encoding().clone())?;
    }

    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut diverged_at = None;
    let mut last_finite = 0.0;
    let mut training_env_steps = 0;
    let mut done = 0u64;
    for point in config.eval_points() {
        let mut losses = Vec::new();
        if diverged_at.is_none() {
            let before = env.step_calls();
            while done < point {
                done += 1;
                let batch = ds.sample_minibatch(agent_config.minibatch_size, &mut rng)?;
                match agent.update(&batch, &mut rng) {
                    Ok(stats) if stats.loss.is_finite() => losses.push(stats.loss),
                    Ok(_) | Err(Error::Numeric { .. }) => {
                        diverged_at = Some(done);
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
                agent.sync_target();
            }
            training_env_steps += env.step_calls() - before;
        }
        let fresh = if diverged_at.is_none() || records.is_empty() {
            let minibatches = (0..config.value_estimate_minibatches)
                .map(|_| ds.sample_minibatch(agent_config.minibatch_size, &mut estimate_rng))
                .collect::<batchrl::Result<Vec<_>>>()?;
            let value = agent.value_estimate(&minibatches)?;
            if value.is_finite() {
                last_finite = value;
                let (ret, ret_std) = evaluate(&agent, &env, config.eval_episodes, &mut eval_rng)?;
                Some(MetricsRecord {
                    seed,
                    iteration: point,
                    mean_eval_return: ret,
                    return_std: ret_std,
                    mean_value_estimate: value,
                    training_loss: if losses.is_empty() {
                        f64::NAN
                    } else {
                        mean(&losses)
                    },
                    diverged: diverged_at.is_some(),
                    wall_clock_seconds: 0.0,
                })
            } else {
                diverged_at.get_or_insert(done);
                None
            }
        } else {
            None
        };
        let mut record = match (fresh, records.last()) {
            (Some(r), _) => r,
            (None, Some(prev)) => MetricsRecord {
                iteration: point,
                diverged: true,
                ..prev.clone()
            },
            (None, None) => {
                return Err(Error::Numeric {
                    what: "initial value estimate",
                    iteration: 0,
                }
                .into())
            }
        };
        record.wall_clock_seconds = start.elapsed().as_secs_f64();
        records.push(record);
    }
    Ok(SeedReport {
        seed,
        records,
        diverged_at,
        last_finite_value_estimate: last_finite,
        training_env_steps,
    })
}

/// Mean and population std of undiscounted returns over `episodes` rollouts
/// with the agent's evaluation ε.
pub fn evaluate(
    agent: &Agent,
    env: &Env,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let eps = agent.config().eval_epsilon;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut episode = env.reset(rng);
        let mut total = 0.0;
        loop {
            let action = agent.act(&env.observe(episode.state), eps, rng)?;
            let out = env.advance(&mut episode, action, rng)?;
            total += out.reward;
            if out.done || out.truncated {
                break;
            }
        }
        returns.push(total);
    }
    Ok((mean(&returns), population_std(&returns)))
}
