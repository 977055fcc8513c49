//! Batch preparation and behavioral-policy files for the CLI.

use std::path::Path;

use batchrl::data::{
    coverage_holes, generate_batch, train_behavioral, BatchDataset, BehavioralPolicy, BehavioralQ,
};
use batchrl::mdp::{Env, QTable};
use batchrl::nn::{DenseNet, OutputActivation};
use serde::{Deserialize, Serialize};

use crate::config::GenerationConfig;
use crate::error::{HarnessError, Result};

/// Trains the behavioral policy described by `gen`.
pub fn behavioral_policy(env: &Env, gen: &GenerationConfig) -> Result<BehavioralPolicy> {
    let policy = train_behavioral(env, gen.behavioral_steps, &gen.behavioral_config())?;
    Ok(match gen.epsilon {
        Some(e) => policy.with_epsilon(e),
        None => policy,
    })
}

/// Rolls `policy` into a batch and enforces the coverage-hole requirement.
pub fn batch_from_policy(
    env: &Env,
    policy: &BehavioralPolicy,
    gen: &GenerationConfig,
) -> Result<BatchDataset> {
    let ds = generate_batch(env, policy, gen.num_transitions, gen.seed)?;
    if gen.require_coverage_hole
        && coverage_holes(env.spec(), ds.state_action_counts()?)?.is_empty()
    {
        return Err(HarnessError::config(format!(
            "the {} batch visits every reachable state-action pair; no coverage hole",
            env.name()
        )));
    }
    Ok(ds)
}

pub fn generate_dataset(
    env: &Env,
    gen: &GenerationConfig,
) -> Result<(BatchDataset, BehavioralPolicy)> {
    let policy = behavioral_policy(env, gen)?;
    let ds = batch_from_policy(env, &policy, gen)?;
    Ok((ds, policy))
}

/// Checks that a loaded batch fits the env it will be trained against.
pub fn check_dataset(env: &Env, ds: &BatchDataset) -> Result<()> {
    if ds.obs_dim() != env.obs_dim() || ds.num_actions() != env.num_actions() {
        return Err(HarnessError::config(format!(
            "dataset shape ({} obs, {} actions) does not fit env {} ({} obs, {} actions)",
            ds.obs_dim(),
            ds.num_actions(),
            env.name(),
            env.obs_dim(),
            env.num_actions()
        )));
    }
    if ds.env_name() != env.name() {
        return Err(HarnessError::config(format!(
            "dataset was generated on '{}', not '{}'",
            ds.env_name(),
            env.name()
        )));
    }
    Ok(())
}

pub const BEHAVIORAL_FILE: &str = "behavioral.toml";

#[derive(Serialize, Deserialize)]
struct BehavioralMeta {
    env: String,
    epsilon: Option<f64>,
    greedy_return: f64,
    reference_return: f64,
    /// Row-major Q table, present for tabulated policies.
    q_table: Option<Vec<f64>>,
    net: Option<NetMeta>,
}

#[derive(Serialize, Deserialize)]
struct NetMeta {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Writes the policy to `behavioral.toml` in `dir`.
pub fn save_behavioral(dir: &Path, env: &Env, policy: &BehavioralPolicy) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let (q_table, net) = match policy.q() {
        BehavioralQ::Net(net) => (
            None,
            Some(NetMeta {
                layer_sizes: net.layer_sizes().to_vec(),
                params: net.params().to_vec(),
            }),
        ),
        BehavioralQ::Table(q) => (Some(q.values().to_vec()), None),
    };
    let meta = BehavioralMeta {
        env: env.name().to_string(),
        epsilon: policy.epsilon_override(),
        greedy_return: policy.greedy_return(env)?,
        reference_return: policy.reference_return(env)?,
        q_table,
        net,
    };
    let path = dir.join(BEHAVIORAL_FILE);
    let text = toml::to_string(&meta).map_err(|e| HarnessError::config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn load_behavioral(dir: &Path, env: &Env) -> Result<BehavioralPolicy> {
    let path = dir.join(BEHAVIORAL_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let meta: BehavioralMeta = toml::from_str(&text)
        .map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))?;
    if meta.env != env.name() {
        return Err(HarnessError::config(format!(
            "behavioral policy was trained on '{}', not '{}'",
            meta.env,
            env.name()
        )));
    }
    let q = match (meta.q_table, meta.net) {
        (Some(values), None) => BehavioralQ::Table(QTable::from_values(
            env.num_states(),
            env.num_actions(),
            values,
        )?),
        (None, Some(n)) => {
            let net =
                DenseNet::from_parts(&n.layer_sizes, 1, OutputActivation::Identity, n.params)?;
            if net.input_dim() != env.obs_dim() || net.output_dim() != env.num_actions() {
                return Err(HarnessError::config(
                    "behavioral network does not fit the env",
                ));
            }
            BehavioralQ::Net(net)
        }
        _ => {
            return Err(HarnessError::config(format!(
                "{}: expected exactly one of q_table or net",
                path.display()
            )))
        }
    };
    let policy = BehavioralPolicy::new(q);
    Ok(match meta.epsilon {
        Some(e) => policy.with_epsilon(e),
        None => policy,
    })
}
