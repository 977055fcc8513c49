use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use batchrl::agents::{AgentConfig, Algorithm};
use batchrl::data::BehavioralConfig;
use batchrl::mdp::Env;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// How to produce a batch when no dataset file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Online environment steps for the behavioral DQN.
    pub behavioral_steps: usize,
    pub behavioral_seed: u64,
    /// Stop the behavioral run at this fraction of the steps it needed to
    /// reach near-oracle return; absent trains for the full budget.
    pub partial_fraction: Option<f64>,
    pub num_transitions: usize,
    pub seed: u64,
    /// Fixed exploration rate instead of the per-episode mixture.
    pub epsilon: Option<f64>,
    /// Fail unless the batch leaves some reachable `(s, a)` unvisited.
    pub require_coverage_hole: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            behavioral_steps: 30_000,
            behavioral_seed: 0,
            partial_fraction: None,
            num_transitions: 100_000,
            seed: 0,
            epsilon: None,
            require_coverage_hole: false,
        }
    }
}

impl GenerationConfig {
    pub fn behavioral_config(&self) -> BehavioralConfig {
        BehavioralConfig {
            partial_fraction: self.partial_fraction,
            seed: self.behavioral_seed,
            ..BehavioralConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.behavioral_steps == 0 || self.num_transitions == 0 {
            return Err(HarnessError::config(
                "behavioral_steps and num_transitions must be positive",
            ));
        }
        if let Some(f) = self.partial_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(HarnessError::config("partial_fraction must lie in (0, 1]"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(HarnessError::config("epsilon must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One offline training experiment: an agent, a batch and a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub algorithm: Algorithm,
    /// Overrides applied on top of the desk-scale agent defaults; keys are
    /// `AgentConfig` field names.
    pub agent: toml::Table,
    /// Existing batch file. When absent the batch is generated.
    pub dataset: Option<PathBuf>,
    pub generation: GenerationConfig,
    /// Offline iterations T.
    pub iterations: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub value_estimate_minibatches: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "chain".into(),
            algorithm: Algorithm::Dqn,
            agent: toml::Table::new(),
            dataset: None,
            generation: GenerationConfig::default(),
            iterations: 200_000,
            eval_interval: 2_000,
            eval_episodes: 10,
            seeds: vec![0, 1, 2],
            value_estimate_minibatches: 100,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_toml(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations > 0 && (self.eval_interval == 0 || self.eval_interval > self.iterations)
        {
            return Err(HarnessError::config(
                "eval_interval must lie in 1..=iterations",
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds must not be empty"));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::config("eval_episodes must be positive"));
        }
        match &self.dataset {
            Some(p) if !p.is_file() => {
                return Err(HarnessError::config(format!(
                    "dataset {} does not exist",
                    p.display()
                )))
            }
            Some(_) => {}
            None => self.generation.validate()?,
        }
        Ok(())
    }

    /// Desk defaults for the algorithm, the env's discount, then overrides.
    pub fn agent_config(&self, env: &Env) -> Result<AgentConfig> {
        resolve_agent(self.algorithm, env, &self.agent)
    }

    /// Evaluation points: 0, every `eval_interval`, and T.
    pub fn eval_points(&self) -> Vec<u64> {
        let mut points = vec![0];
        if self.iterations > 0 {
            let mut t = self.eval_interval;
            while t < self.iterations {
                points.push(t);
                t += self.eval_interval;
            }
            points.push(self.iterations);
        }
        points
    }
}

pub(crate) fn resolve_agent(
    algorithm: Algorithm,
    env: &Env,
    overrides: &toml::Table,
) -> Result<AgentConfig> {
    if let Some(v) = overrides.get("algorithm") {
        if v.as_str() != Some(algorithm.as_str()) {
            return Err(HarnessError::config(
                "agent.algorithm disagrees with algorithm",
            ));
        }
    }
    let mut base = AgentConfig::desk(algorithm);
    base.discount = env.spec().discount;
    let mut table =
        toml::Table::try_from(&base).map_err(|e| HarnessError::config(e.to_string()))?;
    merge(&mut table, overrides);
    let cfg: AgentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::config(format!("agent: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, overrides: &toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Every algorithm on shared per-env batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub envs: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    /// Per-algorithm agent overrides keyed by algorithm name.
    pub agent: BTreeMap<String, toml::Table>,
    pub generation: GenerationConfig,
    pub iterations: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub value_estimate_minibatches: usize,
    /// Evaluation points averaged for the final return.
    pub window: usize,
    pub output_dir: PathBuf,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            envs: vec!["cliff-xy".into()],
            algorithms: Algorithm::ALL.to_vec(),
            agent: BTreeMap::new(),
            generation: GenerationConfig::default(),
            iterations: e.iterations,
            eval_interval: e.eval_interval,
            eval_episodes: e.eval_episodes,
            seeds: e.seeds,
            value_estimate_minibatches: e.value_estimate_minibatches,
            window: 5,
            output_dir: PathBuf::from("suite"),
        }
    }
}

impl SuiteConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_toml(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() || self.algorithms.is_empty() {
            return Err(HarnessError::config(
                "a suite needs at least one env and one algorithm",
            ));
        }
        if self.window == 0 {
            return Err(HarnessError::config("window must be positive"));
        }
        for key in self.agent.keys() {
            key.parse::<Algorithm>()?;
        }
        self.experiment("", self.algorithms[0], None).validate()
    }

    /// The single-run config for one cell of the suite.
    pub fn experiment(
        &self,
        env: &str,
        algorithm: Algorithm,
        dataset: Option<PathBuf>,
    ) -> ExperimentConfig {
        ExperimentConfig {
            env: env.to_string(),
            algorithm,
            agent: self
                .agent
                .get(algorithm.as_str())
                .cloned()
                .unwrap_or_default(),
            dataset,
            generation: self.generation.clone(),
            iterations: self.iterations,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            seeds: self.seeds.clone(),
            value_estimate_minibatches: self.value_estimate_minibatches,
            output_dir: self.output_dir.join(env).join(algorithm.as_str()),
        }
    }
}

fn read_toml<C: DeserializeOwned>(path: impl AsRef<Path>) -> Result<C> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use batchrl::mdp::make_env;

    #[test]
    fn eval_grid_includes_both_ends() {
        let cfg = ExperimentConfig {
            iterations: 10,
            eval_interval: 4,
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.eval_points(), vec![0, 4, 8, 10]);
        let none = ExperimentConfig {
            iterations: 0,
            ..ExperimentConfig::default()
        };
        assert_eq!(none.eval_points(), vec![0]);
    }

    #[test]
    fn overrides_merge_over_desk_defaults() {
        let env = make_env("chain").unwrap();
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            algorithm = "klcontrol"
            [agent]
            learning_rate = 0.01
            klcontrol = { dropout_masks = 3 }
            "#,
        )
        .unwrap();
        let agent = cfg.agent_config(&env).unwrap();
        assert_eq!(agent.algorithm, Algorithm::Klcontrol);
        assert_eq!(agent.learning_rate, 0.01);
        assert_eq!(agent.klcontrol.dropout_masks, 3);
        assert_eq!(agent.klcontrol.kl_weight, 2.0);
        assert_eq!(
            agent.hidden_layers,
            AgentConfig::desk(Algorithm::Klcontrol).hidden_layers
        );
    }

    #[test]
    fn rejects_unknown_and_inconsistent_keys() {
        assert!(toml::from_str::<ExperimentConfig>("iteratons = 5").is_err());
        let env = make_env("chain").unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.agent.insert("algorithm".into(), "bcq".into());
        assert!(cfg.agent_config(&env).is_err());
        cfg.agent = toml::Table::new();
        cfg.agent.insert("learning_rat".into(), 0.1.into());
        assert!(cfg.agent_config(&env).is_err());
    }

    #[test]
    fn invalid_schedules() {
        let mut cfg = ExperimentConfig {
            iterations: 10,
            eval_interval: 20,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.eval_interval = 5;
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }
}
