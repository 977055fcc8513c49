use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six discrete-action learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dqn,
    Qrdqn,
    Rem,
    Bcq,
    Klcontrol,
    Spibb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Dqn,
        Algorithm::Qrdqn,
        Algorithm::Rem,
        Algorithm::Bcq,
        Algorithm::Klcontrol,
        Algorithm::Spibb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Qrdqn => "qrdqn",
            Algorithm::Rem => "rem",
            Algorithm::Bcq => "bcq",
            Algorithm::Klcontrol => "klcontrol",
            Algorithm::Spibb => "spibb",
        }
    }

    /// Whether the agent trains a behavioral-cloning model G_ω.
    pub fn uses_generative_model(self) -> bool {
        matches!(
            self,
            Algorithm::Bcq | Algorithm::Klcontrol | Algorithm::Spibb
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// How KL-Control picks actions from its Q-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlPolicyMode {
    #[default]
    Argmax,
    Boltzmann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlControlConfig {
    pub dropout_masks: usize,
    pub kl_weight: f64,
    pub gradient_clip: f64,
    pub dropout_probability: f64,
    pub policy: KlPolicyMode,
}

impl Default for KlControlConfig {
    fn default() -> Self {
        Self {
            dropout_masks: 5,
            kl_weight: 2.0,
            gradient_clip: 1.0,
            dropout_probability: 0.2,
            policy: KlPolicyMode::Argmax,
        }
    }
}

/// How the SPIBB target treats the next-state policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpibbTarget {
    /// Exact expectation over π(·|s').
    #[default]
    Expectation,
    /// One sampled a' ~ π(·|s').
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpibbConfig {
    /// Pairs with `n(s,a) <= count_threshold` are bootstrapped onto the
    /// baseline. `-1` disables bootstrapping, `inf` bootstraps everything.
    pub count_threshold: f64,
    pub target: SpibbTarget,
}

impl Default for SpibbConfig {
    fn default() -> Self {
        Self {
            count_threshold: 10.0,
            target: SpibbTarget::Expectation,
        }
    }
}

/// Hyper-parameters of one agent. [`Default`] holds the published values;
/// [`AgentConfig::desk`] scales the schedule-type constants down for small
/// MDPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub discount: f64,
    pub target_update_rate: u64,
    pub minibatch_size: usize,
    pub huber_kappa: f64,
    pub eval_epsilon: f64,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub hidden_layers: Vec<usize>,
    pub quantiles: usize,
    pub rem_heads: usize,
    pub bcq_threshold: f64,
    pub klcontrol: KlControlConfig,
    pub spibb: SpibbConfig,
    pub generative_penalty: f64,
    /// Share the first hidden layer between Q_θ and G_ω. `None` picks the
    /// per-algorithm default (on for BCQ and KL-Control).
    pub share_encoder: Option<bool>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dqn,
            discount: 0.99,
            target_update_rate: 8000,
            minibatch_size: 32,
            huber_kappa: 1.0,
            eval_epsilon: 0.001,
            learning_rate: 0.0000625,
            adam_epsilon: 0.00015,
            hidden_layers: vec![512],
            quantiles: 50,
            rem_heads: 200,
            bcq_threshold: 0.3,
            klcontrol: KlControlConfig::default(),
            spibb: SpibbConfig::default(),
            generative_penalty: 0.01,
            share_encoder: None,
        }
    }
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    /// Desk-scale preset for the built-in MDPs.
    pub fn desk(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            target_update_rate: 1000,
            learning_rate: 0.001,
            hidden_layers: vec![64],
            quantiles: 10,
            rem_heads: 10,
            ..Self::default()
        }
    }

    pub fn shares_encoder(&self) -> bool {
        self.share_encoder.unwrap_or(matches!(
            self.algorithm,
            Algorithm::Bcq | Algorithm::Klcontrol
        ))
    }

    /// Number of output values per action.
    pub fn heads(&self) -> usize {
        match self.algorithm {
            Algorithm::Qrdqn => self.quantiles,
            Algorithm::Rem => self.rem_heads,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.bcq_threshold) {
            return bad("bcq_threshold must lie in [0, 1]");
        }
        if self.target_update_rate == 0
            || self.minibatch_size == 0
            || self.quantiles == 0
            || self.rem_heads == 0
            || self.klcontrol.dropout_masks == 0
        {
            return bad("counts must be positive");
        }
        if !(self.huber_kappa > 0.0) || !(self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) {
            return bad("huber_kappa, learning_rate and adam_epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad("eval_epsilon must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.klcontrol.dropout_probability) {
            return bad("dropout probability must lie in [0, 1)");
        }
        if !(self.klcontrol.kl_weight > 0.0) || !(self.klcontrol.gradient_clip > 0.0) {
            return bad("kl_weight and gradient_clip must be positive");
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad("hidden_layers must be non-empty and positive");
        }
        if self.spibb.count_threshold.is_nan() || !(self.generative_penalty >= 0.0) {
            return bad("invalid spibb threshold or generative penalty");
        }
        Ok(())
    }
}
