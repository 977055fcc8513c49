use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::MdpSpec;

/// Default episode step cap.
pub const DEFAULT_MAX_STEPS: usize = 200;

/// How a state id is turned into a feature vector for function approximators.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    OneHot,
    /// Dense per-state features; rows have equal length and are distinct,
    /// so an observation still identifies its state.
    Features(Vec<Vec<f64>>),
}

impl Encoding {
    /// State id behind an observation, if the observation is one this
    /// encoding produces.
    pub fn state_index(&self, obs: &[f64]) -> Option<usize> {
        match self {
            Encoding::OneHot => one_hot_index(obs),
            Encoding::Features(rows) => rows.iter().position(|r| r.as_slice() == obs),
        }
    }
}

/// Result of a single environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next_state: usize,
    pub reward: f64,
    pub done: bool,
}

/// Per-episode cursor. Owned by whoever runs the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub state: usize,
    pub steps: usize,
}

/// Outcome of advancing an [`Episode`]. `truncated` marks the step cap; it is
/// never set together with `done`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
}

/// Sampling front-end over an [`MdpSpec`].
#[derive(Debug)]
pub struct Env {
    name: String,
    spec: MdpSpec,
    encoding: Encoding,
    max_steps: usize,
    clip_rewards: bool,
    step_calls: AtomicU64,
}

impl Clone for Env {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            spec: self.spec.clone(),
            encoding: self.encoding.clone(),
            max_steps: self.max_steps,
            clip_rewards: self.clip_rewards,
            step_calls: AtomicU64::new(0),
        }
    }
}

impl Env {
    pub fn new(name: impl Into<String>, spec: MdpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            name: name.into(),
            spec,
            encoding: Encoding::OneHot,
            max_steps: DEFAULT_MAX_STEPS,
            clip_rewards: false,
            step_calls: AtomicU64::new(0),
        })
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Result<Self> {
        if let Encoding::Features(rows) = &encoding {
            let dim = rows.first().map_or(0, Vec::len);
            if rows.len() != self.spec.num_states || dim == 0 || rows.iter().any(|r| r.len() != dim)
            {
                return Err(Error::arg(
                    "feature table must have one equal-length row per state",
                ));
            }
            if rows.iter().enumerate().any(|(i, r)| rows[..i].contains(r)) {
                return Err(Error::arg("feature rows must be distinct"));
            }
        }
        self.encoding = encoding;
        Ok(self)
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_reward_clipping(mut self, clip: bool) -> Self {
        self.clip_rewards = clip;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    pub fn num_states(&self) -> usize {
        self.spec.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn clips_rewards(&self) -> bool {
        self.clip_rewards
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.encoding, Encoding::OneHot)
    }

    pub fn obs_dim(&self) -> usize {
        match &self.encoding {
            Encoding::OneHot => self.spec.num_states,
            Encoding::Features(rows) => rows[0].len(),
        }
    }

    pub fn observe(&self, state: usize) -> Vec<f64> {
        match &self.encoding {
            Encoding::OneHot => {
                let mut v = vec![0.0; self.spec.num_states];
                v[state] = 1.0;
                v
            }
            Encoding::Features(rows) => rows[state].clone(),
        }
    }

    pub fn state_index(&self, obs: &[f64]) -> Option<usize> {
        self.encoding.state_index(obs)
    }

    /// Number of [`Env::step`] calls made so far on this instance.
    pub fn step_calls(&self) -> u64 {
        self.step_calls.load(Ordering::Relaxed)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.spec.initial_distribution, rng)
    }

    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<Step> {
        if state >= self.spec.num_states {
            return Err(Error::arg(format!("state {state} out of range")));
        }
        if action >= self.spec.num_actions {
            return Err(Error::arg(format!("action {action} out of range")));
        }
        self.step_calls.fetch_add(1, Ordering::Relaxed);
        let next_state = sample_index(&self.spec.transition[state][action], rng);
        let mut reward = self.spec.reward[state][action][next_state];
        if self.clip_rewards {
            reward = reward.clamp(-1.0, 1.0);
        }
        Ok(Step {
            next_state,
            reward,
            done: self.spec.is_terminal(next_state),
        })
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Episode {
        Episode {
            state: self.sample_initial(rng),
            steps: 0,
        }
    }

    /// Steps the episode cursor, applying the step cap.
    pub fn advance<R: Rng + ?Sized>(
        &self,
        episode: &mut Episode,
        action: usize,
        rng: &mut R,
    ) -> Result<Outcome> {
        let step = self.step(episode.state, action, rng)?;
        let state = episode.state;
        episode.state = step.next_state;
        episode.steps += 1;
        Ok(Outcome {
            state,
            action,
            next_state: step.next_state,
            reward: step.reward,
            done: step.done,
            truncated: !step.done && episode.steps >= self.max_steps,
        })
    }
}

/// Index of the one-hot entry, if `obs` is exactly one-hot.
pub fn one_hot_index(obs: &[f64]) -> Option<usize> {
    let mut found = None;
    for (i, &v) in obs.iter().enumerate() {
        if v == 1.0 {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    found
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
