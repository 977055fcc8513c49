use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{one_hot_index, MdpSpec};

/// One `(s, a, r, s', done)` tuple. `done` marks true termination only; a
/// step-cap truncation keeps `done = false` so the bootstrap survives.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Exact visit counts n(s,a) of a tabular batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    num_states: usize,
    num_actions: usize,
    counts: Vec<u64>,
}

impl CountTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            counts: vec![0; num_states * num_actions],
        }
    }

    pub(crate) fn from_raw(num_states: usize, num_actions: usize, counts: Vec<u64>) -> Self {
        Self {
            num_states,
            num_actions,
            counts,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[u64] {
        &self.counts[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn raw(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn increment(&mut self, s: usize, a: usize) {
        self.counts[s * self.num_actions + a] += 1;
    }
}

/// Immutable batch of transitions plus the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    env_name: String,
    policy_descriptor: String,
    seed: u64,
    obs_dim: usize,
    num_actions: usize,
    transitions: Vec<Transition>,
    counts: Option<CountTable>,
}

impl BatchDataset {
    /// Validates the transitions and derives counts when every observation
    /// is one-hot.
    pub fn new(
        env_name: impl Into<String>,
        policy_descriptor: impl Into<String>,
        seed: u64,
        obs_dim: usize,
        num_actions: usize,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::arg("a batch needs at least one transition"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.action >= num_actions {
                return Err(Error::arg(format!(
                    "transition {i} has action {} out of range",
                    t.action
                )));
            }
            if t.state.len() != obs_dim || t.next_state.len() != obs_dim {
                return Err(Error::arg(format!(
                    "transition {i} has wrong observation size"
                )));
            }
        }
        let counts = tabular_counts(&transitions, obs_dim, num_actions);
        Ok(Self {
            env_name: env_name.into(),
            policy_descriptor: policy_descriptor.into(),
            seed,
            obs_dim,
            num_actions,
            transitions,
            counts,
        })
    }

    /// Attaches exact counts gathered while generating the batch, for
    /// observations that are not one-hot but still identify their state.
    /// For one-hot batches the table must equal the derived one.
    pub fn with_counts(mut self, counts: CountTable) -> Result<Self> {
        if counts.num_actions() != self.num_actions || counts.total() != self.len() as u64 {
            return Err(Error::arg("count table does not match the transitions"));
        }
        if let Some(derived) = &self.counts {
            if *derived != counts {
                return Err(Error::arg(
                    "count table disagrees with the one-hot observations",
                ));
            }
        }
        self.counts = Some(counts);
        Ok(self)
    }

    pub fn env_name(&self) -> &str {
        &self.env_name
    }

    pub fn policy_descriptor(&self) -> &str {
        &self.policy_descriptor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn is_tabular(&self) -> bool {
        self.counts.is_some()
    }

    /// Exact n(s,a). Fails for batches whose observations neither are
    /// one-hot nor came with counts from generation.
    pub fn state_action_counts(&self) -> Result<&CountTable> {
        self.counts.as_ref().ok_or_else(|| {
            Error::Unsupported(
                "state-action counts need tabular (state-identifying) observations".into(),
            )
        })
    }

    /// Uniform sampling with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        sample_minibatch(&self.transitions, size, rng)
    }
}

/// Reachable, non-terminal `(s, a)` pairs the batch never visits.
pub fn coverage_holes(spec: &MdpSpec, counts: &CountTable) -> Result<Vec<(usize, usize)>> {
    if counts.num_states() != spec.num_states || counts.num_actions() != spec.num_actions {
        return Err(Error::arg("count table does not match the MDP"));
    }
    let reachable = spec.reachable_states();
    Ok((0..spec.num_states)
        .filter(|&s| reachable[s] && !spec.is_terminal(s))
        .flat_map(|s| (0..spec.num_actions).map(move |a| (s, a)))
        .filter(|&(s, a)| counts.get(s, a) == 0)
        .collect())
}

/// Uniform sampling with replacement from a slice of transitions.
pub fn sample_minibatch<'a, R: Rng + ?Sized>(
    transitions: &'a [Transition],
    size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Transition>> {
    if transitions.is_empty() {
        return Err(Error::arg("cannot sample from an empty dataset"));
    }
    Ok((0..size)
        .map(|_| &transitions[rng.gen_range(0..transitions.len())])
        .collect())
}

fn tabular_counts(
    transitions: &[Transition],
    obs_dim: usize,
    num_actions: usize,
) -> Option<CountTable> {
    let mut counts = CountTable::zeros(obs_dim, num_actions);
    for t in transitions {
        let s = one_hot_index(&t.state)?;
        one_hot_index(&t.next_state)?;
        counts.increment(s, t.action);
    }
    Some(counts)
}
