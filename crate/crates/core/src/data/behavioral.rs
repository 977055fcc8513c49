use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{AgentConfig, AgentState, Algorithm};
use crate::data::{BatchDataset, CountTable, Transition};
use crate::error::{Error, Result};
use crate::mdp::{expected_episode_return, value_iteration, Encoding, Env, PolicyTable, QTable};
use crate::nn::DenseNet;
use crate::scalar::argmax;

/// Per-episode exploration rate: `high` with probability `p_high`,
/// otherwise `low`. Drawn once and held for the whole episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonMixture {
    pub high: f64,
    pub low: f64,
    pub p_high: f64,
}

impl Default for EpsilonMixture {
    fn default() -> Self {
        Self {
            high: 0.2,
            low: 0.001,
            p_high: 0.8,
        }
    }
}

impl EpsilonMixture {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.gen::<f64>() < self.p_high {
            self.high
        } else {
            self.low
        }
    }
}

/// Greedy action source of the behavioral policy.
#[derive(Debug, Clone)]
pub enum BehavioralQ {
    Net(DenseNet<f64>),
    Table(QTable<f64>),
}

/// A frozen greedy Q plus the ε-mixture used while collecting data.
#[derive(Debug, Clone)]
pub struct BehavioralPolicy {
    q: BehavioralQ,
    mixture: EpsilonMixture,
    epsilon_override: Option<f64>,
}

impl BehavioralPolicy {
    pub fn new(q: BehavioralQ) -> Self {
        Self {
            q,
            mixture: EpsilonMixture::default(),
            epsilon_override: None,
        }
    }

    pub fn with_mixture(mut self, mixture: EpsilonMixture) -> Self {
        self.mixture = mixture;
        self
    }

    /// Uses a fixed ε for every episode instead of the mixture.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon_override = Some(epsilon);
        self
    }

    pub fn q(&self) -> &BehavioralQ {
        &self.q
    }

    pub fn mixture(&self) -> EpsilonMixture {
        self.mixture
    }

    pub fn epsilon_override(&self) -> Option<f64> {
        self.epsilon_override
    }

    pub fn descriptor(&self) -> String {
        let source = match &self.q {
            BehavioralQ::Net(net) => format!("dqn{:?}", net.layer_sizes()),
            BehavioralQ::Table(_) => "table".to_string(),
        };
        match self.epsilon_override {
            Some(e) => format!("{source} eps={e}"),
            None => format!(
                "{source} eps-mixture({}@{},{})",
                self.mixture.high, self.mixture.p_high, self.mixture.low
            ),
        }
    }

    pub fn greedy_action(&self, env: &Env, state: usize) -> Result<usize> {
        Ok(match &self.q {
            BehavioralQ::Net(net) => argmax(&net.forward(&env.observe(state), None)?),
            BehavioralQ::Table(q) => argmax(q.row(state)),
        })
    }

    pub fn greedy_table(&self, env: &Env) -> Result<PolicyTable<f64>> {
        greedy_policy_table(env, |s| self.greedy_action(env, s))
    }

    /// State-wise action distribution averaged over the ε-mixture.
    pub fn action_distribution(&self, env: &Env) -> Result<PolicyTable<f64>> {
        let greedy = self.greedy_table(env)?;
        Ok(match self.epsilon_override {
            Some(e) => greedy.epsilon_mix(e),
            None => {
                let m = self.mixture;
                greedy.epsilon_mix(m.p_high * m.high + (1.0 - m.p_high) * m.low)
            }
        })
    }

    /// Exact expected episode return of the noisy behavioral policy.
    pub fn reference_return(&self, env: &Env) -> Result<f64> {
        let greedy = self.greedy_table(env)?;
        let ret =
            |e: f64| expected_episode_return(env.spec(), &greedy.epsilon_mix(e), env.max_steps());
        Ok(match self.epsilon_override {
            Some(e) => ret(e),
            None => {
                self.mixture.p_high * ret(self.mixture.high)
                    + (1.0 - self.mixture.p_high) * ret(self.mixture.low)
            }
        })
    }

    /// Exact expected episode return of the noise-free greedy policy.
    pub fn greedy_return(&self, env: &Env) -> Result<f64> {
        Ok(expected_episode_return(
            env.spec(),
            &self.greedy_table(env)?,
            env.max_steps(),
        ))
    }
}

fn greedy_policy_table(
    env: &Env,
    mut action: impl FnMut(usize) -> Result<usize>,
) -> Result<PolicyTable<f64>> {
    let (ns, na) = (env.num_states(), env.num_actions());
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        probs[s * na + action(s)?] = 1.0;
    }
    PolicyTable::new(ns, na, probs)
}

/// Expected return of the optimal policy under the episode cap.
pub(crate) fn oracle_return(env: &Env) -> Result<f64> {
    let q: QTable<f64> = value_iteration(env.spec(), 1e-10)?;
    Ok(expected_episode_return(
        env.spec(),
        &q.greedy(),
        env.max_steps(),
    ))
}

/// Online DQN settings for training the behavioral policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralConfig {
    pub agent: AgentConfig,
    pub buffer_size: usize,
    pub warmup_steps: usize,
    pub train_frequency: usize,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    /// Training iterations over which ε decays linearly.
    pub epsilon_decay_iterations: usize,
    /// Stop at this fraction of the steps the run needed to first reach
    /// near-oracle return. `None` trains for the full step budget.
    pub partial_fraction: Option<f64>,
    /// Fraction of the oracle return that counts as near-oracle.
    pub near_oracle: f64,
    pub eval_every: usize,
    /// Train on one-hot state ids even when the env emits dense features.
    /// The result is then tabulated over states.
    pub tabular_inputs: bool,
    pub seed: u64,
}

impl Default for BehavioralConfig {
    fn default() -> Self {
        let mut agent = AgentConfig::desk(Algorithm::Dqn);
        agent.target_update_rate = 200;
        Self {
            agent,
            buffer_size: 20_000,
            warmup_steps: 500,
            train_frequency: 1,
            epsilon_initial: 1.0,
            epsilon_final: 0.01,
            epsilon_decay_iterations: 5_000,
            partial_fraction: None,
            near_oracle: 0.95,
            eval_every: 250,
            tabular_inputs: true,
            seed: 0,
        }
    }
}

/// Trains an online DQN on `env` for up to `steps` environment steps and
/// returns its (partially trained) greedy Q as a behavioral policy.
pub fn train_behavioral(
    env: &Env,
    steps: usize,
    config: &BehavioralConfig,
) -> Result<BehavioralPolicy> {
    if steps == 0 {
        return Err(Error::arg("behavioral training needs at least one step"));
    }
    if config.tabular_inputs && !env.is_tabular() {
        let tabular = env.clone().with_encoding(Encoding::OneHot)?;
        let BehavioralQ::Net(net) = train_behavioral(&tabular, steps, config)?.q else {
            unreachable!("training always yields a network");
        };
        let mut values = Vec::with_capacity(env.num_states() * env.num_actions());
        for s in 0..env.num_states() {
            values.extend(net.forward(&tabular.observe(s), None)?);
        }
        let q = QTable::from_values(env.num_states(), env.num_actions(), values)?;
        return Ok(BehavioralPolicy::new(BehavioralQ::Table(q)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent: AgentState<f64> = AgentState::new(
        AgentConfig {
            algorithm: Algorithm::Dqn,
            discount: env.spec().discount,
            ..config.agent.clone()
        },
        env.obs_dim(),
        env.num_actions(),
        &mut rng,
    )?;
    let oracle = oracle_return(env)?;
    let mut buffer: VecDeque<Transition> = VecDeque::with_capacity(config.buffer_size.min(steps));
    let mut snapshots: Vec<(usize, DenseNet<f64>)> = vec![(0, agent.q_net().clone())];
    let mut reached: Option<usize> = None;
    let mut episode = env.reset(&mut rng);
    let mut train_iters = 0usize;
    for step in 1..=steps {
        let eps = if step <= config.warmup_steps {
            1.0
        } else {
            let frac =
                (train_iters as f64 / config.epsilon_decay_iterations.max(1) as f64).min(1.0);
            config.epsilon_initial + frac * (config.epsilon_final - config.epsilon_initial)
        };
        let obs = env.observe(episode.state);
        let action = agent.act(&obs, eps, &mut rng)?;
        let out = env.advance(&mut episode, action, &mut rng)?;
        if buffer.len() == config.buffer_size {
            buffer.pop_front();
        }
        buffer.push_back(Transition {
            state: obs,
            action,
            reward: out.reward,
            next_state: env.observe(out.next_state),
            done: out.done,
        });
        if out.done || out.truncated {
            episode = env.reset(&mut rng);
        }
        if step > config.warmup_steps && step % config.train_frequency.max(1) == 0 {
            let (front, back) = buffer.as_slices();
            let idx_batch = sample_indices(
                front.len() + back.len(),
                config.agent.minibatch_size,
                &mut rng,
            );
            let batch: Vec<&Transition> = idx_batch
                .into_iter()
                .map(|i| {
                    if i < front.len() {
                        &front[i]
                    } else {
                        &back[i - front.len()]
                    }
                })
                .collect();
            agent.dqn_update(&batch)?;
            agent.sync_target();
            train_iters += 1;
        }
        if config.partial_fraction.is_some() && step % config.eval_every.max(1) == 0 {
            let net = agent.q_net().clone();
            let policy = BehavioralPolicy::new(BehavioralQ::Net(net.clone()));
            snapshots.push((step, net));
            if policy.greedy_return(env)? >= config.near_oracle * oracle {
                reached = Some(step);
                break;
            }
        }
    }
    let net = match (config.partial_fraction, reached) {
        (Some(frac), Some(n_star)) => {
            let cut = (frac * n_star as f64).ceil() as usize;
            snapshots
                .into_iter()
                .find(|(s, _)| *s >= cut)
                .map(|(_, n)| n)
                .expect("the near-oracle snapshot is always present")
        }
        _ => agent.q_net().clone(),
    };
    Ok(BehavioralPolicy::new(BehavioralQ::Net(net)))
}

fn sample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..len)).collect()
}

/// Per-episode record of a generation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationLog {
    pub episode_epsilons: Vec<f64>,
    /// `(state, action)` pairs of each episode, in order.
    pub episodes: Vec<Vec<(usize, usize)>>,
}

/// Rolls the behavioral policy until `num_transitions` are recorded.
pub fn generate_batch(
    env: &Env,
    policy: &BehavioralPolicy,
    num_transitions: usize,
    seed: u64,
) -> Result<BatchDataset> {
    Ok(generate_batch_with_log(env, policy, num_transitions, seed)?.0)
}

pub fn generate_batch_with_log(
    env: &Env,
    policy: &BehavioralPolicy,
    num_transitions: usize,
    seed: u64,
) -> Result<(BatchDataset, GenerationLog)> {
    if num_transitions == 0 {
        return Err(Error::arg("num_transitions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let greedy: Vec<usize> = (0..env.num_states())
        .map(|s| policy.greedy_action(env, s))
        .collect::<Result<_>>()?;
    let mut transitions = Vec::with_capacity(num_transitions);
    let mut counts = CountTable::zeros(env.num_states(), env.num_actions());
    let mut log = GenerationLog::default();
    while transitions.len() < num_transitions {
        let eps = policy
            .epsilon_override
            .unwrap_or_else(|| policy.mixture.draw(&mut rng));
        log.episode_epsilons.push(eps);
        let mut trace = Vec::new();
        let mut episode = env.reset(&mut rng);
        while transitions.len() < num_transitions {
            let action = if eps > 0.0 && rng.gen::<f64>() < eps {
                rng.gen_range(0..env.num_actions())
            } else {
                greedy[episode.state]
            };
            let out = env.advance(&mut episode, action, &mut rng)?;
            trace.push((out.state, action));
            counts.increment(out.state, action);
            transitions.push(Transition {
                state: env.observe(out.state),
                action,
                reward: out.reward,
                next_state: env.observe(out.next_state),
                done: out.done,
            });
            if out.done || out.truncated {
                break;
            }
        }
        log.episodes.push(trace);
    }
    let ds = BatchDataset::new(
        env.name(),
        policy.descriptor(),
        seed,
        env.obs_dim(),
        env.num_actions(),
        transitions,
    )?;
    let ds = if ds.is_tabular() {
        ds
    } else {
        ds.with_counts(counts)?
    };
    Ok((ds, log))
}
