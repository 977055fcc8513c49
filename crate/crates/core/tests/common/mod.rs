#![allow(dead_code)]

use batchrl::agents::{AgentConfig, Algorithm};
use batchrl::data::Transition;
use batchrl::Agent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small agent with every head count reduced for fast tests.
pub fn small_agent(
    algorithm: Algorithm,
    obs_dim: usize,
    actions: usize,
    seed: u64,
    tweak: impl FnOnce(&mut AgentConfig),
) -> Agent {
    let mut cfg = AgentConfig::desk(algorithm);
    cfg.hidden_layers = vec![8, 6];
    cfg.quantiles = 5;
    cfg.rem_heads = 4;
    cfg.discount = 0.9;
    tweak(&mut cfg);
    Agent::new(cfg, obs_dim, actions, &mut rng(seed)).unwrap()
}

/// Moves the target network away from the online one.
pub fn jitter_target(agent: &mut Agent, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in agent.target_net_mut().params_mut() {
        *p += scale * (r.gen::<f64>() - 0.5);
    }
}

/// Randomizes the online network, biases included, so no pre-activation
/// sits exactly on a ReLU kink.
pub fn jitter_online(agent: &mut Agent, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in agent.q_net_mut().params_mut() {
        *p += scale * (r.gen::<f64>() - 0.5);
    }
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Transitions with dense observations in [-1, 1].
pub fn dense_batch(n: usize, obs_dim: usize, actions: usize, r: &mut impl Rng) -> Vec<Transition> {
    let obs = |r: &mut dyn rand::RngCore| {
        (0..obs_dim)
            .map(|_| r.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    (0..n)
        .map(|_| Transition {
            state: obs(r),
            action: r.gen_range(0..actions),
            reward: r.gen_range(-1.0..1.0),
            next_state: obs(r),
            done: r.gen_bool(0.2),
        })
        .collect()
}

/// Transitions between one-hot states.
pub fn tabular_batch(n: usize, states: usize, actions: usize, r: &mut impl Rng) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            state: one_hot(states, r.gen_range(0..states)),
            action: r.gen_range(0..actions),
            reward: r.gen_range(-1.0..1.0),
            next_state: one_hot(states, r.gen_range(0..states)),
            done: r.gen_bool(0.2),
        })
        .collect()
}

pub fn refs(batch: &[Transition]) -> Vec<&Transition> {
    batch.iter().collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy)]
pub enum Params {
    Q,
    Generative,
}

fn params_mut(agent: &mut Agent, which: Params) -> &mut [f64] {
    match which {
        Params::Q => agent.q_net_mut().params_mut(),
        Params::Generative => agent.generative_mut().unwrap().params_mut(),
    }
}

/// Central finite differences of `loss` over one parameter vector.
pub fn numeric_grad(
    agent: &Agent,
    which: Params,
    h: f64,
    loss: impl Fn(&Agent) -> f64,
) -> Vec<f64> {
    let mut probe = agent.clone();
    let n = params_mut(&mut probe, which).len();
    (0..n)
        .map(|i| {
            let orig = params_mut(&mut probe, which)[i];
            params_mut(&mut probe, which)[i] = orig + h;
            let up = loss(&probe);
            params_mut(&mut probe, which)[i] = orig - h;
            let down = loss(&probe);
            params_mut(&mut probe, which)[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
