//! Exact dynamic programming over an [`MdpSpec`].
//!
//! Terminal states carry zero future value: their Q row is pinned to 0 and
//! transitions into them contribute only the immediate reward.

use crate::error::{Error, Result};
use crate::mdp::MdpSpec;
use crate::scalar::{argmax, max, Scalar};

/// `num_states × num_actions` table of action values, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<T> {
    num_states: usize,
    num_actions: usize,
    values: Vec<T>,
}

impl<T: Scalar> QTable<T> {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![T::zero(); num_states * num_actions],
        }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::arg("QTable values length mismatch"));
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> T {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: T) {
        self.values[s * self.num_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Greedy deterministic policy, lowest index on ties.
    pub fn greedy(&self) -> PolicyTable<T> {
        let mut probs = vec![T::zero(); self.values.len()];
        for s in 0..self.num_states {
            probs[s * self.num_actions + argmax(self.row(s))] = T::one();
        }
        PolicyTable {
            num_states: self.num_states,
            num_actions: self.num_actions,
            probs,
        }
    }

    fn check_against(&self, spec: &MdpSpec) -> Result<()> {
        if self.num_states != spec.num_states || self.num_actions != spec.num_actions {
            return Err(Error::arg(format!(
                "QTable is {}x{} but MDP is {}x{}",
                self.num_states, self.num_actions, spec.num_states, spec.num_actions
            )));
        }
        Ok(())
    }
}

/// Stochastic policy π(a|s), row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable<T> {
    num_states: usize,
    num_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> PolicyTable<T> {
    /// Rows must each sum to 1 within 1e-9.
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::arg("policy table length mismatch"));
        }
        let table = Self {
            num_states,
            num_actions,
            probs,
        };
        for s in 0..num_states {
            let row = table.row(s);
            let total: T = row.iter().copied().sum();
            if row.iter().any(|&p| p < T::zero()) || (total - T::one()).abs() > T::of(1e-9) {
                return Err(Error::arg(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(table)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = T::one() / T::of_usize(num_actions);
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
        }
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Mixes each row with the uniform distribution: (1-ε)π + ε/|A|.
    pub fn epsilon_mix(&self, epsilon: T) -> Self {
        let u = epsilon / T::of_usize(self.num_actions);
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            probs: self
                .probs
                .iter()
                .map(|&p| (T::one() - epsilon) * p + u)
                .collect(),
        }
    }
}

fn future_value<T: Scalar, F: Fn(usize) -> T>(spec: &MdpSpec, s: usize, a: usize, v: F) -> T {
    let gamma = T::of(spec.discount);
    let mut total = T::zero();
    for (s2, &p) in spec.transition[s][a].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let boot = if spec.is_terminal(s2) {
            T::zero()
        } else {
            v(s2)
        };
        total += T::of(p) * (T::of(spec.reward[s][a][s2]) + gamma * boot);
    }
    total
}

/// One application of the optimality operator T*.
pub fn bellman_optimality_backup<T: Scalar>(q: &QTable<T>, spec: &MdpSpec) -> Result<QTable<T>> {
    q.check_against(spec)?;
    let mut out = QTable::zeros(spec.num_states, spec.num_actions);
    let state_max: Vec<T> = (0..spec.num_states).map(|s| max(q.row(s))).collect();
    for s in 0..spec.num_states {
        if spec.is_terminal(s) {
            continue;
        }
        for a in 0..spec.num_actions {
            out.set(s, a, future_value(spec, s, a, |s2| state_max[s2]));
        }
    }
    Ok(out)
}

/// One application of the policy operator T^π.
pub fn bellman_policy_backup<T: Scalar>(
    q: &QTable<T>,
    policy: &PolicyTable<T>,
    spec: &MdpSpec,
) -> Result<QTable<T>> {
    q.check_against(spec)?;
    if policy.num_states != spec.num_states || policy.num_actions != spec.num_actions {
        return Err(Error::arg("policy shape does not match MDP"));
    }
    for s in 0..spec.num_states {
        let total: T = policy.row(s).iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-9) {
            return Err(Error::arg(format!("policy row {s} is not normalized")));
        }
    }
    let state_value: Vec<T> = (0..spec.num_states)
        .map(|s| {
            q.row(s)
                .iter()
                .zip(policy.row(s))
                .map(|(&v, &p)| v * p)
                .sum()
        })
        .collect();
    let mut out = QTable::zeros(spec.num_states, spec.num_actions);
    for s in 0..spec.num_states {
        if spec.is_terminal(s) {
            continue;
        }
        for a in 0..spec.num_actions {
            out.set(s, a, future_value(spec, s, a, |s2| state_value[s2]));
        }
    }
    Ok(out)
}

/// Iterates T* from zero until the sup-norm change drops below `tolerance`.
pub fn value_iteration<T: Scalar>(spec: &MdpSpec, tolerance: T) -> Result<QTable<T>> {
    if !(tolerance > T::zero()) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let mut q = QTable::zeros(spec.num_states, spec.num_actions);
    loop {
        let next = bellman_optimality_backup(&q, spec)?;
        let delta = next.max_abs_diff(&q);
        q = next;
        if delta < tolerance {
            return Ok(q);
        }
    }
}

/// Iterates T^π from zero until the sup-norm change drops below `tolerance`.
pub fn policy_evaluation<T: Scalar>(
    spec: &MdpSpec,
    policy: &PolicyTable<T>,
    tolerance: T,
) -> Result<QTable<T>> {
    if !(tolerance > T::zero()) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let mut q = QTable::zeros(spec.num_states, spec.num_actions);
    loop {
        let next = bellman_policy_backup(&q, policy, spec)?;
        let delta = next.max_abs_diff(&q);
        q = next;
        if delta < tolerance {
            return Ok(q);
        }
    }
}

/// Expected undiscounted episode return of `policy` from the initial
/// distribution, with episodes truncated after `horizon` steps. Exact
/// finite-horizon dynamic programming.
pub fn expected_episode_return<T: Scalar>(
    spec: &MdpSpec,
    policy: &PolicyTable<T>,
    horizon: usize,
) -> T {
    let ns = spec.num_states;
    let mut value = vec![T::zero(); ns];
    for _ in 0..horizon {
        let mut next = vec![T::zero(); ns];
        for (s, slot) in next.iter_mut().enumerate() {
            if spec.is_terminal(s) {
                continue;
            }
            let mut v = T::zero();
            for (a, &pa) in policy.row(s).iter().enumerate() {
                if pa == T::zero() {
                    continue;
                }
                let mut qa = T::zero();
                for (s2, &p) in spec.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        qa += T::of(p) * (T::of(spec.reward[s][a][s2]) + value[s2]);
                    }
                }
                v += pa * qa;
            }
            *slot = v;
        }
        value = next;
    }
    spec.initial_distribution
        .iter()
        .zip(&value)
        .map(|(&p, &v)| T::of(p) * v)
        .sum()
}
