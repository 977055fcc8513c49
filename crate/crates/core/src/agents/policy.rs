//! Action-selection rules that do not depend on network state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::scalar::{argmax, max, Scalar};

/// Batch-constrained argmax: among actions whose probability ratio
/// `g[a] / max g` is at least `threshold`, the one with the largest `q`
/// (lowest index on ties). The most probable action always qualifies, so
/// the result is defined for every threshold in [0, 1].
pub fn bcq_constrained_argmax<T: Scalar>(q_values: &[T], g_probs: &[T], threshold: T) -> usize {
    debug_assert_eq!(q_values.len(), g_probs.len());
    let g_max = max(g_probs);
    let mut best = argmax(g_probs);
    let mut best_q = T::neg_infinity();
    for (a, (&q, &g)) in q_values.iter().zip(g_probs).enumerate() {
        if g / g_max >= threshold && q > best_q {
            best = a;
            best_q = q;
        }
    }
    best
}

/// Admissibility mask used by [`bcq_constrained_argmax`].
pub fn bcq_admissible<T: Scalar>(g_probs: &[T], threshold: T) -> Vec<bool> {
    let g_max = max(g_probs);
    g_probs.iter().map(|&g| g / g_max >= threshold).collect()
}

/// KL-Control action rule: greedy index or the Boltzmann distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum KlAction<T> {
    Greedy(usize),
    Boltzmann(Vec<T>),
}

pub fn klcontrol_policy<T: Scalar>(q_values: &[T], boltzmann: bool) -> KlAction<T> {
    if boltzmann {
        KlAction::Boltzmann(softmax(q_values))
    } else {
        KlAction::Greedy(argmax(q_values))
    }
}

/// SPIBB policy at one state. Actions with `counts[a] <= count_threshold`
/// keep their baseline probability; the best-valued remaining action takes
/// the rest of the mass. If every action is bootstrapped the baseline is
/// returned unchanged.
pub fn spibb_policy<T: Scalar>(
    q_values: &[T],
    baseline_probs: &[T],
    counts: &[u64],
    count_threshold: f64,
) -> Result<Vec<T>> {
    let n = q_values.len();
    if baseline_probs.len() != n || counts.len() != n {
        return Err(Error::arg("spibb_policy inputs differ in length"));
    }
    let total: T = baseline_probs.iter().copied().sum();
    if (total - T::one()).abs() > T::of(1e-6) {
        return Err(Error::arg(format!("baseline probabilities sum to {total}")));
    }
    let bootstrapped: Vec<bool> = counts
        .iter()
        .map(|&c| c as f64 <= count_threshold)
        .collect();
    let mut best: Option<usize> = None;
    for a in 0..n {
        if !bootstrapped[a] && best.is_none_or(|b| q_values[a] > q_values[b]) {
            best = Some(a);
        }
    }
    let Some(best) = best else {
        return Ok(baseline_probs.to_vec());
    };
    let mut pi = vec![T::zero(); n];
    let mut free_mass = T::zero();
    for a in 0..n {
        if bootstrapped[a] {
            pi[a] = baseline_probs[a];
        } else {
            free_mass += baseline_probs[a];
        }
    }
    pi[best] = free_mass;
    Ok(pi)
}

/// Uniform sample from the (K-1)-simplex: normalized unit exponentials.
pub fn sample_simplex<T: Scalar, R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<T> {
    let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| T::of(d / total)).collect()
}

/// Samples an index from a probability vector.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::of(rng.gen::<f64>());
    let mut acc = T::zero();
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= T::zero() {
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
