//! Scalar loss primitives. Each returns the loss together with its
//! derivative so callers can chain the gradient by hand.

use crate::error::{Error, Result};
use crate::scalar::{max, Scalar};

/// Huber loss `l_κ(δ)`: quadratic for |δ| ≤ κ, linear beyond. Returns
/// `(loss, dloss/dδ)`. `kappa = ∞` gives the plain half squared error.
pub fn huber_loss<T: Scalar>(delta: T, kappa: T) -> (T, T) {
    let half = T::of(0.5);
    if delta.abs() <= kappa {
        (half * delta * delta, delta)
    } else {
        (kappa * (delta.abs() - half * kappa), kappa * delta.signum())
    }
}

/// Quantile Huber loss `|τ − 1{δ<0}| · l_κ(δ)` and its derivative in δ.
pub fn quantile_huber_loss<T: Scalar>(delta: T, quantile_level: T, kappa: T) -> (T, T) {
    let weight = quantile_weight(delta, quantile_level);
    let (l, d) = huber_loss(delta, kappa);
    (weight * l, weight * d)
}

/// `|τ − 1{δ<0}|`.
pub fn quantile_weight<T: Scalar>(delta: T, quantile_level: T) -> T {
    let indicator = if delta < T::zero() {
        T::one()
    } else {
        T::zero()
    };
    (quantile_level - indicator).abs()
}

/// Max-shifted `log Σ exp(v)`.
pub fn logsumexp<T: Scalar>(values: &[T]) -> T {
    let m = max(values);
    if m == T::infinity() || m == T::neg_infinity() {
        return m;
    }
    let s: T = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = max(logits);
    let mut out: Vec<T> = logits.iter().map(|&v| (v - m).exp()).collect();
    let total: T = out.iter().copied().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let lse = logsumexp(logits);
    logits.iter().map(|&v| v - lse).collect()
}

/// `−log softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn cross_entropy_loss<T: Scalar>(logits: &[T], target_action: usize) -> Result<(T, Vec<T>)> {
    if target_action >= logits.len() {
        return Err(Error::arg(format!(
            "target action {target_action} out of range for {} logits",
            logits.len()
        )));
    }
    let loss = logsumexp(logits) - logits[target_action];
    let mut grad = softmax(logits);
    grad[target_action] -= T::one();
    Ok((loss, grad))
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> T {
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        assert_eq!(huber_loss(0.5, 1.0).0, 0.125);
        assert_eq!(huber_loss(-2.0, 1.0), (1.5, -1.0));
        let (inner, d_inner) = huber_loss(1.0f64, 1.0);
        let (outer, d_outer) = huber_loss(1.0f64 + 1e-12, 1.0);
        assert_eq!(inner, 0.5);
        assert!((outer - inner).abs() < 1e-11);
        assert!((d_outer - d_inner).abs() < 1e-11);
    }

    #[test]
    fn infinite_kappa_is_squared_error() {
        assert_eq!(huber_loss(30.0, f64::INFINITY), (450.0, 30.0));
    }

    #[test]
    fn quantile_huber_hand_value() {
        let (l, _) = quantile_huber_loss(-0.4f64, 0.25, 1.0);
        assert!((l - 0.06).abs() < 1e-12);
        assert_eq!(quantile_huber_loss(0.0, 0.3, 1.0).0, 0.0);
        for d in [-3.0, -0.2, 0.7, 2.5] {
            assert_eq!(
                quantile_huber_loss(d, 0.5, 1.0).0,
                0.5 * huber_loss(d, 1.0).0
            );
        }
    }

    #[test]
    fn logsumexp_cases() {
        assert!((logsumexp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp(&[3.5]), 3.5);
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, g) = cross_entropy_loss(&[0.0; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        let (l, _) = cross_entropy_loss(&[1000.0f64, 0.0], 0).unwrap();
        assert!(l.is_finite() && l < 1e-12);
        assert!(cross_entropy_loss(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = [0.3f64, -1.2, 2.0, 0.7];
        let (_, g) = cross_entropy_loss(&logits, 1).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut p = logits;
            let mut m = logits;
            p[i] += h;
            m[i] -= h;
            let fd = (cross_entropy_loss(&p, 1).unwrap().0 - cross_entropy_loss(&m, 1).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() / fd.abs().max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
