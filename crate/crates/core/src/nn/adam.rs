use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize, learning_rate: T, epsilon: T) -> Self {
        Self {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon,
            first_moment: vec![T::zero(); num_params],
            second_moment: vec![T::zero(); num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.first_moment.len()
    }

    /// Bias-corrected Adam update of `params` in place. A non-finite
    /// gradient leaves the state untouched and reports the step index that
    /// would have been taken.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::arg(
                "Adam state, parameters and gradients differ in length",
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                what: "gradient",
                iteration: self.step + 1,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(3, 0.1, 1e-8);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g| + ε).
        let mut adam = AdamState::new(1, 0.01, 1e-12);
        let mut p = vec![0.0f64];
        adam.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let mut adam = AdamState::new(1, 0.01, 1e-8);
        let mut p = vec![0.0f64];
        adam.step(&mut p, &[1.0]).unwrap();
        match adam.step(&mut p, &[f64::NAN]) {
            Err(Error::Numeric { iteration, .. }) => assert_eq!(iteration, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_sequences_stay_identical() {
        let mut a = AdamState::new(2, 0.003, 1.5e-4);
        let mut b = a.clone();
        let (mut pa, mut pb) = (vec![0.1, 0.2], vec![0.1, 0.2]);
        for i in 0..50 {
            let g = [(i as f64).sin(), (i as f64 * 0.3).cos()];
            a.step(&mut pa, &g).unwrap();
            b.step(&mut pb, &g).unwrap();
        }
        assert_eq!(pa, pb);
    }
}
