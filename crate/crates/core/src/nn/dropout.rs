use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One boolean keep-mask per fully-connected layer input. Surviving units
/// are scaled by `1/(1-p)` (inverted dropout), so the expected masked
/// forward equals the unmasked forward.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    probability: f64,
    keep: Vec<Vec<bool>>,
}

impl DropoutMasks {
    /// Samples masks for a network with the given layer sizes; a mask is
    /// placed before every layer.
    pub fn sample<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        probability: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&probability) {
            return Err(Error::arg("dropout probability must lie in [0, 1)"));
        }
        let keep = layer_sizes[..layer_sizes.len().saturating_sub(1)]
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| probability == 0.0 || rng.gen::<f64>() >= probability)
                    .collect()
            })
            .collect();
        Ok(Self { probability, keep })
    }

    pub fn from_keep(probability: f64, keep: Vec<Vec<bool>>) -> Result<Self> {
        if !(0.0..1.0).contains(&probability) {
            return Err(Error::arg("dropout probability must lie in [0, 1)"));
        }
        Ok(Self { probability, keep })
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn num_layers(&self) -> usize {
        self.keep.len()
    }

    pub fn layer(&self, l: usize) -> &[bool] {
        &self.keep[l]
    }

    pub(crate) fn scales<T: Scalar>(&self, l: usize) -> Vec<T> {
        let k = T::of(1.0 / (1.0 - self.probability));
        self.keep[l]
            .iter()
            .map(|&on| if on { k } else { T::zero() })
            .collect()
    }
}
