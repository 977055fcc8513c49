use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::dropout::DropoutMasks;
use crate::nn::loss::softmax;
use crate::scalar::Scalar;

/// Activation applied after the final layer. Hidden layers always use ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Softmax,
    Relu,
}

impl OutputActivation {
    pub(crate) fn code(self) -> u8 {
        match self {
            OutputActivation::Identity => 0,
            OutputActivation::Softmax => 1,
            OutputActivation::Relu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputActivation::Identity),
            1 => Some(OutputActivation::Softmax),
            2 => Some(OutputActivation::Relu),
            _ => None,
        }
    }
}

/// Fully-connected network with a flat parameter vector.
///
/// Layer `l` stores its weight matrix row-major (`out × in`) followed by its
/// bias vector. With `head_count = K > 1` the output is read as an
/// `[outputs / K] × K` matrix (action-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layer_sizes: Vec<usize>,
    head_count: usize,
    output: OutputActivation,
    params: Vec<T>,
    offsets: Vec<usize>,
}

/// Activations recorded by [`DenseNet::forward_cached`] for backprop.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `acts[0]` is the input; `acts[l + 1]` the post-activation output of
    /// layer `l`.
    acts: Vec<Vec<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<T>>,
    /// Inverted-dropout scale per input unit of each masked layer.
    scales: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Forward<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("non-empty")
    }

    /// Final-layer pre-activations (logits for a softmax head).
    pub fn logits(&self) -> &[T] {
        self.pre.last().expect("non-empty")
    }

    /// Post-ReLU activation of hidden layer `index` (1-based: `hidden(1)` is
    /// the output of the first layer).
    pub fn hidden(&self, index: usize) -> &[T] {
        &self.acts[index]
    }
}

fn layer_offsets(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layer_sizes.len());
    let mut acc = 0;
    offsets.push(0);
    for w in layer_sizes.windows(2) {
        acc += (w[0] + 1) * w[1];
        offsets.push(acc);
    }
    offsets
}

impl<T: Scalar> DenseNet<T> {
    /// All-zero network.
    pub fn zeros(
        layer_sizes: &[usize],
        head_count: usize,
        output: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::arg("need at least two positive layer sizes"));
        }
        if head_count == 0 || !layer_sizes[layer_sizes.len() - 1].is_multiple_of(head_count) {
            return Err(Error::arg(
                "output size must be a positive multiple of head_count",
            ));
        }
        let offsets = layer_offsets(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            head_count,
            output,
            params: vec![T::zero(); *offsets.last().unwrap()],
            offsets,
        })
    }

    /// He-style uniform fan-in initialization: weights `U(±sqrt(6/fan_in))`,
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        head_count: usize,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, head_count, output)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    /// Rebuilds a network from its parts, e.g. after deserialization.
    pub fn from_parts(
        layer_sizes: &[usize],
        head_count: usize,
        output: OutputActivation,
        params: Vec<T>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, head_count, output)?;
        if params.len() != net.params.len() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Copies parameters from a structurally identical network.
    pub fn copy_from(&mut self, other: &Self) {
        debug_assert_eq!(self.layer_sizes, other.layer_sizes);
        self.params.copy_from_slice(&other.params);
    }

    /// Range of parameters belonging to layer `l` (weights then biases).
    pub fn layer_param_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn weight(&self, l: usize, out: usize, inp: usize) -> T {
        self.params[self.offsets[l] + out * self.layer_sizes[l] + inp]
    }

    pub fn set_weight(&mut self, l: usize, out: usize, inp: usize, v: T) {
        let i = self.offsets[l] + out * self.layer_sizes[l] + inp;
        self.params[i] = v;
    }

    pub fn set_bias(&mut self, l: usize, out: usize, v: T) {
        let i = self.offsets[l] + self.layer_sizes[l] * self.layer_sizes[l + 1] + out;
        self.params[i] = v;
    }

    fn check_masks(&self, masks: Option<&DropoutMasks>) -> Result<()> {
        if let Some(m) = masks {
            if m.num_layers() != self.num_layers()
                || (0..self.num_layers()).any(|l| m.layer(l).len() != self.layer_sizes[l])
            {
                return Err(Error::arg("dropout masks do not match layer sizes"));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T], masks: Option<&DropoutMasks>) -> Result<Vec<T>> {
        Ok(self
            .forward_cached(input, masks)?
            .acts
            .pop()
            .expect("non-empty"))
    }

    /// Forward pass that keeps every intermediate needed by
    /// [`DenseNet::backward`].
    pub fn forward_cached(&self, input: &[T], masks: Option<&DropoutMasks>) -> Result<Forward<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::arg(format!(
                "input has dimension {} but network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        self.check_masks(masks)?;
        let n = self.num_layers();
        let mut acts = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        acts.push(input.to_vec());
        for l in 0..n {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let scale = masks.map(|m| m.scales::<T>(l));
            let x: std::borrow::Cow<[T]> = match &scale {
                Some(s) => acts[l]
                    .iter()
                    .zip(s)
                    .map(|(&a, &k)| a * k)
                    .collect::<Vec<_>>()
                    .into(),
                None => acts[l].as_slice().into(),
            };
            let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &self.params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = T::zero();
                for (&wi, &xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *zo += acc;
            }
            let a = if l + 1 < n {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Relu => z.iter().map(|&v| v.max(T::zero())).collect(),
                    OutputActivation::Softmax => softmax(&z),
                }
            };
            pre.push(z);
            acts.push(a);
            scales.push(scale);
        }
        Ok(Forward { acts, pre, scales })
    }

    /// Gradient of `output · upstream` with respect to every parameter.
    /// For a softmax head the upstream gradient refers to the probabilities
    /// and is pulled back through the softmax Jacobian.
    pub fn backward(&self, cache: &Forward<T>, upstream: &[T]) -> Result<Vec<T>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::arg("upstream gradient does not match output shape"));
        }
        let out = cache.output();
        let grad_pre: Vec<T> = match self.output {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::Relu => upstream
                .iter()
                .zip(cache.logits())
                .map(|(&u, &z)| if z > T::zero() { u } else { T::zero() })
                .collect(),
            OutputActivation::Softmax => {
                let dot: T = out.iter().zip(upstream).map(|(&p, &u)| p * u).sum();
                out.iter()
                    .zip(upstream)
                    .map(|(&p, &u)| p * (u - dot))
                    .collect()
            }
        };
        let mut grads = vec![T::zero(); self.params.len()];
        self.backward_pre(cache, &grad_pre, None, &mut grads)?;
        Ok(grads)
    }

    /// Reverse pass from a gradient on the final pre-activations.
    ///
    /// Parameter gradients are *added* into `grads`, so a minibatch can be
    /// accumulated in one buffer. `hidden` injects an extra gradient on the
    /// post-activation output of hidden layer `index` (see
    /// [`Forward::hidden`]), which is how a head sharing this network's
    /// first layers sends its gradient back. Returns the input gradient.
    pub fn backward_pre(
        &self,
        cache: &Forward<T>,
        grad_pre_out: &[T],
        hidden: Option<(usize, &[T])>,
        grads: &mut [T],
    ) -> Result<Vec<T>> {
        if grad_pre_out.len() != self.output_dim() || grads.len() != self.params.len() {
            return Err(Error::arg("gradient buffer shape mismatch"));
        }
        if let Some((index, g)) = hidden {
            if index == 0 || index >= self.num_layers() || g.len() != self.layer_sizes[index] {
                return Err(Error::arg(
                    "hidden gradient injection does not match a hidden layer",
                ));
            }
        }
        let mut g = grad_pre_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w_off = self.offsets[l];
            let b_off = w_off + n_in * n_out;
            let x = &cache.acts[l];
            let scale = cache.scales[l].as_deref();
            let mut gx = vec![T::zero(); n_in];
            for (o, &go) in g.iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                grads[b_off + o] += go;
                let row = w_off + o * n_in;
                for i in 0..n_in {
                    let xi = match scale {
                        Some(s) => x[i] * s[i],
                        None => x[i],
                    };
                    grads[row + i] += go * xi;
                    gx[i] += self.params[row + i] * go;
                }
            }
            if let Some(s) = scale {
                for (gi, &si) in gx.iter_mut().zip(s) {
                    *gi *= si;
                }
            }
            if let Some((index, extra)) = hidden {
                if index == l {
                    for (gi, &e) in gx.iter_mut().zip(extra) {
                        *gi += e;
                    }
                }
            }
            if l == 0 {
                return Ok(gx);
            }
            let z = &cache.pre[l - 1];
            g = gx
                .iter()
                .zip(z)
                .map(|(&gi, &zi)| if zi > T::zero() { gi } else { T::zero() })
                .collect();
        }
        unreachable!("network has at least one layer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count() {
        let net = DenseNet::<f64>::zeros(&[3, 5, 2], 1, OutputActivation::Identity).unwrap();
        assert_eq!(net.num_params(), 4 * 5 + 6 * 2);
    }

    #[test]
    fn zero_net_outputs() {
        let net = DenseNet::<f64>::zeros(&[3, 4, 2], 1, OutputActivation::Identity).unwrap();
        assert_eq!(
            net.forward(&[1.0, -2.0, 3.0], None).unwrap(),
            vec![0.0, 0.0]
        );
        let net = DenseNet::<f64>::zeros(&[3, 4, 4], 1, OutputActivation::Softmax).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0], None).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn identity_layer() {
        let mut net = DenseNet::<f64>::zeros(&[3, 3], 1, OutputActivation::Identity).unwrap();
        for i in 0..3 {
            net.set_weight(0, i, i, 1.0);
        }
        assert_eq!(
            net.forward(&[0.5, -1.0, 7.0], None).unwrap(),
            vec![0.5, -1.0, 7.0]
        );
    }

    #[test]
    fn hand_two_layer_forward() {
        let mut net = DenseNet::<f64>::zeros(&[2, 2, 1], 1, OutputActivation::Identity).unwrap();
        net.set_weight(0, 0, 0, 1.0);
        net.set_weight(0, 1, 1, 1.0);
        net.set_weight(1, 0, 0, 1.0);
        net.set_weight(1, 0, 1, 1.0);
        let cache = net.forward_cached(&[-1.0, 2.0], None).unwrap();
        assert_eq!(cache.hidden(1), &[0.0, 2.0]);
        assert_eq!(cache.output(), &[2.0]);
    }

    #[test]
    fn single_weight_gradient() {
        let mut net = DenseNet::<f64>::zeros(&[1, 1], 1, OutputActivation::Identity).unwrap();
        net.set_weight(0, 0, 0, 0.7);
        let cache = net.forward_cached(&[3.0], None).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net =
            DenseNet::<f64>::new(&[3, 4, 2], 1, OutputActivation::Identity, &mut rng).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3], None).unwrap();
        assert!(net
            .backward(&cache, &[0.0, 0.0])
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let net = DenseNet::<f64>::zeros(&[3, 2], 1, OutputActivation::Identity).unwrap();
        assert!(net.forward(&[1.0], None).is_err());
        let cache = net.forward_cached(&[1.0, 2.0, 3.0], None).unwrap();
        assert!(net.backward(&cache, &[1.0]).is_err());
        assert!(DenseNet::<f64>::zeros(&[3, 5], 2, OutputActivation::Identity).is_err());
    }
}
