use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::config::{AgentConfig, Algorithm, KlPolicyMode, SpibbTarget};
use crate::agents::policy::{
    bcq_constrained_argmax, sample_categorical, sample_simplex, spibb_policy,
};
use crate::data::{CountTable, Transition};
use crate::error::{Error, Result};
use crate::mdp::{Encoding, PolicyTable};
use crate::nn::snapshot::{load_net, save_net};
use crate::nn::{
    clip_grad_norm, cross_entropy_loss, huber_loss, log_softmax, logsumexp, quantile_huber_loss,
    softmax, AdamState, DenseNet, DropoutMasks, Forward, OutputActivation,
};
use crate::scalar::{argmax, max, Scalar};

/// Loss value and Q-network gradient of one minibatch.
#[derive(Debug, Clone)]
pub struct QGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

/// Behavioral-cloning loss with gradients for G_ω and, when the encoder
/// is shared, for the Q-network's first layer.
#[derive(Debug, Clone)]
pub struct BcGrad<T> {
    pub loss: T,
    pub gen_grad: Vec<T>,
    pub trunk_grad: Option<Vec<T>>,
}

/// Losses reported by one training iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats<T> {
    pub loss: T,
    pub bc_loss: Option<T>,
}

/// Dropout masks for one KL-Control minibatch: one online mask and K
/// target masks per transition.
#[derive(Debug, Clone)]
pub struct KlMasks {
    pub online: Vec<DropoutMasks>,
    pub target: Vec<Vec<DropoutMasks>>,
}

/// Online network θ, target network θ', optional generative model ω and
/// their optimizer state.
#[derive(Debug, Clone)]
pub struct AgentState<T> {
    config: AgentConfig,
    obs_dim: usize,
    num_actions: usize,
    q: DenseNet<T>,
    target: DenseNet<T>,
    generative: Option<DenseNet<T>>,
    q_opt: AdamState<T>,
    gen_opt: Option<AdamState<T>>,
    iteration: u64,
    counts: Option<CountTable>,
    known_baseline: Option<PolicyTable<T>>,
    states: Encoding,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    iteration: u64,
    obs_dim: usize,
    num_actions: usize,
    config: AgentConfig,
}

impl<T: Scalar> AgentState<T> {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        obs_dim: usize,
        num_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || num_actions == 0 {
            return Err(Error::arg(
                "observation dim and action count must be positive",
            ));
        }
        let heads = config.heads();
        let mut q_sizes = vec![obs_dim];
        q_sizes.extend(&config.hidden_layers);
        q_sizes.push(num_actions * heads);
        let q = DenseNet::new(&q_sizes, heads, OutputActivation::Identity, rng)?;
        let target = q.clone();
        let generative = if config.algorithm.uses_generative_model() {
            let mut g_sizes = if config.shares_encoder() {
                config.hidden_layers.clone()
            } else {
                let mut v = vec![obs_dim];
                v.extend(&config.hidden_layers);
                v
            };
            g_sizes.push(num_actions);
            Some(DenseNet::new(&g_sizes, 1, OutputActivation::Softmax, rng)?)
        } else {
            None
        };
        let lr = T::of(config.learning_rate);
        let eps = T::of(config.adam_epsilon);
        Ok(Self {
            q_opt: AdamState::new(q.num_params(), lr, eps),
            gen_opt: generative
                .as_ref()
                .map(|g| AdamState::new(g.num_params(), lr, eps)),
            config,
            obs_dim,
            num_actions,
            q,
            target,
            generative,
            iteration: 0,
            counts: None,
            known_baseline: None,
            states: Encoding::OneHot,
        })
    }

    /// How observations map back to state ids for the count table and a
    /// known baseline. One-hot unless set.
    pub fn with_state_encoding(mut self, states: Encoding) -> Result<Self> {
        if let Encoding::Features(rows) = &states {
            if rows.first().is_none_or(|r| r.len() != self.obs_dim) {
                return Err(Error::arg(
                    "state features do not match the observation size",
                ));
            }
        }
        self.states = states;
        Ok(self)
    }

    /// Attaches exact batch counts (required by SPIBB).
    pub fn with_counts(mut self, counts: CountTable) -> Result<Self> {
        if counts.num_actions() != self.num_actions {
            return Err(Error::arg("count table does not match the action count"));
        }
        self.counts = Some(counts);
        Ok(self)
    }

    /// Replaces the cloned baseline of SPIBB by a known behavioral policy.
    pub fn with_known_baseline(mut self, baseline: PolicyTable<T>) -> Result<Self> {
        if baseline.num_actions() != self.num_actions {
            return Err(Error::arg(
                "baseline policy does not match the action count",
            ));
        }
        self.known_baseline = Some(baseline);
        Ok(self)
    }

    fn state_of(&self, obs: &[f64], rows: usize) -> Result<usize> {
        self.states
            .state_index(obs)
            .filter(|&s| s < rows)
            .ok_or_else(|| Error::Unsupported("observation does not identify a known state".into()))
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn q_net(&self) -> &DenseNet<T> {
        &self.q
    }

    pub fn q_net_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.q
    }

    pub fn target_net(&self) -> &DenseNet<T> {
        &self.target
    }

    pub fn target_net_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.target
    }

    pub fn generative(&self) -> Option<&DenseNet<T>> {
        self.generative.as_ref()
    }

    pub fn generative_mut(&mut self) -> Option<&mut DenseNet<T>> {
        self.generative.as_mut()
    }

    pub fn counts(&self) -> Option<&CountTable> {
        self.counts.as_ref()
    }

    fn heads(&self) -> usize {
        self.q.head_count()
    }

    fn input(&self, obs: &[f64]) -> Result<Vec<T>> {
        if obs.len() != self.obs_dim {
            return Err(Error::arg(format!(
                "observation has dimension {} but agent expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(obs.iter().map(|&x| T::of(x)).collect())
    }

    fn check_batch(&self, batch: &[&Transition]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::arg("minibatch is empty"));
        }
        if let Some(t) = batch.iter().find(|t| t.action >= self.num_actions) {
            return Err(Error::arg(format!("action {} out of range", t.action)));
        }
        Ok(())
    }

    /// Mean over heads for each action.
    fn head_means(&self, out: &[T]) -> Vec<T> {
        let k = self.heads();
        let kk = T::of_usize(k);
        out.chunks(k)
            .map(|c| c.iter().copied().sum::<T>() / kk)
            .collect()
    }

    /// Per-action value of the online network (mean over quantiles/heads).
    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<T>> {
        let out = self.q.forward(&self.input(obs)?, None)?;
        Ok(self.head_means(&out))
    }

    /// Per-action value of the target network (mean over quantiles/heads).
    pub fn target_values(&self, obs: &[f64]) -> Result<Vec<T>> {
        let out = self.target.forward(&self.input(obs)?, None)?;
        Ok(self.head_means(&out))
    }

    fn generative_net(&self) -> Result<&DenseNet<T>> {
        self.generative.as_ref().ok_or_else(|| {
            Error::Unsupported(format!("{} has no generative model", self.algorithm()))
        })
    }

    /// G_ω(·|s) given the online forward of `s` (used when the encoder is
    /// shared).
    fn gen_probs_from(&self, input: &[T], q_cache: Option<&Forward<T>>) -> Result<Vec<T>> {
        let g = self.generative_net()?;
        if self.config.shares_encoder() {
            let owned;
            let cache = match q_cache {
                Some(c) => c,
                None => {
                    owned = self.q.forward_cached(input, None)?;
                    &owned
                }
            };
            g.forward(cache.hidden(1), None)
        } else {
            g.forward(input, None)
        }
    }

    /// Behavioral-cloning probabilities G_ω(·|s).
    pub fn generative_probs(&self, obs: &[f64]) -> Result<Vec<T>> {
        let x = self.input(obs)?;
        self.gen_probs_from(&x, None)
    }

    /// Baseline π_b(·|s) for SPIBB: the injected policy or G_ω.
    fn baseline_probs(&self, obs: &[f64], input: &[T]) -> Result<Vec<T>> {
        match &self.known_baseline {
            Some(pi) => Ok(pi.row(self.state_of(obs, pi.num_states())?).to_vec()),
            None => self.gen_probs_from(input, None),
        }
    }

    fn count_row(&self, obs: &[f64]) -> Result<&[u64]> {
        let counts = self
            .counts
            .as_ref()
            .ok_or_else(|| Error::Unsupported("SPIBB needs state-action counts".into()))?;
        Ok(counts.row(self.state_of(obs, counts.num_states())?))
    }

    /// SPIBB policy π(·|s) evaluated on the given action values.
    pub fn spibb_distribution(&self, obs: &[f64], q_values: &[T]) -> Result<Vec<T>> {
        let input = self.input(obs)?;
        let baseline = self.baseline_probs(obs, &input)?;
        spibb_policy(
            q_values,
            &baseline,
            self.count_row(obs)?,
            self.config.spibb.count_threshold,
        )
    }

    fn inv_batch(batch: &[&Transition]) -> T {
        T::one() / T::of_usize(batch.len())
    }

    fn accumulate(&self, cache: &Forward<T>, sparse: &[(usize, T)], grads: &mut [T]) -> Result<()> {
        let mut g = vec![T::zero(); self.q.output_dim()];
        for &(i, v) in sparse {
            g[i] += v;
        }
        self.q.backward_pre(cache, &g, None, grads)?;
        Ok(())
    }

    // ----------------------------------------------------------------- DQN

    /// Mean Huber loss of `r + γ max_a' Q_θ'(s',a') − Q_θ(s,a)`. With
    /// `double`, a' is chosen by θ and evaluated by θ'.
    pub fn dqn_grad(&self, batch: &[&Transition], double: bool) -> Result<QGrad<T>> {
        self.check_batch(batch)?;
        let gamma = T::of(self.config.discount);
        let kappa = T::of(self.config.huber_kappa);
        let inv_n = Self::inv_batch(batch);
        let mut grad = vec![T::zero(); self.q.num_params()];
        let mut loss = T::zero();
        for t in batch {
            let cache = self.q.forward_cached(&self.input(&t.state)?, None)?;
            let mut y = T::of(t.reward);
            if !t.done {
                let next = self.input(&t.next_state)?;
                let tv = self.target.forward(&next, None)?;
                let boot = if double {
                    tv[argmax(&self.q.forward(&next, None)?)]
                } else {
                    max(&tv)
                };
                y += gamma * boot;
            }
            let (l, dl) = huber_loss(y - cache.output()[t.action], kappa);
            loss += l * inv_n;
            self.accumulate(&cache, &[(t.action, -dl * inv_n)], &mut grad)?;
        }
        Ok(QGrad { loss, grad })
    }

    pub fn dqn_update(&mut self, batch: &[&Transition]) -> Result<T> {
        let g = self.dqn_grad(batch, false)?;
        self.apply_q(g.loss, g.grad, None)?;
        self.iteration += 1;
        Ok(g.loss)
    }

    // -------------------------------------------------------------- QR-DQN

    /// Quantile midpoints `(i + 0.5) / K`.
    pub fn quantile_levels(k: usize) -> Vec<T> {
        (0..k)
            .map(|i| (T::of_usize(i) + T::of(0.5)) / T::of_usize(k))
            .collect()
    }

    /// Pairwise quantile-Huber loss over all K² quantile pairs. The next
    /// action is the target network's mean-over-quantiles argmax.
    pub fn qrdqn_grad(&self, batch: &[&Transition]) -> Result<QGrad<T>> {
        self.check_batch(batch)?;
        let k = self.heads();
        let taus = Self::quantile_levels(k);
        let gamma = T::of(self.config.discount);
        let kappa = T::of(self.config.huber_kappa);
        let inv_n = Self::inv_batch(batch);
        let inv_k2 = T::one() / T::of_usize(k * k);
        let mut grad = vec![T::zero(); self.q.num_params()];
        let mut loss = T::zero();
        for t in batch {
            let cache = self.q.forward_cached(&self.input(&t.state)?, None)?;
            let theta = &cache.output()[t.action * k..(t.action + 1) * k];
            let targets: Vec<T> = if t.done {
                vec![T::of(t.reward); k]
            } else {
                let tv = self.target.forward(&self.input(&t.next_state)?, None)?;
                let a_star = argmax(&self.head_means(&tv));
                tv[a_star * k..(a_star + 1) * k]
                    .iter()
                    .map(|&z| T::of(t.reward) + gamma * z)
                    .collect()
            };
            let mut sparse = Vec::with_capacity(k);
            for (i, (&th, &tau)) in theta.iter().zip(&taus).enumerate() {
                let mut d_theta = T::zero();
                for &y in &targets {
                    let (l, dl) = quantile_huber_loss(y - th, tau, kappa);
                    loss += l * inv_k2 * inv_n;
                    d_theta -= dl;
                }
                sparse.push((t.action * k + i, d_theta * inv_k2 * inv_n));
            }
            self.accumulate(&cache, &sparse, &mut grad)?;
        }
        Ok(QGrad { loss, grad })
    }

    pub fn qrdqn_update(&mut self, batch: &[&Transition]) -> Result<T> {
        let g = self.qrdqn_grad(batch)?;
        self.apply_q(g.loss, g.grad, None)?;
        self.iteration += 1;
        Ok(g.loss)
    }

    // ----------------------------------------------------------------- REM

    /// Huber loss on the α-weighted mixture of heads.
    pub fn rem_grad(&self, batch: &[&Transition], alpha: &[T]) -> Result<QGrad<T>> {
        self.check_batch(batch)?;
        let k = self.heads();
        if alpha.len() != k {
            return Err(Error::arg(format!(
                "alpha has {} weights for {k} heads",
                alpha.len()
            )));
        }
        let gamma = T::of(self.config.discount);
        let kappa = T::of(self.config.huber_kappa);
        let inv_n = Self::inv_batch(batch);
        let mix = |out: &[T], a: usize| -> T {
            out[a * k..(a + 1) * k]
                .iter()
                .zip(alpha)
                .map(|(&q, &w)| q * w)
                .sum()
        };
        let mut grad = vec![T::zero(); self.q.num_params()];
        let mut loss = T::zero();
        for t in batch {
            let cache = self.q.forward_cached(&self.input(&t.state)?, None)?;
            let mut y = T::of(t.reward);
            if !t.done {
                let tv = self.target.forward(&self.input(&t.next_state)?, None)?;
                let best = (0..self.num_actions)
                    .map(|a| mix(&tv, a))
                    .fold(T::neg_infinity(), T::max);
                y += gamma * best;
            }
            let (l, dl) = huber_loss(y - mix(cache.output(), t.action), kappa);
            loss += l * inv_n;
            let sparse: Vec<(usize, T)> = alpha
                .iter()
                .enumerate()
                .map(|(j, &w)| (t.action * k + j, -dl * w * inv_n))
                .collect();
            self.accumulate(&cache, &sparse, &mut grad)?;
        }
        Ok(QGrad { loss, grad })
    }

    /// Draws α uniformly from the simplex, one draw per minibatch.
    pub fn rem_update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<T> {
        let alpha = sample_simplex(self.heads(), rng);
        self.rem_update_with_alpha(batch, &alpha)
    }

    pub fn rem_update_with_alpha(&mut self, batch: &[&Transition], alpha: &[T]) -> Result<T> {
        let g = self.rem_grad(batch, alpha)?;
        self.apply_q(g.loss, g.grad, None)?;
        self.iteration += 1;
        Ok(g.loss)
    }

    // ------------------------------------------------------ behavioral cloning

    /// Cross-entropy of G_ω on the batch actions plus
    /// `penalty · mean_a x_a²` on the final pre-activations `x`.
    pub fn bc_grad(&self, batch: &[&Transition]) -> Result<BcGrad<T>> {
        self.check_batch(batch)?;
        let g = self.generative_net()?;
        let shared = self.config.shares_encoder();
        let penalty = T::of(self.config.generative_penalty);
        let inv_n = Self::inv_batch(batch);
        let inv_a = T::one() / T::of_usize(self.num_actions);
        let mut gen_grad = vec![T::zero(); g.num_params()];
        let mut trunk_grad = shared.then(|| vec![T::zero(); self.q.num_params()]);
        let zero_out = vec![T::zero(); self.q.output_dim()];
        let mut loss = T::zero();
        for t in batch {
            let x = self.input(&t.state)?;
            let q_cache = if shared {
                Some(self.q.forward_cached(&x, None)?)
            } else {
                None
            };
            let g_in = q_cache.as_ref().map_or(x.as_slice(), |c| c.hidden(1));
            let gc = g.forward_cached(g_in, None)?;
            let logits = gc.logits();
            let (ce, mut dl) = cross_entropy_loss(logits, t.action)?;
            let pen: T = logits.iter().map(|&z| z * z).sum::<T>() * penalty * inv_a;
            loss += (ce + pen) * inv_n;
            for (d, &z) in dl.iter_mut().zip(logits) {
                *d = (*d + T::of(2.0) * penalty * inv_a * z) * inv_n;
            }
            let d_in = g.backward_pre(&gc, &dl, None, &mut gen_grad)?;
            if let (Some(c), Some(tg)) = (q_cache.as_ref(), trunk_grad.as_mut()) {
                self.q.backward_pre(c, &zero_out, Some((1, &d_in)), tg)?;
            }
        }
        Ok(BcGrad {
            loss,
            gen_grad,
            trunk_grad,
        })
    }

    /// One standalone behavioral-cloning step on G_ω.
    pub fn bc_update(&mut self, batch: &[&Transition]) -> Result<T> {
        let bc = self.bc_grad(batch)?;
        let loss = bc.loss;
        if let Some(trunk) = bc.trunk_grad.clone() {
            self.apply_q(loss, trunk, None)?;
        }
        self.apply_gen(bc)?;
        self.iteration += 1;
        Ok(loss)
    }

    // ----------------------------------------------------------------- BCQ

    /// Next actions chosen by the constrained argmax over the online
    /// network; `None` for terminal transitions.
    pub fn bcq_next_actions(&self, batch: &[&Transition]) -> Result<Vec<Option<usize>>> {
        let tau = T::of(self.config.bcq_threshold);
        batch
            .iter()
            .map(|t| {
                if t.done {
                    return Ok(None);
                }
                let next = self.input(&t.next_state)?;
                let cache = self.q.forward_cached(&next, None)?;
                let g = self.gen_probs_from(&next, Some(&cache))?;
                Ok(Some(bcq_constrained_argmax(cache.output(), &g, tau)))
            })
            .collect()
    }

    /// Q-network part of the BCQ loss: Double-DQN target with the
    /// batch-constrained next action.
    pub fn bcq_q_grad(&self, batch: &[&Transition]) -> Result<QGrad<T>> {
        self.check_batch(batch)?;
        let next_actions = self.bcq_next_actions(batch)?;
        let gamma = T::of(self.config.discount);
        let kappa = T::of(self.config.huber_kappa);
        let inv_n = Self::inv_batch(batch);
        let mut grad = vec![T::zero(); self.q.num_params()];
        let mut loss = T::zero();
        for (t, next_a) in batch.iter().zip(next_actions) {
            let cache = self.q.forward_cached(&self.input(&t.state)?, None)?;
            let mut y = T::of(t.reward);
            if let Some(a2) = next_a {
                y += gamma * self.target.forward(&self.input(&t.next_state)?, None)?[a2];
            }
            let (l, dl) = huber_loss(y - cache.output()[t.action], kappa);
            loss += l * inv_n;
            self.accumulate(&cache, &[(t.action, -dl * inv_n)], &mut grad)?;
        }
        Ok(QGrad { loss, grad })
    }

    /// Q step on θ and behavioral-cloning step on ω from one minibatch.
    /// Returns `(q_loss, bc_loss)`.
    pub fn bcq_update(&mut self, batch: &[&Transition]) -> Result<(T, T)> {
        let q = self.bcq_q_grad(batch)?;
        let bc = self.bc_grad(batch)?;
        let bc_loss = bc.loss;
        self.apply_q(q.loss, q.grad, bc.trunk_grad.as_deref())?;
        self.apply_gen(bc)?;
        self.iteration += 1;
        Ok((q.loss, bc_loss))
    }

    // ---------------------------------------------------------- KL-Control

    pub fn sample_kl_masks<R: Rng + ?Sized>(
        &self,
        batch_len: usize,
        rng: &mut R,
    ) -> Result<KlMasks> {
        let p = self.config.klcontrol.dropout_probability;
        let sizes = self.q.layer_sizes();
        let mut online = Vec::with_capacity(batch_len);
        let mut target = Vec::with_capacity(batch_len);
        for _ in 0..batch_len {
            online.push(DropoutMasks::sample(sizes, p, rng)?);
            target.push(
                (0..self.config.klcontrol.dropout_masks)
                    .map(|_| DropoutMasks::sample(sizes, p, rng))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(KlMasks { online, target })
    }

    /// Target `log G_ω(a|s) + r/c + γ min_k logsumexp Q^k_θ'(s',·)` for one
    /// transition, with the given target masks.
    pub fn klcontrol_target(&self, t: &Transition, target_masks: &[DropoutMasks]) -> Result<T> {
        let x = self.input(&t.state)?;
        let logits = self.gen_logits(&x)?;
        let log_g = log_softmax(&logits)[t.action];
        let c = T::of(self.config.klcontrol.kl_weight);
        let mut y = log_g + T::of(t.reward) / c;
        if !t.done {
            let next = self.input(&t.next_state)?;
            let mut lower = T::infinity();
            for m in target_masks {
                lower = lower.min(logsumexp(&self.target.forward(&next, Some(m))?));
            }
            y += T::of(self.config.discount) * lower;
        }
        Ok(y)
    }

    fn gen_logits(&self, input: &[T]) -> Result<Vec<T>> {
        let g = self.generative_net()?;
        let cache = if self.config.shares_encoder() {
            let qc = self.q.forward_cached(input, None)?;
            g.forward_cached(qc.hidden(1), None)?
        } else {
            g.forward_cached(input, None)?
        };
        Ok(cache.logits().to_vec())
    }

    /// KL-Control Q loss and (unclipped) gradient with fixed masks. G_ω is
    /// treated as a constant inside the target.
    pub fn klcontrol_grad(&self, batch: &[&Transition], masks: &KlMasks) -> Result<QGrad<T>> {
        self.check_batch(batch)?;
        if masks.online.len() != batch.len() || masks.target.len() != batch.len() {
            return Err(Error::arg("one mask set per transition is required"));
        }
        let kappa = T::of(self.config.huber_kappa);
        let inv_n = Self::inv_batch(batch);
        let mut grad = vec![T::zero(); self.q.num_params()];
        let mut loss = T::zero();
        for (i, t) in batch.iter().enumerate() {
            let y = self.klcontrol_target(t, &masks.target[i])?;
            let cache = self
                .q
                .forward_cached(&self.input(&t.state)?, Some(&masks.online[i]))?;
            let (l, dl) = huber_loss(y - cache.output()[t.action], kappa);
            loss += l * inv_n;
            self.accumulate(&cache, &[(t.action, -dl * inv_n)], &mut grad)?;
        }
        Ok(QGrad { loss, grad })
    }

    pub fn klcontrol_update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
    ) -> Result<(T, T)> {
        let masks = self.sample_kl_masks(batch.len(), rng)?;
        self.klcontrol_update_with_masks(batch, &masks)
    }

    /// Q step with the gradient norm clipped, then a behavioral-cloning
    /// step. Returns `(q_loss, bc_loss)`.
    pub fn klcontrol_update_with_masks(
        &mut self,
        batch: &[&Transition],
        masks: &KlMasks,
    ) -> Result<(T, T)> {
        let mut q = self.klcontrol_grad(batch, masks)?;
        if q.loss.is_finite() {
            clip_grad_norm(&mut q.grad, T::of(self.config.klcontrol.gradient_clip));
        }
        let bc = self.bc_grad(batch)?;
        let bc_loss = bc.loss;
        self.apply_q(q.loss, q.grad, bc.trunk_grad.as_deref())?;
        self.apply_gen(bc)?;
        self.iteration += 1;
        Ok((q.loss, bc_loss))
    }

    // --------------------------------------------------------------- SPIBB

    /// Bootstrap value of s' under the SPIBB policy: the exact expectation,
    /// or one sampled action in sampling mode.
    fn spibb_bootstrap<R: Rng + ?Sized>(&self, next_obs: &[f64], rng: Option<&mut R>) -> Result<T> {
        let tv = self.target.forward(&self.input(next_obs)?, None)?;
        let pi = self.spibb_distribution(next_obs, &tv)?;
        Ok(match (self.config.spibb.target, rng) {
            (SpibbTarget::Sample, Some(rng)) => tv[sample_categorical(&pi, rng)],
            _ => pi.iter().zip(&tv).map(|(&p, &q)| p * q).sum(),
        })
    }

    pub fn spibb_grad<R: Rng + ?Sized>(
        &self,
        batch: &[&Transition],
        mut rng: Option<&mut R>,
    ) -> Result<QGrad<T>> {
        self.check_batch(batch)?;
        let gamma = T::of(self.config.discount);
        let kappa = T::of(self.config.huber_kappa);
        let inv_n = Self::inv_batch(batch);
        let mut grad = vec![T::zero(); self.q.num_params()];
        let mut loss = T::zero();
        for t in batch {
            let cache = self.q.forward_cached(&self.input(&t.state)?, None)?;
            let mut y = T::of(t.reward);
            if !t.done {
                y += gamma * self.spibb_bootstrap(&t.next_state, rng.as_deref_mut())?;
            }
            let (l, dl) = huber_loss(y - cache.output()[t.action], kappa);
            loss += l * inv_n;
            self.accumulate(&cache, &[(t.action, -dl * inv_n)], &mut grad)?;
        }
        Ok(QGrad { loss, grad })
    }

    /// SPIBB Q step; the cloned baseline G_ω is trained alongside unless a
    /// known baseline was injected.
    pub fn spibb_update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
    ) -> Result<T> {
        let q = self.spibb_grad(batch, Some(rng))?;
        if self.known_baseline.is_some() {
            self.apply_q(q.loss, q.grad, None)?;
        } else {
            let bc = self.bc_grad(batch)?;
            self.apply_q(q.loss, q.grad, bc.trunk_grad.as_deref())?;
            self.apply_gen(bc)?;
        }
        self.iteration += 1;
        Ok(q.loss)
    }

    // ------------------------------------------------------------ dispatch

    /// One training iteration of the configured algorithm. Does not sync
    /// the target network; see [`AgentState::sync_target`].
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
    ) -> Result<UpdateStats<T>> {
        let (loss, bc_loss) = match self.algorithm() {
            Algorithm::Dqn => (self.dqn_update(batch)?, None),
            Algorithm::Qrdqn => (self.qrdqn_update(batch)?, None),
            Algorithm::Rem => (self.rem_update(batch, rng)?, None),
            Algorithm::Bcq => {
                let (q, bc) = self.bcq_update(batch)?;
                (q, Some(bc))
            }
            Algorithm::Klcontrol => {
                let (q, bc) = self.klcontrol_update(batch, rng)?;
                (q, Some(bc))
            }
            Algorithm::Spibb => (self.spibb_update(batch, rng)?, None),
        };
        Ok(UpdateStats { loss, bc_loss })
    }

    /// Hard copy θ' ← θ when the iteration count is a multiple of the
    /// target update rate. Returns whether a copy happened.
    pub fn sync_target(&mut self) -> bool {
        if self
            .iteration
            .is_multiple_of(self.config.target_update_rate)
        {
            self.target.copy_from(&self.q);
            true
        } else {
            false
        }
    }

    fn numeric(&self, what: &'static str) -> Error {
        Error::Numeric {
            what,
            iteration: self.iteration + 1,
        }
    }

    fn apply_q(&mut self, loss: T, mut grad: Vec<T>, extra: Option<&[T]>) -> Result<()> {
        if !loss.is_finite() {
            return Err(self.numeric("loss"));
        }
        if let Some(extra) = extra {
            for (g, &e) in grad.iter_mut().zip(extra) {
                *g += e;
            }
        }
        let iteration = self.iteration + 1;
        self.q_opt
            .step(self.q.params_mut(), &grad)
            .map_err(|e| match e {
                Error::Numeric { what, .. } => Error::Numeric { what, iteration },
                e => e,
            })
    }

    fn apply_gen(&mut self, bc: BcGrad<T>) -> Result<()> {
        if !bc.loss.is_finite() {
            return Err(self.numeric("behavioral-cloning loss"));
        }
        let iteration = self.iteration + 1;
        let (Some(g), Some(opt)) = (self.generative.as_mut(), self.gen_opt.as_mut()) else {
            return Err(Error::Unsupported("no generative model".into()));
        };
        opt.step(g.params_mut(), &bc.gen_grad).map_err(|e| match e {
            Error::Numeric { what, .. } => Error::Numeric { what, iteration },
            e => e,
        })
    }

    // ---------------------------------------------------------- evaluation

    /// Mean of the agent's own Q(s,a) over every transition of the given
    /// minibatches (mean over quantiles/heads for distributional agents).
    pub fn value_estimate(&self, minibatches: &[Vec<&Transition>]) -> Result<T> {
        let mut total = T::zero();
        let mut n = 0usize;
        for batch in minibatches {
            for t in batch {
                total += self.q_values(&t.state)?[t.action];
                n += 1;
            }
        }
        if n == 0 {
            return Ok(T::zero());
        }
        Ok(total / T::of_usize(n))
    }

    /// Noise-free action of the algorithm's policy.
    pub fn policy_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<usize> {
        let x = self.input(obs)?;
        Ok(match self.algorithm() {
            Algorithm::Dqn | Algorithm::Qrdqn | Algorithm::Rem => argmax(&self.q_values(obs)?),
            Algorithm::Klcontrol => {
                let q = self.q_values(obs)?;
                match self.config.klcontrol.policy {
                    KlPolicyMode::Argmax => argmax(&q),
                    KlPolicyMode::Boltzmann => sample_categorical(&softmax(&q), rng),
                }
            }
            Algorithm::Bcq => {
                let cache = self.q.forward_cached(&x, None)?;
                let g = self.gen_probs_from(&x, Some(&cache))?;
                bcq_constrained_argmax(cache.output(), &g, T::of(self.config.bcq_threshold))
            }
            Algorithm::Spibb => {
                let q = self.q_values(obs)?;
                let pi = self.spibb_distribution(obs, &q)?;
                sample_categorical(&pi, rng)
            }
        })
    }

    /// ε-greedy action: uniform with probability `epsilon`, otherwise the
    /// algorithm's own policy.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return Ok(rng.gen_range(0..self.num_actions));
        }
        self.policy_action(obs, rng)
    }

    // --------------------------------------------------------- checkpoints

    /// Writes `q.bin`, `target.bin`, optional `generative.bin` and an
    /// `agent.toml` sidecar into `dir`. Optimizer moments are not saved.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_net(&self.q, dir.join("q.bin"))?;
        save_net(&self.target, dir.join("target.bin"))?;
        if let Some(g) = &self.generative {
            save_net(g, dir.join("generative.bin"))?;
        }
        let meta = CheckpointMeta {
            iteration: self.iteration,
            obs_dim: self.obs_dim,
            num_actions: self.num_actions,
            config: self.config.clone(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("agent.toml"), text)?;
        Ok(())
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CheckpointMeta =
            toml::from_str(&std::fs::read_to_string(dir.join("agent.toml"))?)
                .map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut agent = Self::new(meta.config, meta.obs_dim, meta.num_actions, &mut rng)?;
        let q: DenseNet<T> = load_net(dir.join("q.bin"))?;
        let target: DenseNet<T> = load_net(dir.join("target.bin"))?;
        if q.layer_sizes() != agent.q.layer_sizes() || target.layer_sizes() != agent.q.layer_sizes()
        {
            return Err(Error::Config(
                "checkpoint networks do not match the agent config".into(),
            ));
        }
        agent.q = q;
        agent.target = target;
        if agent.generative.is_some() {
            let g: DenseNet<T> = load_net(dir.join("generative.bin"))?;
            agent.generative = Some(g);
        }
        agent.iteration = meta.iteration;
        Ok(agent)
    }
}
