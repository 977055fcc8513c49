//! Analytic gradients against central finite differences.

mod common;

use batchrl::agents::Algorithm;
use batchrl::nn::{huber_loss, DenseNet, OutputActivation};
use batchrl::Agent;
use common::*;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check(name: &str, analytic: &[f64], numeric: &[f64]) {
    let err = rel_err(analytic, numeric);
    assert!(err < TOL, "{name}: relative error {err:e}");
    assert!(
        analytic.iter().any(|g| *g != 0.0),
        "{name}: gradient vanished"
    );
}

#[test]
fn dense_net_backward() {
    let mut r = rng(1);
    for output in [OutputActivation::Identity, OutputActivation::Softmax] {
        let net: DenseNet<f64> = DenseNet::new(&[4, 7, 5, 3], 1, output, &mut r).unwrap();
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let cache = net.forward_cached(&x, None).unwrap();
        let analytic = net.backward(&cache, &u).unwrap();
        let mut probe = net.clone();
        let numeric: Vec<f64> = (0..net.num_params())
            .map(|i| {
                let orig = probe.params()[i];
                let mut f = |v: f64| {
                    probe.params_mut()[i] = v;
                    probe
                        .forward(&x, None)
                        .unwrap()
                        .iter()
                        .zip(&u)
                        .map(|(o, u)| o * u)
                        .sum::<f64>()
                };
                let g = (f(orig + H) - f(orig - H)) / (2.0 * H);
                probe.params_mut()[i] = orig;
                g
            })
            .collect();
        check("dense net", &analytic, &numeric);
    }
}

fn batch_for(seed: u64) -> Vec<batchrl::data::Transition> {
    dense_batch(12, 3, 3, &mut rng(seed))
}

#[test]
fn dqn_and_double_dqn() {
    for seed in 0..3 {
        let mut agent = small_agent(Algorithm::Dqn, 3, 3, seed, |_| {});
        jitter_target(&mut agent, seed + 100, 0.5);
        let batch = batch_for(seed);
        let b = refs(&batch);
        for double in [false, true] {
            let g = agent.dqn_grad(&b, double).unwrap();
            let n = numeric_grad(&agent, Params::Q, H, |a| {
                a.dqn_grad(&b, double).unwrap().loss
            });
            check("dqn", &g.grad, &n);
        }
    }
}

#[test]
fn qrdqn_quantile_loss() {
    for seed in 0..3 {
        let mut agent = small_agent(Algorithm::Qrdqn, 3, 3, seed, |_| {});
        jitter_target(&mut agent, seed + 100, 0.5);
        let batch = batch_for(seed);
        let b = refs(&batch);
        let g = agent.qrdqn_grad(&b).unwrap();
        let n = numeric_grad(&agent, Params::Q, H, |a| a.qrdqn_grad(&b).unwrap().loss);
        check("qrdqn", &g.grad, &n);
    }
}

#[test]
fn rem_mixture_loss() {
    for seed in 0..3 {
        let mut agent = small_agent(Algorithm::Rem, 3, 3, seed, |_| {});
        jitter_target(&mut agent, seed + 100, 0.5);
        let batch = batch_for(seed);
        let b = refs(&batch);
        let alpha: Vec<f64> = batchrl::agents::sample_simplex(4, &mut rng(seed));
        let g = agent.rem_grad(&b, &alpha).unwrap();
        let n = numeric_grad(&agent, Params::Q, H, |a| {
            a.rem_grad(&b, &alpha).unwrap().loss
        });
        check("rem", &g.grad, &n);
    }
}

#[test]
fn bcq_q_loss() {
    for shared in [true, false] {
        let mut agent = small_agent(Algorithm::Bcq, 3, 3, 7, |c| c.share_encoder = Some(shared));
        jitter_target(&mut agent, 8, 0.5);
        let batch = batch_for(9);
        let b = refs(&batch);
        let g = agent.bcq_q_grad(&b).unwrap();
        let n = numeric_grad(&agent, Params::Q, H, |a| a.bcq_q_grad(&b).unwrap().loss);
        check("bcq", &g.grad, &n);
    }
}

#[test]
fn behavioral_cloning_with_penalty() {
    for shared in [true, false] {
        let agent = small_agent(Algorithm::Bcq, 3, 3, 11, |c| {
            c.share_encoder = Some(shared);
            c.generative_penalty = 0.01;
        });
        let batch = batch_for(12);
        let b = refs(&batch);
        let g = agent.bc_grad(&b).unwrap();
        let n = numeric_grad(&agent, Params::Generative, H, |a| {
            a.bc_grad(&b).unwrap().loss
        });
        check("bc generative", &g.gen_grad, &n);
        let n = numeric_grad(&agent, Params::Q, H, |a| a.bc_grad(&b).unwrap().loss);
        match g.trunk_grad {
            Some(trunk) => check("bc trunk", &trunk, &n),
            None => assert!(n.iter().all(|&v| v == 0.0)),
        }
    }
}

/// The target is held fixed, as the update treats it. Zero-initialized
/// biases plus dropout can leave a unit exactly at the ReLU kink, so the
/// online net is randomized first.
#[test]
fn klcontrol_target_loss() {
    for shared in [true, false] {
        let mut agent = small_agent(Algorithm::Klcontrol, 3, 3, 21, |c| {
            c.share_encoder = Some(shared)
        });
        jitter_online(&mut agent, 20, 0.2);
        jitter_target(&mut agent, 22, 0.5);
        let batch = batch_for(23);
        let b = refs(&batch);
        let masks = agent.sample_kl_masks(b.len(), &mut rng(24)).unwrap();
        let targets: Vec<f64> = b
            .iter()
            .zip(&masks.target)
            .map(|(t, m)| agent.klcontrol_target(t, m).unwrap())
            .collect();
        let kappa = agent.config().huber_kappa;
        let loss = |a: &Agent| {
            b.iter()
                .zip(&targets)
                .zip(&masks.online)
                .map(|((t, &y), m)| {
                    let q = a.q_net().forward(&t.state, Some(m)).unwrap()[t.action];
                    huber_loss(y - q, kappa).0
                })
                .sum::<f64>()
                / b.len() as f64
        };
        let g = agent.klcontrol_grad(&b, &masks).unwrap();
        assert!((g.loss - loss(&agent)).abs() < 1e-12);
        let n = numeric_grad(&agent, Params::Q, H, loss);
        check("klcontrol", &g.grad, &n);
    }
}
