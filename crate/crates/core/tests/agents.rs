//! Update rules, policies and target syncing on hand-checkable cases.

mod common;

use batchrl::agents::Algorithm;
use batchrl::data::{generate_batch, BehavioralPolicy, BehavioralQ, CountTable, Transition};
use batchrl::mdp::{chain, make_env, value_iteration, Env, QTable};
use batchrl::nn::{huber_loss, logsumexp};
use batchrl::{Agent, Agent32};
use common::*;
use rand::Rng;

/// Zero last-layer weights and the given biases: a constant network.
fn set_constant_output(net: &mut batchrl::Net, values: &[f64]) {
    let last = net.num_layers() - 1;
    for o in 0..net.output_dim() {
        for i in 0..net.layer_sizes()[last] {
            net.set_weight(last, o, i, 0.0);
        }
        net.set_bias(last, o, values[o % values.len()]);
    }
}

#[test]
fn matching_prediction_gives_zero_loss() {
    let mut agent = small_agent(Algorithm::Dqn, 2, 2, 0, |c| c.discount = 0.0);
    set_constant_output(agent.q_net_mut(), &[0.7, -0.1]);
    let t = Transition {
        state: vec![0.4, 0.1],
        action: 0,
        reward: 0.7,
        next_state: vec![0.9, 0.3],
        done: false,
    };
    let g = agent.dqn_grad(&[&t], false).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.grad.iter().all(|&x| x == 0.0));
}

/// One-hot inputs through an identity hidden layer make the last layer a
/// Q table; one plain gradient step of size 1 on the squared loss is then
/// exactly a Q-learning backup.
#[test]
fn tabular_step_is_q_learning() {
    let env = make_env("chain").unwrap();
    let (ns, na) = (env.num_states(), env.num_actions());
    let mut agent = small_agent(Algorithm::Dqn, ns, na, 0, |c| {
        c.hidden_layers = vec![ns];
        c.huber_kappa = f64::INFINITY;
    });
    let mut r = rng(1);
    let q0: Vec<f64> = (0..ns * na).map(|_| r.gen_range(-1.0..1.0)).collect();
    let qt: Vec<f64> = (0..ns * na).map(|_| r.gen_range(-1.0..1.0)).collect();
    let tabulate = |net: &mut batchrl::Net, table: &[f64]| {
        net.params_mut().fill(0.0);
        for s in 0..ns {
            net.set_weight(0, s, s, 1.0);
            for a in 0..na {
                net.set_weight(1, a, s, table[s * na + a]);
            }
        }
    };
    tabulate(agent.q_net_mut(), &q0);
    tabulate(agent.target_net_mut(), &qt);
    let gamma = agent.config().discount;
    for (s, a) in [(0, 1), (3, 0), (4, 1)] {
        let step = env.step(s, a, &mut r).unwrap();
        let t = Transition {
            state: env.observe(s),
            action: a,
            reward: step.reward,
            next_state: env.observe(step.next_state),
            done: step.done,
        };
        let mut learner = agent.clone();
        let g = learner.dqn_grad(&[&t], false).unwrap();
        let start = learner.q_net().layer_param_range(1).start;
        for i in 0..na * ns {
            learner.q_net_mut().params_mut()[start + i] -= g.grad[start + i];
        }
        let s2 = step.next_state;
        let boot = if step.done {
            0.0
        } else {
            (0..na).map(|b| qt[s2 * na + b]).fold(f64::MIN, f64::max)
        };
        let want = step.reward + gamma * boot;
        for s_ in 0..ns {
            let got = learner.q_values(&env.observe(s_)).unwrap();
            for b in 0..na {
                let expect = if (s_, b) == (s, a) {
                    want
                } else {
                    q0[s_ * na + b]
                };
                assert!(
                    (got[b] - expect).abs() < 1e-12,
                    "Q({s_},{b}) = {} not {expect}",
                    got[b]
                );
            }
        }
    }
}

#[test]
fn terminal_transitions_never_bootstrap() {
    let (ns, na) = (5, 3);
    let batch: Vec<Transition> = tabular_batch(16, ns, na, &mut rng(0))
        .into_iter()
        .map(|t| Transition { done: true, ..t })
        .collect();
    let b = refs(&batch);
    let mut counts = CountTable::zeros(ns, na);
    for t in &batch {
        counts.increment(t.state.iter().position(|&x| x == 1.0).unwrap(), t.action);
    }
    for algo in Algorithm::ALL {
        let base = small_agent(algo, ns, na, 1, |_| {})
            .with_counts(counts.clone())
            .unwrap();
        let masks = base.sample_kl_masks(b.len(), &mut rng(2)).unwrap();
        let loss = |a: &Agent| match algo {
            Algorithm::Dqn => a.dqn_grad(&b, false).unwrap().loss,
            Algorithm::Qrdqn => a.qrdqn_grad(&b).unwrap().loss,
            Algorithm::Rem => a.rem_grad(&b, &[0.1, 0.2, 0.3, 0.4]).unwrap().loss,
            Algorithm::Bcq => a.bcq_q_grad(&b).unwrap().loss,
            Algorithm::Klcontrol => a.klcontrol_grad(&b, &masks).unwrap().loss,
            Algorithm::Spibb => {
                a.spibb_grad(&b, None::<&mut rand_chacha::ChaCha8Rng>)
                    .unwrap()
                    .loss
            }
        };
        let mut wild = base.clone();
        set_constant_output(wild.target_net_mut(), &[1e6, -1e6, 3e5]);
        assert_eq!(loss(&base), loss(&wild), "{algo}");
        if matches!(algo, Algorithm::Dqn | Algorithm::Bcq | Algorithm::Spibb) {
            let want = batch
                .iter()
                .map(|t| huber_loss(t.reward - base.q_values(&t.state).unwrap()[t.action], 1.0).0)
                .sum::<f64>()
                / batch.len() as f64;
            assert!((loss(&base) - want).abs() < 1e-12, "{algo}");
        }
    }
}

#[test]
fn quantiles_collapse_on_a_constant_return() {
    let mut agent = small_agent(Algorithm::Qrdqn, 2, 2, 0, |c| c.learning_rate = 0.01);
    let batch: Vec<Transition> = (0..4)
        .map(|i| Transition {
            state: one_hot(2, i % 2),
            action: i / 2,
            reward: 0.7,
            next_state: one_hot(2, 0),
            done: true,
        })
        .collect();
    let b = refs(&batch);
    let mut loss = f64::INFINITY;
    for _ in 0..3_000 {
        loss = agent.qrdqn_update(&b).unwrap();
    }
    assert!(loss < 1e-4, "loss {loss}");
    for t in &batch {
        let out = agent.q_net().forward(&t.state, None).unwrap();
        for &z in &out[t.action * 5..(t.action + 1) * 5] {
            assert!((z - 0.7).abs() < 0.02, "quantile {z}");
        }
    }
}

fn single_state_batch(actions: &[usize], n: usize) -> Vec<Transition> {
    (0..n)
        .map(|i| Transition {
            state: vec![1.0],
            action: actions[i % actions.len()],
            reward: 0.0,
            next_state: vec![1.0],
            done: true,
        })
        .collect()
}

#[test]
fn cloning_fits_a_constant_action() {
    // The logit penalty caps the fit near 0.98, so it is switched off here.
    let mut agent = small_agent(Algorithm::Bcq, 1, 2, 0, |c| {
        c.generative_penalty = 0.0;
        c.learning_rate = 0.01;
    });
    let batch = single_state_batch(&[1], 32);
    let b = refs(&batch);
    let mut steps = 0;
    while agent.generative_probs(&[1.0]).unwrap()[1] <= 0.99 {
        agent.bc_update(&b).unwrap();
        steps += 1;
        assert!(steps <= 5_000, "not fit after 5k steps");
    }
}

#[test]
fn cloning_fits_uniform_actions() {
    let mut agent = small_agent(Algorithm::Bcq, 1, 4, 0, |c| c.learning_rate = 0.01);
    let batch = single_state_batch(&[0, 1, 2, 3], 32);
    let b = refs(&batch);
    for _ in 0..2_000 {
        agent.bc_update(&b).unwrap();
    }
    let g = agent.generative_probs(&[1.0]).unwrap();
    assert!(g.iter().all(|p| (p - 0.25).abs() < 0.05), "{g:?}");
}

#[test]
fn perfect_fit_loss_is_the_empirical_entropy() {
    let mut agent = small_agent(Algorithm::Bcq, 1, 3, 0, |c| {
        c.generative_penalty = 0.0;
        c.share_encoder = Some(false);
    });
    let batch = single_state_batch(&[0, 0, 1, 2, 2, 2], 6);
    let p = [2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0];
    let logp: Vec<f64> = p.iter().map(|x: &f64| x.ln()).collect();
    set_constant_output(agent.generative_mut().unwrap(), &logp);
    let entropy: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
    let loss = agent.bc_grad(&refs(&batch)).unwrap().loss;
    assert!((loss - entropy).abs() < 1e-12, "{loss} vs {entropy}");
}

/// A three-state chain batch without any backward steps, and networks that
/// start out optimistic about the missing action. Once G_ω has seen the
/// batch, BCQ never selects that action as a', whereas the unconstrained
/// maximum does.
#[test]
fn bcq_avoids_the_missing_action() {
    let env = Env::new("chain3", chain(3, 0.9).unwrap()).unwrap();
    let ns = env.num_states();
    let mut r = rng(0);
    let batch: Vec<Transition> = (0..3)
        .map(|s| {
            let step = env.step(s, 1, &mut r).unwrap();
            Transition {
                state: env.observe(s),
                action: 1,
                reward: step.reward,
                next_state: env.observe(step.next_state),
                done: step.done,
            }
        })
        .collect();
    let b = refs(&batch);
    let mut bcq = small_agent(Algorithm::Bcq, ns, 2, 4, |c| {
        c.learning_rate = 0.01;
        c.target_update_rate = 20;
    });
    let mut dqn = small_agent(Algorithm::Dqn, ns, 2, 4, |c| {
        c.learning_rate = 0.01;
        c.target_update_rate = 20;
    });
    for agent in [&mut bcq, &mut dqn] {
        let last = agent.q_net().num_layers() - 1;
        let width = agent.q_net().layer_sizes()[last];
        let optimistic = |net: &mut batchrl::nn::DenseNet<f64>| {
            for i in 0..width {
                net.set_weight(last, 0, i, 0.0);
            }
            net.set_bias(last, 0, 2.0);
        };
        optimistic(agent.q_net_mut());
        optimistic(agent.target_net_mut());
    }
    for _ in 0..300 {
        bcq.bc_update(&b).unwrap();
    }
    let mut dqn_used_missing = false;
    for _ in 0..2_000 {
        for a in bcq.bcq_next_actions(&b).unwrap().into_iter().flatten() {
            assert_eq!(a, 1, "BCQ bootstrapped through the missing action");
        }
        for t in b.iter().filter(|t| !t.done) {
            let tv = dqn.target_values(&t.next_state).unwrap();
            dqn_used_missing |= tv[0] > tv[1];
        }
        bcq.bcq_update(&b).unwrap();
        bcq.sync_target();
        dqn.dqn_update(&b).unwrap();
        dqn.sync_target();
    }
    assert!(dqn_used_missing);
}

#[test]
fn klcontrol_hand_target() {
    let agent = small_agent(Algorithm::Klcontrol, 1, 1, 0, |c| {
        c.discount = 0.0;
        c.klcontrol.kl_weight = 2.0;
    });
    let t = Transition {
        state: vec![0.3],
        action: 0,
        reward: 1.0,
        next_state: vec![-0.6],
        done: false,
    };
    let masks = agent.sample_kl_masks(1, &mut rng(0)).unwrap();
    assert!((agent.klcontrol_target(&t, &masks.target[0]).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn klcontrol_single_clean_mask_is_plain_logsumexp() {
    let mut agent = small_agent(Algorithm::Klcontrol, 3, 3, 0, |c| {
        c.klcontrol.dropout_masks = 1;
        c.klcontrol.dropout_probability = 0.0;
    });
    jitter_target(&mut agent, 1, 0.5);
    for t in dense_batch(20, 3, 3, &mut rng(2)) {
        let masks = agent.sample_kl_masks(1, &mut rng(3)).unwrap();
        let m = &masks.target[0][0];
        assert!((0..m.num_layers()).all(|l| m.layer(l).iter().all(|&k| k)));
        let g = agent.generative_probs(&t.state).unwrap();
        let mut want = g[t.action].ln() + t.reward / 2.0;
        if !t.done {
            want +=
                agent.config().discount * logsumexp(&agent.target_values(&t.next_state).unwrap());
        }
        let got = agent.klcontrol_target(&t, &masks.target[0]).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn target_sync_schedule() {
    let mut agent = small_agent(Algorithm::Dqn, 3, 2, 0, |c| {
        c.target_update_rate = 5;
        c.learning_rate = 0.01;
    });
    let batch = dense_batch(8, 3, 2, &mut rng(1));
    let b = refs(&batch);
    let mut frozen = agent.target_net().params().to_vec();
    for _ in 0..23 {
        agent.update(&b, &mut rng(2)).unwrap();
        if agent.sync_target() {
            assert_eq!(agent.iteration() % 5, 0);
            assert_eq!(agent.target_net().params(), agent.q_net().params());
            frozen = agent.target_net().params().to_vec();
        } else {
            assert_eq!(agent.target_net().params(), frozen.as_slice());
            assert_ne!(agent.target_net().params(), agent.q_net().params());
        }
    }

    let mut eager = small_agent(Algorithm::Dqn, 3, 2, 0, |c| c.target_update_rate = 1);
    for _ in 0..5 {
        eager.update(&b, &mut rng(3)).unwrap();
        assert!(eager.sync_target());
        assert_eq!(eager.target_net().params(), eager.q_net().params());
    }
}

#[test]
fn value_estimate_of_constant_networks() {
    let batch = dense_batch(10, 3, 2, &mut rng(0));
    let mbs = vec![refs(&batch[..5]), refs(&batch[5..])];
    for algo in [Algorithm::Dqn, Algorithm::Qrdqn, Algorithm::Rem] {
        let mut agent = small_agent(algo, 3, 2, 0, |_| {});
        agent.q_net_mut().params_mut().fill(0.0);
        assert_eq!(agent.value_estimate(&mbs).unwrap(), 0.0);
        set_constant_output(agent.q_net_mut(), &[2.5]);
        assert!((agent.value_estimate(&mbs).unwrap() - 2.5).abs() < 1e-12);
    }
}

#[test]
fn greedy_action_without_noise() {
    let mut agent = small_agent(Algorithm::Dqn, 2, 2, 0, |_| {});
    set_constant_output(agent.q_net_mut(), &[3.0, 1.0]);
    assert_eq!(agent.act(&[0.1, 0.2], 0.0, &mut rng(0)).unwrap(), 0);
}

/// Exhaustive uniform batch on the chain: the value estimate approaches the
/// batch-weighted mean of Q*.
#[test]
fn dqn_value_estimate_matches_the_oracle() {
    let env = make_env("chain").unwrap();
    let q: QTable<f64> = value_iteration(env.spec(), 1e-10).unwrap();
    let policy = BehavioralPolicy::new(BehavioralQ::Table(q.clone())).with_epsilon(1.0);
    let ds = generate_batch(&env, &policy, 20_000, 0).unwrap();
    assert!(ds
        .state_action_counts()
        .unwrap()
        .raw()
        .iter()
        .enumerate()
        .all(|(i, &c)| { env.spec().is_terminal(i / 2) || c >= 50 }));
    let mut agent = small_agent(Algorithm::Dqn, env.obs_dim(), 2, 0, |c| {
        c.hidden_layers = vec![64];
        c.discount = env.spec().discount;
        c.target_update_rate = 100;
    });
    let mut r = rng(1);
    for _ in 0..20_000 {
        let b = ds.sample_minibatch(32, &mut r).unwrap();
        agent.update(&b, &mut r).unwrap();
        agent.sync_target();
    }
    let all = vec![ds.transitions().iter().collect::<Vec<_>>()];
    let estimate = agent.value_estimate(&all).unwrap();
    let oracle = ds
        .transitions()
        .iter()
        .map(|t| q.get(env.state_index(&t.state).unwrap(), t.action))
        .sum::<f64>()
        / ds.len() as f64;
    assert!(
        (estimate - oracle).abs() <= 0.05 * oracle.abs(),
        "{estimate} vs {oracle}"
    );
}

#[test]
fn checkpoints_restore_the_networks() {
    let dir = tempfile::tempdir().unwrap();
    let mut agent = small_agent(Algorithm::Bcq, 3, 2, 0, |_| {});
    let batch = dense_batch(8, 3, 2, &mut rng(1));
    agent.update(&refs(&batch), &mut rng(2)).unwrap();
    agent.save_checkpoint(dir.path()).unwrap();
    let back = Agent::load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.iteration(), agent.iteration());
    assert_eq!(back.q_net().params(), agent.q_net().params());
    assert_eq!(back.target_net().params(), agent.target_net().params());
    assert_eq!(
        back.generative().unwrap().params(),
        agent.generative().unwrap().params()
    );
}

#[test]
fn single_precision_agents_train() {
    let mut cfg = batchrl::agents::AgentConfig::desk(Algorithm::Qrdqn);
    cfg.hidden_layers = vec![8];
    let mut agent = Agent32::new(cfg, 3, 2, &mut rng(0)).unwrap();
    let batch = dense_batch(8, 3, 2, &mut rng(1));
    for _ in 0..10 {
        let stats = agent.update(&refs(&batch), &mut rng(2)).unwrap();
        assert!(stats.loss.is_finite());
    }
}
