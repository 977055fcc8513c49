//! Randomized invariants.

mod common;

use batchrl::agents::{bcq_admissible, bcq_constrained_argmax, spibb_policy};
use batchrl::mdp::{
    bellman_optimality_backup, make_env, policy_evaluation, value_iteration, MdpBuilder, MdpSpec,
    QTable, ENV_NAMES,
};
use batchrl::nn::{huber_loss, logsumexp, quantile_huber_loss, quantile_weight, softmax};
use batchrl::{argmax, max};
use proptest::prelude::*;
use rand::Rng;

/// Random MDP with 2..6 states, 1..4 actions, dense stochastic rows, one
/// absorbing terminal.
fn random_mdp(seed: u64, discount: f64) -> MdpSpec {
    let mut r = common::rng(seed);
    let ns = r.gen_range(2..6);
    let na = r.gen_range(1..4);
    let mut b = MdpBuilder::new(ns + 1, na, discount);
    for s in 0..ns {
        for a in 0..na {
            let w: Vec<f64> = (0..=ns).map(|_| r.gen::<f64>() + 0.01).collect();
            let total: f64 = w.iter().sum();
            for (s2, wi) in w.iter().enumerate() {
                b = b.add(s, a, s2, wi / total, r.gen_range(-1.0..1.0));
            }
        }
    }
    b.terminal(ns).build().unwrap()
}

fn random_table(spec: &MdpSpec, seed: u64) -> QTable<f64> {
    let mut r = common::rng(seed);
    let vals = (0..spec.num_states * spec.num_actions)
        .map(|_| r.gen_range(-20.0..20.0))
        .collect();
    QTable::from_values(spec.num_states, spec.num_actions, vals).unwrap()
}

fn probs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, len).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn huber_is_c1_at_the_knee(kappa in 0.05f64..5.0, sign in prop::bool::ANY) {
        let k = if sign { kappa } else { -kappa };
        let eps = 1e-9;
        let (a, da) = huber_loss(k - eps, kappa);
        let (b, db) = huber_loss(k + eps, kappa);
        prop_assert!((a - b).abs() < 1e-8);
        prop_assert!((da - db).abs() < 1e-8);
    }

    #[test]
    fn huber_is_symmetric_and_nonnegative(d in -50.0f64..50.0, kappa in 0.05f64..5.0) {
        let (a, da) = huber_loss(d, kappa);
        let (b, db) = huber_loss(-d, kappa);
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
        prop_assert_eq!(da, -db);
    }

    #[test]
    fn quantile_weights_of_opposite_errors_sum_to_one(d in -10.0f64..10.0, tau in 0.0f64..1.0) {
        prop_assume!(d != 0.0);
        let w = quantile_weight(d, tau) + quantile_weight(-d, tau);
        prop_assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn midpoint_quantile_is_half_huber(d in -10.0f64..10.0, kappa in 0.05f64..5.0) {
        let (q, _) = quantile_huber_loss(d, 0.5, kappa);
        prop_assert!((q - 0.5 * huber_loss(d, kappa).0).abs() < 1e-12);
    }

    #[test]
    fn softmax_normalizes_any_scale(logits in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logsumexp_lies_between_max_and_max_plus_log_n(xs in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let l = logsumexp(&xs);
        let m = max(&xs);
        prop_assert!(l >= m - 1e-9);
        prop_assert!(l <= m + (xs.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn spibb_policy_is_a_distribution(
        (q, pb, counts) in (1usize..8).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            probs(n),
            prop::collection::vec(0u64..30, n),
        )),
        threshold in -1.0f64..30.0,
    ) {
        let pi = spibb_policy(&q, &pb, &counts, threshold).unwrap();
        prop_assert!(pi.iter().all(|&p| p >= 0.0));
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Bootstrapped actions keep their baseline mass exactly.
        for a in 0..q.len() {
            if counts[a] as f64 <= threshold {
                prop_assert_eq!(pi[a], pb[a]);
            }
        }
    }

    #[test]
    fn spibb_without_bootstrapping_is_greedy(
        (q, pb) in (1usize..8).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), probs(n))),
    ) {
        let counts = vec![5u64; q.len()];
        let pi = spibb_policy(&q, &pb, &counts, -1.0).unwrap();
        prop_assert_eq!(argmax(&pi), argmax(&q));
        prop_assert!((pi[argmax(&q)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bcq_never_picks_an_inadmissible_action(
        (q, g) in (1usize..8).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), probs(n))),
        tau in 0.0f64..=1.0,
    ) {
        let a = bcq_constrained_argmax(&q, &g, tau);
        let admissible = bcq_admissible(&g, tau);
        prop_assert!(admissible[a]);
        prop_assert!(admissible[argmax(&g)]);
        for (b, &ok) in admissible.iter().enumerate() {
            if ok {
                prop_assert!(q[b] <= q[a]);
            }
        }
    }

    #[test]
    fn optimality_backup_contracts(seed in any::<u64>(), gamma in 0.0f64..0.99) {
        let spec = random_mdp(seed, gamma);
        let q1 = random_table(&spec, seed ^ 1);
        let q2 = random_table(&spec, seed ^ 2);
        let lhs = bellman_optimality_backup(&q1, &spec).unwrap()
            .max_abs_diff(&bellman_optimality_backup(&q2, &spec).unwrap());
        prop_assert!(lhs <= gamma * q1.max_abs_diff(&q2) + 1e-12);
    }

    #[test]
    fn value_iteration_is_bounded_and_self_consistent(seed in any::<u64>(), gamma in 0.0f64..0.95) {
        let spec = random_mdp(seed, gamma);
        let tol = 1e-9;
        let q = value_iteration(&spec, tol).unwrap();
        let bound = spec.max_abs_reward() / (1.0 - gamma) + tol;
        prop_assert!(q.values().iter().all(|v| v.abs() <= bound));
        let residual = bellman_optimality_backup(&q, &spec).unwrap().max_abs_diff(&q);
        prop_assert!(residual < tol);
    }

    #[test]
    fn greedy_policy_improves(seed in any::<u64>(), gamma in 0.0f64..0.95) {
        let spec = random_mdp(seed, gamma);
        let tol = 1e-10;
        let pi = random_table(&spec, seed ^ 3).greedy();
        let uniform = batchrl::mdp::PolicyTable::uniform(spec.num_states, spec.num_actions);
        for base in [uniform, pi] {
            let q_pi = policy_evaluation(&spec, &base, tol).unwrap();
            let improved = policy_evaluation(&spec, &q_pi.greedy(), tol).unwrap();
            for (a, b) in improved.values().iter().zip(q_pi.values()) {
                prop_assert!(*a >= b - 1e-7);
            }
        }
    }
}

#[test]
fn one_hot_observations_are_bijective() {
    for name in ENV_NAMES.iter().filter(|n| !n.ends_with("-xy")) {
        let env = make_env(name).unwrap();
        for s in 0..env.num_states() {
            let obs = env.observe(s);
            assert_eq!(obs.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(env.state_index(&obs), Some(s));
        }
    }
}
