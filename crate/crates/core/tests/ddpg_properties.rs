mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voltreg::ddpg::{Agent, AgentConfig, Batch, ReplayBuffer};
use voltreg::env::Transition;
use voltreg::nn::{Activation, Mlp};
use voltreg::surrogate::Standardizer;

fn marker(k: usize) -> Transition {
    Transition { s: vec![k as f64], a: vec![0.0], r: k as f64, s_next: vec![0.0], terminal: false }
}

proptest! {
    #[test]
    fn buffer_keeps_the_newest_items(capacity in 1usize..40, pushes in 0usize..150) {
        let mut b = ReplayBuffer::new(capacity);
        (0..pushes).for_each(|k| b.push(marker(k)));
        prop_assert_eq!(b.len(), pushes.min(capacity));
        let kept: Vec<f64> = b.iter().map(|t| t.r).collect();
        let expect: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|k| k as f64).collect();
        prop_assert_eq!(kept, expect);
    }

    #[test]
    fn sampled_batches_are_distinct_and_in_range(len in 1usize..60, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let mut b = ReplayBuffer::new(64);
        (0..len).for_each(|k| b.push(marker(k)));
        let n = ((len as f64 * frac) as usize).max(1);
        let mut idx = b.sample_indices(n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(idx.iter().all(|&i| i < len));
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), n);
    }

    #[test]
    fn soft_update_contracts_by_one_minus_tau(tau in 0.001f64..0.5, k in 1usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let mut target = Mlp::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let d0 = target.distance(&online);
        for _ in 0..k {
            target.soft_update(&online, tau).unwrap();
        }
        let expect = d0 * (1.0 - tau).powi(k as i32);
        prop_assert!((target.distance(&online) - expect).abs() <= 1e-9 * d0.max(1.0));
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let (chi2, dof) = common::buffer_chi_square(50, 8, 5000, 17);
    // 99.9th percentile of χ² with 49 degrees of freedom
    assert_eq!(dof, 49);
    assert!(chi2 < 85.35, "chi-square {chi2}");
}

#[test]
fn exploration_noise_has_configured_spread() {
    let sd = common::exploration_std(0.2, 40_000, 5);
    assert!((sd - 0.2).abs() < 0.004, "sample std {sd}");
}

#[test]
fn gamma_zero_critic_matches_direct_regression() {
    let (critic, direct) = common::gamma_zero_vs_regression(3000, 9);
    assert!(direct < 0.05, "regression did not fit: {direct}");
    assert!((critic - direct).abs() <= 0.1 * direct, "critic {critic} vs regression {direct}");
}

#[test]
fn peak_critic_is_maximized_at_its_optimum() {
    let q = common::peak_critic(0.3);
    let at = |a: f64| q.forward(&[1.0, a]).unwrap()[0];
    for a in [-1.0, -0.2, 0.29, 0.31, 0.8] {
        assert!(at(0.3) > at(a));
    }
}

#[test]
fn actor_climbs_to_the_critic_optimum() {
    for seed in 0..3 {
        let a = common::actor_toy(0.3, 3000, seed);
        assert!((a - 0.3).abs() < 0.01, "seed {seed}: {a}");
    }
}

#[test]
fn zero_learning_rates_freeze_the_agent() {
    let cfg = AgentConfig {
        lr_actor: 0.0,
        lr_critic: 0.0,
        batch: 16,
        buffer_capacity: 64,
        hidden: vec![8],
        ..AgentConfig::desk()
    };
    let mut agent = Agent::new(3, 2, Standardizer::identity(3), cfg, 4).unwrap();
    let before = agent.clone();
    let data = common::bandit_transitions(16, 1);
    let batch = Batch::from_transitions(&data.iter().collect::<Vec<_>>()).unwrap();
    for _ in 0..20 {
        agent.update(&batch).unwrap();
    }
    assert_eq!(agent.actor.parameters(), before.actor.parameters());
    assert_eq!(agent.critic.parameters(), before.critic.parameters());
    // targets blend identical online and target weights, so only roundoff may move them
    assert!(agent.target_actor.distance(&before.target_actor) < 1e-12);
    assert!(agent.target_critic.distance(&before.target_critic) < 1e-12);
}
