//! Fixtures shared by the integration suites and the acceptance runner.
#![allow(dead_code)]

use std::path::Path;

use ndarray::{array, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltreg::ddpg::{critic_target, select_action, update_actor, update_critic, AgentConfig, Batch, ReplayBuffer};
use voltreg::env::Transition;
use voltreg::grid::{zero_block, Bus, Feeder, Line, PhaseSet};
use voltreg::harness::{DatasetConfig, ProfileSource, RunConfig};
use voltreg::nn::{Activation, Layer, Mlp, Optimizer, UpdateRule};
use voltreg::profiles::{OperatingPoint, SyntheticConfig};
use voltreg::surrogate::SurrogateConfig;

/// Slack plus one phase-a bus behind series impedance `z`.
pub fn two_bus(z: Complex64) -> Feeder {
    let buses = vec![
        Bus { id: 0, phases: PhaseSet::ABC, is_slack: true, v_base_kv: 1.0 },
        Bus { id: 1, phases: PhaseSet::parse("a").unwrap(), is_slack: false, v_base_kv: 1.0 },
    ];
    let mut ys = zero_block();
    ys[0][0] = 1.0 / z;
    let lines = vec![Line {
        from_bus: 0,
        to_bus: 1,
        phases: PhaseSet::parse("a").unwrap(),
        y_series: ys,
        y_shunt: zero_block(),
    }];
    Feeder::new("two-bus", buses, lines, vec![], vec![], vec![], 1.0, 1.0).unwrap()
}

/// Receiving-end magnitude of a radial line feeding `p + jq`, the larger
/// root of |V2|⁴ + (2(RP+XQ) − |V1|²)|V2|² + |z|²|S|² = 0.
pub fn two_bus_closed_form(z: Complex64, p: f64, q: f64, v1: f64) -> f64 {
    let b = 2.0 * (z.re * p + z.im * q) - v1 * v1;
    let c = z.norm_sqr() * (p * p + q * q);
    ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

/// Operating point with every load scaled by a draw in `[0, 1.5]` and every
/// PV at a draw in `[0, 1]` of rating.
pub fn random_point<R: Rng>(feeder: &Feeder, rng: &mut R) -> OperatingPoint {
    let k: Vec<f64> = feeder.loads.iter().map(|_| rng.random_range(0.0..1.5)).collect();
    OperatingPoint {
        load_p_mw: feeder.loads.iter().zip(&k).map(|(l, k)| feeder.pu_to_mw(l.p_nom) * k).collect(),
        load_q_mvar: feeder.loads.iter().zip(&k).map(|(l, k)| feeder.pu_to_mw(l.q_nom) * k).collect(),
        pv_p_mw: feeder.pvs.iter().map(|pv| feeder.pu_to_mw(pv.p_rated) * rng.random_range(0.0..1.0)).collect(),
    }
}

fn dense(w: Array2<f64>, b: Vec<f64>, activation: Activation) -> Layer {
    Layer { weight: w, bias: b.into(), activation }
}

/// Critic on `(s, a)` with `Q = tanh(a − a* + 1) − tanh(a − a* − 1)`, which
/// ignores `s` and peaks exactly at `a = a*`.
pub fn peak_critic(a_star: f64) -> Mlp {
    Mlp::from_layers(vec![
        dense(array![[0.0, 1.0], [0.0, 1.0]], vec![1.0 - a_star, -1.0 - a_star], Activation::Tanh),
        dense(array![[1.0, -1.0]], vec![0.0], Activation::Identity),
    ])
    .unwrap()
}

/// Trains a one-state, one-action actor against [`peak_critic`] and returns
/// its final action.
pub fn actor_toy(a_star: f64, steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critic = peak_critic(a_star);
    let mut actor = Mlp::new(&[1, 8, 1], Activation::Tanh, Activation::Tanh, &mut rng);
    let mut opt = Optimizer::new(UpdateRule::adam(), 1e-2);
    let s = Array2::from_elem((16, 1), 1.0);
    for _ in 0..steps {
        update_actor(&mut actor, &critic, &mut opt, &s).unwrap();
    }
    actor.forward(&[1.0]).unwrap()[0]
}

/// Reward of the synthetic bandit used by the critic regression checks.
pub fn bandit_reward(s: &[f64], a: &[f64]) -> f64 {
    s[0].sin() - (a[0] - 0.5 * s[1]).powi(2) + 0.3 * a[1] * s[2]
}

pub fn bandit_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            Transition {
                r: bandit_reward(&s, &a),
                s_next: vec![0.0; 3],
                terminal: false,
                s,
                a,
            }
        })
        .collect()
}

fn mse(net: &Mlp, data: &[Transition]) -> f64 {
    data.iter()
        .map(|t| {
            let x: Vec<f64> = t.s.iter().chain(&t.a).copied().collect();
            (net.forward(&x).unwrap()[0] - t.r).powi(2)
        })
        .sum::<f64>()
        / data.len() as f64
}

/// Held-out MSE of a critic fitted through the γ = 0 Bellman update and of
/// the same network fitted by plain least squares on `r`, using identical
/// initialization and batch order.
pub fn gamma_zero_vs_regression(steps: usize, seed: u64) -> (f64, f64) {
    let train = bandit_transitions(2000, seed);
    let test = bandit_transitions(500, seed + 1);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let init = Mlp::new(&[5, 32, 16, 1], Activation::Tanh, Activation::Identity, &mut init_rng);
    let dummy_actor = Mlp::new(&[3, 2], Activation::Tanh, Activation::Tanh, &mut init_rng);

    let mut buffer = ReplayBuffer::new(train.len());
    train.iter().cloned().for_each(|t| buffer.push(t));

    let mut critic = init.clone();
    let mut opt = Optimizer::new(UpdateRule::adam(), 3e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    for _ in 0..steps {
        let batch = Batch::from_transitions(&buffer.sample(64, &mut rng)).unwrap();
        let y = critic_target(&batch, &dummy_actor, &critic.clone(), 0.0).unwrap();
        update_critic(&mut critic, &mut opt, &batch, &y).unwrap();
    }

    let mut direct = init;
    let mut opt = Optimizer::new(UpdateRule::adam(), 3e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    for _ in 0..steps {
        let idx = buffer.sample_indices(64, &mut rng);
        let rows: Vec<&Transition> = idx.iter().map(|&i| &train[i]).collect();
        let mut x = Array2::zeros((rows.len(), 5));
        for (i, t) in rows.iter().enumerate() {
            for (j, v) in t.s.iter().chain(&t.a).enumerate() {
                x[(i, j)] = *v;
            }
        }
        let cache = direct.forward_cached(x.view()).unwrap();
        let n = rows.len() as f64;
        let g_out = Array2::from_shape_fn((rows.len(), 1), |(i, _)| 2.0 * (cache.output()[(i, 0)] - rows[i].r) / n);
        let (g, _) = direct.backward(&cache, g_out.view()).unwrap();
        opt.step(&mut direct, &g).unwrap();
    }
    (mse(&critic, &test), mse(&direct, &test))
}

/// Pearson χ² of per-slot hit counts over `draws` batches of `batch` from a
/// full buffer of `capacity`; returns `(statistic, degrees of freedom)`.
pub fn buffer_chi_square(capacity: usize, batch: usize, draws: usize, seed: u64) -> (f64, usize) {
    let mut buffer = ReplayBuffer::new(capacity);
    for k in 0..capacity * 3 {
        buffer.push(Transition { s: vec![k as f64], a: vec![0.0], r: 0.0, s_next: vec![0.0], terminal: false });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; capacity];
    for _ in 0..draws {
        for i in buffer.sample_indices(batch, &mut rng) {
            counts[i] += 1;
        }
    }
    let expected = (draws * batch) as f64 / capacity as f64;
    let chi2 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    (chi2, capacity - 1)
}

/// Sample standard deviation of exploration noise around a zero actor.
pub fn exploration_std(sigma: f64, n: usize, seed: u64) -> f64 {
    let actor = Mlp::from_layers(vec![dense(Array2::zeros((1, 2)), vec![0.0], Activation::Tanh)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| select_action(&actor, &[0.3, -0.4], sigma, &mut rng).unwrap().u[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Configuration small enough to run the whole pipeline in seconds.
pub fn tiny_config(out: &Path) -> RunConfig {
    let desk = RunConfig::desk();
    RunConfig {
        out_dir: out.to_path_buf(),
        profiles: ProfileSource::Synthetic(SyntheticConfig {
            days: 40,
            ..SyntheticConfig::default()
        }),
        n_test_days: 4,
        dataset: DatasetConfig { n_samples: 300, n_train: 240 },
        surrogate: SurrogateConfig {
            hidden: vec![16, 16],
            epochs: 5,
            ..desk.surrogate
        },
        agent: AgentConfig {
            episodes: 6,
            batch: 16,
            buffer_capacity: 64,
            hidden: vec![16, 8],
            ..desk.agent
        },
        ..desk
    }
}

/// Injection from [`random_point`] at hour 13 with a uniform random action.
pub fn random_injection<R: Rng>(feeder: &Feeder, rng: &mut R) -> voltreg::powerflow::Injection {
    use voltreg::env::{denormalize_action, injection, Action, State};
    let s = State::from_point(feeder, &random_point(feeder, rng), 13);
    let a = Action::new((0..feeder.n_devices()).map(|_| rng.random_range(-1.0..1.0)).collect());
    injection(feeder, &s, &denormalize_action(&a, &s, feeder).unwrap())
}
