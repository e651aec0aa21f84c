//! Deep deterministic policy gradient for the voltage-regulation MDP.
//!
//! The actor maps a standardized observation to one action per device in
//! `[−1, 1]`; the critic scores `(observation, action)` pairs. Exploration adds
//! Gaussian noise whose scale decays geometrically once the replay buffer has
//! filled. Evaluation always rolls the greedy policy on the true power flow.

use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, RewardConfig, State, Transition, VoltageModel, VrEnv};
use crate::error::{Error, Result};
use crate::grid::{Feeder, PhaseId, SLACK_PHASES};
use crate::nn::{self, Activation, Mlp, MlpRecord, Optimizer, UpdateRule};
use crate::powerflow::PowerFlow;
use crate::profiles::DayProfile;
use crate::surrogate::Standardizer;

pub const AGENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub tau: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub sigma0: f64,
    /// Noise scale multiplier applied after every update once the buffer is full.
    pub xi: f64,
    pub episodes: usize,
    /// Hidden widths shared by actor and critic.
    pub hidden: Vec<usize>,
    pub update_rule: UpdateRule,
    /// Multiplier applied to both learning rates after every episode.
    #[serde(default = "unit")]
    pub lr_decay: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.0,
            lr_actor: 1e-3,
            lr_critic: 2e-3,
            tau: 0.005,
            batch: 256,
            buffer_capacity: 100_000,
            sigma0: 0.2,
            xi: 0.9995,
            episodes: 5000,
            hidden: vec![400, 200],
            update_rule: UpdateRule::Sgd,
            lr_decay: 1.0,
        }
    }
}

impl AgentConfig {
    /// Reduced setting that trains in a few minutes on one core.
    pub fn desk() -> Self {
        AgentConfig {
            batch: 64,
            buffer_capacity: 10_000,
            xi: 0.99995,
            episodes: 3000,
            hidden: vec![64, 32],
            update_rule: UpdateRule::adam(),
            lr_decay: 0.999,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent config: {m}")));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if self.batch == 0 || self.batch > self.buffer_capacity {
            return bad("batch must be positive and no larger than the buffer");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.sigma0 >= 0.0) || !(self.xi > 0.0 && self.xi <= 1.0) {
            return bad("sigma0 must be non-negative and xi in (0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    /// Appends, overwriting the oldest item once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.is_full() { self.cursor } else { 0 };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Indices of a batch drawn uniformly without replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(n <= self.len(), "batch of {n} from {} items", self.len());
        index::sample(rng, self.len(), n).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Clipped Gaussian exploration around the actor output.
pub fn select_action<R: Rng + ?Sized>(actor: &Mlp, obs: &[f64], sigma: f64, rng: &mut R) -> Result<Action> {
    let mut u = actor.forward(obs)?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        for x in &mut u {
            *x += noise.sample(rng);
        }
    }
    for x in &mut u {
        *x = x.clamp(-1.0, 1.0);
    }
    Ok(Action::new(u))
}

/// Batched states, actions, rewards, next states and terminal flags.
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Vec<f64>,
    pub s_next: Array2<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let first = ts.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let (ds, da) = (first.s.len(), first.a.len());
        let mut s = Array2::zeros((ts.len(), ds));
        let mut a = Array2::zeros((ts.len(), da));
        let mut s_next = Array2::zeros((ts.len(), ds));
        for (i, t) in ts.iter().enumerate() {
            if t.s.len() != ds || t.a.len() != da || t.s_next.len() != ds {
                return Err(Error::Dimension {
                    context: "transition batch",
                    expected: ds + da,
                    got: t.s.len() + t.a.len(),
                });
            }
            s.row_mut(i).iter_mut().zip(&t.s).for_each(|(d, x)| *d = *x);
            a.row_mut(i).iter_mut().zip(&t.a).for_each(|(d, x)| *d = *x);
            s_next.row_mut(i).iter_mut().zip(&t.s_next).for_each(|(d, x)| *d = *x);
        }
        Ok(Batch {
            s,
            a,
            r: ts.iter().map(|t| t.r).collect(),
            s_next,
            terminal: ts.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

fn concat(s: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[s.view(), a.view()]).expect("row counts agree")
}

/// Bellman targets `r + γ·Q′(s′, μ′(s′))`, bootstrap dropped at terminals.
pub fn critic_target(batch: &Batch, target_actor: &Mlp, target_critic: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if gamma == 0.0 {
        return Ok(batch.r.clone());
    }
    let a_next = target_actor.forward_batch(batch.s_next.view())?;
    let q_next = target_critic.forward_batch(concat(&batch.s_next, &a_next).view())?;
    Ok(batch
        .r
        .iter()
        .zip(q_next.column(0))
        .zip(&batch.terminal)
        .map(|((r, q), &term)| if term { *r } else { r + gamma * q })
        .collect())
}

/// One descent step on the batch-mean squared Bellman error; returns the
/// loss before the step.
pub fn update_critic(critic: &mut Mlp, opt: &mut Optimizer, batch: &Batch, y: &[f64]) -> Result<f64> {
    if y.len() != batch.len() {
        return Err(Error::Dimension {
            context: "critic targets",
            expected: batch.len(),
            got: y.len(),
        });
    }
    let cache = critic.forward_cached(concat(&batch.s, &batch.a).view())?;
    let n = batch.len() as f64;
    let diff: Vec<f64> = cache.output().column(0).iter().zip(y).map(|(q, y)| q - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    let grad_out = Array2::from_shape_vec((diff.len(), 1), diff.iter().map(|d| 2.0 * d / n).collect())
        .expect("column shape");
    let (g, _) = critic.backward(&cache, grad_out.view())?;
    opt.step(critic, &g)?;
    Ok(loss)
}

/// Deterministic policy-gradient ascent step. Returns the norm of the actor
/// parameter gradient.
pub fn update_actor(actor: &mut Mlp, critic: &Mlp, opt: &mut Optimizer, states: &Array2<f64>) -> Result<f64> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let actor_cache = actor.forward_cached(states.view())?;
    let a = actor_cache.output().clone();
    let critic_cache = critic.forward_cached(concat(states, &a).view())?;
    // minimize −mean Q
    let grad_q = Array2::from_elem((n, 1), -1.0 / n as f64);
    let (_, grad_in) = critic.backward(&critic_cache, grad_q.view())?;
    let grad_a = grad_in.slice(s![.., states.ncols()..]).to_owned();
    let (g, _) = actor.backward(&actor_cache, grad_a.view())?;
    let norm = g.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    opt.step(actor, &g)?;
    Ok(norm)
}

/// Actor, critic, their targets and the observation scaling.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub scaler: Standardizer,
    pub cfg: AgentConfig,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
}

impl Agent {
    pub fn new(obs_dim: usize, n_actions: usize, scaler: Standardizer, cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if scaler.dim() != obs_dim {
            return Err(Error::Dimension {
                context: "observation scaler",
                expected: obs_dim,
                got: scaler.dim(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(n_actions);
        let mut critic_sizes = vec![obs_dim + n_actions];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, Activation::Tanh, &mut rng);
        let critic = Mlp::new(&critic_sizes, Activation::Tanh, Activation::Identity, &mut rng);
        Ok(Agent {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: Optimizer::new(cfg.update_rule, cfg.lr_actor),
            critic_opt: Optimizer::new(cfg.update_rule, cfg.lr_critic),
            actor,
            critic,
            scaler,
            cfg,
        })
    }

    pub fn observe(&self, s: &State) -> Vec<f64> {
        self.scaler.normalize(&s.flatten())
    }

    /// Greedy action.
    pub fn act(&self, s: &State) -> Result<Action> {
        let mut u = self.actor.forward(&self.observe(s))?;
        u.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
        Ok(Action::new(u))
    }

    /// Critic and actor step on one batch plus target tracking. Returns the
    /// critic loss.
    pub fn update(&mut self, batch: &Batch) -> Result<f64> {
        let y = critic_target(batch, &self.target_actor, &self.target_critic, self.cfg.gamma)?;
        let loss = update_critic(&mut self.critic, &mut self.critic_opt, batch, &y)?;
        update_actor(&mut self.actor, &self.critic, &mut self.actor_opt, &batch.s)?;
        self.target_critic.soft_update(&self.critic, self.cfg.tau)?;
        self.target_actor.soft_update(&self.actor, self.cfg.tau)?;
        Ok(loss)
    }

    pub fn save(&self, path: impl AsRef<Path>, backend: &str, episodes_run: usize) -> Result<()> {
        nn::write_checkpoint(path, &AgentCheckpoint {
            format_version: AGENT_FORMAT_VERSION,
            kind: "ddpg-agent".into(),
            backend: backend.into(),
            episodes_run,
            config: self.cfg.clone(),
            scaler: self.scaler.clone(),
            actor: self.actor.to_record(),
            critic: self.critic.to_record(),
        })
    }

    /// Loads an agent and the backend label it was trained on. Target
    /// networks restart as copies of the online ones.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let ck: AgentCheckpoint = nn::read_checkpoint(path)?;
        if ck.format_version != AGENT_FORMAT_VERSION || ck.kind != "ddpg-agent" {
            return Err(Error::Checkpoint(format!(
                "not an agent checkpoint of version {AGENT_FORMAT_VERSION} (kind {}, version {})",
                ck.kind, ck.format_version
            )));
        }
        let actor = Mlp::from_record(&ck.actor)?;
        let critic = Mlp::from_record(&ck.critic)?;
        if actor.in_dim() != ck.scaler.dim() || critic.in_dim() != actor.in_dim() + actor.out_dim() {
            return Err(Error::Checkpoint("agent network dimensions disagree".into()));
        }
        Ok((
            Agent {
                target_actor: actor.clone(),
                target_critic: critic.clone(),
                actor_opt: Optimizer::new(ck.config.update_rule, ck.config.lr_actor),
                critic_opt: Optimizer::new(ck.config.update_rule, ck.config.lr_critic),
                actor,
                critic,
                scaler: ck.scaler,
                cfg: ck.config,
            },
            ck.backend,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentCheckpoint {
    format_version: u32,
    kind: String,
    backend: String,
    episodes_run: usize,
    config: AgentConfig,
    scaler: Standardizer,
    actor: MlpRecord,
    critic: MlpRecord,
}

/// Observation scaling fitted on the exogenous states of `days`.
pub fn fit_observation_scaler(feeder: &Feeder, days: &[&DayProfile]) -> Standardizer {
    let obs: Vec<Vec<f64>> = days
        .iter()
        .flat_map(|d| d.steps.iter().enumerate().map(|(h, pt)| State::from_point(feeder, pt, h).flatten()))
        .collect();
    Standardizer::fit(obs.iter().map(Vec::as_slice))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Undiscounted return of every episode.
    pub returns: Vec<f64>,
    /// Steps where the voltage model produced no solution.
    pub failed_steps: usize,
    pub updates: usize,
    pub final_sigma: f64,
}

impl TrainLog {
    /// Trailing mean over up to `window` episodes.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        moving_average(&self.returns, window)
    }
}

pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i];
        if i >= w {
            acc -= x[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Runs `agent.cfg.episodes` episodes, each one uniformly drawn training day.
pub fn train<M: VoltageModel + ?Sized>(
    agent: &mut Agent,
    env: &VrEnv<'_, M>,
    days: &[&DayProfile],
    seed: u64,
) -> Result<TrainLog> {
    train_with(agent, env, days, seed, |_, _| {})
}

/// [`train`] with a callback `(episode, return)`.
pub fn train_with<M: VoltageModel + ?Sized>(
    agent: &mut Agent,
    env: &VrEnv<'_, M>,
    days: &[&DayProfile],
    seed: u64,
    mut on_episode: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    if days.is_empty() {
        return Err(Error::Config("no training days".into()));
    }
    let cfg = agent.cfg.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut sigma = cfg.sigma0;
    let mut log = TrainLog {
        returns: Vec::with_capacity(cfg.episodes),
        failed_steps: 0,
        updates: 0,
        final_sigma: sigma,
    };
    let states: Vec<Vec<State>> = days.iter().map(|d| env.states(d)).collect();
    let obs: Vec<Vec<Vec<f64>>> = states
        .iter()
        .map(|day| day.iter().map(|s| agent.observe(s)).collect())
        .collect();

    for episode in 0..cfg.episodes {
        let d = rng.random_range(0..days.len());
        let mut ret = 0.0;
        for (t, s) in states[d].iter().enumerate() {
            let o = &obs[d][t];
            let a = select_action(&agent.actor, o, sigma, &mut rng)?;
            let out = env.step(s, &a)?;
            if out.failed() {
                log.failed_steps += 1;
            }
            ret += out.reward;
            let terminal = t + 1 == states[d].len();
            buffer.push(Transition {
                s: o.clone(),
                a: a.u,
                r: out.reward,
                s_next: if terminal { vec![0.0; o.len()] } else { obs[d][t + 1].clone() },
                terminal,
            });
            if buffer.len() >= cfg.batch {
                let batch = Batch::from_transitions(&buffer.sample(cfg.batch, &mut rng))?;
                agent.update(&batch).map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at episode {episode}, step {t}")),
                    other => other,
                })?;
                log.updates += 1;
                if buffer.is_full() {
                    sigma *= cfg.xi;
                }
            }
        }
        if !agent.actor.is_finite() || !agent.critic.is_finite() {
            return Err(Error::NonFinite(format!("network parameters after episode {episode}")));
        }
        agent.actor_opt.lr *= cfg.lr_decay;
        agent.critic_opt.lr *= cfg.lr_decay;
        on_episode(episode, ret);
        log.returns.push(ret);
    }
    log.final_sigma = sigma;
    Ok(log)
}

/// Per-day summary inside an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub day: usize,
    pub avg_deviation_pct: f64,
    pub violations: usize,
}

/// Voltage quality of one method over a set of days, percentages of `v0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub avg_deviation_pct: f64,
    /// Phases a, b, c.
    pub phase_avg_deviation_pct: [f64; 3],
    pub max_drop_pct: f64,
    pub max_rise_pct: f64,
    pub violations: usize,
    /// Steps where the power flow failed; excluded from the voltage metrics.
    pub failed_steps: usize,
    pub days: Vec<DayStats>,
}

/// One evaluated step: magnitudes over all node-phases.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub day: usize,
    pub step: usize,
    pub action: Vec<f64>,
    pub v_mag: Option<Vec<f64>>,
}

impl EvalReport {
    /// Aggregates a trace. Everything in the report is derived from it.
    pub fn from_trace(method: &str, feeder: &Feeder, reward: &RewardConfig, trace: &[StepRecord]) -> Self {
        let v0 = reward.v0;
        let n_free = feeder.n_free();
        let phase_of: Vec<PhaseId> = (SLACK_PHASES..feeder.n_node_phases())
            .map(|i| feeder.index().entry(i).1)
            .collect();
        let mut phase_sum = [0.0; 3];
        let mut phase_cnt = [0usize; 3];
        let (mut total, mut count) = (0.0, 0usize);
        let (mut max_drop, mut max_rise) = (0.0_f64, 0.0_f64);
        let (mut violations, mut failed) = (0, 0);
        let mut days: Vec<DayStats> = Vec::new();
        let mut day_acc: Vec<(f64, usize)> = Vec::new();
        for rec in trace {
            let slot = match days.iter().position(|d| d.day == rec.day) {
                Some(k) => k,
                None => {
                    days.push(DayStats {
                        day: rec.day,
                        avg_deviation_pct: 0.0,
                        violations: 0,
                    });
                    day_acc.push((0.0, 0));
                    days.len() - 1
                }
            };
            let Some(m) = &rec.v_mag else {
                failed += 1;
                continue;
            };
            for (k, &v) in m[SLACK_PHASES..].iter().enumerate() {
                let dev = 100.0 * (v - v0).abs() / v0;
                total += dev;
                count += 1;
                let p = phase_of[k].index();
                phase_sum[p] += dev;
                phase_cnt[p] += 1;
                day_acc[slot].0 += dev;
                day_acc[slot].1 += 1;
                max_drop = max_drop.max(100.0 * (v0 - v) / v0);
                max_rise = max_rise.max(100.0 * (v - v0) / v0);
                if v < reward.v_min || v > reward.v_max {
                    violations += 1;
                    days[slot].violations += 1;
                }
            }
            debug_assert_eq!(m.len() - SLACK_PHASES, n_free);
        }
        for (d, (s, c)) in days.iter_mut().zip(day_acc) {
            d.avg_deviation_pct = if c > 0 { s / c as f64 } else { 0.0 };
        }
        let ratio = |s: f64, c: usize| if c > 0 { s / c as f64 } else { 0.0 };
        EvalReport {
            method: method.into(),
            avg_deviation_pct: ratio(total, count),
            phase_avg_deviation_pct: [
                ratio(phase_sum[0], phase_cnt[0]),
                ratio(phase_sum[1], phase_cnt[1]),
                ratio(phase_sum[2], phase_cnt[2]),
            ],
            max_drop_pct: max_drop,
            max_rise_pct: max_rise,
            violations,
            failed_steps: failed,
            days,
        }
    }
}

/// Rolls `policy` over `days` on the true power flow, days in parallel.
pub fn rollout<P>(feeder: &Feeder, pf: &PowerFlow, reward: &RewardConfig, days: &[&DayProfile], policy: P) -> Result<Vec<StepRecord>>
where
    P: Fn(&State) -> Result<Action> + Sync,
{
    let env = VrEnv::new(feeder, pf, reward.clone())?;
    let per_day: Vec<Result<Vec<StepRecord>>> = days
        .par_iter()
        .map(|day| {
            env.states(day)
                .iter()
                .enumerate()
                .map(|(t, s)| {
                    let a = policy(s)?;
                    let out = env.step(s, &a)?;
                    Ok(StepRecord {
                        day: day.day,
                        step: t,
                        action: a.u,
                        v_mag: out.v_mag.map(|m| m.values),
                    })
                })
                .collect()
        })
        .collect();
    let mut trace = Vec::new();
    for d in per_day {
        trace.extend(d?);
    }
    Ok(trace)
}

/// Greedy evaluation of `agent` on the true model.
pub fn evaluate(
    method: &str,
    agent: &Agent,
    feeder: &Feeder,
    pf: &PowerFlow,
    reward: &RewardConfig,
    days: &[&DayProfile],
) -> Result<(EvalReport, Vec<StepRecord>)> {
    let trace = rollout(feeder, pf, reward, days, |s| agent.act(s))?;
    Ok((EvalReport::from_trace(method, feeder, reward, &trace), trace))
}

/// Evaluation with every reactive setpoint at zero.
pub fn evaluate_no_control(
    feeder: &Feeder,
    pf: &PowerFlow,
    reward: &RewardConfig,
    days: &[&DayProfile],
) -> Result<(EvalReport, Vec<StepRecord>)> {
    let trace = rollout(feeder, pf, reward, days, |_| Ok(Action::no_control(feeder)))?;
    Ok((EvalReport::from_trace("no-control", feeder, reward, &trace), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn transition(k: usize) -> Transition {
        Transition {
            s: vec![k as f64],
            a: vec![0.0],
            r: k as f64,
            s_next: vec![0.0],
            terminal: false,
        }
    }

    #[test]
    fn buffer_overwrites_oldest() {
        let mut b = ReplayBuffer::new(5);
        for k in 0..8 {
            b.push(transition(k));
        }
        assert_eq!(b.len(), 5);
        let order: Vec<f64> = b.iter().map(|t| t.r).collect();
        assert_eq!(order, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn batch_has_no_repeats() {
        let mut b = ReplayBuffer::new(50);
        for k in 0..50 {
            b.push(transition(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut idx = b.sample_indices(50, &mut rng);
            idx.sort();
            assert_eq!(idx, (0..50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_sigma_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Tanh, &mut rng);
        let x = [0.3, -0.2, 0.9];
        let a = select_action(&actor, &x, 0.0, &mut rng).unwrap();
        assert_eq!(a.u, actor.forward(&x).unwrap());
        for _ in 0..100 {
            let a = select_action(&actor, &x, 10.0, &mut rng).unwrap();
            assert!(a.u.iter().all(|u| (-1.0..=1.0).contains(u)));
        }
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = Mlp::new(&[2, 4, 1], Activation::Tanh, Activation::Tanh, &mut rng);
        let critic = Mlp::new(&[3, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let ts = [
            Transition { s: vec![0.1, 0.2], a: vec![0.5], r: -1.5, s_next: vec![0.3, 0.1], terminal: false },
            Transition { s: vec![0.0, 0.4], a: vec![-0.5], r: -0.25, s_next: vec![0.0; 2], terminal: true },
        ];
        let batch = Batch::from_transitions(&ts.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(critic_target(&batch, &actor, &critic, 0.0).unwrap(), vec![-1.5, -0.25]);
        let y = critic_target(&batch, &actor, &critic, 0.9).unwrap();
        assert_eq!(y[1], -0.25);
        let a1 = actor.forward(&[0.3, 0.1]).unwrap();
        let q1 = critic.forward(&[0.3, 0.1, a1[0]]).unwrap()[0];
        assert!((y[0] - (-1.5 + 0.9 * q1)).abs() < 1e-15);
    }

    #[test]
    fn critic_at_fixed_point_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut critic = Mlp::new(&[3, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let ts: Vec<Transition> = (0..4)
            .map(|k| Transition { s: vec![k as f64 * 0.1, 0.2], a: vec![0.1], r: 0.0, s_next: vec![0.0; 2], terminal: true })
            .collect();
        let batch = Batch::from_transitions(&ts.iter().collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = critic.forward_batch(concat(&batch.s, &batch.a).view()).unwrap().column(0).to_vec();
        let before = critic.parameters();
        let loss = update_critic(&mut critic, &mut Optimizer::sgd(0.1), &batch, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(critic.parameters(), before);
    }

    #[test]
    fn action_independent_critic_leaves_actor_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut actor = Mlp::new(&[2, 4, 1], Activation::Tanh, Activation::Tanh, &mut rng);
        let mut critic = Mlp::new(&[3, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);
        // zero the first-layer weights that read the action column
        let mut layers = critic.layers().to_vec();
        layers[0].weight.column_mut(2).fill(0.0);
        critic = Mlp::from_layers(layers).unwrap();
        let before = actor.parameters();
        let states = array![[0.1, 0.2], [0.5, -0.3]];
        let norm = update_actor(&mut actor, &critic, &mut Optimizer::sgd(0.5), &states).unwrap();
        assert_eq!(norm, 0.0);
        assert_eq!(actor.parameters(), before);
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[], 3), Vec::<f64>::new());
    }

    #[test]
    fn config_validation() {
        AgentConfig::default().validate().unwrap();
        AgentConfig::desk().validate().unwrap();
        let bad = AgentConfig { batch: 10, buffer_capacity: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AgentConfig { tau: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AgentConfig { gamma: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AgentConfig { lr_decay: 1.2, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_from_hand_trace() {
        let f = Feeder::bundled();
        let n = f.n_node_phases();
        let mut m = vec![1.0; n];
        m[SLACK_PHASES] = 1.06;
        m[SLACK_PHASES + 1] = 0.98;
        let trace = vec![
            StepRecord { day: 4, step: 0, action: vec![], v_mag: Some(m) },
            StepRecord { day: 4, step: 1, action: vec![], v_mag: None },
        ];
        let rep = EvalReport::from_trace("x", &f, &RewardConfig::default(), &trace);
        let expected = 100.0 * (0.06 + 0.02) / f.n_free() as f64;
        assert!((rep.avg_deviation_pct - expected).abs() < 1e-12);
        assert!((rep.max_rise_pct - 6.0).abs() < 1e-9);
        assert!((rep.max_drop_pct - 2.0).abs() < 1e-9);
        assert_eq!(rep.violations, 1);
        assert_eq!(rep.failed_steps, 1);
        assert_eq!(rep.days.len(), 1);
        // node-phase 1a and 1b carry the deviations
        assert!(rep.phase_avg_deviation_pct[0] > 0.0 && rep.phase_avg_deviation_pct[2] == 0.0);
    }
}
