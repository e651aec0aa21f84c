//! Voltage-regulation MDP.
//!
//! State: per-node-phase load P, PV P and load Q built from the exogenous
//! profile. Action: one value in `[−1, 1]` per controllable device, PVs first
//! (feeder order) then SVCs. Reward: negative total voltage deviation minus a
//! fixed penalty per node-phase outside the voltage band. Voltages come from a
//! [`VoltageModel`]: either the trained surrogate or the true power flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Feeder, NodePhaseVector, SLACK_PHASES};
use crate::powerflow::{self, Injection, PowerFlow, V_MAX, V_MIN};
use crate::profiles::{DayProfile, OperatingPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub p_load: NodePhaseVector,
    pub p_pv: NodePhaseVector,
    pub q_load: NodePhaseVector,
    /// Per-device PV output (per-unit), feeder order; needed for the
    /// inverter headroom of each unit.
    pub pv_output: Vec<f64>,
    pub hour: usize,
}

impl State {
    /// Aggregates a physical operating point onto node-phases in per-unit.
    pub fn from_point(feeder: &Feeder, pt: &OperatingPoint, hour: usize) -> Self {
        let n = feeder.n_node_phases();
        let mut p_load = NodePhaseVector::zeros(n);
        let mut q_load = NodePhaseVector::zeros(n);
        let mut p_pv = NodePhaseVector::zeros(n);
        for (k, load) in feeder.loads.iter().enumerate() {
            let i = feeder.node_phase(load.bus, load.phase).expect("validated feeder");
            p_load[i] += feeder.mw_to_pu(pt.load_p_mw[k]);
            q_load[i] += feeder.mw_to_pu(pt.load_q_mvar[k]);
        }
        let mut pv_output = Vec::with_capacity(feeder.pvs.len());
        for (g, pv) in feeder.pvs.iter().enumerate() {
            let i = feeder.node_phase(pv.bus, pv.phase).expect("validated feeder");
            let p = feeder.mw_to_pu(pt.pv_p_mw[g]);
            p_pv[i] += p;
            pv_output.push(p);
        }
        State {
            p_load,
            p_pv,
            q_load,
            pv_output,
            hour,
        }
    }

    /// Observation vector: `[p_load, p_pv, q_load]` over free node-phases.
    pub fn flatten(&self) -> Vec<f64> {
        let free = |v: &NodePhaseVector| v.values[SLACK_PHASES..].to_vec();
        let mut out = free(&self.p_load);
        out.extend(free(&self.p_pv));
        out.extend(free(&self.q_load));
        out
    }

    pub fn flat_dim(feeder: &Feeder) -> usize {
        3 * feeder.n_free()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub u: Vec<f64>,
}

impl Action {
    pub fn new(u: Vec<f64>) -> Self {
        Action { u }
    }

    /// The action that leaves every device at zero reactive output.
    pub fn no_control(feeder: &Feeder) -> Self {
        let mut u = vec![0.0; feeder.pvs.len()];
        u.extend(
            feeder
                .svcs
                .iter()
                .map(|s| if s.q_max > s.q_min { 2.0 * (0.0 - s.q_min) / (s.q_max - s.q_min) - 1.0 } else { 0.0 }),
        );
        Action { u }
    }
}

/// Reactive setpoints per device, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoints {
    pub q_pv: Vec<f64>,
    pub q_svc: Vec<f64>,
}

/// Maps `u ∈ [−1, 1]^m` to device setpoints that respect the SVC box and the
/// inverter capability circle at the state's PV output. Inputs outside the
/// unit box are saturated.
pub fn denormalize_action(a: &Action, s: &State, feeder: &Feeder) -> Result<Setpoints> {
    if a.u.len() != feeder.n_devices() {
        return Err(Error::Dimension {
            context: "action",
            expected: feeder.n_devices(),
            got: a.u.len(),
        });
    }
    let n_pv = feeder.pvs.len();
    let q_pv = feeder
        .pvs
        .iter()
        .enumerate()
        .map(|(g, pv)| {
            let p = s.pv_output[g];
            let headroom = (pv.s_rated * pv.s_rated - p * p).max(0.0).sqrt();
            a.u[g].clamp(-1.0, 1.0) * headroom
        })
        .collect();
    let q_svc = feeder
        .svcs
        .iter()
        .enumerate()
        .map(|(k, svc)| {
            let u = a.u[n_pv + k].clamp(-1.0, 1.0);
            (svc.q_min + (u + 1.0) / 2.0 * (svc.q_max - svc.q_min)).clamp(svc.q_min, svc.q_max)
        })
        .collect();
    Ok(Setpoints { q_pv, q_svc })
}

/// Net node-phase injections for a state and device setpoints.
pub fn injection(feeder: &Feeder, s: &State, sp: &Setpoints) -> Injection {
    let n = feeder.n_node_phases();
    let mut inj = Injection::zeros(n);
    for i in 0..n {
        inj.p[i] = s.p_pv[i] - s.p_load[i];
        inj.q[i] = -s.q_load[i];
    }
    for (g, pv) in feeder.pvs.iter().enumerate() {
        inj.q[feeder.node_phase(pv.bus, pv.phase).expect("validated")] += sp.q_pv[g];
    }
    for (k, svc) in feeder.svcs.iter().enumerate() {
        inj.q[feeder.node_phase(svc.bus, svc.phase).expect("validated")] += sp.q_svc[k];
    }
    inj
}

/// Anything that maps injections to node-phase voltage magnitudes.
pub trait VoltageModel {
    /// Returns magnitudes over all node-phases (slack included), or `None`
    /// when the model has no valid answer (e.g. power flow diverged).
    fn magnitudes(&self, inj: &Injection) -> Result<Option<NodePhaseVector>>;

    fn label(&self) -> &'static str;
}

impl VoltageModel for PowerFlow {
    fn magnitudes(&self, inj: &Injection) -> Result<Option<NodePhaseVector>> {
        match self.solve(inj) {
            Ok(sol) if sol.converged => Ok(Some(sol.magnitudes())),
            Ok(_) | Err(Error::VoltageCollapse { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn label(&self) -> &'static str {
        "truemodel"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub v0: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Subtracted once per node-phase outside `[v_min, v_max]`.
    pub penalty_per_violation: f64,
    /// Reward assigned when the voltage model returns no answer.
    pub failure_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            v0: 1.0,
            v_min: V_MIN,
            v_max: V_MAX,
            penalty_per_violation: 0.5,
            failure_reward: -50.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v0 && self.v0 < self.v_max) {
            return Err(Error::Config(format!(
                "need v_min < v0 < v_max, got {} / {} / {}",
                self.v_min, self.v0, self.v_max
            )));
        }
        if !(self.penalty_per_violation >= 0.0) {
            return Err(Error::Config("penalty_per_violation must be non-negative".into()));
        }
        Ok(())
    }

    /// `−Σ|V − v0| − penalty · #violations` over free node-phases.
    pub fn reward(&self, mags: &[f64]) -> (f64, usize) {
        let dev = powerflow::magnitude_deviation(mags, self.v0);
        let violations = powerflow::magnitude_violations(mags, self.v_min, self.v_max).len();
        (-dev - self.penalty_per_violation * violations as f64, violations)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// `None` when the voltage model failed (reward is then `failure_reward`).
    pub v_mag: Option<NodePhaseVector>,
    pub violations: usize,
}

impl StepOutcome {
    pub fn failed(&self) -> bool {
        self.v_mag.is_none()
    }
}

/// One stored experience; `s`/`s_next` are observation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.s.iter().chain(&self.a).chain(&self.s_next).all(|x| x.is_finite())
    }
}

/// The MDP bound to one feeder and one voltage model.
pub struct VrEnv<'a, M: VoltageModel + ?Sized> {
    pub feeder: &'a Feeder,
    pub model: &'a M,
    pub reward: RewardConfig,
}

impl<'a, M: VoltageModel + ?Sized> VrEnv<'a, M> {
    pub fn new(feeder: &'a Feeder, model: &'a M, reward: RewardConfig) -> Result<Self> {
        reward.validate()?;
        Ok(VrEnv { feeder, model, reward })
    }

    pub fn step(&self, s: &State, a: &Action) -> Result<StepOutcome> {
        let sp = denormalize_action(a, s, self.feeder)?;
        let inj = injection(self.feeder, s, &sp);
        match self.model.magnitudes(&inj)? {
            Some(mags) => {
                let (reward, violations) = self.reward.reward(mags.as_slice());
                Ok(StepOutcome {
                    reward,
                    v_mag: Some(mags),
                    violations,
                })
            }
            None => Ok(StepOutcome {
                reward: self.reward.failure_reward,
                v_mag: None,
                violations: 0,
            }),
        }
    }

    /// States for every step of a day.
    pub fn states(&self, day: &DayProfile) -> Vec<State> {
        day.steps
            .iter()
            .enumerate()
            .map(|(h, pt)| State::from_point(self.feeder, pt, h))
            .collect()
    }

    /// Rolls `policy` through a day. The last transition is terminal and its
    /// successor observation is all zeros.
    pub fn episode<P>(&self, day: &DayProfile, mut policy: P) -> Result<Vec<(Transition, StepOutcome)>>
    where
        P: FnMut(&State) -> Action,
    {
        let states = self.states(day);
        let obs: Vec<Vec<f64>> = states.iter().map(State::flatten).collect();
        let mut out = Vec::with_capacity(states.len());
        for (t, s) in states.iter().enumerate() {
            let a = policy(s);
            let outcome = self.step(s, &a)?;
            let terminal = t + 1 == states.len();
            let s_next = if terminal { vec![0.0; obs[t].len()] } else { obs[t + 1].clone() };
            out.push((
                Transition {
                    s: obs[t].clone(),
                    a: a.u,
                    r: outcome.reward,
                    s_next,
                    terminal,
                },
                outcome,
            ));
        }
        Ok(out)
    }
}
