//! Three-phase unbalanced power flow by Z-bus fixed-point iteration.
//!
//! With the admittance matrix partitioned into slack (`s`) and free (`n`)
//! node-phases, the free voltages satisfy
//!
//! ```text
//! V_n = w + Z · conj(S_n ⊘ V_n),   Z = Y_nn⁻¹,   w = −Z · Y_ns · V_s
//! ```
//!
//! where `w` is the no-load voltage induced by the slack and `S_n` is the net
//! complex injection. The solver iterates this map from a flat start and stops
//! once the complex power mismatch drops below the tolerance.
//!
//! [`mismatch`] evaluates the active/reactive balance in rectangular
//! coordinates directly from the conductance and susceptance entries; it does
//! not share code with the fixed-point solver and is used to check it.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Feeder, NodePhaseVector, SLACK_PHASES};
use crate::linalg;

/// Default mismatch tolerance, per-unit.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 100;
/// Voltage magnitude below which the iteration is aborted.
pub const COLLAPSE_VOLTAGE: f64 = 0.1;
/// Default lower voltage bound, per-unit.
pub const V_MIN: f64 = 0.95;
/// Default upper voltage bound, per-unit.
pub const V_MAX: f64 = 1.05;

static SOLVE_CALLS: AtomicU64 = AtomicU64::new(0);

/// Process-wide number of [`PowerFlow::solve`] invocations.
pub fn solve_calls() -> u64 {
    SOLVE_CALLS.load(Ordering::SeqCst)
}

/// Net injections over node-phases; slack entries are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    /// Net active power, `P_pv − P_load`.
    pub p: NodePhaseVector,
    /// Net reactive power, `Q_pv + Q_svc − Q_load`.
    pub q: NodePhaseVector,
}

impl Injection {
    pub fn zeros(n: usize) -> Self {
        Injection {
            p: NodePhaseVector::zeros(n),
            q: NodePhaseVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    /// Rectangular node-phase voltages `e + jf`, per-unit, slack included.
    pub v: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max complex power mismatch over free node-phases at the last iterate.
    pub residual: f64,
}

impl VoltageSolution {
    pub fn magnitudes(&self) -> NodePhaseVector {
        NodePhaseVector::from_vec(self.v.iter().map(|z| z.norm()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Precomputed network matrices for repeated solves on one feeder.
#[derive(Debug, Clone)]
pub struct PowerFlow {
    ybus: Array2<Complex64>,
    zbus: Array2<Complex64>,
    slack: [Complex64; 3],
    no_load: Vec<Complex64>,
    flat: Vec<Complex64>,
    pub options: SolverOptions,
}

impl PowerFlow {
    pub fn new(feeder: &Feeder) -> Result<Self> {
        let ybus = feeder.build_ybus();
        let zbus = feeder.build_zbus()?;
        let slack = feeder.slack_voltages();
        let y_ns = ybus.slice(s![SLACK_PHASES.., ..SLACK_PHASES]).to_owned();
        let rhs: Vec<Complex64> = linalg::matvec(&y_ns, &slack).into_iter().map(|z| -z).collect();
        let no_load = linalg::matvec(&zbus, &rhs);
        Ok(PowerFlow {
            ybus,
            zbus,
            slack,
            no_load,
            flat: feeder.flat_voltages(),
            options: SolverOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn ybus(&self) -> &Array2<Complex64> {
        &self.ybus
    }

    pub fn zbus(&self) -> &Array2<Complex64> {
        &self.zbus
    }

    pub fn n_node_phases(&self) -> usize {
        self.ybus.nrows()
    }

    /// Solves with the configured options.
    pub fn solve(&self, inj: &Injection) -> Result<VoltageSolution> {
        self.solve_with(inj, self.options)
    }

    pub fn solve_with(&self, inj: &Injection, opts: SolverOptions) -> Result<VoltageSolution> {
        SOLVE_CALLS.fetch_add(1, Ordering::SeqCst);
        let n = self.n_node_phases();
        if inj.p.len() != n || inj.q.len() != n {
            return Err(Error::Dimension {
                context: "power-flow injection",
                expected: n,
                got: inj.p.len().min(inj.q.len()),
            });
        }
        if !(opts.tol > 0.0) {
            return Err(Error::Config(format!("solver tolerance must be positive, got {}", opts.tol)));
        }
        let s_spec: Vec<Complex64> = (SLACK_PHASES..n)
            .map(|i| Complex64::new(inj.p[i], inj.q[i]))
            .collect();

        let mut v = self.flat.clone();
        v[..SLACK_PHASES].copy_from_slice(&self.slack);
        let mut current = vec![Complex64::new(0.0, 0.0); n - SLACK_PHASES];
        let mut residual = f64::INFINITY;
        for iteration in 1..=opts.max_iter {
            for (k, cur) in current.iter_mut().enumerate() {
                *cur = (s_spec[k] / v[SLACK_PHASES + k]).conj();
            }
            let update = linalg::matvec(&self.zbus, &current);
            for (k, dv) in update.into_iter().enumerate() {
                let vk = self.no_load[k] + dv;
                if vk.norm() < COLLAPSE_VOLTAGE {
                    return Err(Error::VoltageCollapse {
                        index: SLACK_PHASES + k,
                        magnitude: vk.norm(),
                        iteration,
                    });
                }
                v[SLACK_PHASES + k] = vk;
            }
            residual = self.power_residual(&v, &s_spec);
            if residual < opts.tol {
                return Ok(VoltageSolution {
                    v,
                    converged: true,
                    iterations: iteration,
                    residual,
                });
            }
        }
        Ok(VoltageSolution {
            v,
            converged: false,
            iterations: opts.max_iter,
            residual,
        })
    }

    fn power_residual(&self, v: &[Complex64], s_spec: &[Complex64]) -> f64 {
        let n = v.len();
        let mut worst = 0.0_f64;
        for i in SLACK_PHASES..n {
            let row = self.ybus.row(i);
            let mut cur = Complex64::new(0.0, 0.0);
            for (yij, vj) in row.iter().zip(v) {
                cur += yij * vj;
            }
            let s_calc = v[i] * cur.conj();
            worst = worst.max((s_spec[i - SLACK_PHASES] - s_calc).norm());
        }
        worst
    }
}

/// One-shot solve; builds the network matrices for `feeder` first.
pub fn solve(feeder: &Feeder, inj: &Injection, tol: f64, max_iter: usize) -> Result<VoltageSolution> {
    PowerFlow::new(feeder)?.solve_with(inj, SolverOptions { tol, max_iter })
}

/// Active and reactive balance residuals at every node-phase, evaluated term
/// by term in rectangular coordinates:
///
/// ```text
/// ΔP_i = P_i − e_i Σ_j (G_ij e_j − B_ij f_j) − f_i Σ_j (G_ij f_j + B_ij e_j)
/// ΔQ_i = Q_i − f_i Σ_j (G_ij e_j − B_ij f_j) + e_i Σ_j (G_ij f_j + B_ij e_j)
/// ```
///
/// Slack entries are reported as zero.
pub fn mismatch(feeder: &Feeder, v: &[Complex64], inj: &Injection) -> (NodePhaseVector, NodePhaseVector) {
    mismatch_with_ybus(&feeder.build_ybus(), v, inj)
}

pub fn mismatch_with_ybus(
    ybus: &Array2<Complex64>,
    v: &[Complex64],
    inj: &Injection,
) -> (NodePhaseVector, NodePhaseVector) {
    let n = v.len();
    assert_eq!(ybus.nrows(), n, "voltage vector does not match the admittance matrix");
    assert_eq!(inj.len(), n, "injection does not match the admittance matrix");
    let mut dp = NodePhaseVector::zeros(n);
    let mut dq = NodePhaseVector::zeros(n);
    for i in SLACK_PHASES..n {
        let (ei, fi) = (v[i].re, v[i].im);
        let mut a = CompensatedSum::default();
        let mut b = CompensatedSum::default();
        for j in 0..n {
            let g = ybus[[i, j]].re;
            let bb = ybus[[i, j]].im;
            let (ej, fj) = (v[j].re, v[j].im);
            a.add(g * ej);
            a.add(-bb * fj);
            b.add(g * fj);
            b.add(bb * ej);
        }
        let (a, b) = (a.value(), b.value());
        dp[i] = inj.p[i] - ei * a - fi * b;
        dq[i] = inj.q[i] - fi * a + ei * b;
    }
    (dp, dq)
}

/// Neumaier summation; the balance sums cancel large admittance terms.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Max-norm of both mismatch vectors.
pub fn mismatch_norm(dp: &NodePhaseVector, dq: &NodePhaseVector) -> f64 {
    dp.iter().chain(dq.iter()).fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Total absolute magnitude deviation from `v0` over free node-phases.
pub fn deviation_objective(v: &[Complex64], v0: f64) -> f64 {
    v.iter()
        .skip(SLACK_PHASES)
        .map(|z| (z.re.hypot(z.im) - v0).abs())
        .sum()
}

/// Same as [`deviation_objective`] for magnitudes already computed.
pub fn magnitude_deviation(mags: &[f64], v0: f64) -> f64 {
    mags.iter().skip(SLACK_PHASES).map(|m| (m - v0).abs()).sum()
}

/// Free node-phases whose magnitude lies outside the closed band `[v_min, v_max]`.
pub fn bound_violations(v: &[Complex64], v_min: f64, v_max: f64) -> Vec<(usize, f64)> {
    let mags: Vec<f64> = v.iter().map(|z| z.norm()).collect();
    magnitude_violations(&mags, v_min, v_max)
}

pub fn magnitude_violations(mags: &[f64], v_min: f64, v_max: f64) -> Vec<(usize, f64)> {
    assert!(v_min < v_max, "v_min must be below v_max");
    mags.iter()
        .enumerate()
        .skip(SLACK_PHASES)
        .filter(|(_, &m)| m < v_min || m > v_max)
        .map(|(i, &m)| (i, m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{zero_block, Bus, Line, PhaseId, PhaseSet};

    /// Slack plus one phase-a bus behind series impedance `z`.
    pub(crate) fn two_bus(z: Complex64) -> Feeder {
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

    /// Receiving-end magnitude of a radial two-bus line with a PQ load,
    /// from the biquadratic |V2|⁴ + (2(RP+XQ) − |V1|²)|V2|² + |z|²|S|² = 0.
    fn two_bus_closed_form(z: Complex64, p_load: f64, q_load: f64, v1: f64) -> f64 {
        let b = 2.0 * (z.re * p_load + z.im * q_load) - v1 * v1;
        let c = z.norm_sqr() * (p_load * p_load + q_load * q_load);
        ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
    }

    fn load_at_bus1(f: &Feeder, p: f64, q: f64) -> Injection {
        let mut inj = Injection::zeros(f.n_node_phases());
        let i = f.node_phase(1, PhaseId::A).unwrap();
        inj.p[i] = -p;
        inj.q[i] = -q;
        inj
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let z = Complex64::new(0.01, 0.02);
        let f = two_bus(z);
        let sol = solve(&f, &load_at_bus1(&f, 0.5, 0.2), 1e-12, 200).unwrap();
        assert!(sol.converged);
        let i = f.node_phase(1, PhaseId::A).unwrap();
        let expected = two_bus_closed_form(z, 0.5, 0.2, 1.0);
        assert!((sol.v[i].norm() - expected).abs() < 1e-8, "{} vs {expected}", sol.v[i].norm());
    }

    #[test]
    fn zero_injection_gives_slack_pattern_in_one_iteration() {
        // shunt-free variant of the bundled feeder
        let mut f = Feeder::bundled();
        for line in &mut f.lines {
            line.y_shunt = zero_block();
        }
        let sol = solve(&f, &Injection::zeros(f.n_node_phases()), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        let flat = f.flat_voltages();
        for (v, expect) in sol.v.iter().zip(&flat) {
            assert!((v - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn slack_entries_are_exact() {
        let f = Feeder::bundled();
        let mut inj = Injection::zeros(f.n_node_phases());
        for k in SLACK_PHASES..inj.len() {
            inj.p[k] = -0.05;
            inj.q[k] = -0.02;
        }
        let sol = PowerFlow::new(&f).unwrap().solve(&inj).unwrap();
        assert_eq!(&sol.v[..3], &f.slack_voltages());
    }

    #[test]
    fn mismatch_zero_at_no_load() {
        let mut f = Feeder::bundled();
        for line in &mut f.lines {
            line.y_shunt = zero_block();
        }
        let v = f.flat_voltages();
        let (dp, dq) = mismatch(&f, &v, &Injection::zeros(f.n_node_phases()));
        let m = mismatch_norm(&dp, &dq);
        // only cancellation roundoff in rows with entries of order 1e2 remains
        assert!(m < 1e-12, "{m:e}");
    }

    #[test]
    fn mismatch_detects_perturbation() {
        let f = Feeder::bundled();
        let mut inj = Injection::zeros(f.n_node_phases());
        for k in SLACK_PHASES..inj.len() {
            inj.p[k] = -0.04;
            inj.q[k] = -0.01;
        }
        let sol = solve(&f, &inj, 1e-10, 100).unwrap();
        let (dp, dq) = mismatch(&f, &sol.v, &inj);
        assert!(mismatch_norm(&dp, &dq) < 1e-10);
        let mut v = sol.v.clone();
        let k = 10;
        v[k] += Complex64::new(0.01, 0.0);
        let (dp, dq) = mismatch(&f, &v, &inj);
        assert!(dp[k].abs() > 1e-4 || dq[k].abs() > 1e-4);
    }

    #[test]
    fn voltage_collapse_is_reported() {
        let f = two_bus(Complex64::new(0.05, 0.1));
        let err = solve(&f, &load_at_bus1(&f, 50.0, 20.0), 1e-8, 100).unwrap_err();
        assert!(matches!(err, Error::VoltageCollapse { .. }), "{err}");
    }

    #[test]
    fn non_convergence_is_a_state() {
        let f = two_bus(Complex64::new(0.01, 0.02));
        let sol = solve(&f, &load_at_bus1(&f, 0.5, 0.2), 1e-8, 1).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.residual >= 1e-8);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = two_bus(Complex64::new(0.01, 0.02));
        let err = solve(&f, &Injection::zeros(2), 1e-8, 10).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn more_load_lowers_voltage() {
        let z = Complex64::new(0.01, 0.02);
        let f = two_bus(z);
        let pf = PowerFlow::new(&f).unwrap();
        let i = f.node_phase(1, PhaseId::A).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let p = 0.05 * step as f64;
            let v = pf.solve(&load_at_bus1(&f, p, 0.1)).unwrap().v[i].norm();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn deviation_objective_arithmetic() {
        let v0 = 1.0;
        let slack = Complex64::new(1.0, 0.0);
        let v = vec![slack, slack, slack, Complex64::new(1.02, 0.0), Complex64::from_polar(0.97, 0.3)];
        assert!((deviation_objective(&v, v0) - 0.05).abs() < 1e-15);
        let flat = vec![Complex64::from_polar(1.0, 0.7); 6];
        assert!(deviation_objective(&flat, v0).abs() < 1e-15);
    }

    #[test]
    fn bound_violation_edges() {
        let one = Complex64::new(1.0, 0.0);
        let mut v = vec![one; 6];
        assert!(bound_violations(&v, V_MIN, V_MAX).is_empty());
        v[4] = Complex64::new(1.05, 0.0);
        assert!(bound_violations(&v, V_MIN, V_MAX).is_empty());
        v[4] = Complex64::new(1.051, 0.0);
        let viol = bound_violations(&v, V_MIN, V_MAX);
        assert_eq!(viol.len(), 1);
        assert_eq!(viol[0].0, 4);
        v[5] = Complex64::new(0.0, 0.9499);
        assert_eq!(bound_violations(&v, V_MIN, V_MAX).len(), 2);
    }
}
