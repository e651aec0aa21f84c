//! Learned map from node-phase power injections to voltage magnitudes.
//!
//! Training data come from the true power flow: operating points drawn from
//! the profiles, reactive setpoints drawn uniformly over each device's
//! feasible range, one converged solve per sample. The network sees the free
//! node-phase injections `[P, Q]` standardized per column with train-split
//! statistics, and predicts `(|V| − offset) / scale` per free node-phase.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{self, Action, State, VoltageModel};
use crate::error::{Error, Result};
use crate::grid::{Feeder, NodePhaseVector, SLACK_PHASES};
use crate::nn::{self, Activation, Mlp, MlpRecord, Optimizer, UpdateRule};
use crate::powerflow::{Injection, PowerFlow};
use crate::profiles::ProfileSet;

pub const SURROGATE_FORMAT_VERSION: u32 = 1;

/// One solved operating point; vectors cover all node-phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub p: NodePhaseVector,
    pub q: NodePhaseVector,
    pub v_mag: NodePhaseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Counts from [`generate_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub attempted: usize,
    pub discarded: usize,
    pub seed: u64,
}

/// Redraw cap per sample before generation gives up on that slot.
const MAX_REDRAWS: usize = 64;

impl Dataset {
    /// Disjoint split of `samples` into `n_train` / rest, shuffled under `seed`.
    pub fn with_split(samples: Vec<Sample>, n_train: usize, seed: u64) -> Result<Self> {
        if n_train > samples.len() {
            return Err(Error::Config(format!(
                "train split of {n_train} exceeds {} samples",
                samples.len()
            )));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = order.split_off(n_train);
        Ok(Dataset {
            samples,
            train: order,
            test,
        })
    }

    pub fn train_samples(&self) -> Vec<&Sample> {
        self.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn test_samples(&self) -> Vec<&Sample> {
        self.test.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws `n` samples. Each sample uses its own RNG stream derived from
/// `seed`, so the result does not depend on thread scheduling.
pub fn generate_dataset(
    feeder: &Feeder,
    pf: &PowerFlow,
    profiles: &ProfileSet,
    n: usize,
    seed: u64,
) -> Result<(Vec<Sample>, GenerationLog)> {
    if n == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    if profiles.is_empty() {
        return Err(Error::Config("no profile days to sample from".into()));
    }
    profiles.check_feeder(feeder)?;

    let draws: Vec<Result<(Option<Sample>, usize)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut failures = 0;
            for _ in 0..MAX_REDRAWS {
                let day = &profiles.days[rng.random_range(0..profiles.days.len())];
                let t = rng.random_range(0..day.steps.len());
                let state = State::from_point(feeder, &day.steps[t], t);
                let u: Vec<f64> = (0..feeder.n_devices()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let sp = env::denormalize_action(&Action::new(u), &state, feeder)?;
                let inj = env::injection(feeder, &state, &sp);
                match pf.solve(&inj) {
                    Ok(sol) if sol.converged => {
                        return Ok((
                            Some(Sample {
                                p: inj.p,
                                q: inj.q,
                                v_mag: sol.magnitudes(),
                            }),
                            failures,
                        ))
                    }
                    Ok(_) | Err(Error::VoltageCollapse { .. }) => failures += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((None, failures))
        })
        .collect();

    let mut samples = Vec::with_capacity(n);
    let mut discarded = 0;
    for d in draws {
        let (s, failures) = d?;
        discarded += failures;
        if let Some(s) = s {
            samples.push(s);
        }
    }
    let attempted = samples.len() + discarded;
    if samples.len() < n || 2 * discarded > attempted {
        return Err(Error::GenerationFailed { discarded, attempted });
    }
    Ok((samples, GenerationLog {
        attempted,
        discarded,
        seed,
    }))
}

/// Writes samples as CSV: `p_<bus><phase>…, q_…, v_…` over all node-phases.
pub fn write_dataset_csv(feeder: &Feeder, samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&what, e))?;
    let n = feeder.n_node_phases();
    let labels: Vec<String> = (0..n).map(|i| feeder.index().label(i)).collect();
    let header: Vec<String> = ["p", "q", "v"]
        .iter()
        .flat_map(|k| labels.iter().map(move |l| format!("{k}_{l}")))
        .collect();
    w.write_record(&header).map_err(|e| Error::parse(&what, e))?;
    for s in samples {
        let row: Vec<String> = s
            .p
            .iter()
            .chain(s.q.iter())
            .chain(s.v_mag.iter())
            .map(f64::to_string)
            .collect();
        w.write_record(&row).map_err(|e| Error::parse(&what, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(feeder: &Feeder, path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&what, e))?;
    let n = feeder.n_node_phases();
    let header = r.headers().map_err(|e| Error::parse(&what, e))?.clone();
    if header.len() != 3 * n {
        return Err(Error::Dimension {
            context: "dataset columns",
            expected: 3 * n,
            got: header.len(),
        });
    }
    for (k, kind) in ["p", "q", "v"].iter().enumerate() {
        for i in 0..n {
            let want = format!("{kind}_{}", feeder.index().label(i));
            if header[k * n + i] != *want {
                return Err(Error::parse(&what, format!("column {} should be {want}", k * n + i)));
            }
        }
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&what, e))?;
        let vals = rec
            .iter()
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&what, format!("row {}: {e}", row + 2)))?;
        out.push(Sample {
            p: NodePhaseVector::from_vec(vals[..n].to_vec()),
            q: NodePhaseVector::from_vec(vals[n..2 * n].to_vec()),
            v_mag: NodePhaseVector::from_vec(vals[2 * n..].to_vec()),
        });
    }
    Ok(out)
}

/// Per-column affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on rows; constant columns get unit scale.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let rows: Vec<&[f64]> = rows.collect();
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub update_rule: UpdateRule,
    /// Learning rate multiplier applied after every epoch.
    #[serde(default = "unit")]
    pub lr_decay: f64,
    /// Quantity the network fits.
    #[serde(default)]
    pub target: Target,
    /// Targets are `(x − target_offset) / target_scale` with `x` the fitted quantity.
    pub target_offset: f64,
    pub target_scale: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    /// Two hidden layers of 400, batch 32, learning rate 1e-4, 2000 epochs.
    fn default() -> Self {
        SurrogateConfig {
            hidden: vec![400, 400],
            batch: 32,
            lr: 1e-4,
            epochs: 2000,
            update_rule: UpdateRule::Sgd,
            lr_decay: 1.0,
            target: Target::Magnitude,
            target_offset: 1.0,
            target_scale: 1.0,
            seed: 0,
        }
    }
}

fn unit() -> f64 {
    1.0
}

/// Voltage quantity a surrogate regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Target {
    /// `|V|`.
    #[default]
    Magnitude,
    /// `|V|²`, close to linear in the injections along a radial feeder.
    Squared,
}

impl Target {
    pub fn encode(self, v: f64) -> f64 {
        match self {
            Target::Magnitude => v,
            Target::Squared => v * v,
        }
    }

    pub fn decode(self, x: f64) -> f64 {
        match self {
            Target::Magnitude => x,
            Target::Squared => x.max(0.0).sqrt(),
        }
    }
}

/// Trained network plus the scaling needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub net: Mlp,
    pub inputs: Standardizer,
    pub target: Target,
    pub target_offset: f64,
    pub target_scale: f64,
    /// Magnitude reported for slack node-phases.
    pub slack_magnitude: f64,
    pub n_node_phases: usize,
}

fn free_input(p: &NodePhaseVector, q: &NodePhaseVector) -> Vec<f64> {
    let mut x = p.values[SLACK_PHASES..].to_vec();
    x.extend_from_slice(&q.values[SLACK_PHASES..]);
    x
}

impl Surrogate {
    fn decode(&self, t: f64) -> f64 {
        self.target.decode(t * self.target_scale + self.target_offset)
    }

    pub fn n_free(&self) -> usize {
        self.n_node_phases - SLACK_PHASES
    }

    fn check(&self, p: &NodePhaseVector, q: &NodePhaseVector) -> Result<()> {
        if p.len() != self.n_node_phases || q.len() != self.n_node_phases {
            return Err(Error::Dimension {
                context: "surrogate input",
                expected: self.n_node_phases,
                got: p.len().min(q.len()),
            });
        }
        Ok(())
    }

    /// Predicted magnitudes over all node-phases.
    pub fn predict(&self, p: &NodePhaseVector, q: &NodePhaseVector) -> Result<NodePhaseVector> {
        self.check(p, q)?;
        let x = self.inputs.normalize(&free_input(p, q));
        let y = self.net.forward(&x)?;
        let mut out = vec![self.slack_magnitude; SLACK_PHASES];
        out.extend(y.iter().map(|&t| self.decode(t)));
        Ok(NodePhaseVector::from_vec(out))
    }

    /// Batched prediction over samples; rows are free node-phase magnitudes.
    pub fn predict_free_batch(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        let x = self.input_matrix(samples)?;
        let mut y = self.net.forward_batch(x.view())?;
        y.mapv_inplace(|t| self.decode(t));
        Ok(y)
    }

    fn input_matrix(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        let d = 2 * self.n_free();
        let mut x = Array2::zeros((samples.len(), d));
        for (row, s) in x.axis_iter_mut(Axis(0)).zip(samples) {
            self.check(&s.p, &s.q)?;
            let z = self.inputs.normalize(&free_input(&s.p, &s.q));
            row.into_slice().expect("row-major").copy_from_slice(&z);
        }
        Ok(x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::write_checkpoint(path, &SurrogateCheckpoint {
            format_version: SURROGATE_FORMAT_VERSION,
            kind: "surrogate".into(),
            network: self.net.to_record(),
            inputs: self.inputs.clone(),
            target: self.target,
            target_offset: self.target_offset,
            target_scale: self.target_scale,
            slack_magnitude: self.slack_magnitude,
            n_node_phases: self.n_node_phases,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: SurrogateCheckpoint = nn::read_checkpoint(path)?;
        if ck.format_version != SURROGATE_FORMAT_VERSION || ck.kind != "surrogate" {
            return Err(Error::Checkpoint(format!(
                "not a surrogate checkpoint of version {SURROGATE_FORMAT_VERSION} (kind {}, version {})",
                ck.kind, ck.format_version
            )));
        }
        let net = Mlp::from_record(&ck.network)?;
        let n_free = ck.n_node_phases.saturating_sub(SLACK_PHASES);
        if net.in_dim() != 2 * n_free || net.out_dim() != n_free || ck.inputs.dim() != 2 * n_free {
            return Err(Error::Checkpoint("surrogate dimensions do not match its metadata".into()));
        }
        Ok(Surrogate {
            net,
            inputs: ck.inputs,
            target: ck.target,
            target_offset: ck.target_offset,
            target_scale: ck.target_scale,
            slack_magnitude: ck.slack_magnitude,
            n_node_phases: ck.n_node_phases,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurrogateCheckpoint {
    format_version: u32,
    kind: String,
    network: MlpRecord,
    inputs: Standardizer,
    #[serde(default)]
    target: Target,
    target_offset: f64,
    target_scale: f64,
    slack_magnitude: f64,
    n_node_phases: usize,
}

impl VoltageModel for Surrogate {
    fn magnitudes(&self, inj: &Injection) -> Result<Option<NodePhaseVector>> {
        self.predict(&inj.p, &inj.q).map(Some)
    }

    fn label(&self) -> &'static str {
        "surrogate"
    }
}

/// Trains a surrogate by minibatch MSE descent. One epoch is one shuffled
/// pass over the training split. Returns the model and the per-epoch mean
/// training MSE in per-unit².
pub fn train_surrogate(
    feeder: &Feeder,
    train: &[&Sample],
    cfg: &SurrogateConfig,
) -> Result<(Surrogate, Vec<f64>)> {
    train_surrogate_with(feeder, train, cfg, |_, _| {})
}

/// [`train_surrogate`] with a per-epoch callback `(epoch, mse)`.
pub fn train_surrogate_with(
    feeder: &Feeder,
    train: &[&Sample],
    cfg: &SurrogateConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Surrogate, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) || !(cfg.target_scale > 0.0) || !(cfg.lr_decay > 0.0) {
        return Err(Error::Config("surrogate batch, lr, lr_decay and target_scale must be positive".into()));
    }
    let n_free = feeder.n_free();
    let inputs_raw: Vec<Vec<f64>> = train.iter().map(|s| free_input(&s.p, &s.q)).collect();
    let inputs = Standardizer::fit(inputs_raw.iter().map(Vec::as_slice));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![2 * n_free];
    sizes.extend(&cfg.hidden);
    sizes.push(n_free);
    let net = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, &mut rng);
    let mut model = Surrogate {
        net,
        inputs,
        target: cfg.target,
        target_offset: cfg.target_offset,
        target_scale: cfg.target_scale,
        slack_magnitude: feeder.v0,
        n_node_phases: feeder.n_node_phases(),
    };

    let x_all = model.input_matrix(train)?;
    let mut t_all = Array2::zeros((train.len(), n_free));
    for (mut row, s) in t_all.axis_iter_mut(Axis(0)).zip(train) {
        for (k, v) in s.v_mag.values[SLACK_PHASES..].iter().enumerate() {
            row[k] = (cfg.target.encode(*v) - cfg.target_offset) / cfg.target_scale;
        }
    }

    let mut opt = Optimizer::new(cfg.update_rule, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let unscale = cfg.target_scale * cfg.target_scale;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let x = x_all.select(Axis(0), chunk);
            let t = t_all.select(Axis(0), chunk);
            let cache = model.net.forward_cached(x.view())?;
            let diff = cache.output() - &t;
            let b = chunk.len() as f64;
            // per-sample loss averaged over node-phases, batch mean
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / (b * n_free as f64);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * b;
            let grad_out = diff.mapv(|d| 2.0 * d / (b * n_free as f64));
            let (g, _) = model.net.backward(&cache, grad_out.view())?;
            opt.step(&mut model.net, &g).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch },
                other => other,
            })?;
        }
        opt.lr *= cfg.lr_decay;
        let mse = total / train.len() as f64 * unscale;
        on_epoch(epoch, mse);
        curve.push(mse);
    }
    Ok((model, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    /// Mean absolute error over samples and free node-phases.
    pub mae: f64,
    /// Largest single absolute error.
    pub max_error: f64,
    /// Mean absolute error per free node-phase.
    pub per_node_mae: Vec<f64>,
    /// Counts of absolute errors in bins of width `bin_width`.
    pub histogram: Vec<usize>,
    pub bin_width: f64,
}

/// Bin width of the error histogram, per-unit.
pub const HISTOGRAM_BIN: f64 = 5e-4;
const HISTOGRAM_BINS: usize = 40;

pub fn evaluate_mae(model: &Surrogate, test: &[&Sample]) -> Result<MaeReport> {
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let pred = model.predict_free_batch(test)?;
    let n_free = model.n_free();
    let mut per_node = vec![0.0; n_free];
    let mut histogram = vec![0; HISTOGRAM_BINS];
    let mut total = 0.0;
    let mut max_error = 0.0_f64;
    for (row, s) in pred.axis_iter(Axis(0)).zip(test) {
        for (k, (&vh, &v)) in row.iter().zip(&s.v_mag.values[SLACK_PHASES..]).enumerate() {
            let e = (vh - v).abs();
            total += e;
            per_node[k] += e;
            max_error = max_error.max(e);
            let bin = ((e / HISTOGRAM_BIN) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
        }
    }
    let m = test.len() as f64;
    per_node.iter_mut().for_each(|x| *x /= m);
    Ok(MaeReport {
        mae: total / (m * n_free as f64),
        max_error,
        per_node_mae: per_node,
        histogram,
        bin_width: HISTOGRAM_BIN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{synthetic_year, SyntheticConfig};

    fn small_profiles(f: &Feeder) -> ProfileSet {
        synthetic_year(f, &SyntheticConfig { days: 20, ..Default::default() }, 5)
    }

    #[test]
    fn generation_is_reproducible_and_solver_consistent() {
        let f = Feeder::bundled();
        let pf = PowerFlow::new(&f).unwrap();
        let prof = small_profiles(&f);
        let (a, log) = generate_dataset(&f, &pf, &prof, 100, 42).unwrap();
        let (b, _) = generate_dataset(&f, &pf, &prof, 100, 42).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_eq!(log.attempted, 100 + log.discarded);
        for s in &a {
            let sol = pf.solve(&Injection { p: s.p.clone(), q: s.q.clone() }).unwrap();
            for (x, y) in sol.magnitudes().iter().zip(s.v_mag.iter()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reactive_draws_respect_device_limits() {
        let f = Feeder::bundled();
        let pf = PowerFlow::new(&f).unwrap();
        let (samples, _) = generate_dataset(&f, &pf, &small_profiles(&f), 50, 1).unwrap();
        let svc_i = f.node_phase(f.svcs[0].bus, f.svcs[0].phase).unwrap();
        // the SVC node-phase carries load Q too, so just bound the total
        for s in &samples {
            assert!(s.q[svc_i] <= f.svcs[0].q_max + 1e-12);
        }
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let f = Feeder::bundled();
        let pf = PowerFlow::new(&f).unwrap();
        let (samples, _) = generate_dataset(&f, &pf, &small_profiles(&f), 40, 3).unwrap();
        let d1 = Dataset::with_split(samples.clone(), 30, 9).unwrap();
        let d2 = Dataset::with_split(samples, 30, 9).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.train.len(), 30);
        assert_eq!(d1.test.len(), 10);
        assert!(d1.test.iter().all(|i| !d1.train.contains(i)));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let f = Feeder::bundled();
        let pf = PowerFlow::new(&f).unwrap();
        let (samples, _) = generate_dataset(&f, &pf, &small_profiles(&f), 10, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset_csv(&f, &samples, &path).unwrap();
        assert_eq!(read_dataset_csv(&f, &path).unwrap(), samples);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("p_0a,p_0b,p_0c,p_1a"));
    }

    #[test]
    fn standardizer_round_trip() {
        let rows = [vec![1.0, 5.0, 3.0], vec![2.0, 5.0, -1.0], vec![4.0, 5.0, 0.5]];
        let st = Standardizer::fit(rows.iter().map(Vec::as_slice));
        assert_eq!(st.std[1], 1.0);
        for r in &rows {
            let back = st.denormalize(&st.normalize(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn synthetic_sample(n: usize, p: &[f64], v: &[f64]) -> Sample {
        let mut pv = NodePhaseVector::zeros(n);
        let mut vv = NodePhaseVector::from_vec(vec![1.0; n]);
        for k in 0..n - SLACK_PHASES {
            pv[SLACK_PHASES + k] = p[k];
            vv[SLACK_PHASES + k] = v[k];
        }
        Sample {
            p: pv,
            q: NodePhaseVector::zeros(n),
            v_mag: vv,
        }
    }

    #[test]
    fn identical_samples_are_memorized() {
        let f = Feeder::bundled();
        let n = f.n_node_phases();
        let nf = f.n_free();
        let target: Vec<f64> = (0..nf).map(|k| 1.0 + 0.001 * k as f64).collect();
        let s = synthetic_sample(n, &vec![0.1; nf], &target);
        let data = vec![s.clone(); 64];
        let refs: Vec<&Sample> = data.iter().collect();
        let cfg = SurrogateConfig {
            hidden: vec![16],
            batch: 16,
            lr: 1e-2,
            epochs: 200,
            update_rule: UpdateRule::adam(),
            seed: 1,
            ..Default::default()
        };
        let (model, curve) = train_surrogate(&f, &refs, &cfg).unwrap();
        assert!(*curve.last().unwrap() < 1e-12, "{:?}", &curve[curve.len() - 3..]);
        let pred = model.predict(&s.p, &s.q).unwrap();
        for (a, b) in pred.values[SLACK_PHASES..].iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mae_arithmetic() {
        let f = Feeder::bundled();
        let n = f.n_node_phases();
        let nf = f.n_free();
        // a surrogate that outputs exactly 1.0: zero weights/bias in the last layer
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[2 * nf, 4, nf], Activation::Tanh, Activation::Identity, &mut rng);
        net.set_parameters(&vec![0.0; net.n_parameters()]).unwrap();
        let model = Surrogate {
            net,
            inputs: Standardizer::identity(2 * nf),
            target: Target::Magnitude,
            target_offset: 1.0,
            target_scale: 1.0,
            slack_magnitude: 1.0,
            n_node_phases: n,
        };
        let s = synthetic_sample(n, &vec![0.0; nf], &vec![1.002; nf]);
        let rep = evaluate_mae(&model, &[&s, &s]).unwrap();
        assert!((rep.mae - 0.002).abs() < 1e-12);
        let perfect = synthetic_sample(n, &vec![0.0; nf], &vec![1.0; nf]);
        assert_eq!(evaluate_mae(&model, &[&perfect]).unwrap().mae, 0.0);
        assert!(evaluate_mae(&model, &[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let f = Feeder::bundled();
        let nf = f.n_free();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Surrogate {
            net: Mlp::new(&[2 * nf, 8, nf], Activation::Tanh, Activation::Identity, &mut rng),
            inputs: Standardizer {
                mean: (0..2 * nf).map(|k| k as f64 * 0.01).collect(),
                std: vec![0.3; 2 * nf],
            },
            target: Target::Squared,
            target_offset: 1.0,
            target_scale: 0.05,
            slack_magnitude: 1.0,
            n_node_phases: f.n_node_phases(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        model.save(&path).unwrap();
        assert_eq!(Surrogate::load(&path).unwrap(), model);
        // a plain network checkpoint is not a surrogate
        model.net.save(&path).unwrap();
        assert!(Surrogate::load(&path).is_err());
    }

    #[test]
    fn target_decode_inverts_encode() {
        for v in [0.6, 0.95, 1.0, 1.07] {
            for t in [Target::Magnitude, Target::Squared] {
                assert!((t.decode(t.encode(v)) - v).abs() < 1e-15);
            }
        }
        assert_eq!(Target::Squared.decode(-0.1), 0.0);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let f = Feeder::bundled();
        let nf = f.n_free();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Surrogate {
            net: Mlp::new(&[2 * nf, 4, nf], Activation::Tanh, Activation::Identity, &mut rng),
            inputs: Standardizer::identity(2 * nf),
            target: Target::Magnitude,
            target_offset: 1.0,
            target_scale: 1.0,
            slack_magnitude: 1.0,
            n_node_phases: f.n_node_phases(),
        };
        let v = NodePhaseVector::zeros(5);
        assert!(model.predict(&v, &v).is_err());
    }
}
