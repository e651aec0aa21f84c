//! End-to-end commands: data generation, surrogate and agent training,
//! comparison on held-out days, the fast-fluctuation scenario and a single
//! power-flow solve.
//!
//! Every command reads a [`RunConfig`], writes CSV or plain-text files into
//! its output directory and returns the paths and SHA-256 digests of what it
//! wrote. Component seeds are derived from the master seed, so a config plus
//! seed determines every output byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddpg::{self, Agent, AgentConfig, EvalReport, StepRecord};
use crate::env::{Action, RewardConfig, State, VrEnv};
use crate::error::{Error, Result};
use crate::grid::{self, Feeder};
use crate::nn::UpdateRule;
use crate::powerflow::{Injection, PowerFlow};
use crate::profiles::{self, DayProfile, ProfileSet, SyntheticConfig};
use crate::surrogate::{self, Dataset, Surrogate, SurrogateConfig, Target};

/// Where operating points come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSource {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastFluctConfig {
    /// Node-phase label such as `9c`.
    pub monitored: String,
    pub power_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Feeder JSON; the bundled feeder when absent.
    #[serde(default)]
    pub feeder: Option<PathBuf>,
    pub profiles: ProfileSource,
    pub seed: u64,
    pub n_test_days: usize,
    pub dataset: DatasetConfig,
    pub surrogate: SurrogateConfig,
    pub agent: AgentConfig,
    pub reward: RewardConfig,
    pub fast_fluct: FastFluctConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Full-size settings: 400/400 surrogate for 2000 epochs, 400/200 agent
    /// for 5000 episodes.
    pub fn paper() -> Self {
        RunConfig {
            feeder: None,
            profiles: ProfileSource::Synthetic(SyntheticConfig::default()),
            seed: 0,
            n_test_days: 30,
            dataset: DatasetConfig {
                n_samples: 12_000,
                n_train: 10_000,
            },
            surrogate: SurrogateConfig::default(),
            agent: AgentConfig::default(),
            reward: RewardConfig::default(),
            fast_fluct: FastFluctConfig {
                monitored: "9c".into(),
                power_factor: 0.95,
            },
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Settings that finish in a few minutes on one core.
    pub fn desk() -> Self {
        RunConfig {
            surrogate: SurrogateConfig {
                hidden: vec![96, 96],
                batch: 32,
                lr: 2e-3,
                epochs: 150,
                update_rule: UpdateRule::adam(),
                lr_decay: 0.97,
                target: Target::Squared,
                target_scale: 0.04,
                ..SurrogateConfig::default()
            },
            agent: AgentConfig::desk(),
            ..RunConfig::paper()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Seed of an independent component stream.
    pub fn derived_seed(&self, stream: Stream) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng.next_u64()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

/// Named seed streams.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Profiles = 1,
    Split = 2,
    Dataset = 3,
    DatasetSplit = 4,
    SurrogateInit = 5,
    AgentInit = 6,
    AgentTrain = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Surrogate,
    TrueModel,
}

impl Backend {
    pub fn label(self) -> &'static str {
        match self {
            Backend::Surrogate => "surrogate",
            Backend::TrueModel => "truemodel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(Backend::Surrogate),
            "truemodel" => Ok(Backend::TrueModel),
            other => Err(Error::Config(format!("unknown backend {other:?}; expected surrogate or truemodel"))),
        }
    }
}

/// Files written by a command with their SHA-256 digests.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, String)>,
}

impl Outputs {
    fn add(&mut self, path: PathBuf) -> Result<()> {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.push((path, hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    /// `(file name, digest)` pairs, independent of the output directory.
    pub fn digests(&self) -> Vec<(String, String)> {
        self.files
            .iter()
            .map(|(p, h)| (p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), h.clone()))
            .collect()
    }
}

/// Feeder, profiles and the train/test day split shared by all commands.
pub struct Workspace {
    pub cfg: RunConfig,
    pub feeder: Feeder,
    pub pf: PowerFlow,
    pub profiles: ProfileSet,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
}

pub const DATASET_FILE: &str = "dataset.csv";
pub const SURROGATE_FILE: &str = "surrogate.json";

pub fn agent_file(backend: Backend) -> String {
    format!("agent_{}.json", backend.label())
}

impl Workspace {
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        let feeder = match &cfg.feeder {
            Some(p) => grid::load_feeder(p)?,
            None => Feeder::bundled(),
        };
        let pf = PowerFlow::new(&feeder)?;
        let profiles = match &cfg.profiles {
            ProfileSource::Synthetic(s) => profiles::synthetic_year(&feeder, s, cfg.derived_seed(Stream::Profiles)),
            ProfileSource::Csv { path } => ProfileSet::read_csv(path)?,
        };
        profiles.check_feeder(&feeder)?;
        let (train_days, test_days) = profiles::split_days(profiles.len(), cfg.n_test_days, cfg.derived_seed(Stream::Split))?;
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        Ok(Workspace {
            cfg: cfg.clone(),
            feeder,
            pf,
            profiles,
            train_days,
            test_days,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    pub fn train_profiles(&self) -> ProfileSet {
        self.profiles.select(&self.train_days)
    }

    pub fn train(&self) -> Vec<&DayProfile> {
        self.train_days.iter().map(|&i| &self.profiles.days[i]).collect()
    }

    pub fn test(&self) -> Vec<&DayProfile> {
        self.test_days.iter().map(|&i| &self.profiles.days[i]).collect()
    }

    fn dataset(&self) -> Result<Dataset> {
        let path = self.path(DATASET_FILE);
        if !path.exists() {
            return Err(Error::Config(format!("{} not found; run gen-data first", path.display())));
        }
        let samples = surrogate::read_dataset_csv(&self.feeder, &path)?;
        Dataset::with_split(samples, self.cfg.dataset.n_train, self.cfg.derived_seed(Stream::DatasetSplit))
    }

    pub fn load_surrogate(&self) -> Result<Surrogate> {
        let path = self.path(SURROGATE_FILE);
        if !path.exists() {
            return Err(Error::Checkpoint(format!("{} not found; run train-surrogate first", path.display())));
        }
        Surrogate::load(path)
    }

    pub fn load_agent(&self, backend: Backend) -> Result<Agent> {
        let path = self.path(&agent_file(backend));
        if !path.exists() {
            return Err(Error::Checkpoint(format!(
                "{} not found; run train-agent --backend {} first",
                path.display(),
                backend.label()
            )));
        }
        let (agent, stored) = Agent::load(&path)?;
        if stored != backend.label() {
            return Err(Error::Checkpoint(format!("{} was trained on {stored}", path.display())));
        }
        Ok(agent)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::parse(&path.display().to_string(), e))
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let what = path.display().to_string();
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| Error::parse(&what, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::parse(&what, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Summary of [`gen_data`].
#[derive(Debug, Clone)]
pub struct GenDataSummary {
    pub log: surrogate::GenerationLog,
    pub outputs: Outputs,
}

/// Samples the training days into a dataset CSV, a generation log and the
/// day split.
pub fn gen_data(cfg: &RunConfig) -> Result<GenDataSummary> {
    let ws = Workspace::open(cfg)?;
    let (samples, log) = surrogate::generate_dataset(
        &ws.feeder,
        &ws.pf,
        &ws.train_profiles(),
        cfg.dataset.n_samples,
        cfg.derived_seed(Stream::Dataset),
    )?;
    let mut out = Outputs::default();
    let data = ws.path(DATASET_FILE);
    surrogate::write_dataset_csv(&ws.feeder, &samples, &data)?;
    out.add(data)?;

    let log_path = ws.path("generation_log.txt");
    write_text(
        &log_path,
        &format!(
            "samples {}\nattempted {}\ndiscarded {}\nseed {}\n",
            samples.len(),
            log.attempted,
            log.discarded,
            log.seed
        ),
    )?;
    out.add(log_path)?;

    let days_path = ws.path("days.csv");
    let mut roles: Vec<(usize, &str)> = ws.train_days.iter().map(|&d| (d, "train")).collect();
    roles.extend(ws.test_days.iter().map(|&d| (d, "test")));
    roles.sort_unstable();
    write_rows(
        &days_path,
        &strings(["day", "role"]),
        roles.iter().map(|(d, r)| vec![ws.profiles.days[*d].day.to_string(), r.to_string()]),
    )?;
    out.add(days_path)?;
    Ok(GenDataSummary { log, outputs: out })
}

#[derive(Debug, Clone)]
pub struct SurrogateSummary {
    pub loss: Vec<f64>,
    pub report: surrogate::MaeReport,
    pub outputs: Outputs,
}

/// Trains the surrogate on the dataset's train split and scores it on the
/// test split.
pub fn train_surrogate(cfg: &RunConfig) -> Result<SurrogateSummary> {
    let ws = Workspace::open(cfg)?;
    let data = ws.dataset()?;
    let scfg = SurrogateConfig {
        seed: cfg.derived_seed(Stream::SurrogateInit),
        ..cfg.surrogate.clone()
    };
    let started = Instant::now();
    let (model, loss) = surrogate::train_surrogate_with(&ws.feeder, &data.train_samples(), &scfg, |e, l| {
        if e % 50 == 0 || e + 1 == scfg.epochs {
            eprintln!("surrogate epoch {e}: mse {l:.3e} ({:.1?})", started.elapsed());
        }
    })?;
    let report = surrogate::evaluate_mae(&model, &data.test_samples())?;

    let mut out = Outputs::default();
    let ck = ws.path(SURROGATE_FILE);
    model.save(&ck)?;
    out.add(ck)?;
    let loss_path = ws.path("surrogate_loss.csv");
    write_rows(
        &loss_path,
        &strings(["epoch", "mse"]),
        loss.iter().enumerate().map(|(e, l)| vec![(e + 1).to_string(), l.to_string()]),
    )?;
    out.add(loss_path)?;

    let mut text = String::new();
    writeln!(text, "test samples {}", data.test.len()).unwrap();
    writeln!(text, "mae {:.6e}", report.mae).unwrap();
    writeln!(text, "max_error {:.6e}", report.max_error).unwrap();
    writeln!(text, "\nabs error histogram (bin {:.1e} p.u.)", report.bin_width).unwrap();
    for (k, c) in report.histogram.iter().enumerate() {
        if *c > 0 {
            writeln!(text, "  [{:.4}, {:.4}) {c}", k as f64 * report.bin_width, (k + 1) as f64 * report.bin_width).unwrap();
        }
    }
    writeln!(text, "\nper node-phase mae").unwrap();
    for (k, m) in report.per_node_mae.iter().enumerate() {
        writeln!(text, "  {:>4} {:.3e}", ws.feeder.index().label(k + grid::SLACK_PHASES), m).unwrap();
    }
    let eval_path = ws.path("surrogate_eval.txt");
    write_text(&eval_path, &text)?;
    out.add(eval_path)?;
    Ok(SurrogateSummary { loss, report, outputs: out })
}

#[derive(Debug, Clone)]
pub struct AgentSummary {
    pub log: ddpg::TrainLog,
    pub outputs: Outputs,
}

/// Trains a DDPG agent on the chosen backend.
pub fn train_agent(cfg: &RunConfig, backend: Backend) -> Result<AgentSummary> {
    let ws = Workspace::open(cfg)?;
    let train = ws.train();
    let scaler = ddpg::fit_observation_scaler(&ws.feeder, &train);
    let mut agent = Agent::new(
        State::flat_dim(&ws.feeder),
        ws.feeder.n_devices(),
        scaler,
        cfg.agent.clone(),
        cfg.derived_seed(Stream::AgentInit),
    )?;
    let started = Instant::now();
    let progress = |e: usize, r: f64| {
        if e % 100 == 0 {
            eprintln!("{} episode {e}: return {r:.3} ({:.1?})", backend.label(), started.elapsed());
        }
    };
    let seed = cfg.derived_seed(Stream::AgentTrain);
    let log = match backend {
        Backend::Surrogate => {
            let model = ws.load_surrogate()?;
            let env = VrEnv::new(&ws.feeder, &model, cfg.reward)?;
            ddpg::train_with(&mut agent, &env, &train, seed, progress)?
        }
        Backend::TrueModel => {
            let env = VrEnv::new(&ws.feeder, &ws.pf, cfg.reward)?;
            ddpg::train_with(&mut agent, &env, &train, seed, progress)?
        }
    };
    if log.failed_steps > 0 {
        eprintln!("{} training: {} steps without a power-flow solution", backend.label(), log.failed_steps);
    }

    let mut out = Outputs::default();
    let ck = ws.path(&agent_file(backend));
    agent.save(&ck, backend.label(), cfg.agent.episodes)?;
    out.add(ck)?;
    let smooth = log.smoothed(100);
    let curve = ws.path(&format!("rewards_{}.csv", backend.label()));
    write_rows(
        &curve,
        &strings(["episode", "return", "mean100"]),
        log.returns
            .iter()
            .zip(&smooth)
            .enumerate()
            .map(|(e, (r, m))| vec![(e + 1).to_string(), r.to_string(), m.to_string()]),
    )?;
    out.add(curve)?;
    Ok(AgentSummary { log, outputs: out })
}

pub const COMPARISON_COLUMNS: [&str; 9] = [
    "method",
    "avg_dev_pct",
    "phase_a_pct",
    "phase_b_pct",
    "phase_c_pct",
    "max_drop_pct",
    "max_rise_pct",
    "violations",
    "failed_steps",
];

fn report_row(r: &EvalReport) -> Vec<String> {
    vec![
        r.method.clone(),
        r.avg_deviation_pct.to_string(),
        r.phase_avg_deviation_pct[0].to_string(),
        r.phase_avg_deviation_pct[1].to_string(),
        r.phase_avg_deviation_pct[2].to_string(),
        r.max_drop_pct.to_string(),
        r.max_rise_pct.to_string(),
        r.violations.to_string(),
        r.failed_steps.to_string(),
    ]
}

/// Aligned plain-text table of reports.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<12} {:>9} {:>8} {:>8} {:>8} {:>9} {:>9} {:>6} {:>6}\n",
        "method", "avg dev%", "a %", "b %", "c %", "drop %", "rise %", "viol", "fail"
    );
    for r in reports {
        let p = r.phase_avg_deviation_pct;
        writeln!(
            s,
            "{:<12} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>9.4} {:>6} {:>6}",
            r.method, r.avg_deviation_pct, p[0], p[1], p[2], r.max_drop_pct, r.max_rise_pct, r.violations, r.failed_steps
        )
        .unwrap();
    }
    s
}

fn voltage_rows(feeder: &Feeder, trace: &[StepRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = strings(["day", "step"]);
    header.extend((0..feeder.n_node_phases()).map(|i| format!("v_{}", feeder.index().label(i))));
    let rows = trace
        .iter()
        .map(|r| {
            let mut row = vec![r.day.to_string(), r.step.to_string()];
            match &r.v_mag {
                Some(m) => row.extend(m.iter().map(f64::to_string)),
                None => row.extend((0..feeder.n_node_phases()).map(|_| "nan".to_string())),
            }
            row
        })
        .collect();
    (header, rows)
}

/// Reads a voltage CSV written by [`compare`] back into a trace.
pub fn read_voltage_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&what, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(&what, e))?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(&what, e));
        let day = rec[0].parse::<usize>().map_err(|e| Error::parse(&what, e))?;
        let step = rec[1].parse::<usize>().map_err(|e| Error::parse(&what, e))?;
        let vals = rec.iter().skip(2).map(num).collect::<Result<Vec<f64>>>()?;
        let v_mag = if vals.iter().any(|v| v.is_nan()) { None } else { Some(vals) };
        out.push(StepRecord {
            day,
            step,
            action: Vec::new(),
            v_mag,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub reports: Vec<EvalReport>,
    pub outputs: Outputs,
}

/// Hour whose per-node profile is written for every method.
pub const SNAPSHOT_HOUR: usize = 13;

/// No-control, surrogate-trained and true-model-trained agents on the test
/// days, all on the true power flow.
pub fn compare(cfg: &RunConfig) -> Result<CompareSummary> {
    let ws = Workspace::open(cfg)?;
    let proposed = ws.load_agent(Backend::Surrogate)?;
    let baseline = ws.load_agent(Backend::TrueModel)?;
    let test = ws.test();
    let runs = [
        ddpg::evaluate_no_control(&ws.feeder, &ws.pf, &cfg.reward, &test)?,
        ddpg::evaluate("surrogate", &proposed, &ws.feeder, &ws.pf, &cfg.reward, &test)?,
        ddpg::evaluate("truemodel", &baseline, &ws.feeder, &ws.pf, &cfg.reward, &test)?,
    ];
    let reports: Vec<EvalReport> = runs.iter().map(|(r, _)| r.clone()).collect();

    let mut out = Outputs::default();
    let table = ws.path("comparison.txt");
    let days: Vec<String> = test.iter().map(|d| d.day.to_string()).collect();
    write_text(&table, &format!("{}\ntest days: {}\n", format_table(&reports), days.join(" ")))?;
    out.add(table)?;
    let csv_path = ws.path("comparison.csv");
    write_rows(
        &csv_path,
        &COMPARISON_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        reports.iter().map(report_row),
    )?;
    out.add(csv_path)?;

    for (rep, trace) in &runs {
        let (header, rows) = voltage_rows(&ws.feeder, trace);
        let p = ws.path(&format!("voltages_{}.csv", rep.method));
        write_rows(&p, &header, rows)?;
        out.add(p)?;
    }

    let first_day = test.first().map(|d| d.day);
    let snapshot = ws.path("profile_hour13.csv");
    let mut header = strings(["node_phase"]);
    header.extend(runs.iter().map(|(r, _)| r.method.clone()));
    let pick: Vec<Option<&Vec<f64>>> = runs
        .iter()
        .map(|(_, t)| {
            t.iter()
                .find(|r| Some(r.day) == first_day && r.step == SNAPSHOT_HOUR)
                .and_then(|r| r.v_mag.as_ref())
        })
        .collect();
    write_rows(
        &snapshot,
        &header,
        (0..ws.feeder.n_node_phases()).map(|i| {
            let mut row = vec![ws.feeder.index().label(i)];
            row.extend(pick.iter().map(|m| m.map_or("nan".to_string(), |m| m[i].to_string())));
            row
        }),
    )?;
    out.add(snapshot)?;
    Ok(CompareSummary { reports, outputs: out })
}

#[derive(Debug, Clone)]
pub struct FastFluctSummary {
    pub monitored: String,
    /// `(method, magnitudes per second)` at the monitored node-phase.
    pub traces: Vec<(String, Vec<f64>)>,
    pub v_min: f64,
    pub v_max: f64,
    /// Slowest single decision of the surrogate-trained agent.
    pub max_decision_latency: std::time::Duration,
    pub outputs: Outputs,
}

impl FastFluctSummary {
    pub fn in_band_fraction(&self, method: &str) -> Option<f64> {
        let (_, t) = self.traces.iter().find(|(m, _)| m == method)?;
        let ok = t.iter().filter(|v| **v >= self.v_min && **v <= self.v_max).count();
        Some(ok as f64 / t.len().max(1) as f64)
    }
}

/// Node-phase index of a label like `9c`.
pub fn node_phase_by_label(feeder: &Feeder, label: &str) -> Result<usize> {
    (0..feeder.n_node_phases())
        .find(|&i| feeder.index().label(i) == label)
        .ok_or_else(|| Error::Config(format!("no node-phase {label:?} in feeder {}", feeder.name)))
}

/// 60 one-second decisions through a PV ramp under each method.
pub fn fast_fluct(cfg: &RunConfig) -> Result<FastFluctSummary> {
    let ws = Workspace::open(cfg)?;
    let monitored = node_phase_by_label(&ws.feeder, &cfg.fast_fluct.monitored)?;
    let proposed = ws.load_agent(Backend::Surrogate)?;
    let baseline = ws.load_agent(Backend::TrueModel)?;
    let ramp = profiles::fast_fluctuation(&ws.feeder, &profiles::midday_base(&ws.feeder, cfg.fast_fluct.power_factor));
    let env = VrEnv::new(&ws.feeder, &ws.pf, cfg.reward)?;
    let states: Vec<State> = ramp.days[0]
        .steps
        .iter()
        .map(|pt| State::from_point(&ws.feeder, pt, SNAPSHOT_HOUR))
        .collect();

    let mut latency = std::time::Duration::ZERO;
    let mut traces: Vec<(String, Vec<f64>)> = Vec::new();
    for method in ["no-control", "surrogate", "truemodel"] {
        let mut trace = Vec::with_capacity(states.len());
        for s in &states {
            let a = match method {
                "no-control" => Action::no_control(&ws.feeder),
                "surrogate" => {
                    let t = Instant::now();
                    let a = proposed.act(s)?;
                    latency = latency.max(t.elapsed());
                    a
                }
                _ => baseline.act(s)?,
            };
            let o = env.step(s, &a)?;
            trace.push(o.v_mag.map_or(f64::NAN, |m| m[monitored]));
        }
        traces.push((method.to_string(), trace));
    }

    let mut out = Outputs::default();
    let p = ws.path("fast_fluct.csv");
    let mut header = strings(["second", "pv_mw"]);
    header.extend(traces.iter().map(|(m, _)| format!("v_{m}")));
    write_rows(
        &p,
        &header,
        ramp.days[0].steps.iter().enumerate().map(|(t, pt)| {
            let mut row = vec![t.to_string(), pt.pv_p_mw.first().copied().unwrap_or(0.0).to_string()];
            row.extend(traces.iter().map(|(_, tr)| tr[t].to_string()));
            row
        }),
    )?;
    out.add(p)?;
    Ok(FastFluctSummary {
        monitored: cfg.fast_fluct.monitored.clone(),
        traces,
        v_min: cfg.reward.v_min,
        v_max: cfg.reward.v_max,
        max_decision_latency: latency,
        outputs: out,
    })
}

#[derive(Debug, Clone)]
pub struct PfSummary {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub outputs: Outputs,
}

/// Solves one profile hour without reactive control and writes the
/// node-phase voltages.
pub fn pf(cfg: &RunConfig, day: usize, hour: usize) -> Result<PfSummary> {
    let ws = Workspace::open(cfg)?;
    let d = ws
        .profiles
        .days
        .iter()
        .find(|d| d.day == day)
        .ok_or_else(|| Error::Config(format!("day {day} not in the profile set")))?;
    let pt = d
        .steps
        .get(hour)
        .ok_or_else(|| Error::Config(format!("step {hour} out of range (day has {})", d.steps.len())))?;
    let s = State::from_point(&ws.feeder, pt, hour);
    let sp = crate::env::denormalize_action(&Action::no_control(&ws.feeder), &s, &ws.feeder)?;
    let inj: Injection = crate::env::injection(&ws.feeder, &s, &sp);
    let sol = ws.pf.solve(&inj)?;

    let mut out = Outputs::default();
    let p = ws.path("pf.csv");
    write_rows(
        &p,
        &strings(["node_phase", "v_mag", "v_angle_deg"]),
        sol.v.iter().enumerate().map(|(i, v)| {
            vec![ws.feeder.index().label(i), v.norm().to_string(), v.arg().to_degrees().to_string()]
        }),
    )?;
    out.add(p)?;
    Ok(PfSummary {
        converged: sol.converged,
        iterations: sol.iterations,
        residual: sol.residual,
        outputs: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let cfg = RunConfig::desk();
        cfg.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let cfg = RunConfig { seed: 9, ..RunConfig::desk() };
        let a = cfg.derived_seed(Stream::Dataset);
        assert_eq!(a, cfg.derived_seed(Stream::Dataset));
        assert_ne!(a, cfg.derived_seed(Stream::Profiles));
        let other = RunConfig { seed: 10, ..RunConfig::desk() };
        assert_ne!(a, other.derived_seed(Stream::Dataset));
    }

    #[test]
    fn backend_names() {
        assert_eq!(Backend::parse("surrogate").unwrap(), Backend::Surrogate);
        assert_eq!(Backend::parse("truemodel").unwrap().label(), "truemodel");
        assert!(Backend::parse("true").is_err());
    }

    #[test]
    fn missing_checkpoints_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::desk()
        };
        let err = compare(&cfg).unwrap_err();
        assert_eq!(err.category(), "checkpoint");
        let err = train_agent(&cfg, Backend::Surrogate).unwrap_err();
        assert!(err.to_string().contains("train-surrogate"));
    }

    #[test]
    fn monitored_label_lookup() {
        let f = Feeder::bundled();
        assert_eq!(f.index().label(node_phase_by_label(&f, "9c").unwrap()), "9c");
        assert!(node_phase_by_label(&f, "9b").is_err());
    }

    #[test]
    fn table_lists_every_method() {
        let r = EvalReport {
            method: "no-control".into(),
            avg_deviation_pct: 1.5,
            phase_avg_deviation_pct: [1.0, 2.0, 1.5],
            max_drop_pct: 7.0,
            max_rise_pct: 6.0,
            violations: 3,
            failed_steps: 0,
            days: vec![],
        };
        let t = format_table(&[r.clone(), EvalReport { method: "x".into(), ..r }]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(1).unwrap().starts_with("no-control"));
    }

    #[test]
    fn pf_command_writes_every_node_phase() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::desk()
        };
        let s = pf(&cfg, 0, 12).unwrap();
        assert!(s.converged);
        let text = fs::read_to_string(dir.path().join("pf.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + Feeder::bundled().n_node_phases());
    }
}
