//! Train a DDPG agent directly on the power flow and compare it with no
//! control on held-out days.
//!
//! ```text
//! cargo run --release --example ddpg_training -- [episodes]
//! ```

use voltreg::ddpg::{evaluate, evaluate_no_control, fit_observation_scaler, train_with, Agent, AgentConfig};
use voltreg::env::{RewardConfig, State, VrEnv};
use voltreg::grid::Feeder;
use voltreg::powerflow::PowerFlow;
use voltreg::profiles::{split_days, synthetic_year, DayProfile, SyntheticConfig};

fn main() -> voltreg::Result<()> {
    let episodes: usize = std::env::args().nth(1).map_or(300, |s| s.parse().expect("episodes"));
    let feeder = Feeder::bundled();
    let pf = PowerFlow::new(&feeder)?;
    let year = synthetic_year(&feeder, &SyntheticConfig::default(), 1);
    let (train_idx, test_idx) = split_days(year.len(), 30, 2)?;
    let train: Vec<&DayProfile> = train_idx.iter().map(|&i| &year.days[i]).collect();
    let test: Vec<&DayProfile> = test_idx.iter().map(|&i| &year.days[i]).collect();

    let reward = RewardConfig::default();
    let env = VrEnv::new(&feeder, &pf, reward)?;
    let cfg = AgentConfig {
        episodes,
        ..AgentConfig::desk()
    };
    let scaler = fit_observation_scaler(&feeder, &train);
    let mut agent = Agent::new(State::flat_dim(&feeder), feeder.n_devices(), scaler, cfg, 11)?;
    let log = train_with(&mut agent, &env, &train, 5, |e, r| {
        if e % 50 == 0 {
            println!("episode {e:>5}  return {r:8.3}");
        }
    })?;
    let smooth = log.smoothed(100);
    println!("mean100 return {:.3} -> {:.3}", smooth[0], smooth[smooth.len() - 1]);

    let (base, _) = evaluate_no_control(&feeder, &pf, &reward, &test)?;
    let (rep, _) = evaluate("ddpg", &agent, &feeder, &pf, &reward, &test)?;
    print!("{}", voltreg::harness::format_table(&[base, rep]));
    Ok(())
}
