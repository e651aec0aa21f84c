//! Second-by-second PV ramp. Without trained agents only the no-control
//! trace is shown; point the example at a directory produced by
//! `compare_methods` to include both agents.
//!
//! ```text
//! cargo run --release --example fast_fluctuation -- [run_dir]
//! ```

use voltreg::env::{Action, RewardConfig, State, VrEnv};
use voltreg::grid::Feeder;
use voltreg::harness::{self, node_phase_by_label, RunConfig};
use voltreg::powerflow::PowerFlow;
use voltreg::profiles::{fast_fluctuation, midday_base};

fn main() -> voltreg::Result<()> {
    if let Some(dir) = std::env::args().nth(1) {
        let cfg = RunConfig {
            out_dir: dir.into(),
            ..RunConfig::desk()
        };
        let s = harness::fast_fluct(&cfg)?;
        for (m, _) in &s.traces {
            println!("{m:<11} in band {:5.1}%", 100.0 * s.in_band_fraction(m).unwrap_or(0.0));
        }
        println!("slowest decision {:?}", s.max_decision_latency);
        return Ok(());
    }

    let feeder = Feeder::bundled();
    let pf = PowerFlow::new(&feeder)?;
    let env = VrEnv::new(&feeder, &pf, RewardConfig::default())?;
    let monitored = node_phase_by_label(&feeder, "9c")?;
    let ramp = fast_fluctuation(&feeder, &midday_base(&feeder, 0.95));
    println!("second  pv MW  |V_9c|");
    for (t, pt) in ramp.days[0].steps.iter().enumerate().step_by(5) {
        let s = State::from_point(&feeder, pt, 13);
        let o = env.step(&s, &Action::no_control(&feeder))?;
        let v = o.v_mag.expect("solved")[monitored];
        println!("{t:>6} {:>6.3} {v:>7.4}{}", pt.pv_p_mw[0], if v > 1.05 { "  over" } else { "" });
    }
    Ok(())
}
