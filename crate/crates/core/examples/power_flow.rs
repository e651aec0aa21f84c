//! Solve the bundled feeder at one hour of a synthetic day and print every
//! node-phase voltage next to the independent mismatch check.
//!
//! ```text
//! cargo run --release --example power_flow -- [day] [hour]
//! ```

use voltreg::env::{self, Action, State};
use voltreg::grid::Feeder;
use voltreg::powerflow::{self, PowerFlow, V_MAX, V_MIN};
use voltreg::profiles::{synthetic_year, SyntheticConfig};

fn main() -> voltreg::Result<()> {
    let mut args = std::env::args().skip(1);
    let day: usize = args.next().map_or(172, |s| s.parse().expect("day index"));
    let hour: usize = args.next().map_or(13, |s| s.parse().expect("hour"));

    let feeder = Feeder::bundled();
    let pf = PowerFlow::new(&feeder)?;
    let year = synthetic_year(&feeder, &SyntheticConfig::default(), 1);
    let state = State::from_point(&feeder, &year.days[day].steps[hour], hour);
    let sp = env::denormalize_action(&Action::no_control(&feeder), &state, &feeder)?;
    let inj = env::injection(&feeder, &state, &sp);

    let sol = pf.solve(&inj)?;
    println!(
        "{} day {day} hour {hour}: converged={} after {} iterations, residual {:.2e}",
        feeder.name, sol.converged, sol.iterations, sol.residual
    );
    let (dp, dq) = powerflow::mismatch(&feeder, &sol.v, &inj);
    println!("independent mismatch max-norm {:.2e}\n", powerflow::mismatch_norm(&dp, &dq));

    println!("{:>5} {:>8} {:>9} {:>8} {:>8}", "node", "|V| pu", "angle deg", "P inj", "Q inj");
    for (i, v) in sol.v.iter().enumerate() {
        let flag = if i >= 3 && !(V_MIN..=V_MAX).contains(&v.norm()) { "  out of band" } else { "" };
        println!(
            "{:>5} {:>8.4} {:>9.3} {:>8.4} {:>8.4}{flag}",
            feeder.index().label(i),
            v.norm(),
            v.arg().to_degrees(),
            inj.p[i],
            inj.q[i]
        );
    }
    Ok(())
}
