//! Build the three-phase admittance and impedance matrices of the bundled
//! feeder and check that the free-node partitions are inverses.

use voltreg::grid::{Feeder, SLACK_PHASES};
use voltreg::linalg;

fn main() -> voltreg::Result<()> {
    let feeder = Feeder::bundled();
    let n = feeder.n_node_phases();
    println!("{}: {} buses, {} node-phases ({} free)", feeder.name, feeder.buses.len(), n, feeder.n_free());

    let y = feeder.build_ybus();
    let y_ff = feeder.ybus_free();
    let z = feeder.build_zbus()?;
    println!("identity residual max |Z·Y_ff − I| = {:.2e}", linalg::identity_residual(&z, &y_ff));

    // diagonal entries are the driving-point admittances / impedances
    println!("\n{:>5} {:>22} {:>22}", "node", "Y_ii (pu)", "Z_ii (pu)");
    for i in SLACK_PHASES..n {
        let k = i - SLACK_PHASES;
        println!(
            "{:>5} {:>10.3}{:+10.3}j {:>10.5}{:+10.5}j",
            feeder.index().label(i),
            y[(i, i)].re,
            y[(i, i)].im,
            z[(k, k)].re,
            z[(k, k)].im
        );
    }

    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (y[(i, j)] - y[(j, i)]).norm())
        .fold(0.0, f64::max);
    println!("\nmax |Y_ij − Y_ji| = {asym:.1e}");
    Ok(())
}
