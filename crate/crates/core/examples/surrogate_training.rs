//! Generate solved operating points, fit the voltage surrogate and report its
//! test error.
//!
//! ```text
//! cargo run --release --example surrogate_training -- [n_samples] [epochs]
//! ```

use voltreg::grid::Feeder;
use voltreg::harness::RunConfig;
use voltreg::powerflow::PowerFlow;
use voltreg::profiles::{synthetic_year, SyntheticConfig};
use voltreg::surrogate::{evaluate_mae, generate_dataset, train_surrogate_with, Dataset, SurrogateConfig};

fn main() -> voltreg::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(3000, |s| s.parse().expect("sample count"));
    let epochs: usize = args.next().map_or(40, |s| s.parse().expect("epochs"));

    let feeder = Feeder::bundled();
    let pf = PowerFlow::new(&feeder)?;
    let year = synthetic_year(&feeder, &SyntheticConfig::default(), 1);
    let (samples, log) = generate_dataset(&feeder, &pf, &year, n, 7)?;
    println!("{} samples, {} draws discarded", samples.len(), log.discarded);

    let data = Dataset::with_split(samples, n * 5 / 6, 1)?;
    let cfg = SurrogateConfig {
        epochs,
        ..RunConfig::desk().surrogate
    };
    let (model, loss) = train_surrogate_with(&feeder, &data.train_samples(), &cfg, |e, l| {
        if e % 10 == 0 {
            println!("epoch {e:>4}  train mse {l:.3e}");
        }
    })?;
    let rep = evaluate_mae(&model, &data.test_samples())?;
    println!(
        "loss {:.2e} -> {:.2e}; test mae {:.2e} p.u., max {:.2e} p.u.",
        loss[0],
        loss[loss.len() - 1],
        rep.mae,
        rep.max_error
    );
    Ok(())
}
