//! The whole pipeline through the harness: dataset, surrogate, both agents
//! and the comparison table, written to a directory.
//!
//! ```text
//! cargo run --release --example compare_methods -- [out_dir]
//! ```

use std::path::PathBuf;

use voltreg::harness::{self, Backend, RunConfig};

fn main() -> voltreg::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("runs/compare"), PathBuf::from);
    let cfg = RunConfig {
        out_dir: out.clone(),
        ..RunConfig::desk()
    };
    harness::gen_data(&cfg)?;
    let s = harness::train_surrogate(&cfg)?;
    println!("surrogate test mae {:.2e}", s.report.mae);
    for backend in [Backend::Surrogate, Backend::TrueModel] {
        harness::train_agent(&cfg, backend)?;
    }
    let cmp = harness::compare(&cfg)?;
    print!("{}", harness::format_table(&cmp.reports));
    println!("outputs in {}", out.display());
    Ok(())
}
