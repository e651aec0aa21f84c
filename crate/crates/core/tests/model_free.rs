//! Kept as the only test in its binary so the global solve counter sees no
//! concurrent callers.

mod common;

use voltreg::harness::{self, Backend};
use voltreg::powerflow::solve_calls;

#[test]
fn surrogate_training_never_calls_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path());
    harness::gen_data(&cfg).unwrap();
    harness::train_surrogate(&cfg).unwrap();

    let before = solve_calls();
    let s = harness::train_agent(&cfg, Backend::Surrogate).unwrap();
    assert!(s.log.updates > 0);
    assert_eq!(solve_calls(), before);

    let before = solve_calls();
    harness::train_agent(&cfg, Backend::TrueModel).unwrap();
    let steps = cfg.agent.episodes * voltreg::profiles::HOURS_PER_DAY;
    assert_eq!(solve_calls() - before, steps as u64);
}
