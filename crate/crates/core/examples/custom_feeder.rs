//! Describe a feeder in JSON and solve it. The schema is the one used by the
//! bundled `data/feeder10.json`.

use voltreg::grid::Feeder;
use voltreg::powerflow::{Injection, PowerFlow};

const FEEDER: &str = r#"{
  "name": "three-bus",
  "s_base_mva": 1.0,
  "v0": 1.0,
  "buses": [
    {"id": 0, "phases": "abc", "slack": true, "v_base_kv": 2.4018},
    {"id": 1, "phases": "abc", "v_base_kv": 2.4018},
    {"id": 2, "phases": "a", "v_base_kv": 2.4018}
  ],
  "lines": [
    {"from": 0, "to": 1, "phases": "abc",
     "z_ohm": [[[0.35, 1.02], [0.16, 0.50], [0.16, 0.42]],
               [[0.16, 0.50], [0.34, 1.05], [0.15, 0.39]],
               [[0.16, 0.42], [0.15, 0.39], [0.35, 1.04]]]},
    {"from": 1, "to": 2, "phases": "a",
     "z_ohm": [[[0.40, 0.45], [0, 0], [0, 0]], [[0, 0], [0, 0], [0, 0]], [[0, 0], [0, 0], [0, 0]]]}
  ],
  "loads": [
    {"bus": 1, "phase": "b", "p_mw": 0.2, "q_mvar": 0.07},
    {"bus": 2, "phase": "a", "p_mw": 0.1, "q_mvar": 0.03}
  ],
  "pvs": [{"bus": 2, "phase": "a", "p_rated_mw": 0.3, "s_rated_mva": 0.33}],
  "svcs": []
}"#;

fn main() -> voltreg::Result<()> {
    let feeder = Feeder::from_json_str(FEEDER, "three-bus")?;
    let pf = PowerFlow::new(&feeder)?;
    let mut inj = Injection::zeros(feeder.n_node_phases());
    for load in &feeder.loads {
        let i = feeder.node_phase(load.bus, load.phase).expect("validated");
        inj.p[i] -= load.p_nom;
        inj.q[i] -= load.q_nom;
    }
    let sol = pf.solve(&inj)?;
    for (i, v) in sol.v.iter().enumerate() {
        println!("{:>3} |V| = {:.4} p.u.", feeder.index().label(i), v.norm());
    }
    Ok(())
}
