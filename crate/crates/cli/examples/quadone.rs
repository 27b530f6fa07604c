use drcbf_core::sim::{self, ControllerKind};

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let mut cfg = drcbf_cli::config_io::load_scenario(std::path::Path::new(&path)).unwrap();
    cfg.noise.seed = 9;
    cfg.controller = ControllerKind::Drcbf;
    let log = sim::run_scenario(&cfg).unwrap();
    let m = sim::monte_carlo_violation_rate(&cfg, &log, 100, 1).unwrap();
    println!("{}: clearances {:?} max_cvar {:.4}", path, m.min_clearance, m.max_cvar);
    println!("  cvar at step 100: {:?}", log.records[100].cvar_values);
}
