use drcbf_core::sim::{self, ControllerKind};

fn main() {
    let base = drcbf_cli::config_io::load_scenario(std::path::Path::new("/tmp/dubins_b0.75.json")).unwrap();
    let mut cfg = base.clone();
    cfg.noise.seed = 0;
    cfg.controller = ControllerKind::Cbf;
    let log = sim::run_scenario(&cfg).unwrap();
    println!("termination {:?} steps {} fallbacks {}", log.termination, log.records.len(), log.fallback_steps);
    for r in log.records.iter().filter(|r| !matches!(r.fallback, drcbf_core::barrier::Fallback::None)).take(5) {
        println!("t={:.2} state={:?} h={:?} cvar={:?} fb={:?}", r.t, r.state, r.h_values, r.cvar_values, r.fallback);
    }
}
