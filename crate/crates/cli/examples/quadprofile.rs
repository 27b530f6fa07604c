use drcbf_core::sim::{self, ControllerKind, PlantConfig};

fn main() {
    let base = drcbf_cli::config_io::load_scenario(std::path::Path::new("crates/cli/scenarios/quad_fig3.json")).unwrap();
    let mut cfg = base.clone();
    cfg.noise.seed = 9;
    cfg.controller = ControllerKind::Drcbf;
    let log = sim::run_scenario(&cfg).unwrap();
    let reference = match &cfg.plant {
        PlantConfig::Quadcopter { reference, .. } => *reference,
        _ => unreachable!(),
    };
    // Deviation and mask status every 25 steps.
    for (i, r) in log.records.iter().enumerate() {
        if i % 25 != 0 { continue; }
        let p_ref = reference.position(r.t);
        let dev = ((r.state[0] - p_ref[0]).powi(2) + (r.state[1] - p_ref[1]).powi(2)).sqrt();
        let masked = cfg.obstacles.iter().any(|o| o.clearance(p_ref[0], p_ref[1]) < 1.0);
        println!("t {:5.2} dev {:.3} {}", r.t, dev, if masked { "masked" } else { "OFF" });
    }
}
