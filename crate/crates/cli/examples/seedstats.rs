use drcbf_core::sim::{self, ControllerKind};

fn main() {
    let path = std::env::args().nth(1).unwrap_or("crates/cli/scenarios/dubins_fig2.json".into());
    let base = drcbf_cli::config_io::load_scenario(std::path::Path::new(&path)).unwrap();
    let mut deltas = Vec::new();
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut cfg = base.clone();
        cfg.noise.seed = seed;
        let cmp = sim::compare_controllers(&cfg, 500, seed ^ 0xabcd).unwrap();
        let d = cmp.clearance_delta[0];
        let both_goal = format!("{:?}/{:?}", cmp.cbf.termination, cmp.drcbf.termination);
        println!(
            "seed {seed:2}: cbf {:.4} drcbf {:.4} delta {:+.4} [{both_goal}] viol_dr {:.4}",
            cmp.cbf.min_clearance[0], cmp.drcbf.min_clearance[0], d, cmp.drcbf.violation_rate_aggregate
        );
        if d > 0.0 { wins += 1; }
        deltas.push(d);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    println!("wins {wins}/20, mean delta {mean:.4}");
}
