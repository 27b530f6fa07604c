use drcbf_core::sim;

fn main() {
    let path = std::env::args().nth(1).unwrap_or("crates/cli/scenarios/quad_fig3.json".into());
    let base = drcbf_cli::config_io::load_scenario(std::path::Path::new(&path)).unwrap();
    let mut all_four_wins = 0;
    let mut rmse_ok = 0;
    let mut worst_rmse = 0.0f64;
    for seed in 0..20u64 {
        let mut cfg = base.clone();
        cfg.noise.seed = seed;
        let cmp = sim::compare_controllers(&cfg, 300, seed ^ 0xabcd).unwrap();
        let wins: Vec<bool> = cmp.clearance_delta.iter().map(|d| *d > 0.0).collect();
        let all4 = wins.iter().all(|w| *w);
        if all4 { all_four_wins += 1; }
        let rc = cmp.cbf.tracking_rmse_off_obstacle.unwrap();
        let rd = cmp.drcbf.tracking_rmse_off_obstacle.unwrap();
        worst_rmse = worst_rmse.max(rc).max(rd);
        if rc <= 0.2 && rd <= 0.2 { rmse_ok += 1; }
        println!(
            "seed {seed:2}: deltas {:?} all4={all4} rmse cbf {rc:.3} drcbf {rd:.3} [{:?}/{:?}] fb {}/{}",
            cmp.clearance_delta.iter().map(|d| (d * 1e3).round() / 1e3).collect::<Vec<_>>(),
            cmp.cbf.termination, cmp.drcbf.termination, cmp.cbf.fallback_steps, cmp.drcbf.fallback_steps
        );
    }
    println!("all-four wins {all_four_wins}/20, rmse<=0.2 {rmse_ok}/20, worst rmse {worst_rmse:.3}");
}
