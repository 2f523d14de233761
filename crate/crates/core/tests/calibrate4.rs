//! Scratch ablation-trend probe (removed before release).

use faa_core::ablation::run_grid;
use faa_core::config::RunConfig;
use faa_core::synthworld::generate_world;

#[test]
#[ignore]
fn ablation_trends() {
    let mut cfg = RunConfig::default();
    cfg.world.cross_modal_strength = std::env::var("CAL_S").map(|v| v.parse().unwrap()).unwrap_or(0.65);
    cfg.world.noise_std = std::env::var("CAL_NOISE").map(|v| v.parse().unwrap()).unwrap_or(0.3);
    cfg.train.hard_negative_k = std::env::var("CAL_K").map(|v| v.parse().unwrap()).unwrap_or(1);
    cfg.train.max_epochs = 15;
    cfg.eval.matching_trials = 400;
    cfg.eval.retrieval_probes = 48;
    let dataset = generate_world(&cfg.world).unwrap();
    let t0 = std::time::Instant::now();
    cfg.train.contrastive_margin = std::env::var("CAL_MARGIN").map(|v| v.parse().unwrap()).unwrap_or(0.5);
    cfg.train.max_epochs = std::env::var("CAL_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(15);
    let nseeds: u64 = std::env::var("CAL_SEEDS").map(|v| v.parse().unwrap()).unwrap_or(5);
    for seed in 0..nseeds {
        let rows = run_grid(&dataset, &cfg, seed).unwrap();
        println!("--- seed {seed} ({:.0}s elapsed)", t0.elapsed().as_secs_f64());
        for r in &rows {
            println!(
                "  {:?} fusion={} eps={}  acc_u {:.3} map {:.3} (v2f {:.3} f2v {:.3}) final_c {}",
                r.loss,
                r.fusion_encoder as u8,
                r.effective_pair_selection as u8,
                r.mean_matching_acc_u(),
                r.mean_map(),
                r.report.map_v2f.unwrap(),
                r.report.map_f2v.unwrap(),
                r.final_c
            );
        }
        let acc = |i: usize| rows[i].mean_matching_acc_u();
        let map = |i: usize| rows[i].mean_map();
        println!(
            "  5a: ms>cl map (r3>r1): {} ({:.3} vs {:.3}); (r5>r2): {} ({:.3} vs {:.3})",
            map(2) > map(0), map(2), map(0), map(4) > map(1), map(4), map(1)
        );
        println!(
            "  5b: fusion-vs-cosine under CL: {:+.3}; under MS: {:+.3}",
            acc(1) - acc(0), acc(4) - acc(2)
        );
        println!("  5c: eps>=fixed map (r6>=r5): {} ({:.3} vs {:.3})", map(5) >= map(4), map(5), map(4));
    }
}
