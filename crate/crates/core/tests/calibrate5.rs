//! Scratch fusion-head training probe (removed before release).

use faa_core::config::RunConfig;
use faa_core::evalsuite::{evaluate, EvalConfig, ProtocolSet, ScorerKind};
use faa_core::synthworld::generate_world;
use faa_core::trainer::train;

#[test]
#[ignore]
fn fusion_head_gap() {
    let k: usize = std::env::var("CAL_K").map(|v| v.parse().unwrap()).unwrap_or(1);
    let mut cfg = RunConfig::default();
    cfg.train.hard_negative_k = k;
    if let Ok(s) = std::env::var("CAL_S") {
        cfg.world.cross_modal_strength = s.parse().unwrap();
    }
    if let Ok(n) = std::env::var("CAL_NOISE") {
        cfg.world.noise_std = n.parse().unwrap();
    }
    let dataset = generate_world(&cfg.world).unwrap();
    let eval = EvalConfig {
        matching_trials: 600,
        verification_pairs: 300,
        retrieval_probes: 32,
        ..cfg.eval
    };
    for epochs in [10usize, 20, 30] {
        let mut tc = cfg.train.clone();
        tc.max_epochs = epochs;
        let outcome = train(&dataset, &cfg.model, &tc).unwrap();
        let protocols = ProtocolSet { verification: false, matching: true, retrieval: true };
        let f = evaluate(&outcome.best.params, &dataset.test, &eval, protocols, ScorerKind::Fusion, "x").unwrap();
        let c = evaluate(&outcome.best.params, &dataset.test, &eval, protocols, ScorerKind::Cosine, "x").unwrap();
        println!(
            "k={k} ep={epochs}: fusion acc {:.3}/{:.3} map {:.3} | cosine acc {:.3}/{:.3} map {:.3}",
            f.acc_v2f_u.unwrap(), f.acc_f2v_u.unwrap(), (f.map_v2f.unwrap()+f.map_f2v.unwrap())/2.0,
            c.acc_v2f_u.unwrap(), c.acc_f2v_u.unwrap(), (c.map_v2f.unwrap()+c.map_f2v.unwrap())/2.0
        );
    }
}
