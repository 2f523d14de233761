//! Self-test registry: gradient checks for every differentiable operation
//! and the full combined objective, oracle equivalence sweeps for the loss
//! and metrics, and the shard-equivalence check.

pub mod oracles;

use rand::Rng;

use crate::encoders::encode;
use crate::error::Result;
use crate::evalsuite::{auc, average_precision, eer};
use crate::fusion::{match_score, FusionConfig, Pooling};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{grad_check, Tensor};
use crate::objectives::{
    contrastive_loss_on_tape, matching_ce_on_tape, mine_pairs, ms_loss, ms_loss_with_selection,
    MiningConfig,
};
use crate::rng;
use crate::trainer::{gather_global_pool, split_into_shards};

/// Gradient tolerance for every check (64-bit, central differences).
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn push_grad(&mut self, report: &crate::numerics::GradCheckReport) {
        self.push(
            &report.name,
            report.passed(),
            format!("max rel err {:.3e}", report.max_rel_err),
        );
    }
}

fn unit_rows(t: &Tensor) -> Tensor {
    let mut tape = crate::numerics::Tape::new();
    let x = tape.leaf(t.clone());
    let n = tape.l2_normalize_rows(x);
    tape.value(n).clone()
}

/// Scalarize a matrix node as sum of squares via matmul with itself.
fn sq_norm(
    tape: &mut crate::numerics::Tape,
    x: crate::numerics::VarId,
) -> Result<crate::numerics::VarId> {
    // Collapse rows first so the result is 1x1 for any input shape.
    let pooled = tape.mean_rows(x);
    let t = tape.transpose(pooled);
    tape.matmul(pooled, t)
}

fn primitive_grad_checks(report: &mut SelftestReport) -> Result<()> {
    let mut r = rng::seeded(1001);
    let a = rng::random_tensor(&mut r, 3, 4, 0.9);
    let b = rng::random_tensor(&mut r, 4, 3, 0.9);
    let c = rng::random_tensor(&mut r, 3, 4, 0.9);
    let gain = rng::random_tensor(&mut r, 1, 4, 0.5);
    let bias = rng::random_tensor(&mut r, 1, 4, 0.5);

    let two = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
    report.push_grad(&grad_check("matmul", &two, GRAD_TOLERANCE, |t, ids| {
        let m = t.matmul(ids[0], ids[1])?;
        sq_norm(t, m)
    })?);

    let pair = vec![("a".to_string(), a.clone()), ("c".to_string(), c.clone())];
    report.push_grad(&grad_check("add", &pair, GRAD_TOLERANCE, |t, ids| {
        let s = t.add(ids[0], ids[1])?;
        sq_norm(t, s)
    })?);

    let one = vec![("a".to_string(), a.clone())];
    report.push_grad(&grad_check("scale", &one, GRAD_TOLERANCE, |t, ids| {
        let s = t.scale(ids[0], -1.7);
        sq_norm(t, s)
    })?);
    report.push_grad(&grad_check("tanh", &one, GRAD_TOLERANCE, |t, ids| {
        let s = t.tanh(ids[0]);
        sq_norm(t, s)
    })?);
    report.push_grad(&grad_check("transpose", &one, GRAD_TOLERANCE, |t, ids| {
        let s = t.transpose(ids[0]);
        sq_norm(t, s)
    })?);
    report.push_grad(&grad_check("softmax_rows", &one, GRAD_TOLERANCE, |t, ids| {
        let s = t.softmax_rows(ids[0]);
        sq_norm(t, s)
    })?);
    report.push_grad(&grad_check(
        "l2_normalize_rows",
        &one,
        GRAD_TOLERANCE,
        |t, ids| {
            let s = t.l2_normalize_rows(ids[0]);
            let m = t.mean_rows(s);
            let sm = t.softmax_rows(m);
            sq_norm(t, sm)
        },
    )?);
    report.push_grad(&grad_check("mean_rows", &one, GRAD_TOLERANCE, |t, ids| {
        let s = t.mean_rows(ids[0]);
        let st = t.transpose(s);
        t.matmul(s, st)
    })?);
    report.push_grad(&grad_check("row_col_slice_concat", &one, GRAD_TOLERANCE, |t, ids| {
        let row0 = t.row(ids[0], 0)?;
        let row1 = t.row(ids[0], 1)?;
        let col = t.col(ids[0], 2)?;
        let colt = t.transpose(col);
        let sliced = t.slice_cols(ids[0], 1, 2)?;
        let prod = t.matmul(colt, sliced)?;
        let wide = t.concat_cols(&[prod, prod])?;
        let rows = t.concat_rows(&[row0, row1])?;
        let rowst = t.transpose(rows);
        let mix = t.matmul(wide, rowst)?;
        sq_norm(t, mix)
    })?);

    let bias_case = vec![
        ("a".to_string(), a.clone()),
        ("bias".to_string(), bias.clone()),
    ];
    report.push_grad(&grad_check("add_row_vec", &bias_case, GRAD_TOLERANCE, |t, ids| {
        let s = t.add_row_vec(ids[0], ids[1])?;
        sq_norm(t, s)
    })?);

    let ln_case = vec![
        ("x".to_string(), a.clone()),
        ("gain".to_string(), gain),
        ("bias".to_string(), bias),
    ];
    report.push_grad(&grad_check("layer_norm", &ln_case, GRAD_TOLERANCE, |t, ids| {
        let s = t.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
        sq_norm(t, s)
    })?);
    Ok(())
}

fn loss_grad_checks(report: &mut SelftestReport, inject_fault: bool) -> Result<()> {
    let mut r = rng::seeded(1002);
    let raw = rng::random_tensor(&mut r, 8, 5, 1.0);
    let labels = vec![0usize, 0, 1, 1, 2, 2, 3, 3];
    let mining = MiningConfig::default();
    let selection = {
        let e = unit_rows(&raw);
        let s = crate::numerics::matmul(&e, &crate::numerics::transpose(&e))?;
        mine_pairs(&s, &labels, &mining)?
    };
    let params = vec![("embeddings".to_string(), raw.clone())];
    let sel = selection.clone();
    report.push_grad(&grad_check(
        "ms_loss(batch=8)",
        &params,
        GRAD_TOLERANCE,
        move |t, ids| {
            let e = t.l2_normalize_rows(ids[0]);
            let et = t.transpose(e);
            let s = t.matmul(e, et)?;
            ms_loss_with_selection(t, s, &sel, &mining)
        },
    )?);

    report.push_grad(&grad_check(
        "contrastive_loss",
        &params,
        GRAD_TOLERANCE,
        move |t, ids| {
            let e = t.l2_normalize_rows(ids[0]);
            let et = t.transpose(e);
            let s = t.matmul(e, et)?;
            contrastive_loss_on_tape(t, s, &labels, 0.5)
        },
    )?);

    let probs = Tensor::new(4, 1, vec![0.85, 0.25, 0.6, 0.15])?;
    let ce_params = vec![("probs".to_string(), probs)];
    report.push_grad(&grad_check(
        "matching_ce",
        &ce_params,
        GRAD_TOLERANCE,
        |t, ids| matching_ce_on_tape(t, ids[0], &[true, false, true, false]),
    )?);

    if inject_fault {
        // Record a deliberately wrong gradient for tanh so the harness must
        // catch it: d tanh = 1 - y^2, poisoned by a 5% scale.
        let one = vec![("a".to_string(), rng::random_tensor(&mut r, 2, 3, 1.0))];
        report.push_grad(&grad_check(
            "tanh(injected-fault)",
            &one,
            GRAD_TOLERANCE,
            |t, ids| {
                let y = t.tanh(ids[0]);
                let v = t.value(y).clone();
                let wrong = Tensor::from_raw(
                    v.rows(),
                    v.cols(),
                    v.data().iter().map(|x| 1.05 * (1.0 - x * x)).collect(),
                );
                t.custom_scalar(ids[0], v.data().iter().sum(), wrong)
            },
        )?);
    }
    Ok(())
}

fn full_objective_grad_check(report: &mut SelftestReport) -> Result<()> {
    // Tiny end-to-end model: both encoders, the fusion stack on a 2-token
    // batch, Eq. 4 + Eq. 5 combined by Eq. 6.
    let model_cfg = ModelConfig {
        encoder: crate::encoders::EncoderConfig {
            face_dim: 5,
            voice_dim: 4,
            hidden_dim: 6,
            embed_dim: 4,
        },
        fusion: FusionConfig {
            embed_dim: 4,
            hidden_dim: 4,
            num_heads: 2,
            num_layers: 1,
            ff_expansion: 2,
            pooling: Pooling::Mean,
        },
    };
    let mut model = ModelParams::init(&model_cfg, 17)?;
    let mut r = rng::seeded(1003);
    model.fusion.head_w = rng::random_tensor(&mut r, 4, 2, 0.5);
    let faces = rng::random_tensor(&mut r, 4, 5, 1.0);
    let voices = rng::random_tensor(&mut r, 4, 4, 1.0);
    let labels = vec![0usize, 0, 1, 1];
    let mining = MiningConfig::default();
    let delta = 0.9;

    // Freeze the pair selection from the unperturbed forward pass.
    let selection = {
        let mut tape = crate::numerics::Tape::new();
        let h = model.bind(&mut tape);
        let fx = tape.leaf(faces.clone());
        let vx = tape.leaf(voices.clone());
        let fe = encode(&mut tape, fx, &h.face_enc)?;
        let ve = encode(&mut tape, vx, &h.voice_enc)?;
        let all = tape.concat_rows(&[fe, ve])?;
        let allt = tape.transpose(all);
        let s = tape.matmul(all, allt)?;
        let mut both = labels.clone();
        both.extend_from_slice(&labels);
        mine_pairs(tape.value(s), &both, &mining)?
    };

    let named: Vec<(String, Tensor)> = model
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let n_params = named.len();
    let mut all_inputs = named;
    all_inputs.push(("faces".to_string(), faces));
    all_inputs.push(("voices".to_string(), voices));

    let template = model.clone();
    let report_gc = grad_check(
        "full_objective_eq6",
        &all_inputs,
        GRAD_TOLERANCE,
        move |tape, ids| {
            // The leaves carry the (possibly perturbed) tensors; only the
            // architecture comes from the template.
            let h = template.handles_from_ids(&ids[..n_params]);
            let fx = ids[n_params];
            let vx = ids[n_params + 1];
            let fe = encode(tape, fx, &h.face_enc)?;
            let ve = encode(tape, vx, &h.voice_enc)?;
            let all = tape.concat_rows(&[fe, ve])?;
            let allt = tape.transpose(all);
            let s = tape.matmul(all, allt)?;
            let mut both = vec![0usize, 0, 1, 1];
            both.extend_from_slice(&[0, 0, 1, 1]);
            let l_ms = ms_loss_with_selection(tape, s, &selection, &mining)?;
            // Matching pairs: the two same-label diagonal pairs as positives
            // and two cross-label pairs as negatives.
            let pairs = [(0usize, 0usize, true), (2, 2, true), (0, 2, false), (2, 0, false)];
            let mut scores = Vec::new();
            let mut targets = Vec::new();
            for (i, j, positive) in pairs {
                let f = tape.row(fe, i)?;
                let v = tape.row(ve, j)?;
                scores.push(match_score(tape, f, v, &h.fusion)?);
                targets.push(positive);
            }
            let probs = tape.concat_rows(&scores)?;
            let l_ce = matching_ce_on_tape(tape, probs, &targets)?;
            let wms = tape.scale(l_ms, delta);
            let wce = tape.scale(l_ce, 1.0 - delta);
            tape.add(wms, wce)
        },
    )?;
    report.push_grad(&report_gc);
    Ok(())
}

fn oracle_checks(report: &mut SelftestReport, instances: usize) -> Result<()> {
    let mut r = rng::seeded(1004);
    let mining = MiningConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 2 * r.random_range(2..=16usize);
        let d = r.random_range(3..=8usize);
        let e = unit_rows(&rng::random_tensor(&mut r, n, d, 1.0));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..4usize)).collect();
        let ours = ms_loss(&e, &labels, &mining)?;
        let brute = oracles::ms_loss_bruteforce(&e, &labels, &mining);
        worst = worst.max((ours - brute).abs());
    }
    report.push(
        "ms_loss_vs_bruteforce",
        worst <= 1e-10,
        format!("max abs diff {worst:.3e} over {instances} batches"),
    );

    let mut worst_auc: f64 = 0.0;
    let mut worst_eer: f64 = 0.0;
    let mut worst_ap: f64 = 0.0;
    for _ in 0..instances {
        let n = r.random_range(3..=50usize);
        let quantize = r.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s = r.random::<f64>();
                if quantize {
                    (s * 8.0).round() / 8.0
                } else {
                    s
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        if n > 1 {
            labels[1] = false;
        }
        worst_auc = worst_auc
            .max((auc(&scores, &labels)? - oracles::auc_pair_counting(&scores, &labels)).abs());
        worst_eer =
            worst_eer.max((eer(&scores, &labels)? - oracles::eer_dense_sweep(&scores, &labels)).abs());

        let mut rel: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        rel[0] = true;
        let total = rel.iter().filter(|&&x| x).count();
        worst_ap = worst_ap
            .max((average_precision(&rel, total)? - oracles::ap_definition(&rel, total)).abs());
    }
    report.push(
        "auc_vs_pair_counting",
        worst_auc == 0.0,
        format!("max abs diff {worst_auc:.3e} over {instances} instances"),
    );
    report.push(
        "eer_vs_dense_sweep",
        worst_eer <= 1e-9,
        format!("max abs diff {worst_eer:.3e} over {instances} instances"),
    );
    report.push(
        "ap_vs_definition",
        worst_ap == 0.0,
        format!("max abs diff {worst_ap:.3e} over {instances} instances"),
    );
    Ok(())
}

/// Hard-negative mining over gathered shards must not depend on the number
/// of simulated workers.
pub fn shard_equivalence_check(pools: usize, seed: u64) -> Result<(bool, String)> {
    let mut r = rng::seeded(seed);
    for p in 0..pools {
        let n = r.random_range(6..=24usize);
        let d = r.random_range(3..=8usize);
        let f = rng::random_tensor(&mut r, n, d, 1.0);
        let v = rng::random_tensor(&mut r, n, d, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..4usize)).collect();
        let mut reference = None;
        for workers in [1usize, 2, 4] {
            let shards = split_into_shards(&f, &v, &labels, workers);
            let (gf, gv, gl) = gather_global_pool(&shards)?;
            let pairs = crate::objectives::mine_hard_negatives(&gf, &gv, &gl, &gl, 1)?;
            match &reference {
                None => reference = Some(pairs),
                Some(expect) => {
                    if expect != &pairs {
                        return Ok((
                            false,
                            format!("pool {p}: {workers}-worker mining diverged"),
                        ));
                    }
                }
            }
        }
    }
    Ok((true, format!("{pools} random pools, workers 1/2/4")))
}

/// Run every check. `oracle_instances` controls the sweep sizes; the
/// default command uses 1000.
pub fn run_selftest(oracle_instances: usize, inject_fault: bool) -> Result<SelftestReport> {
    let mut report = SelftestReport::default();
    primitive_grad_checks(&mut report)?;
    loss_grad_checks(&mut report, inject_fault)?;
    full_objective_grad_check(&mut report)?;
    oracle_checks(&mut report, oracle_instances)?;
    let (ok, detail) = shard_equivalence_check(100, 1005)?;
    report.push("hard_negative_shard_equivalence", ok, detail);
    Ok(report)
}
