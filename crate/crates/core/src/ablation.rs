//! The six-row ablation grid over loss choice, fusion-encoder scoring, and
//! effective pair selection, evaluated on matching and retrieval.

use serde::{Deserialize, Serialize};

use crate::config::{AblationSwitches, RunConfig};
use crate::error::Result;
use crate::evalsuite::{evaluate, EvalReport, ProtocolSet, ScorerKind};
use crate::synthworld::Dataset;
use crate::trainer::{train, LossKind};

/// One grid configuration and the metrics it reached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub loss: LossKind,
    pub fusion_encoder: bool,
    pub effective_pair_selection: bool,
    pub best_val_auc: f64,
    pub final_c: usize,
    pub report: EvalReport,
}

impl AblationRow {
    pub fn mean_matching_acc_u(&self) -> f64 {
        (self.report.acc_v2f_u.unwrap_or(0.0) + self.report.acc_f2v_u.unwrap_or(0.0)) / 2.0
    }

    pub fn mean_map(&self) -> f64 {
        (self.report.map_v2f.unwrap_or(0.0) + self.report.map_f2v.unwrap_or(0.0)) / 2.0
    }
}

/// Row order mirrors the reference ablation table.
pub const GRID: [(LossKind, bool, bool); 6] = [
    (LossKind::Contrastive, false, false),
    (LossKind::Contrastive, true, false),
    (LossKind::MultiSimilarity, false, false),
    (LossKind::MultiSimilarity, false, true),
    (LossKind::MultiSimilarity, true, false),
    (LossKind::MultiSimilarity, true, true),
];

/// Train and evaluate every grid row on the same dataset with one seed.
pub fn run_grid(dataset: &Dataset, base: &RunConfig, seed: u64) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(GRID.len());
    for &(loss, fusion_encoder, eps) in &GRID {
        let switches = AblationSwitches {
            loss,
            fusion_scoring: fusion_encoder,
            effective_pair_selection: eps,
            fixed_c: base.ablation.fixed_c,
        };
        let train_identities = {
            let mut ids: Vec<u64> = dataset.train.iter().map(|v| v.identity_id).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        let mut train_cfg = switches.apply(&base.train, dataset.train.len(), train_identities)?;
        train_cfg.seed = seed;
        let outcome = train(dataset, &base.model, &train_cfg)?;
        let scorer = if fusion_encoder {
            ScorerKind::Fusion
        } else {
            ScorerKind::Cosine
        };
        let report = evaluate(
            &outcome.best.params,
            &dataset.test,
            &base.eval,
            ProtocolSet {
                verification: false,
                matching: true,
                retrieval: true,
            },
            scorer,
            &base.hash(),
        )?;
        rows.push(AblationRow {
            loss,
            fusion_encoder,
            effective_pair_selection: eps,
            best_val_auc: outcome.best.val_metric,
            final_c: outcome.final_c,
            report,
        });
    }
    Ok(rows)
}

/// Markdown table of a grid result, one line per row.
pub fn to_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "| Loss | Fusion encoder | Effective pair selection | V2F ACC (U) | F2V ACC (U) | mAP V2F | mAP F2V |\n|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let loss = match r.loss {
            LossKind::Contrastive => "Contrastive",
            LossKind::MultiSimilarity => "MultiSimilarity",
        };
        let mark = |b: bool| if b { "yes" } else { "no" };
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            loss,
            mark(r.fusion_encoder),
            mark(r.effective_pair_selection),
            r.report.acc_v2f_u.unwrap_or(f64::NAN),
            r.report.acc_f2v_u.unwrap_or(f64::NAN),
            r.report.map_v2f.unwrap_or(f64::NAN),
            r.report.map_f2v.unwrap_or(f64::NAN),
        ));
    }
    out
}
