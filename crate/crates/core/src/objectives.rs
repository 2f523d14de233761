//! Loss mathematics: pair mining, multi-similarity loss, global hard
//! negative mining, matching cross-entropy, and the combined objective.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{FaaError, Result};
use crate::numerics::{cosine_similarity_matrix, Tape, Tensor, VarId};

/// Positive-pair mining rule. The paper's Eq. 3 literally thresholds with a
/// min over negatives; the multi-similarity formulation it cites uses a max.
/// The max form is the default; the literal min form stays available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningRule {
    AsPaper,
    MsOriginal,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MiningConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub rule: MiningRule,
    /// Ablation switch: skip mining and use all positives/negatives.
    pub mine: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            alpha: 2.0,
            beta: 40.0,
            lambda: 1.0,
            rule: MiningRule::MsOriginal,
            mine: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(FaaError::Config("epsilon must be >= 0".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(FaaError::Config("alpha and beta must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-anchor selected pair indices. Selections never include the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub anchors: Vec<AnchorSelection>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorSelection {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl PairSelection {
    pub fn is_empty(&self) -> bool {
        self.anchors
            .iter()
            .all(|a| a.positives.is_empty() && a.negatives.is_empty())
    }
}

/// Mine informative pairs per anchor from a batch similarity matrix.
///
/// A negative j is kept iff S_ij > min over anchor's positives of S_im - eps.
/// A positive j is kept iff S_ij < (max|min over anchor's negatives of S_im)
/// + eps, per the configured rule. Anchors lacking positives or negatives
/// contribute empty selections.
pub fn mine_pairs(s: &Tensor, labels: &[usize], config: &MiningConfig) -> Result<PairSelection> {
    config.validate()?;
    let n = labels.len();
    if s.shape() != (n, n) {
        return Err(FaaError::Shape(format!(
            "mine_pairs: similarity is {:?}, labels give {n}x{n}",
            s.shape()
        )));
    }
    let mut anchors = Vec::with_capacity(n);
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            anchors.push(AnchorSelection::default());
            continue;
        }
        if !config.mine {
            anchors.push(AnchorSelection {
                positives,
                negatives,
            });
            continue;
        }
        let min_pos = positives
            .iter()
            .map(|&j| s.at(i, j))
            .fold(f64::INFINITY, f64::min);
        let neg_ref = match config.rule {
            MiningRule::MsOriginal => negatives
                .iter()
                .map(|&j| s.at(i, j))
                .fold(f64::NEG_INFINITY, f64::max),
            MiningRule::AsPaper => negatives
                .iter()
                .map(|&j| s.at(i, j))
                .fold(f64::INFINITY, f64::min),
        };
        anchors.push(AnchorSelection {
            positives: positives
                .into_iter()
                .filter(|&j| s.at(i, j) < neg_ref + config.epsilon)
                .collect(),
            negatives: negatives
                .into_iter()
                .filter(|&j| s.at(i, j) > min_pos - config.epsilon)
                .collect(),
        });
    }
    Ok(PairSelection { anchors })
}

/// Multi-similarity loss value and its gradient w.r.t. the similarity
/// matrix, for a fixed pair selection.
pub fn ms_loss_on_similarity(
    s: &Tensor,
    selection: &PairSelection,
    config: &MiningConfig,
) -> (f64, Tensor) {
    let n = selection.anchors.len();
    let norm = 1.0 / n as f64;
    let (alpha, beta, lambda) = (config.alpha, config.beta, config.lambda);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(s.rows(), s.cols());
    for (i, anchor) in selection.anchors.iter().enumerate() {
        if !anchor.positives.is_empty() {
            let terms: Vec<f64> = anchor
                .positives
                .iter()
                .map(|&k| (-alpha * (s.at(i, k) - lambda)).exp())
                .collect();
            let sum: f64 = terms.iter().sum();
            loss += norm / alpha * (1.0 + sum).ln();
            for (&k, t) in anchor.positives.iter().zip(&terms) {
                grad.set(i, k, grad.at(i, k) - norm * t / (1.0 + sum));
            }
        }
        if !anchor.negatives.is_empty() {
            let terms: Vec<f64> = anchor
                .negatives
                .iter()
                .map(|&k| (beta * (s.at(i, k) - lambda)).exp())
                .collect();
            let sum: f64 = terms.iter().sum();
            loss += norm / beta * (1.0 + sum).ln();
            for (&k, t) in anchor.negatives.iter().zip(&terms) {
                grad.set(i, k, grad.at(i, k) + norm * t / (1.0 + sum));
            }
        }
    }
    (loss, grad)
}

/// Record the MS loss over a similarity matrix already on the tape, mining
/// pairs from its forward values.
pub fn ms_loss_on_tape(
    tape: &mut Tape,
    sim: VarId,
    labels: &[usize],
    config: &MiningConfig,
) -> Result<VarId> {
    let selection = mine_pairs(tape.value(sim), labels, config)?;
    ms_loss_with_selection(tape, sim, &selection, config)
}

/// Same as [`ms_loss_on_tape`] but with a caller-fixed selection; used by
/// gradient checks where the selection must not move with the perturbation.
pub fn ms_loss_with_selection(
    tape: &mut Tape,
    sim: VarId,
    selection: &PairSelection,
    config: &MiningConfig,
) -> Result<VarId> {
    let (loss, grad) = ms_loss_on_similarity(tape.value(sim), selection, config);
    tape.custom_scalar(sim, loss, grad)
}

/// Standalone MS loss over unit-norm embeddings (Eq. 4 with mining).
pub fn ms_loss(embeddings: &Tensor, labels: &[usize], config: &MiningConfig) -> Result<f64> {
    if embeddings.rows() != labels.len() {
        return Err(FaaError::Shape(format!(
            "ms_loss: {} embeddings vs {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if embeddings.rows() < 2 {
        return Err(FaaError::DegenerateInput("ms_loss: batch of < 2".into()));
    }
    let mut tape = Tape::new();
    let e = tape.leaf(embeddings.clone());
    let et = tape.transpose(e);
    let s = tape.matmul(e, et)?;
    let loss = ms_loss_on_tape(&mut tape, s, labels, config)?;
    Ok(tape.value(loss).item())
}

/// Classic pairwise contrastive baseline (squared euclidean with a margin
/// hinge on negatives, mean over all unordered pairs) over the same
/// similarity matrix; the ablation stand-in for the MS objective. On
/// unit-norm embeddings d^2 = 2 - 2S.
pub fn contrastive_loss_on_tape(
    tape: &mut Tape,
    sim: VarId,
    labels: &[usize],
    margin: f64,
) -> Result<VarId> {
    let s = tape.value(sim);
    let n = labels.len();
    if s.shape() != (n, n) {
        return Err(FaaError::Shape(format!(
            "contrastive: similarity is {:?}, labels give {n}x{n}",
            s.shape()
        )));
    }
    if n < 2 {
        return Err(FaaError::DegenerateInput("contrastive: no pairs".into()));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = (2.0 - 2.0 * s.at(i, j)).max(1e-12).sqrt();
            if labels[i] == labels[j] {
                loss += d * d;
                grad.set(i, j, -2.0 / pairs);
            } else if d < margin {
                loss += (margin - d) * (margin - d);
                grad.set(i, j, 2.0 * (margin - d) / d.max(1e-6) / pairs);
            }
        }
    }
    tape.custom_scalar(sim, loss / pairs, grad)
}

/// For each anchor in one modality, the k most similar opposite-label
/// samples of the other modality, both directions, deduplicated.
/// Ties break toward the lower index. Returns (face, voice) index pairs.
pub fn mine_hard_negatives(
    face_embs: &Tensor,
    voice_embs: &Tensor,
    labels_f: &[usize],
    labels_v: &[usize],
    k: usize,
) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(FaaError::Config("hard negative k must be >= 1".into()));
    }
    if face_embs.rows() != labels_f.len() || voice_embs.rows() != labels_v.len() {
        return Err(FaaError::Shape(
            "mine_hard_negatives: label/embedding count mismatch".into(),
        ));
    }
    let s = cosine_similarity_matrix(face_embs, voice_embs)?;
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();

    let top_k = |candidates: &mut Vec<(f64, usize)>| -> Vec<usize> {
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        candidates.iter().take(k).map(|(_, i)| *i).collect()
    };

    for (j, &lv) in labels_v.iter().enumerate() {
        let mut cands: Vec<(f64, usize)> = (0..face_embs.rows())
            .filter(|&i| labels_f[i] != lv)
            .map(|i| (s.at(i, j), i))
            .collect();
        if cands.is_empty() {
            return Err(FaaError::DegenerateInput(format!(
                "voice anchor {j}: no opposite-label faces"
            )));
        }
        for i in top_k(&mut cands) {
            pairs.insert((i, j));
        }
    }
    for (i, &lf) in labels_f.iter().enumerate() {
        let mut cands: Vec<(f64, usize)> = (0..voice_embs.rows())
            .filter(|&j| labels_v[j] != lf)
            .map(|j| (s.at(i, j), j))
            .collect();
        if cands.is_empty() {
            return Err(FaaError::DegenerateInput(format!(
                "face anchor {i}: no opposite-label voices"
            )));
        }
        for j in top_k(&mut cands) {
            pairs.insert((i, j));
        }
    }
    Ok(pairs.into_iter().collect())
}

/// Clamp bound for probabilities inside the cross-entropy logs.
pub const CE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy over matching probabilities (Eq. 5 shape).
pub fn matching_ce_loss(probs: &[f64], targets: &[bool]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(FaaError::Shape(format!(
            "matching_ce_loss: {} probs vs {} targets",
            probs.len(),
            targets.len()
        )));
    }
    if probs.is_empty() {
        return Err(FaaError::DegenerateInput("matching_ce_loss: empty".into()));
    }
    let mut loss = 0.0;
    for (&p, &t) in probs.iter().zip(targets) {
        if !(0.0..=1.0).contains(&p) {
            return Err(FaaError::DegenerateInput(format!(
                "probability {p} outside [0,1]"
            )));
        }
        let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        loss -= if t { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(loss / probs.len() as f64)
}

/// Tape version of the matching cross-entropy over an [n x 1] column of
/// positive-class probabilities.
pub fn matching_ce_on_tape(tape: &mut Tape, probs: VarId, targets: &[bool]) -> Result<VarId> {
    let p = tape.value(probs);
    if p.shape() != (targets.len(), 1) {
        return Err(FaaError::Shape(format!(
            "matching_ce_on_tape: probs {:?} vs {} targets",
            p.shape(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(targets.len(), 1);
    for (i, &t) in targets.iter().enumerate() {
        let raw = p.at(i, 0);
        let clamped = raw.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        if t {
            loss -= clamped.ln();
        } else {
            loss -= (1.0 - clamped).ln();
        }
        // Zero slope where the clamp is active.
        if (CE_CLAMP..=1.0 - CE_CLAMP).contains(&raw) {
            let g = if t { -1.0 / clamped } else { 1.0 / (1.0 - clamped) };
            grad.set(i, 0, g / n);
        }
    }
    tape.custom_scalar(probs, loss / n, grad)
}

/// One candidate pair for the matching head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPair {
    pub face: usize,
    pub voice: usize,
    pub positive: bool,
}

/// Pairs fed to the matching loss in one step.
#[derive(Debug, Clone, Default)]
pub struct MatchBatch {
    pub pairs: Vec<MatchPair>,
}

impl MatchBatch {
    /// Usable for the loss only with at least one positive and one negative.
    pub fn validate(&self) -> Result<()> {
        let pos = self.pairs.iter().filter(|p| p.positive).count();
        if pos == 0 || pos == self.pairs.len() {
            return Err(FaaError::DegenerateInput(format!(
                "match batch needs both classes, got {pos} positives of {}",
                self.pairs.len()
            )));
        }
        Ok(())
    }
}

/// Eq. 6: delta * L_MS + (1 - delta) * L_CE.
pub fn combined_loss(l_ms: f64, l_ce: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FaaError::Config(format!(
            "delta must be in (0,1), got {delta}"
        )));
    }
    Ok(delta * l_ms + (1.0 - delta) * l_ce)
}
