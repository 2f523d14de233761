//! Independent reference implementations used to cross-check the fast
//! paths. Plain scalar loops only; nothing here shares code with the
//! implementations it validates.

use crate::numerics::Tensor;
use crate::objectives::{MiningConfig, MiningRule};

/// Eq. 4 with Eqs. 2-3 mining, by brute-force double loops over the batch.
pub fn ms_loss_bruteforce(e: &Tensor, labels: &[usize], config: &MiningConfig) -> f64 {
    let n = labels.len();
    let sim = |i: usize, j: usize| -> f64 {
        let (a, b) = (e.row(i), e.row(j));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut min_pos = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        let mut min_neg = f64::INFINITY;
        let mut has_pos = false;
        let mut has_neg = false;
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                has_pos = true;
                min_pos = min_pos.min(sim(i, j));
            } else {
                has_neg = true;
                max_neg = max_neg.max(sim(i, j));
                min_neg = min_neg.min(sim(i, j));
            }
        }
        if !has_pos || !has_neg {
            continue;
        }
        let pos_thr = match config.rule {
            MiningRule::MsOriginal => max_neg + config.epsilon,
            MiningRule::AsPaper => min_neg + config.epsilon,
        };
        let mut pos_sum = 0.0;
        let mut neg_sum = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let sij = sim(i, j);
            if labels[j] == labels[i] {
                if !config.mine || sij < pos_thr {
                    pos_sum += (-config.alpha * (sij - config.lambda)).exp();
                }
            } else if !config.mine || sij > min_pos - config.epsilon {
                neg_sum += (config.beta * (sij - config.lambda)).exp();
            }
        }
        total += (1.0 + pos_sum).ln() / config.alpha + (1.0 + neg_sum).ln() / config.beta;
    }
    total / n as f64
}

/// AUC by explicit positive/negative pair counting, ties worth 0.5.
pub fn auc_pair_counting(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            total += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / total
}

/// EER from a dense threshold sweep: FAR/FRR counted at every distinct
/// score, crossing solved on the segment where the sign flips.
pub fn eer_dense_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev = (0.0f64, 1.0f64);
    for &t in std::iter::once(&f64::INFINITY).chain(thresholds.iter()) {
        let fa = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| !**l && **s >= t)
            .count() as f64
            / neg;
        let fr = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **l && **s < t)
            .count() as f64
            / pos;
        let d_prev = prev.0 - prev.1;
        let d = fa - fr;
        if d >= 0.0 {
            if d == 0.0 {
                return fa;
            }
            let alpha = -d_prev / (d - d_prev);
            return prev.0 + alpha * (fa - prev.0);
        }
        prev = (fa, fr);
    }
    1.0
}

/// Average precision straight from its definition over an explicit ranking.
pub fn ap_definition(relevant: &[bool], total_relevant: usize) -> f64 {
    let mut sum = 0.0;
    for k in 1..=relevant.len() {
        if relevant[k - 1] {
            let precision_at_k = relevant[..k].iter().filter(|&&r| r).count() as f64 / k as f64;
            sum += precision_at_k;
        }
    }
    sum / total_relevant as f64
}
