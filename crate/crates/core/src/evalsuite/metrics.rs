//! Ranking metrics: ROC AUC, equal error rate, average precision, and the
//! 1:2 matching decision rule.

use crate::error::{FaaError, Result};

fn check_both_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(FaaError::DegenerateInput(format!(
            "need both classes, got {pos} positives / {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// ROC AUC via the rank form of the Mann-Whitney U statistic; tied scores
/// receive average ranks (each tied positive-negative pair counts 0.5).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(FaaError::Shape(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (pos, neg) = check_both_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Average rank for the tie group [i, j], 1-based ranks.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let pos_f = pos as f64;
    let u = rank_sum_pos - pos_f * (pos_f + 1.0) / 2.0;
    Ok(u / (pos_f * neg as f64))
}

/// ROC operating points for "accept iff score >= threshold", swept from
/// strictest to loosest. Starts at (FAR 0, FRR 1), ends at (FAR 1, FRR 0).
fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![(0.0, 1.0)];
    let mut fa = 0.0;
    let mut tp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1.0;
            } else {
                fa += 1.0;
            }
        }
        points.push((fa / neg, 1.0 - tp / pos));
        i = j + 1;
    }
    points
}

/// Equal error rate: the FAR = FRR point of the ROC polyline, linearly
/// interpolated between adjacent operating points.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(FaaError::Shape(format!(
            "eer: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_both_classes(labels)?;
    let points = roc_points(scores, labels);
    // far - frr rises monotonically from -1 to 1 along the sweep.
    for w in points.windows(2) {
        let (far_a, frr_a) = w[0];
        let (far_b, frr_b) = w[1];
        let da = far_a - frr_a;
        let db = far_b - frr_b;
        if db >= 0.0 {
            if db == 0.0 {
                return Ok(far_b);
            }
            let t = -da / (db - da);
            return Ok(far_a + t * (far_b - far_a));
        }
    }
    Ok(1.0)
}

/// Average precision of a ranked relevance sequence: mean of precision@k
/// over the relevant ranks, divided by the total relevant count.
pub fn average_precision(relevant_in_rank_order: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(FaaError::DegenerateInput(
            "average_precision: no relevant items".into(),
        ));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevant_in_rank_order.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Outcome of scoring a probe against two candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchChoice {
    First,
    Second,
    Tie,
}

/// Argmax over the two candidate scores; exact ties are reported.
pub fn matching_1of2(score_first: f64, score_second: f64) -> MatchChoice {
    if score_first > score_second {
        MatchChoice::First
    } else if score_second > score_first {
        MatchChoice::Second
    } else {
        MatchChoice::Tie
    }
}

/// Accuracy with 0.5 credit for exact ties.
pub fn matching_accuracy(outcomes: &[(MatchChoice, usize)]) -> f64 {
    let mut credit = 0.0;
    for &(choice, answer) in outcomes {
        credit += match (choice, answer) {
            (MatchChoice::First, 0) | (MatchChoice::Second, 1) => 1.0,
            (MatchChoice::Tie, _) => 0.5,
            _ => 0.0,
        };
    }
    credit / outcomes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftest::oracles;
    use rand::Rng;

    #[test]
    fn auc_cases() {
        // Perfect separation.
        let a = auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(a, 1.0);
        // All tied.
        let a = auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(a, 0.5);
        // Known hand case.
        let a = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((a - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_single_class_is_degenerate() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(FaaError::DegenerateInput(_))
        ));
    }

    #[test]
    fn auc_matches_pair_counting_on_random_instances() {
        let mut r = crate::rng::seeded(300);
        for _ in 0..500 {
            let n = r.random_range(3..50usize);
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
            labels[1] = false;
            let fast = auc(&scores, &labels).unwrap();
            let slow = oracles::auc_pair_counting(&scores, &labels);
            assert_eq!(fast, slow, "scores {scores:?} labels {labels:?}");
        }
    }

    #[test]
    fn auc_complement_identity_without_ties() {
        let mut r = crate::rng::seeded(301);
        for _ in 0..100 {
            let n = r.random_range(4..40usize);
            let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut r = crate::rng::seeded(302);
        for _ in 0..100 {
            let n = r.random_range(4..40usize);
            let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&mapped, &labels).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eer_cases() {
        // Perfect separation.
        let e = eer(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(e, 0.0);
        // Hand ROC trace.
        let e = eer(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eer_on_coin_flip_labels_is_near_half() {
        let mut r = crate::rng::seeded(303);
        let n = 10000;
        let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let e = eer(&scores, &labels).unwrap();
        assert!((e - 0.5).abs() < 0.05, "eer {e}");
    }

    #[test]
    fn eer_symmetric_under_negation_and_flip() {
        let mut r = crate::rng::seeded(304);
        for _ in 0..200 {
            let n = r.random_range(4..40usize);
            let scores: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 8.0).round() / 8.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = eer(&scores, &labels).unwrap();
            let b = eer(&neg, &flipped).unwrap();
            assert!(
                (a - b).abs() < 1e-9,
                "asymmetric eer: {a} vs {b} (scores {scores:?}, labels {labels:?})"
            );
        }
    }

    #[test]
    fn eer_matches_dense_sweep_oracle() {
        let mut r = crate::rng::seeded(305);
        for _ in 0..500 {
            let n = r.random_range(4..50usize);
            let quantize = r.random_bool(0.5);
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let s = r.random::<f64>();
                    if quantize {
                        (s * 6.0).round() / 6.0
                    } else {
                        s
                    }
                })
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = eer(&scores, &labels).unwrap();
            let slow = oracles::eer_dense_sweep(&scores, &labels);
            assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ap_cases() {
        // Single relevant item ranked first.
        let ap = average_precision(&[true, false, false], 1).unwrap();
        assert_eq!(ap, 1.0);
        // Relevant at ranks 1 and 3.
        let ap = average_precision(&[true, false, true, false], 2).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_matches_definition_oracle() {
        let mut r = crate::rng::seeded(306);
        for _ in 0..500 {
            let n = r.random_range(2..50usize);
            let mut rel: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
            rel[0] = true;
            let total = rel.iter().filter(|&&x| x).count();
            let fast = average_precision(&rel, total).unwrap();
            let slow = oracles::ap_definition(&rel, total);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn matching_rule() {
        assert_eq!(matching_1of2(0.9, 0.1), MatchChoice::First);
        assert_eq!(matching_1of2(0.1, 0.9), MatchChoice::Second);
        assert_eq!(matching_1of2(0.4, 0.4), MatchChoice::Tie);
        // Constant scorer: all ties -> 0.5 accuracy.
        let outcomes: Vec<(MatchChoice, usize)> =
            (0..10).map(|i| (MatchChoice::Tie, i % 2)).collect();
        assert_eq!(matching_accuracy(&outcomes), 0.5);
        // Oracle and anti-oracle.
        let oracle: Vec<(MatchChoice, usize)> = vec![
            (MatchChoice::First, 0),
            (MatchChoice::Second, 1),
        ];
        assert_eq!(matching_accuracy(&oracle), 1.0);
        let anti: Vec<(MatchChoice, usize)> = vec![
            (MatchChoice::Second, 0),
            (MatchChoice::First, 1),
        ];
        assert_eq!(matching_accuracy(&anti), 0.0);
    }
}
