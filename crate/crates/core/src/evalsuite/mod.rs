//! The three evaluation protocols — verification (AUC/EER), 1:2 matching
//! (ACC), retrieval (mAP with cosine shortlist + fusion re-rank) — with
//! unrestricted (U) and same-group (G) variants.

mod metrics;
mod trials;

pub use metrics::{auc, average_precision, eer, matching_1of2, matching_accuracy, MatchChoice};
pub use trials::{
    build_trials, Direction, MatchingTrial, Protocol, Restriction, RetrievalTrial, SampleRef,
    TrialData, TrialList, VerificationTrial,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::{batch_from_samples, encode_values};
use crate::error::{FaaError, Result};
use crate::fusion::match_score_values;
use crate::model::ModelParams;
use crate::synthworld::VideoRecord;

/// Trial counts, seeds, and the re-rank shortlist size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EvalConfig {
    /// Positive count (= negative count) per verification list.
    pub verification_pairs: usize,
    /// Trials per (direction, restriction) matching list.
    pub matching_trials: usize,
    /// Probes per retrieval direction.
    pub retrieval_probes: usize,
    pub shortlist_k: usize,
    pub trial_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            verification_pairs: 1000,
            matching_trials: 1000,
            retrieval_probes: 64,
            shortlist_k: 50,
            trial_seed: 1234,
        }
    }
}

/// Which protocols to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolSet {
    pub verification: bool,
    pub matching: bool,
    pub retrieval: bool,
}

impl ProtocolSet {
    pub const ALL: ProtocolSet = ProtocolSet {
        verification: true,
        matching: true,
        retrieval: true,
    };
}

/// How pairs are scored downstream of the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Binary classification probability from the fusion encoder.
    Fusion,
    /// Cosine similarity of the unimodal embeddings.
    Cosine,
    /// Ground-truth identity equality; plumbing oracle for tests.
    Oracle,
}

/// Per-sample embeddings of one partition, encoded once.
pub struct EmbeddingTable {
    pub faces: Vec<Vec<Vec<f64>>>,
    pub voices: Vec<Vec<Vec<f64>>>,
    pub identity: Vec<u64>,
}

impl EmbeddingTable {
    pub fn build(videos: &[VideoRecord], params: &ModelParams) -> Result<Self> {
        let mut faces = Vec::with_capacity(videos.len());
        let mut voices = Vec::with_capacity(videos.len());
        let mut identity = Vec::with_capacity(videos.len());
        for v in videos {
            let fb: Vec<&[f32]> = v.faces.iter().map(|x| x.as_slice()).collect();
            let vb: Vec<&[f32]> = v.voices.iter().map(|x| x.as_slice()).collect();
            let fe = encode_values(&batch_from_samples(&fb)?, &params.face_enc)?;
            let ve = encode_values(&batch_from_samples(&vb)?, &params.voice_enc)?;
            faces.push((0..fe.rows()).map(|r| fe.row(r).to_vec()).collect());
            voices.push((0..ve.rows()).map(|r| ve.row(r).to_vec()).collect());
            identity.push(v.identity_id);
        }
        Ok(Self {
            faces,
            voices,
            identity,
        })
    }

    pub fn face(&self, r: SampleRef) -> &[f64] {
        &self.faces[r.video][r.item]
    }

    pub fn voice(&self, r: SampleRef) -> &[f64] {
        &self.voices[r.video][r.item]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Score a (face, voice) sample pair under the chosen scorer.
pub fn score_pair(
    table: &EmbeddingTable,
    params: &ModelParams,
    scoring: ScorerKind,
    face: SampleRef,
    voice: SampleRef,
) -> Result<f64> {
    match scoring {
        ScorerKind::Cosine => Ok(dot(table.face(face), table.voice(voice))),
        ScorerKind::Fusion => {
            match_score_values(table.face(face), table.voice(voice), &params.fusion)
        }
        ScorerKind::Oracle => {
            Ok((table.identity[face.video] == table.identity[voice.video]) as u8 as f64)
        }
    }
}

fn verification_scores(
    list: &TrialList,
    table: &EmbeddingTable,
    params: &ModelParams,
    scoring: ScorerKind,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let trials = match &list.data {
        TrialData::Verification(t) => t,
        _ => return Err(FaaError::Contract("not a verification list".into())),
    };
    let mut scores = Vec::with_capacity(trials.len());
    let mut labels = Vec::with_capacity(trials.len());
    for t in trials {
        scores.push(score_pair(table, params, scoring, t.face, t.voice)?);
        labels.push(t.label);
    }
    Ok((scores, labels))
}

fn matching_acc(
    list: &TrialList,
    table: &EmbeddingTable,
    params: &ModelParams,
    scoring: ScorerKind,
) -> Result<f64> {
    let trials = match &list.data {
        TrialData::Matching(t) => t,
        _ => return Err(FaaError::Contract("not a matching list".into())),
    };
    let probe_is_voice = list.direction == Direction::V2F;
    let mut outcomes = Vec::with_capacity(trials.len());
    for t in trials {
        let score_candidate = |c: SampleRef| -> Result<f64> {
            if probe_is_voice {
                score_pair(table, params, scoring, c, t.probe)
            } else {
                score_pair(table, params, scoring, t.probe, c)
            }
        };
        let s0 = score_candidate(t.candidates[0])?;
        let s1 = score_candidate(t.candidates[1])?;
        outcomes.push((matching_1of2(s0, s1), t.answer));
    }
    Ok(matching_accuracy(&outcomes))
}

/// mAP of a retrieval list: rank the full gallery by the first-stage scorer,
/// re-rank the top K by the second-stage scorer (re-ranked block above the
/// tail), and average the per-probe average precision.
pub fn retrieval_map(
    list: &TrialList,
    table: &EmbeddingTable,
    params: &ModelParams,
    first_stage: ScorerKind,
    second_stage: ScorerKind,
    shortlist_k: usize,
) -> Result<f64> {
    let trials = match &list.data {
        TrialData::Retrieval(t) => t,
        _ => return Err(FaaError::Contract("not a retrieval list".into())),
    };
    if shortlist_k == 0 {
        return Err(FaaError::Config("shortlist K must be >= 1".into()));
    }
    let probe_is_voice = list.direction == Direction::V2F;
    let mut ap_sum = 0.0;
    for t in trials {
        let score = |kind: ScorerKind, g: SampleRef| -> Result<f64> {
            if probe_is_voice {
                score_pair(table, params, kind, g, t.probe)
            } else {
                score_pair(table, params, kind, t.probe, g)
            }
        };
        let mut ranked: Vec<(usize, f64)> = list
            .gallery
            .iter()
            .enumerate()
            .map(|(i, g)| Ok((i, score(first_stage, *g)?)))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let k = shortlist_k.min(ranked.len());
        let mut head: Vec<(usize, f64)> = ranked[..k]
            .iter()
            .map(|(i, _)| Ok((*i, score(second_stage, list.gallery[*i])?)))
            .collect::<Result<Vec<_>>>()?;
        // Stable sort: equal second-stage scores keep first-stage order.
        head.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

        let relevance: Vec<bool> = head
            .iter()
            .map(|(i, _)| t.relevant.contains(i))
            .chain(ranked[k..].iter().map(|(i, _)| t.relevant.contains(i)))
            .collect();
        ap_sum += average_precision(&relevance, t.relevant.len())?;
    }
    Ok(ap_sum / trials.len() as f64)
}

/// Metrics grid of one model over one partition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eer_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_v2f_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_v2f_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_f2v_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_f2v_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_v2f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_f2v: Option<f64>,
    pub scoring: ScorerKind,
    pub trial_counts: BTreeMap<String, usize>,
    pub trial_seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let metrics = [
            self.auc_u,
            self.auc_g,
            self.eer_u,
            self.acc_v2f_u,
            self.acc_v2f_g,
            self.acc_f2v_u,
            self.acc_f2v_g,
            self.map_v2f,
            self.map_f2v,
        ];
        for m in metrics.into_iter().flatten() {
            if !(0.0..=1.0).contains(&m) {
                return Err(FaaError::Contract(format!("metric {m} outside [0,1]")));
            }
        }
        if self.trial_counts.values().any(|&c| c == 0) {
            return Err(FaaError::Contract("zero trial count".into()));
        }
        Ok(())
    }
}

/// Run the requested protocols over a partition.
pub fn evaluate(
    params: &ModelParams,
    videos: &[VideoRecord],
    eval: &EvalConfig,
    protocols: ProtocolSet,
    scoring: ScorerKind,
    config_hash: &str,
) -> Result<EvalReport> {
    let table = EmbeddingTable::build(videos, params)?;
    let seed = eval.trial_seed;
    let mut counts = BTreeMap::new();
    let mut report = EvalReport {
        auc_u: None,
        auc_g: None,
        eer_u: None,
        acc_v2f_u: None,
        acc_v2f_g: None,
        acc_f2v_u: None,
        acc_f2v_g: None,
        map_v2f: None,
        map_f2v: None,
        scoring,
        trial_counts: BTreeMap::new(),
        trial_seed: seed,
        config_hash: config_hash.to_string(),
        checkpoint_hash: crate::model_hash(params),
    };

    if protocols.verification {
        for restriction in [Restriction::U, Restriction::G] {
            let list = build_trials(
                videos,
                Protocol::Verification,
                Direction::Symmetric,
                restriction,
                eval.verification_pairs,
                crate::rng::subseed(seed, &[crate::rng::tag::TRIALS, 1, restriction as u64]),
            )?;
            let (scores, labels) = verification_scores(&list, &table, params, scoring)?;
            match restriction {
                Restriction::U => {
                    report.auc_u = Some(auc(&scores, &labels)?);
                    report.eer_u = Some(eer(&scores, &labels)?);
                    counts.insert("verification_u".to_string(), list.len());
                }
                Restriction::G => {
                    report.auc_g = Some(auc(&scores, &labels)?);
                    counts.insert("verification_g".to_string(), list.len());
                }
            }
        }
    }

    if protocols.matching {
        for direction in [Direction::V2F, Direction::F2V] {
            for restriction in [Restriction::U, Restriction::G] {
                let list = build_trials(
                    videos,
                    Protocol::Matching,
                    direction,
                    restriction,
                    eval.matching_trials,
                    crate::rng::subseed(
                        seed,
                        &[crate::rng::tag::TRIALS, 2, direction as u64, restriction as u64],
                    ),
                )?;
                let acc = matching_acc(&list, &table, params, scoring)?;
                let key = match (direction, restriction) {
                    (Direction::V2F, Restriction::U) => {
                        report.acc_v2f_u = Some(acc);
                        "matching_v2f_u"
                    }
                    (Direction::V2F, Restriction::G) => {
                        report.acc_v2f_g = Some(acc);
                        "matching_v2f_g"
                    }
                    (Direction::F2V, Restriction::U) => {
                        report.acc_f2v_u = Some(acc);
                        "matching_f2v_u"
                    }
                    (Direction::F2V, Restriction::G) => {
                        report.acc_f2v_g = Some(acc);
                        "matching_f2v_g"
                    }
                    _ => unreachable!(),
                };
                counts.insert(key.to_string(), list.len());
            }
        }
    }

    if protocols.retrieval {
        for direction in [Direction::V2F, Direction::F2V] {
            let list = build_trials(
                videos,
                Protocol::Retrieval,
                direction,
                Restriction::U,
                eval.retrieval_probes,
                crate::rng::subseed(seed, &[crate::rng::tag::TRIALS, 3, direction as u64]),
            )?;
            // The shortlist is ranked by cosine; the configured scorer
            // re-ranks it (identical to pure cosine when scoring is cosine).
            // Oracle mode drives both stages so the plumbing check sees 1.0.
            let first_stage = match scoring {
                ScorerKind::Oracle => ScorerKind::Oracle,
                _ => ScorerKind::Cosine,
            };
            let map = retrieval_map(
                &list,
                &table,
                params,
                first_stage,
                scoring,
                eval.shortlist_k,
            )?;
            match direction {
                Direction::V2F => {
                    report.map_v2f = Some(map);
                    counts.insert("retrieval_v2f".to_string(), list.len());
                }
                Direction::F2V => {
                    report.map_f2v = Some(map);
                    counts.insert("retrieval_f2v".to_string(), list.len());
                }
                _ => unreachable!(),
            }
        }
    }

    report.trial_counts = counts;
    report.validate()?;
    Ok(report)
}

/// Verification AUC on a partition with a fixed seeded trial list; the
/// validation criterion that drives progressive halving.
pub fn validation_auc(
    params: &ModelParams,
    videos: &[VideoRecord],
    pairs: usize,
    trial_seed: u64,
    scoring: ScorerKind,
) -> Result<f64> {
    let table = EmbeddingTable::build(videos, params)?;
    let list = build_trials(
        videos,
        Protocol::Verification,
        Direction::Symmetric,
        Restriction::U,
        pairs,
        trial_seed,
    )?;
    let (scores, labels) = verification_scores(&list, &table, params, scoring)?;
    auc(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::synthworld::{generate_world, WorldConfig};

    fn fixture() -> (Vec<VideoRecord>, ModelParams) {
        let world_cfg = WorldConfig {
            num_identities: 16,
            identity_split: (0.5, 0.25, 0.25),
            ..WorldConfig::default()
        };
        let ds = generate_world(&world_cfg).unwrap();
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, 3).unwrap();
        (ds.test, params)
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        let (videos, params) = fixture();
        let eval = EvalConfig {
            verification_pairs: 60,
            matching_trials: 60,
            retrieval_probes: 12,
            ..EvalConfig::default()
        };
        let report = evaluate(
            &params,
            &videos,
            &eval,
            ProtocolSet::ALL,
            ScorerKind::Oracle,
            "testhash",
        )
        .unwrap();
        assert_eq!(report.auc_u, Some(1.0));
        assert_eq!(report.auc_g, Some(1.0));
        assert_eq!(report.eer_u, Some(0.0));
        assert_eq!(report.acc_v2f_u, Some(1.0));
        assert_eq!(report.acc_f2v_g, Some(1.0));
        assert_eq!(report.map_v2f, Some(1.0));
        assert_eq!(report.map_f2v, Some(1.0));
    }

    #[test]
    fn untrained_fusion_scores_half_auc() {
        let (videos, params) = fixture();
        // Zero-initialized head scores 0.5 everywhere; AUC 0.5 by ties.
        let a = validation_auc(&params, &videos, 50, 5, ScorerKind::Fusion).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn fixed_trial_seed_is_reproducible() {
        let (videos, params) = fixture();
        let a = validation_auc(&params, &videos, 50, 5, ScorerKind::Cosine).unwrap();
        let b = validation_auc(&params, &videos, 50, 5, ScorerKind::Cosine).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rerank_with_same_scorer_is_identity() {
        let (videos, params) = fixture();
        let table = EmbeddingTable::build(&videos, &params).unwrap();
        let list = build_trials(&videos, Protocol::Retrieval, Direction::V2F, Restriction::U, 8, 6)
            .unwrap();
        for k in [1, 10, list.gallery.len()] {
            let pure = retrieval_map(
                &list,
                &table,
                &params,
                ScorerKind::Cosine,
                ScorerKind::Cosine,
                k,
            )
            .unwrap();
            let base = retrieval_map(
                &list,
                &table,
                &params,
                ScorerKind::Cosine,
                ScorerKind::Cosine,
                1,
            )
            .unwrap();
            assert_eq!(pure, base, "K = {k} changed a no-op re-rank");
        }
    }

    #[test]
    fn rerank_with_full_gallery_k_depends_only_on_second_stage() {
        let (videos, params) = fixture();
        let table = EmbeddingTable::build(&videos, &params).unwrap();
        let list = build_trials(&videos, Protocol::Retrieval, Direction::F2V, Restriction::U, 8, 7)
            .unwrap();
        let k = list.gallery.len();
        let via_cosine_first = retrieval_map(
            &list,
            &table,
            &params,
            ScorerKind::Cosine,
            ScorerKind::Oracle,
            k,
        )
        .unwrap();
        let via_oracle_first = retrieval_map(
            &list,
            &table,
            &params,
            ScorerKind::Oracle,
            ScorerKind::Oracle,
            k,
        )
        .unwrap();
        assert!((via_cosine_first - via_oracle_first).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_all_nine_metrics() {
        let (videos, params) = fixture();
        let eval = EvalConfig {
            verification_pairs: 30,
            matching_trials: 30,
            retrieval_probes: 6,
            ..EvalConfig::default()
        };
        let report = evaluate(
            &params,
            &videos,
            &eval,
            ProtocolSet::ALL,
            ScorerKind::Cosine,
            "h",
        )
        .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "auc_u", "auc_g", "eer_u", "acc_v2f_u", "acc_v2f_g", "acc_f2v_u", "acc_f2v_g",
            "map_v2f", "map_f2v",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
