//! Training orchestration: per-epoch clustering then metric learning over
//! mini-batches, validation-driven progressive halving, simulated
//! multi-worker gathering, and checkpointing.

mod checkpoint;
mod optim;

pub use checkpoint::Checkpoint;
pub use optim::AdamW;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{assign_pseudo_labels, ProgressState};
use crate::encoders::encode;
use crate::error::{FaaError, Result};
use crate::evalsuite::{validation_auc, ScorerKind};
use crate::fusion::match_score;
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{Tape, Tensor};
use crate::objectives::{
    contrastive_loss_on_tape, matching_ce_on_tape, mine_hard_negatives, ms_loss_on_tape,
    MatchBatch, MatchPair, MiningConfig,
};
use crate::rng::{self, tag};
use crate::synthworld::Dataset;

/// Alignment objective choice (the Table-3 loss axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MultiSimilarity,
    Contrastive,
}

/// Pair-selection strategy (the Table-3 effective-pair-selection axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "c")]
pub enum PairSelectionMode {
    /// Progressive clustering (C starts at the video count and halves on
    /// validation stalls) plus global hard negative mining.
    Progressive,
    /// Clustering fixed at the given C, negatives sampled at random.
    FixedC(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Eq. 6 mixing weight on the alignment loss.
    pub delta: f64,
    pub mining: MiningConfig,
    pub seed: u64,
    pub num_simulated_workers: usize,
    pub hard_negative_k: usize,
    pub c_min: usize,
    pub reset_moments_on_halving: bool,
    pub val_pairs: usize,
    pub val_trial_seed: u64,
    pub loss: LossKind,
    /// Off = no matching head training; verification/matching score by cosine.
    pub fusion_scoring: bool,
    pub pair_selection: PairSelectionMode,
    pub contrastive_margin: f64,
    /// Debug fault injection: poison the loss at (epoch, batch).
    #[serde(default)]
    pub inject_nan_at: Option<(usize, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Desk-scale defaults sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 6e-3,
            weight_decay: 0.01,
            max_epochs: 30,
            patience: 3,
            delta: 0.9,
            mining: MiningConfig::default(),
            seed: 42,
            num_simulated_workers: 1,
            hard_negative_k: 1,
            c_min: 2,
            reset_moments_on_halving: true,
            val_pairs: 400,
            val_trial_seed: 9001,
            loss: LossKind::MultiSimilarity,
            fusion_scoring: true,
            pair_selection: PairSelectionMode::Progressive,
            contrastive_margin: 0.5,
            inject_nan_at: None,
        }
    }

    /// The reference hyperparameters (batch 256, lr 1e-4, 50 epochs).
    pub fn paper() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            max_epochs: 50,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(FaaError::Config("batch_size must be >= 2".into()));
        }
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(FaaError::Config("bad optimizer settings".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(FaaError::Config("epochs and patience must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(FaaError::Config(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        if self.num_simulated_workers == 0 || self.hard_negative_k == 0 {
            return Err(FaaError::Config("workers and k must be >= 1".into()));
        }
        self.mining.validate()
    }

    fn scorer(&self) -> ScorerKind {
        if self.fusion_scoring {
            ScorerKind::Fusion
        } else {
            ScorerKind::Cosine
        }
    }
}

/// One epoch's record. Wall time is measured but not serialized so that
/// histories from identical seeds are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub c: usize,
    pub l_ms: f64,
    pub l_ce: f64,
    pub l_total: f64,
    pub val_auc: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    pub halved: bool,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One JSON record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// One simulated worker's share of a batch.
#[derive(Debug, Clone, Default)]
pub struct WorkerShard {
    pub faces: Vec<Vec<f64>>,
    pub voices: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Concatenate worker shards in shard-index order into one logical pool.
/// Empty shards are skipped; sample order within shards is preserved.
pub fn gather_global_pool(shards: &[WorkerShard]) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let mut faces: Vec<f64> = Vec::new();
    let mut voices: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut face_dim = 0;
    let mut voice_dim = 0;
    let mut rows = 0;
    for shard in shards {
        if shard.labels.is_empty() {
            continue;
        }
        if shard.faces.len() != shard.labels.len() || shard.voices.len() != shard.labels.len() {
            return Err(FaaError::Shape("shard row counts disagree".into()));
        }
        for (f, v) in shard.faces.iter().zip(&shard.voices) {
            if face_dim == 0 {
                face_dim = f.len();
                voice_dim = v.len();
            }
            if f.len() != face_dim || v.len() != voice_dim {
                return Err(FaaError::Shape("shard embedding dims disagree".into()));
            }
            faces.extend_from_slice(f);
            voices.extend_from_slice(v);
        }
        labels.extend_from_slice(&shard.labels);
        rows += shard.labels.len();
    }
    if rows == 0 {
        return Err(FaaError::DegenerateInput("all shards empty".into()));
    }
    Ok((
        Tensor::new(rows, face_dim, faces)?,
        Tensor::new(rows, voice_dim, voices)?,
        labels,
    ))
}

/// Split per-sample embeddings into `workers` contiguous shards.
pub fn split_into_shards(
    faces: &Tensor,
    voices: &Tensor,
    labels: &[usize],
    workers: usize,
) -> Vec<WorkerShard> {
    let n = labels.len();
    let per = n.div_ceil(workers);
    (0..workers)
        .map(|w| {
            let lo = (w * per).min(n);
            let hi = ((w + 1) * per).min(n);
            WorkerShard {
                faces: (lo..hi).map(|i| faces.row(i).to_vec()).collect(),
                voices: (lo..hi).map(|i| voices.row(i).to_vec()).collect(),
                labels: labels[lo..hi].to_vec(),
            }
        })
        .collect()
}

/// Random cross-label (face, voice) pairs: the pair-selection-off stand-in
/// for hard negative mining, matched in count (k per anchor per direction).
fn random_negatives(
    labels: &[usize],
    k: usize,
    r: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = labels.len();
    let mut pairs = std::collections::BTreeSet::new();
    for j in 0..n {
        let cands: Vec<usize> = (0..n).filter(|&i| labels[i] != labels[j]).collect();
        if cands.is_empty() {
            return Err(FaaError::DegenerateInput(format!(
                "anchor {j}: no opposite-label candidates"
            )));
        }
        for _ in 0..k.min(cands.len()) {
            pairs.insert((cands[r.random_range(0..cands.len())], j));
        }
    }
    for i in 0..n {
        let cands: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if cands.is_empty() {
            return Err(FaaError::DegenerateInput(format!(
                "anchor {i}: no opposite-label candidates"
            )));
        }
        for _ in 0..k.min(cands.len()) {
            pairs.insert((i, cands[r.random_range(0..cands.len())]));
        }
    }
    Ok(pairs.into_iter().collect())
}

/// Everything `train` returns.
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: TrainHistory,
    pub final_c: usize,
}

/// Run the full training loop on the train/val partitions.
pub fn train(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    let train_videos = &dataset.train;
    if train_videos.len() < 2 {
        return Err(FaaError::Config("need at least 2 training videos".into()));
    }
    let initial_c = match config.pair_selection {
        PairSelectionMode::Progressive => train_videos.len(),
        PairSelectionMode::FixedC(c) => {
            if c > train_videos.len() || c < 2 {
                return Err(FaaError::Config(format!(
                    "fixed C = {c} out of range for {} train videos",
                    train_videos.len()
                )));
            }
            c
        }
    };

    let mut params = ModelParams::init(model_config, config.seed)?;
    let shapes: Vec<(usize, usize)> = params
        .named()
        .iter()
        .map(|(_, t)| t.shape())
        .collect();
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay, &shapes);
    let mut progress = ProgressState::new(initial_c, config.c_min);
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=config.max_epochs {
        let start = std::time::Instant::now();
        let c = progress.c;
        let labeling = assign_pseudo_labels(
            train_videos,
            &params.face_enc,
            &params.voice_enc,
            c,
            rng::subseed(config.seed, &[tag::KMEANS, epoch as u64]),
            epoch,
        )?;
        let video_labels = labeling.labels();

        let mut order: Vec<usize> = (0..train_videos.len()).collect();
        order.shuffle(&mut rng::seeded(rng::subseed(
            config.seed,
            &[tag::BATCH_ORDER, epoch as u64],
        )));

        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&v| video_labels[v]).collect();
            if chunk.len() < 2 || labels.iter().all(|&l| l == labels[0]) {
                skipped += 1;
                continue;
            }
            let mut pick = rng::seeded(rng::subseed(
                config.seed,
                &[tag::SAMPLE_PICK, epoch as u64, batch_idx as u64],
            ));
            // One face and one voice sampled per selected video.
            let face_rows: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&v| {
                    let video = &train_videos[v];
                    let f = &video.faces[pick.random_range(0..video.faces.len())];
                    f.iter().map(|x| *x as f64).collect()
                })
                .collect();
            let voice_rows: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&v| {
                    let video = &train_videos[v];
                    let w = &video.voices[pick.random_range(0..video.voices.len())];
                    w.iter().map(|x| *x as f64).collect()
                })
                .collect();
            let n = chunk.len();
            let face_batch = Tensor::new(
                n,
                face_rows[0].len(),
                face_rows.into_iter().flatten().collect(),
            )?;
            let voice_batch = Tensor::new(
                n,
                voice_rows[0].len(),
                voice_rows.into_iter().flatten().collect(),
            )?;

            let mut tape = Tape::new();
            let handles = params.bind(&mut tape);
            let fx = tape.leaf(face_batch);
            let vx = tape.leaf(voice_batch);
            let face_embs = encode(&mut tape, fx, &handles.face_enc)?;
            let voice_embs = encode(&mut tape, vx, &handles.voice_enc)?;
            let all = tape.concat_rows(&[face_embs, voice_embs])?;
            let allt = tape.transpose(all);
            let sim = tape.matmul(all, allt)?;
            let mut both_labels = labels.clone();
            both_labels.extend_from_slice(&labels);

            let align = match config.loss {
                LossKind::MultiSimilarity => {
                    ms_loss_on_tape(&mut tape, sim, &both_labels, &config.mining)?
                }
                LossKind::Contrastive => {
                    contrastive_loss_on_tape(&mut tape, sim, &both_labels, config.contrastive_margin)?
                }
            };
            let l_align = tape.value(align).item();

            let (total, l_ce) = if config.fusion_scoring {
                // Matching batch: every same-pseudo-label (face, voice) pair
                // in the batch plus mined negatives.
                let mut batch = MatchBatch::default();
                for i in 0..n {
                    for j in 0..n {
                        if labels[i] == labels[j] {
                            batch.pairs.push(MatchPair {
                                face: i,
                                voice: j,
                                positive: true,
                            });
                        }
                    }
                }
                let negatives = match config.pair_selection {
                    PairSelectionMode::Progressive => {
                        let shards = split_into_shards(
                            tape.value(face_embs),
                            tape.value(voice_embs),
                            &labels,
                            config.num_simulated_workers,
                        );
                        let (pool_f, pool_v, pool_labels) = gather_global_pool(&shards)?;
                        mine_hard_negatives(
                            &pool_f,
                            &pool_v,
                            &pool_labels,
                            &pool_labels,
                            config.hard_negative_k,
                        )?
                    }
                    PairSelectionMode::FixedC(_) => {
                        let mut r = rng::seeded(rng::subseed(
                            config.seed,
                            &[tag::RANDOM_NEGATIVES, epoch as u64, batch_idx as u64],
                        ));
                        random_negatives(&labels, config.hard_negative_k, &mut r)?
                    }
                };
                for (i, j) in negatives {
                    batch.pairs.push(MatchPair {
                        face: i,
                        voice: j,
                        positive: false,
                    });
                }
                batch.validate()?;
                let mut scores = Vec::with_capacity(batch.pairs.len());
                let mut targets = Vec::with_capacity(batch.pairs.len());
                for pair in &batch.pairs {
                    let f = tape.row(face_embs, pair.face)?;
                    let v = tape.row(voice_embs, pair.voice)?;
                    scores.push(match_score(&mut tape, f, v, &handles.fusion)?);
                    targets.push(pair.positive);
                }
                let probs = tape.concat_rows(&scores)?;
                let ce = matching_ce_on_tape(&mut tape, probs, &targets)?;
                let l_ce = tape.value(ce).item();
                let weighted_align = tape.scale(align, config.delta);
                let weighted_ce = tape.scale(ce, 1.0 - config.delta);
                (tape.add(weighted_align, weighted_ce)?, l_ce)
            } else {
                (align, 0.0)
            };

            let mut l_total = tape.value(total).item();
            if config.inject_nan_at == Some((epoch, batch_idx)) {
                l_total = f64::NAN;
            }
            if !l_total.is_finite() {
                return Err(FaaError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    l_ms: l_align,
                    l_ce,
                });
            }
            if config.fusion_scoring {
                debug_assert!(
                    (l_total - (config.delta * l_align + (1.0 - config.delta) * l_ce)).abs()
                        <= 1e-12
                );
            }

            let grads = tape.backward(total)?;
            let ids = handles.ordered();
            let grad_refs: Vec<Option<&Tensor>> = ids.iter().map(|id| grads.get(*id)).collect();
            let mut named = params.named_mut();
            let mut tensor_refs: Vec<&mut Tensor> =
                named.iter_mut().map(|(_, t)| &mut **t).collect();
            opt.step(&mut tensor_refs, &grad_refs);

            sums.0 += l_align;
            sums.1 += l_ce;
            sums.2 += l_total;
            batches += 1;
        }

        let val_auc = validation_auc(
            &params,
            &dataset.val,
            config.val_pairs,
            config.val_trial_seed,
            config.scorer(),
        )?;

        let halved = match config.pair_selection {
            PairSelectionMode::Progressive => {
                let halved = progress.observe(val_auc, config.patience);
                if halved && config.reset_moments_on_halving {
                    opt.reset();
                }
                halved
            }
            PairSelectionMode::FixedC(_) => {
                // Track the best metric without ever changing C.
                if val_auc > progress.best_val_metric {
                    progress.best_val_metric = val_auc;
                    progress.epochs_since_improvement = 0;
                } else {
                    progress.epochs_since_improvement += 1;
                }
                false
            }
        };

        let denom = batches.max(1) as f64;
        history.epochs.push(EpochRecord {
            epoch,
            c,
            l_ms: sums.0 / denom,
            l_ce: sums.1 / denom,
            l_total: sums.2 / denom,
            val_auc,
            batches,
            skipped_batches: skipped,
            halved,
            wall_time_s: start.elapsed().as_secs_f64(),
        });

        let is_better = best
            .as_ref()
            .map(|b| val_auc > b.val_metric)
            .unwrap_or(true);
        if is_better {
            best = Some(Checkpoint {
                params: params.clone(),
                progress: progress.clone(),
                epoch,
                val_metric: val_auc,
            });
        }
    }

    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        history,
        final_c: progress.c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};

    fn tiny_setup() -> (Dataset, ModelConfig, TrainConfig) {
        let world = WorldConfig {
            num_identities: 12,
            identity_split: (0.5, 0.25, 0.25),
            latent_dim: 8,
            face_dim: 16,
            voice_dim: 12,
            videos_per_identity: 2,
            faces_per_video: 2,
            voices_per_video: 2,
            ..WorldConfig::default()
        };
        let dataset = generate_world(&world).unwrap();
        let model = ModelConfig {
            encoder: crate::encoders::EncoderConfig {
                face_dim: 16,
                voice_dim: 12,
                hidden_dim: 16,
                embed_dim: 8,
            },
            fusion: crate::fusion::FusionConfig {
                embed_dim: 8,
                hidden_dim: 16,
                num_heads: 2,
                num_layers: 1,
                ff_expansion: 2,
                pooling: crate::fusion::Pooling::Mean,
            },
        };
        let train_cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 3,
            val_pairs: 40,
            ..TrainConfig::desk()
        };
        (dataset, model, train_cfg)
    }

    #[test]
    fn gather_single_shard_is_identity() {
        let mut r = rng::seeded(1);
        let f = rng::random_tensor(&mut r, 5, 3, 1.0);
        let v = rng::random_tensor(&mut r, 5, 4, 1.0);
        let labels = vec![0, 1, 2, 3, 4];
        let shards = split_into_shards(&f, &v, &labels, 1);
        let (gf, gv, gl) = gather_global_pool(&shards).unwrap();
        assert_eq!(gf, f);
        assert_eq!(gv, v);
        assert_eq!(gl, labels);
    }

    #[test]
    fn gather_skips_empty_shards_and_preserves_order() {
        let mut r = rng::seeded(2);
        let f = rng::random_tensor(&mut r, 3, 2, 1.0);
        let v = rng::random_tensor(&mut r, 3, 2, 1.0);
        let labels = vec![7, 8, 9];
        // 5 workers over 3 samples leaves empty shards.
        let shards = split_into_shards(&f, &v, &labels, 5);
        assert_eq!(shards.len(), 5);
        let (gf, _, gl) = gather_global_pool(&shards).unwrap();
        assert_eq!(gf, f);
        assert_eq!(gl, labels);
    }

    #[test]
    fn shard_counts_do_not_change_mined_pairs() {
        let mut r = rng::seeded(3);
        let f = rng::random_tensor(&mut r, 12, 5, 1.0);
        let v = rng::random_tensor(&mut r, 12, 5, 1.0);
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let mut reference = None;
        for workers in [1usize, 2, 4] {
            let shards = split_into_shards(&f, &v, &labels, workers);
            let (gf, gv, gl) = gather_global_pool(&shards).unwrap();
            let pairs = mine_hard_negatives(&gf, &gv, &gl, &gl, 2).unwrap();
            match &reference {
                None => reference = Some(pairs),
                Some(r) => assert_eq!(r, &pairs, "{workers} workers diverged"),
            }
        }
    }

    #[test]
    fn dim_mismatch_between_shards_is_shape_error() {
        let shards = vec![
            WorkerShard {
                faces: vec![vec![1.0, 2.0]],
                voices: vec![vec![1.0]],
                labels: vec![0],
            },
            WorkerShard {
                faces: vec![vec![1.0, 2.0, 3.0]],
                voices: vec![vec![1.0]],
                labels: vec![1],
            },
        ];
        assert!(matches!(
            gather_global_pool(&shards),
            Err(FaaError::Shape(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (dataset, model, cfg) = tiny_setup();
        let a = train(&dataset, &model, &cfg).unwrap();
        let b = train(&dataset, &model, &cfg).unwrap();
        assert_eq!(
            a.history.to_jsonl().unwrap(),
            b.history.to_jsonl().unwrap()
        );
        assert_eq!(
            a.best.to_bytes().unwrap(),
            b.best.to_bytes().unwrap()
        );
    }

    #[test]
    fn nan_injection_aborts_with_location() {
        let (dataset, model, mut cfg) = tiny_setup();
        cfg.inject_nan_at = Some((1, 0));
        match train(&dataset, &model, &cfg) {
            Err(FaaError::NonFiniteLoss { epoch, batch, .. }) => {
                assert_eq!((epoch, batch), (1, 0));
            }
            Err(other) => panic!("expected NonFiniteLoss, got {other:?}"),
            Ok(_) => panic!("expected NonFiniteLoss, got success"),
        }
    }

    #[test]
    fn worker_count_does_not_change_training() {
        let (dataset, model, mut cfg) = tiny_setup();
        cfg.max_epochs = 2;
        let one = train(&dataset, &model, &cfg).unwrap();
        cfg.num_simulated_workers = 4;
        let four = train(&dataset, &model, &cfg).unwrap();
        assert_eq!(
            one.best.to_bytes().unwrap(),
            four.best.to_bytes().unwrap()
        );
    }

    #[test]
    fn fixed_c_never_halves() {
        let (dataset, model, mut cfg) = tiny_setup();
        cfg.pair_selection = PairSelectionMode::FixedC(4);
        cfg.max_epochs = 6;
        let out = train(&dataset, &model, &cfg).unwrap();
        assert_eq!(out.final_c, 4);
        assert!(out.history.epochs.iter().all(|e| e.c == 4 && !e.halved));
    }

    #[test]
    fn eq6_weighting_holds_per_epoch() {
        let (dataset, model, cfg) = tiny_setup();
        let out = train(&dataset, &model, &cfg).unwrap();
        for e in &out.history.epochs {
            let recombined = cfg.delta * e.l_ms + (1.0 - cfg.delta) * e.l_ce;
            assert!(
                (e.l_total - recombined).abs() <= 1e-12,
                "epoch {}: {} vs {}",
                e.epoch,
                e.l_total,
                recombined
            );
        }
    }
}
