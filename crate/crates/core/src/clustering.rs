//! Pseudo-label production: dual-modality pooled video representations,
//! deterministic k-means, and the progressive halving controller.

use serde::{Deserialize, Serialize};

use crate::encoders::{batch_from_samples, encode_values, MlpParams};
use crate::error::{FaaError, Result};
use crate::numerics::Tensor;
use crate::rng;
use crate::synthworld::VideoRecord;

/// Pooled dual-modality representation of one video:
/// mean face embedding concatenated with mean voice embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding {
    pub video_id: u64,
    pub vector: Vec<f64>,
}

/// Mean-pool each modality and concatenate.
pub fn pool_embeddings(face_embs: &Tensor, voice_embs: &Tensor) -> Vec<f64> {
    let mean = |t: &Tensor| -> Vec<f64> {
        let m = t.rows() as f64;
        let mut out = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v / m;
            }
        }
        out
    };
    let mut v = mean(face_embs);
    v.extend(mean(voice_embs));
    v
}

/// Encode a video's samples and pool them into its representation.
pub fn pool_video(
    video: &VideoRecord,
    face_enc: &MlpParams,
    voice_enc: &MlpParams,
) -> Result<VideoEmbedding> {
    if video.faces.is_empty() || video.voices.is_empty() {
        return Err(FaaError::DegenerateInput(format!(
            "video {} has an empty modality",
            video.video_id
        )));
    }
    let faces: Vec<&[f32]> = video.faces.iter().map(|v| v.as_slice()).collect();
    let voices: Vec<&[f32]> = video.voices.iter().map(|v| v.as_slice()).collect();
    let fe = encode_values(&batch_from_samples(&faces)?, face_enc)?;
    let ve = encode_values(&batch_from_samples(&voices)?, voice_enc)?;
    Ok(VideoEmbedding {
        video_id: video.video_id,
        vector: pool_embeddings(&fe, &ve),
    })
}

/// Result of one k-means run.
pub struct KmeansOutput {
    pub assignments: Vec<usize>,
    pub centroids: Tensor,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties broken by lowest centroid index (strict <).
fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from k-means++ seeding until the assignment fixpoint or
/// 100 iterations. Empty clusters are re-seeded to the point farthest from
/// its assigned centroid. Deterministic given the seed.
pub fn kmeans(points: &Tensor, c: usize, seed: u64) -> Result<KmeansOutput> {
    let n = points.rows();
    let d = points.cols();
    if c > n {
        return Err(FaaError::Config(format!(
            "kmeans: C = {c} exceeds point count {n}"
        )));
    }
    if c == 0 {
        return Err(FaaError::Config("kmeans: C must be >= 1".into()));
    }
    if !points.is_finite() {
        return Err(FaaError::DegenerateInput("kmeans: non-finite point".into()));
    }

    // k-means++ seeding.
    let mut r = rng::seeded(seed);
    let mut centroids = Tensor::zeros(c, d);
    let first = rand::Rng::random_range(&mut r, 0..n);
    for j in 0..d {
        centroids.set(0, j, points.at(first, j));
    }
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)))
        .collect();
    for k in 1..c {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let threshold = rand::Rng::random::<f64>(&mut r) * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in min_d.iter().enumerate() {
                acc += w;
                if acc >= threshold {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass at distance zero: duplicate points.
            rand::Rng::random_range(&mut r, 0..n)
        };
        for j in 0..d {
            centroids.set(k, j, points.at(pick, j));
        }
        for i in 0..n {
            let nd = sq_dist(points.row(i), centroids.row(k));
            if nd < min_d[i] {
                min_d[i] = nd;
            }
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _iter in 0..100 {
        // Assignment step.
        let mut new_assign = vec![0usize; n];
        let mut dists = vec![0.0f64; n];
        for i in 0..n {
            let (a, dist) = nearest(points.row(i), &centroids);
            new_assign[i] = a;
            dists[i] = dist;
        }

        // Re-seed empty clusters to the farthest point from its centroid.
        let mut counts = vec![0usize; c];
        for &a in &new_assign {
            counts[a] += 1;
        }
        for k in 0..c {
            if counts[k] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|i| counts[new_assign[*i]] > 1)
                .max_by(|a, b| {
                    dists[*a]
                        .partial_cmp(&dists[*b])
                        .unwrap()
                        .then(b.cmp(a)) // ties: lowest index wins under max_by
                })
                .ok_or_else(|| {
                    FaaError::DegenerateInput("kmeans: cannot repopulate empty cluster".into())
                })?;
            counts[new_assign[far]] -= 1;
            counts[k] += 1;
            for j in 0..d {
                centroids.set(k, j, points.at(far, j));
            }
            new_assign[far] = k;
            dists[far] = 0.0;
        }

        let new_inertia: f64 = dists.iter().sum();
        debug_assert!(
            new_inertia <= inertia + 1e-9,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;

        if new_assign == assignments {
            break;
        }
        assignments = new_assign;

        // Update step: centroid = mean of its members.
        let mut sums = vec![0.0f64; c * d];
        let mut counts = vec![0usize; c];
        for i in 0..n {
            let a = assignments[i];
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for k in 0..c {
            if counts[k] == 0 {
                continue;
            }
            for j in 0..d {
                centroids.set(k, j, sums[k * d + j] / counts[k] as f64);
            }
        }
    }

    Ok(KmeansOutput {
        assignments,
        centroids,
        inertia,
    })
}

/// Cluster assignment for every training video at one epoch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PseudoLabeling {
    /// (video_id, cluster id), in training-partition order.
    pub assignments: Vec<(u64, usize)>,
    /// Number of distinct labels; ids are dense in [0, C).
    pub num_clusters: usize,
    pub produced_at_epoch: usize,
}

impl PseudoLabeling {
    pub fn labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|(_, l)| *l).collect()
    }

    pub fn label_of(&self, video_id: u64) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(v, _)| *v == video_id)
            .map(|(_, l)| *l)
    }
}

/// Compress label ids to a dense range, preserving ascending id order.
fn densify(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut present: Vec<usize> = raw.to_vec();
    present.sort_unstable();
    present.dedup();
    let remap: std::collections::BTreeMap<usize, usize> = present
        .iter()
        .enumerate()
        .map(|(new, old)| (*old, new))
        .collect();
    (raw.iter().map(|l| remap[l]).collect(), present.len())
}

/// Pool every training video, run k-means, and store dense labels.
pub fn assign_pseudo_labels(
    train: &[VideoRecord],
    face_enc: &MlpParams,
    voice_enc: &MlpParams,
    c: usize,
    seed: u64,
    epoch: usize,
) -> Result<PseudoLabeling> {
    if c > train.len() {
        return Err(FaaError::Config(format!(
            "C = {c} exceeds {} training videos",
            train.len()
        )));
    }
    let pooled: Vec<VideoEmbedding> = train
        .iter()
        .map(|v| pool_video(v, face_enc, voice_enc))
        .collect::<Result<Vec<_>>>()?;
    let dim = pooled[0].vector.len();
    let mut data = Vec::with_capacity(pooled.len() * dim);
    for p in &pooled {
        data.extend_from_slice(&p.vector);
    }
    let points = Tensor::new(pooled.len(), dim, data)?;
    let out = kmeans(&points, c, seed)?;
    let (dense, count) = densify(&out.assignments);
    Ok(PseudoLabeling {
        assignments: pooled
            .iter()
            .zip(&dense)
            .map(|(p, l)| (p.video_id, *l))
            .collect(),
        num_clusters: count,
        produced_at_epoch: epoch,
    })
}

/// Progressive-clustering controller state: halve C when the validation
/// metric has not improved for `patience` epochs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProgressState {
    pub c: usize,
    pub best_val_metric: f64,
    pub epochs_since_improvement: usize,
    pub c_min: usize,
}

impl ProgressState {
    pub fn new(initial_c: usize, c_min: usize) -> Self {
        Self {
            c: initial_c.max(c_min),
            best_val_metric: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            c_min: c_min.max(2),
        }
    }

    /// Record one epoch's validation metric; returns true when C was halved.
    pub fn observe(&mut self, val_metric: f64, patience: usize) -> bool {
        assert!(patience >= 1, "patience must be >= 1");
        if val_metric > self.best_val_metric {
            self.best_val_metric = val_metric;
            self.epochs_since_improvement = 0;
            return false;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= patience {
            self.c = (self.c / 2).max(self.c_min);
            self.epochs_since_improvement = 0;
            return true;
        }
        false
    }
}

/// Normalized mutual information between two labelings (arithmetic-mean
/// normalization). 1.0 means identical partitions up to relabeling.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must align");
    let n = a.len() as f64;
    let count = |xs: &[usize]| -> std::collections::BTreeMap<usize, f64> {
        let mut m = std::collections::BTreeMap::new();
        for &x in xs {
            *m.entry(x).or_insert(0.0) += 1.0;
        }
        m
    };
    let ca = count(a);
    let cb = count(b);
    let mut joint: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
    }
    let entropy = |m: &std::collections::BTreeMap<usize, f64>| -> f64 {
        m.values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = entropy(&ca);
    let hb = entropy(&cb);
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c / n;
        let px = ca[&x] / n;
        let py = cb[&y] / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    if ha + hb == 0.0 {
        return 1.0;
    }
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};

    #[test]
    fn pooling_matches_eq1_on_stub_embeddings() {
        let faces = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let voices = Tensor::new(1, 2, vec![2.0, 2.0]).unwrap();
        assert_eq!(pool_embeddings(&faces, &voices), vec![0.5, 0.5, 2.0, 2.0]);
    }

    #[test]
    fn pooling_single_sample_is_concatenation() {
        let faces = Tensor::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let voices = Tensor::new(1, 2, vec![-1.0, 4.0]).unwrap();
        assert_eq!(
            pool_embeddings(&faces, &voices),
            vec![0.1, 0.2, 0.3, -1.0, 4.0]
        );
    }

    #[test]
    fn pooling_is_order_invariant() {
        let a = Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(3, 2, vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Tensor::new(1, 2, vec![0.0, 0.0]).unwrap();
        let pa = pool_embeddings(&a, &v);
        let pb = pool_embeddings(&b, &v);
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_well_separated() {
        let pts = Tensor::new(
            4,
            2,
            vec![0.0, 0.0, 0.1, 0.0, 10.0, 10.0, 10.1, 10.0],
        )
        .unwrap();
        let out = kmeans(&pts, 2, 1).unwrap();
        assert_eq!(out.assignments[0], out.assignments[1]);
        assert_eq!(out.assignments[2], out.assignments[3]);
        assert_ne!(out.assignments[0], out.assignments[2]);
    }

    #[test]
    fn kmeans_c_equals_n() {
        let mut r = rng::seeded(17);
        let pts = rng::random_tensor(&mut r, 8, 3, 1.0);
        let out = kmeans(&pts, 8, 2).unwrap();
        let mut seen: Vec<usize> = out.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 8, "every point its own cluster");
        assert!(out.inertia < 1e-18);
    }

    #[test]
    fn kmeans_c_above_n_is_config_error() {
        let pts = Tensor::zeros(3, 2);
        assert!(matches!(kmeans(&pts, 4, 0), Err(FaaError::Config(_))));
    }

    #[test]
    fn kmeans_close_to_multi_restart_oracle() {
        let mut r = rng::seeded(33);
        let pts = rng::random_tensor(&mut r, 200, 8, 1.0);
        let single = kmeans(&pts, 5, 42).unwrap().inertia;
        let best = (0..20)
            .map(|s| kmeans(&pts, 5, s).unwrap().inertia)
            .fold(f64::INFINITY, f64::min);
        assert!(
            single <= best * 1.05,
            "single-run inertia {single} vs best-of-20 {best}"
        );
    }

    #[test]
    fn kmeans_deterministic() {
        let mut r = rng::seeded(12);
        let pts = rng::random_tensor(&mut r, 50, 4, 1.0);
        let a = kmeans(&pts, 7, 9).unwrap();
        let b = kmeans(&pts, 7, 9).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    fn tiny_world() -> (crate::synthworld::Dataset, MlpParams, MlpParams) {
        let config = WorldConfig {
            num_identities: 12,
            identity_split: (0.5, 0.25, 0.25),
            cross_modal_strength: 1.0,
            noise_std: 0.0,
            ..WorldConfig::default()
        };
        let ds = generate_world(&config).unwrap();
        let mut r = rng::seeded(100);
        let face = MlpParams::init(&mut r, config.face_dim, 16, 8);
        let voice = MlpParams::init(&mut r, config.voice_dim, 16, 8);
        (ds, face, voice)
    }

    #[test]
    fn labels_partition_by_identity_in_perfect_world() {
        let (ds, face, voice) = tiny_world();
        let ids: Vec<usize> = ds.train.iter().map(|v| v.identity_id as usize).collect();
        let n_ids = {
            let mut u = ids.clone();
            u.sort_unstable();
            u.dedup();
            u.len()
        };
        let labels = assign_pseudo_labels(&ds.train, &face, &voice, n_ids, 5, 0).unwrap();
        assert!((nmi(&labels.labels(), &ids) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_videos_share_label() {
        let (ds, face, voice) = tiny_world();
        // Zero noise + full strength: all videos of an identity are identical.
        let labels = assign_pseudo_labels(&ds.train, &face, &voice, 6, 5, 0).unwrap();
        let by_id: std::collections::BTreeMap<u64, Vec<usize>> = ds.train.iter().fold(
            Default::default(),
            |mut m, v| {
                m.entry(v.identity_id)
                    .or_default()
                    .push(labels.label_of(v.video_id).unwrap());
                m
            },
        );
        for (_, ls) in by_id {
            assert!(ls.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn c_equal_videos_gives_one_label_each_for_distinct_videos() {
        let config = WorldConfig {
            num_identities: 12,
            identity_split: (0.5, 0.25, 0.25),
            noise_std: 0.2,
            ..WorldConfig::default()
        };
        let ds = generate_world(&config).unwrap();
        let mut r = rng::seeded(101);
        let face = MlpParams::init(&mut r, config.face_dim, 16, 8);
        let voice = MlpParams::init(&mut r, config.voice_dim, 16, 8);
        let n = ds.train.len();
        let labels = assign_pseudo_labels(&ds.train, &face, &voice, n, 5, 0).unwrap();
        assert_eq!(labels.num_clusters, n);
    }

    #[test]
    fn label_assignment_is_enumeration_order_invariant_up_to_relabeling() {
        let (ds, face, voice) = tiny_world();
        let labels = assign_pseudo_labels(&ds.train, &face, &voice, 6, 5, 0).unwrap();
        let mut reversed = ds.train.clone();
        reversed.reverse();
        let labels_rev = assign_pseudo_labels(&reversed, &face, &voice, 6, 5, 0).unwrap();
        let a: Vec<usize> = labels.labels();
        let mut b: Vec<usize> = labels_rev.labels();
        b.reverse();
        assert!((nmi(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn progressive_step_halves_after_patience() {
        let mut st = ProgressState {
            c: 1024,
            best_val_metric: 0.8,
            epochs_since_improvement: 2,
            c_min: 2,
        };
        let halved = st.observe(0.7, 3);
        assert!(halved);
        assert_eq!(st.c, 512);
        assert_eq!(st.epochs_since_improvement, 0);
    }

    #[test]
    fn progressive_step_resets_on_improvement() {
        let mut st = ProgressState {
            c: 1024,
            best_val_metric: 0.8,
            epochs_since_improvement: 2,
            c_min: 2,
        };
        let halved = st.observe(0.9, 3);
        assert!(!halved);
        assert_eq!(st.c, 1024);
        assert_eq!(st.epochs_since_improvement, 0);
        assert_eq!(st.best_val_metric, 0.9);
    }

    #[test]
    fn progressive_step_clamps_at_c_min() {
        let mut st = ProgressState {
            c: 2,
            best_val_metric: 0.8,
            epochs_since_improvement: 2,
            c_min: 2,
        };
        st.observe(0.1, 3);
        assert_eq!(st.c, 2);
    }

    #[test]
    fn nmi_bounds() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert!((nmi(&a, &a) - 1.0).abs() < 1e-12);
        // One big cluster shares no information with any labeling.
        let b = vec![0; 6];
        assert!(nmi(&a, &b).abs() < 1e-12);
        // Crossed labeling: MI = ln(3/2), H = ln 3 each side.
        let c = vec![0, 1, 2, 0, 1, 2];
        let expect = 2.0 * (1.5f64).ln() / (2.0 * (3.0f64).ln());
        assert!((nmi(&a, &c) - expect).abs() < 1e-12);
    }
}
