//! Synthetic identity world: identities with shared latents emit correlated
//! "face" and "voice" feature vectors grouped into videos, partitioned into
//! identity-disjoint train/val/test splits.

mod io;

pub use io::{read_dataset, write_dataset};

use serde::{Deserialize, Serialize};

use crate::error::{FaaError, Result};
use crate::rng::{self, tag};

/// Everything needed to generate a world deterministically from a seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldConfig {
    pub num_identities: usize,
    /// (train, val, test) fractions; must sum to 1.
    pub identity_split: (f64, f64, f64),
    pub latent_dim: usize,
    pub face_dim: usize,
    pub voice_dim: usize,
    pub videos_per_identity: usize,
    /// Face samples per video.
    pub faces_per_video: usize,
    /// Voice samples per video.
    pub voices_per_video: usize,
    pub noise_std: f64,
    /// 0 = modalities share nothing; 1 = both emit from the same latent.
    pub cross_modal_strength: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_identities: 96,
            identity_split: (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0),
            latent_dim: 16,
            face_dim: 48,
            voice_dim: 32,
            videos_per_identity: 4,
            faces_per_video: 4,
            voices_per_video: 2,
            noise_std: 0.1,
            cross_modal_strength: 0.9,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.identity_split;
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(FaaError::Config(format!(
                "identity_split must sum to 1, got {a} + {b} + {c}"
            )));
        }
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(FaaError::Config("identity_split fractions must be positive".into()));
        }
        if self.num_identities < 1
            || self.videos_per_identity < 1
            || self.faces_per_video < 1
            || self.voices_per_video < 1
        {
            return Err(FaaError::Config("all counts must be >= 1".into()));
        }
        if self.latent_dim < 2 || self.face_dim < 2 || self.voice_dim < 2 {
            return Err(FaaError::Config("all dims must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.cross_modal_strength) {
            return Err(FaaError::Config(format!(
                "cross_modal_strength must be in [0,1], got {}",
                self.cross_modal_strength
            )));
        }
        if self.noise_std < 0.0 {
            return Err(FaaError::Config("noise_std must be >= 0".into()));
        }
        let (t, v, s) = self.partition_sizes();
        if t == 0 || v == 0 || s == 0 {
            return Err(FaaError::Config(format!(
                "identity_split {:?} of {} identities yields an empty partition ({t}/{v}/{s})",
                self.identity_split, self.num_identities
            )));
        }
        Ok(())
    }

    /// Identity counts per partition (rounded train/val, remainder to test).
    pub fn partition_sizes(&self) -> (usize, usize, usize) {
        let n = self.num_identities as f64;
        let t = (self.identity_split.0 * n).round() as usize;
        let v = (self.identity_split.1 * n).round() as usize;
        let t = t.min(self.num_identities);
        let v = v.min(self.num_identities - t);
        (t, v, self.num_identities - t - v)
    }
}

/// One synthetic video: a bundle of face and voice feature vectors.
///
/// Feature values are quantized to f32 at generation time (storage is f32);
/// computation upcasts to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: u64,
    /// Ground truth; hidden from training, used only for evaluation.
    pub identity_id: u64,
    /// Binary gender-analog attribute for the same-group protocols.
    pub group: bool,
    pub faces: Vec<Vec<f32>>,
    pub voices: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

/// Identity-disjoint partitions of synthetic videos plus their config.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<VideoRecord>,
    pub val: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
    pub config: WorldConfig,
}

impl Dataset {
    pub fn partition(&self, p: Partition) -> &[VideoRecord] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Check identity-disjointness, global video-id uniqueness and
    /// non-emptiness; run after generation and after deserialization.
    pub fn validate(&self) -> Result<()> {
        use std::collections::BTreeSet;
        let mut id_sets: Vec<BTreeSet<u64>> = Vec::new();
        let mut video_ids = BTreeSet::new();
        for p in Partition::ALL {
            let videos = self.partition(p);
            if videos.is_empty() {
                return Err(FaaError::Config(format!("empty {} partition", p.name())));
            }
            let mut ids = BTreeSet::new();
            for v in videos {
                if v.faces.is_empty() || v.voices.is_empty() {
                    return Err(FaaError::DegenerateInput(format!(
                        "video {} has an empty modality",
                        v.video_id
                    )));
                }
                ids.insert(v.identity_id);
                if !video_ids.insert(v.video_id) {
                    return Err(FaaError::Corruption(format!(
                        "duplicate video id {}",
                        v.video_id
                    )));
                }
            }
            id_sets.push(ids);
        }
        for i in 0..id_sets.len() {
            for j in i + 1..id_sets.len() {
                if id_sets[i].intersection(&id_sets[j]).next().is_some() {
                    return Err(FaaError::Corruption(
                        "partitions share an identity".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Fixed per-world emission parameters, re-derivable from the config seed.
pub struct WorldMixing {
    /// face_dim x latent_dim
    pub face_mix: Vec<Vec<f64>>,
    /// voice_dim x latent_dim
    pub voice_mix: Vec<Vec<f64>>,
    /// Group mean shift of the shared latent; through the mixing matrices it
    /// becomes a fixed additive offset in both modalities.
    pub group_shift: Vec<f64>,
}

/// Norm of the group shift in latent space. Same-group identities end up
/// closer than cross-group ones, which is what makes the same-group
/// protocols harder. Carried by the shared latent so it scales with
/// cross_modal_strength and vanishes in the null world.
const GROUP_SHIFT_NORM: f64 = 1.5;

/// Re-derive the fixed mixing matrices and group shift for a config.
pub fn world_mixing(config: &WorldConfig) -> WorldMixing {
    let mut r = rng::seeded(rng::subseed(config.seed, &[tag::WORLD_MIXING]));
    let col_std = 1.0 / (config.latent_dim as f64).sqrt();
    let mut mix = |rows: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| rng::normal_vec(&mut r, config.latent_dim, col_std))
            .collect()
    };
    let face_mix = mix(config.face_dim);
    let voice_mix = mix(config.voice_dim);
    let raw = rng::normal_vec(&mut r, config.latent_dim, 1.0);
    let norm: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let group_shift = raw
        .into_iter()
        .map(|v| GROUP_SHIFT_NORM * v / norm)
        .collect();
    WorldMixing {
        face_mix,
        voice_mix,
        group_shift,
    }
}

fn emit_sample(
    mix: &[Vec<f64>],
    latent: &[f64],
    noise_std: f64,
    r: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f32> {
    mix.iter()
        .map(|row| {
            let signal: f64 = row.iter().zip(latent).map(|(a, z)| a * z).sum();
            (signal + noise_std * rng::normal(r)) as f32
        })
        .collect()
}

/// Generate a world. Fully determined by `config` (including its seed).
pub fn generate_world(config: &WorldConfig) -> Result<Dataset> {
    config.validate()?;
    let mixing = world_mixing(config);
    let s = config.cross_modal_strength;

    // Identity order shuffled before slicing into partitions.
    let mut order: Vec<usize> = (0..config.num_identities).collect();
    {
        use rand::seq::SliceRandom;
        let mut r = rng::seeded(rng::subseed(config.seed, &[tag::WORLD_SPLIT]));
        order.shuffle(&mut r);
    }
    let (n_train, n_val, _) = config.partition_sizes();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut video_id: u64 = 0;
    for (slot, &identity) in order.iter().enumerate() {
        let mut r = rng::seeded(rng::subseed(
            config.seed,
            &[tag::WORLD_IDENTITY, identity as u64],
        ));
        let base = rng::normal_vec(&mut r, config.latent_dim, 1.0);
        let face_indep = rng::normal_vec(&mut r, config.latent_dim, 1.0);
        let voice_indep = rng::normal_vec(&mut r, config.latent_dim, 1.0);
        let group = rng::normal(&mut r) >= 0.0;
        let group_sign = if group { 1.0 } else { -1.0 };

        // Group lives in the shared latent, so it reaches both modalities
        // only through the cross-modal pathway.
        let shared: Vec<f64> = base
            .iter()
            .zip(&mixing.group_shift)
            .map(|(z, off)| z + group_sign * off)
            .collect();
        let face_latent: Vec<f64> = shared
            .iter()
            .zip(&face_indep)
            .map(|(z, zi)| s * z + (1.0 - s) * zi)
            .collect();
        let voice_latent: Vec<f64> = shared
            .iter()
            .zip(&voice_indep)
            .map(|(z, zi)| s * z + (1.0 - s) * zi)
            .collect();

        let out = if slot < n_train {
            &mut train
        } else if slot < n_train + n_val {
            &mut val
        } else {
            &mut test
        };
        for _ in 0..config.videos_per_identity {
            let faces = (0..config.faces_per_video)
                .map(|_| emit_sample(&mixing.face_mix, &face_latent, config.noise_std, &mut r))
                .collect();
            let voices = (0..config.voices_per_video)
                .map(|_| emit_sample(&mixing.voice_mix, &voice_latent, config.noise_std, &mut r))
                .collect();
            out.push(VideoRecord {
                video_id,
                identity_id: identity as u64,
                group,
                faces,
                voices,
            });
            video_id += 1;
        }
    }

    let dataset = Dataset {
        train,
        val,
        test,
        config: config.clone(),
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_counts() {
        let ds = generate_world(&WorldConfig::default()).unwrap();
        assert_eq!(ds.train.len(), 256);
        assert_eq!(ds.val.len(), 64);
        assert_eq!(ds.test.len(), 64);
        ds.validate().unwrap();
    }

    #[test]
    fn zero_noise_full_strength_is_deterministic_emission() {
        let config = WorldConfig {
            cross_modal_strength: 1.0,
            noise_std: 0.0,
            num_identities: 12,
            ..WorldConfig::default()
        };
        let ds = generate_world(&config).unwrap();
        for videos in [&ds.train, &ds.val, &ds.test] {
            let mut per_identity: std::collections::BTreeMap<u64, &VideoRecord> =
                Default::default();
            for v in videos.iter() {
                let first = per_identity.entry(v.identity_id).or_insert(v);
                for f in &v.faces {
                    assert_eq!(f, &first.faces[0]);
                }
                for voice in &v.voices {
                    assert_eq!(voice, &first.voices[0]);
                }
            }
        }
    }

    #[test]
    fn null_world_has_no_cross_modal_correlation() {
        let config = WorldConfig {
            cross_modal_strength: 0.0,
            num_identities: 200,
            identity_split: (0.9, 0.05, 0.05),
            videos_per_identity: 1,
            faces_per_video: 1,
            voices_per_video: 1,
            ..WorldConfig::default()
        };
        let ds = generate_world(&config).unwrap();
        let videos: Vec<&VideoRecord> = ds
            .train
            .iter()
            .chain(ds.val.iter())
            .chain(ds.test.iter())
            .collect();
        assert_eq!(videos.len(), 200);
        // Pearson correlation between matched face/voice coordinates.
        let dims = config.face_dim.min(config.voice_dim);
        for d in 0..dims.min(4) {
            let xs: Vec<f64> = videos.iter().map(|v| v.faces[0][d] as f64).collect();
            let ys: Vec<f64> = videos.iter().map(|v| v.voices[0][d] as f64).collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
            let r = cov / (vx * vy).sqrt();
            assert!(r.abs() < 0.1, "dim {d}: r = {r}");
        }
    }

    #[test]
    fn empty_partition_is_config_error() {
        let config = WorldConfig {
            num_identities: 3,
            identity_split: (0.999, 0.0005, 0.0005),
            ..WorldConfig::default()
        };
        assert!(matches!(
            generate_world(&config),
            Err(FaaError::Config(_))
        ));
    }

    #[test]
    fn split_not_summing_to_one_rejected() {
        let config = WorldConfig {
            identity_split: (0.5, 0.2, 0.2),
            ..WorldConfig::default()
        };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("identity_split"));
    }

    #[test]
    fn same_seed_same_world() {
        let config = WorldConfig::default();
        let a = generate_world(&config).unwrap();
        let b = generate_world(&config).unwrap();
        assert_eq!(a, b);
    }

    /// Sanity oracle: with full strength and tiny noise, inverting the
    /// ground-truth mixing matrices recovers the identity pairing by
    /// nearest neighbor on the latent estimates.
    #[test]
    fn mixing_matrix_inversion_recovers_pairing() {
        let config = WorldConfig {
            cross_modal_strength: 1.0,
            noise_std: 0.05,
            num_identities: 60,
            identity_split: (0.5, 0.25, 0.25),
            ..WorldConfig::default()
        };
        let ds = generate_world(&config).unwrap();
        let mixing = world_mixing(&config);

        let mut identities: std::collections::BTreeMap<u64, (Vec<f64>, Vec<f64>, bool)> =
            Default::default();
        for v in ds.train.iter().chain(ds.val.iter()).chain(ds.test.iter()) {
            let e = identities.entry(v.identity_id).or_insert_with(|| {
                (vec![0.0; config.face_dim], vec![0.0; config.voice_dim], v.group)
            });
            for f in &v.faces {
                for (a, b) in e.0.iter_mut().zip(f) {
                    *a += *b as f64;
                }
            }
            for w in &v.voices {
                for (a, b) in e.1.iter_mut().zip(w) {
                    *a += *b as f64;
                }
            }
        }

        let solve = |mix: &[Vec<f64>], obs: &[f64]| -> Vec<f64> {
            // Least squares via normal equations, Gaussian elimination.
            let k = config.latent_dim;
            let mut ata = vec![vec![0.0; k]; k];
            let mut atb = vec![0.0; k];
            for (row, o) in mix.iter().zip(obs) {
                for i in 0..k {
                    atb[i] += row[i] * o;
                    for j in 0..k {
                        ata[i][j] += row[i] * row[j];
                    }
                }
            }
            for col in 0..k {
                let piv = (col..k)
                    .max_by(|a, b| ata[*a][col].abs().partial_cmp(&ata[*b][col].abs()).unwrap())
                    .unwrap();
                ata.swap(col, piv);
                atb.swap(col, piv);
                let d = ata[col][col];
                for r in 0..k {
                    if r == col {
                        continue;
                    }
                    let f = ata[r][col] / d;
                    for c in 0..k {
                        ata[r][c] -= f * ata[col][c];
                    }
                    atb[r] -= f * atb[col];
                }
            }
            (0..k).map(|i| atb[i] / ata[i][i]).collect()
        };

        let total_faces = (config.videos_per_identity * config.faces_per_video) as f64;
        let total_voices = (config.videos_per_identity * config.voices_per_video) as f64;
        let mut face_latents = Vec::new();
        let mut voice_latents = Vec::new();
        let mut ids = Vec::new();
        for (id, (fsum, vsum, _group)) in &identities {
            let fmean: Vec<f64> = fsum.iter().map(|v| v / total_faces).collect();
            let vmean: Vec<f64> = vsum.iter().map(|v| v / total_voices).collect();
            face_latents.push(solve(&mixing.face_mix, &fmean));
            voice_latents.push(solve(&mixing.voice_mix, &vmean));
            ids.push(*id);
        }

        let mut correct = 0;
        for i in 0..ids.len() {
            let mut best = (f64::INFINITY, 0);
            for j in 0..ids.len() {
                let d: f64 = face_latents[i]
                    .iter()
                    .zip(&voice_latents[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            if best.1 == i {
                correct += 1;
            }
        }
        let acc = correct as f64 / ids.len() as f64;
        assert!(acc >= 0.99, "pairing accuracy {acc}");
    }
}
