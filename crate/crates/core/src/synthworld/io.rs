//! Dataset persistence: `manifest.json` plus one binary blob per partition.
//!
//! Blob layout: magic "FAAD", version u32 LE, vector count u64 LE, then the
//! vectors in manifest order (faces then voices per video), each as f32 LE
//! values. Storage is f32; computation upcasts to f64.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FaaError, Result};

use super::{Dataset, Partition, VideoRecord, WorldConfig};

const MAGIC: &[u8; 4] = b"FAAD";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VideoMeta {
    video_id: u64,
    identity_id: u64,
    group: bool,
    num_faces: usize,
    num_voices: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: WorldConfig,
    train: Vec<VideoMeta>,
    val: Vec<VideoMeta>,
    test: Vec<VideoMeta>,
}

fn metas(videos: &[VideoRecord]) -> Vec<VideoMeta> {
    videos
        .iter()
        .map(|v| VideoMeta {
            video_id: v.video_id,
            identity_id: v.identity_id,
            group: v.group,
            num_faces: v.faces.len(),
            num_voices: v.voices.len(),
        })
        .collect()
}

fn write_blob(path: &Path, videos: &[VideoRecord]) -> Result<()> {
    let count: u64 = videos.iter().map(|v| (v.faces.len() + v.voices.len()) as u64).sum();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for v in videos {
        for vector in v.faces.iter().chain(v.voices.iter()) {
            for x in vector {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Write `manifest.json`, `train.bin`, `val.bin`, `test.bin` under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        config: dataset.config.clone(),
        train: metas(&dataset.train),
        val: metas(&dataset.val),
        test: metas(&dataset.test),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    for p in Partition::ALL {
        write_blob(
            &dir.join(format!("{}.bin", p.name())),
            dataset.partition(p),
        )?;
    }
    Ok(())
}

struct BlobReader {
    data: Vec<u8>,
    pos: usize,
    name: String,
}

impl BlobReader {
    fn open(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut data = Vec::new();
        fs::File::open(path)?.read_to_end(&mut data)?;
        if data.len() < 16 {
            return Err(FaaError::Corruption(format!("{name}: truncated header")));
        }
        if &data[0..4] != MAGIC {
            return Err(FaaError::Format(format!("{name}: bad magic")));
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(FaaError::Format(format!(
                "{name}: unsupported version {version}"
            )));
        }
        Ok(Self { data, pos: 16, name })
    }

    fn declared_count(&self) -> u64 {
        u64::from_le_bytes(self.data[8..16].try_into().unwrap())
    }

    fn read_vector(&mut self, dim: usize) -> Result<Vec<f32>> {
        let bytes = dim * 4;
        if self.pos + bytes > self.data.len() {
            return Err(FaaError::Corruption(format!(
                "{}: truncated blob at byte {}",
                self.name, self.pos
            )));
        }
        let out = self.data[self.pos..self.pos + bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<f32>>();
        if !out.iter().all(|v| v.is_finite()) {
            return Err(FaaError::Corruption(format!(
                "{}: non-finite value at byte {}",
                self.name, self.pos
            )));
        }
        self.pos += bytes;
        Ok(out)
    }

    fn finish(self, expected_vectors: u64) -> Result<()> {
        if self.declared_count() != expected_vectors {
            return Err(FaaError::Corruption(format!(
                "{}: header declares {} vectors, manifest needs {}",
                self.name,
                self.declared_count(),
                expected_vectors
            )));
        }
        if self.pos != self.data.len() {
            return Err(FaaError::Corruption(format!(
                "{}: {} trailing bytes",
                self.name,
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read_partition(dir: &Path, p: Partition, metas: &[VideoMeta], cfg: &WorldConfig) -> Result<Vec<VideoRecord>> {
    let mut blob = BlobReader::open(&dir.join(format!("{}.bin", p.name())))?;
    let mut videos = Vec::with_capacity(metas.len());
    let mut vectors: u64 = 0;
    for m in metas {
        if m.num_faces == 0 || m.num_voices == 0 {
            return Err(FaaError::Corruption(format!(
                "video {} declares an empty modality",
                m.video_id
            )));
        }
        let faces = (0..m.num_faces)
            .map(|_| blob.read_vector(cfg.face_dim))
            .collect::<Result<Vec<_>>>()?;
        let voices = (0..m.num_voices)
            .map(|_| blob.read_vector(cfg.voice_dim))
            .collect::<Result<Vec<_>>>()?;
        vectors += (m.num_faces + m.num_voices) as u64;
        videos.push(VideoRecord {
            video_id: m.video_id,
            identity_id: m.identity_id,
            group: m.group,
            faces,
            voices,
        });
    }
    blob.finish(vectors)?;
    Ok(videos)
}

/// Load a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path)
        .map_err(|e| FaaError::Format(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    manifest.config.validate()?;
    let dataset = Dataset {
        train: read_partition(dir, Partition::Train, &manifest.train, &manifest.config)?,
        val: read_partition(dir, Partition::Val, &manifest.val, &manifest.config)?,
        test: read_partition(dir, Partition::Test, &manifest.test, &manifest.config)?,
        config: manifest.config,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::generate_world;

    fn small_world() -> Dataset {
        generate_world(&WorldConfig {
            num_identities: 12,
            identity_split: (0.5, 0.25, 0.25),
            videos_per_identity: 2,
            faces_per_video: 2,
            voices_per_video: 1,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_structurally_equal() {
        let ds = small_world();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn same_seed_byte_identical_files() {
        let a = small_world();
        let b = small_world();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        write_dataset(&a, da.path()).unwrap();
        write_dataset(&b, db.path()).unwrap();
        for name in ["manifest.json", "train.bin", "val.bin", "test.bin"] {
            let ba = fs::read(da.path().join(name)).unwrap();
            let bb = fs::read(db.path().join(name)).unwrap();
            assert_eq!(ba, bb, "{name} differs");
        }
    }

    #[test]
    fn manifest_referencing_missing_video_is_corruption() {
        let ds = small_world();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        // Append a phantom video to the manifest without blob data.
        let path = dir.path().join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest.test.push(VideoMeta {
            video_id: 999,
            identity_id: 999,
            group: false,
            num_faces: 2,
            num_voices: 1,
        });
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(FaaError::Corruption(_))
        ));
    }

    #[test]
    fn truncated_blob_is_corruption() {
        let ds = small_world();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("train.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(FaaError::Corruption(_))
        ));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let ds = small_world();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("val.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(FaaError::Format(_))
        ));
    }

    #[test]
    fn empty_partition_on_disk_is_config_error() {
        let ds = small_world();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest.test.clear();
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        // Rewrite the blob to match the now-empty manifest so only the
        // emptiness invariant trips.
        let mut blob = Vec::new();
        blob.extend_from_slice(MAGIC);
        blob.extend_from_slice(&VERSION.to_le_bytes());
        blob.extend_from_slice(&0u64.to_le_bytes());
        fs::write(dir.path().join("test.bin"), blob).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(FaaError::Config(_))
        ));
    }
}
