//! Checkpoint persistence: magic "FAAC", version, architecture JSON, then
//! length-prefixed (name, shape, f64 data) entries, little-endian, followed
//! by the progressive-clustering state.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::clustering::ProgressState;
use crate::error::{FaaError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"FAAC";
const VERSION: u32 = 1;

/// A trained model snapshot: parameters plus training position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub progress: ProgressState,
    pub epoch: usize,
    pub val_metric: f64,
}

impl Checkpoint {
    /// Serialize to the deterministic binary layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let config_json = serde_json::to_string(&self.params.config)?;
        buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(config_json.as_bytes());
        let named = self.params.named();
        buf.extend_from_slice(&(named.len() as u64).to_le_bytes());
        for (name, tensor) in named {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            let (rows, cols) = tensor.shape();
            buf.extend_from_slice(&(rows as u64).to_le_bytes());
            buf.extend_from_slice(&(cols as u64).to_le_bytes());
            for v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.progress.c as u64).to_le_bytes());
        buf.extend_from_slice(&self.progress.best_val_metric.to_le_bytes());
        buf.extend_from_slice(&(self.progress.epochs_since_improvement as u64).to_le_bytes());
        buf.extend_from_slice(&(self.progress.c_min as u64).to_le_bytes());
        buf.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        buf.extend_from_slice(&self.val_metric.to_le_bytes());
        Ok(buf)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(FaaError::Format("checkpoint: bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(FaaError::Format(format!(
                "checkpoint: unsupported version {version}"
            )));
        }
        let config_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| FaaError::Corruption("checkpoint: bad name".into()))?;
            let rows = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
            let cols = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
            let data: Vec<f64> = r
                .take(rows * cols * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor::new(rows, cols, data)?);
        }
        let params = params_from_named(&config, tensors)?;
        let progress = ProgressState {
            c: u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize,
            best_val_metric: f64::from_le_bytes(r.take(8)?.try_into().unwrap()),
            epochs_since_improvement: u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize,
            c_min: u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize,
        };
        let epoch = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let val_metric = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(FaaError::Corruption(format!(
                "checkpoint: {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            params,
            progress,
            epoch,
            val_metric,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FaaError::Corruption(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

/// Rebuild parameters from canonical names, validating the inventory.
fn params_from_named(
    config: &ModelConfig,
    mut tensors: BTreeMap<String, Tensor>,
) -> Result<ModelParams> {
    let mut params = ModelParams::init(config, 0)?;
    for (name, slot) in params.named_mut() {
        let tensor = tensors.remove(&name).ok_or_else(|| {
            FaaError::Corruption(format!("checkpoint missing parameter {name}"))
        })?;
        if tensor.shape() != slot.shape() {
            return Err(FaaError::Corruption(format!(
                "checkpoint parameter {name}: shape {:?} vs expected {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    if let Some((name, _)) = tensors.into_iter().next() {
        return Err(FaaError::Corruption(format!(
            "checkpoint has unknown parameter {name}"
        )));
    }
    Ok(params)
}
