//! Whole-run configuration: world, model, training, evaluation, and the
//! ablation switches, loadable from one JSON file.

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{FaaError, Result};
use crate::evalsuite::EvalConfig;
use crate::fusion::FusionConfig;
use crate::model::ModelConfig;
use crate::trainer::{LossKind, PairSelectionMode, TrainConfig};
use crate::synthworld::WorldConfig;

/// The three Table-3 ablation axes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AblationSwitches {
    pub loss: LossKind,
    /// Off = score matching/verification by cosine; no matching head training.
    pub fusion_scoring: bool,
    /// On = progressive clustering + hard negatives; off = fixed C + random negatives.
    pub effective_pair_selection: bool,
    /// Cluster count when pair selection is off. `None` scales the reference
    /// value (1000 of 16650 train videos) to the active dataset.
    pub fixed_c: Option<usize>,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self {
            loss: LossKind::MultiSimilarity,
            fusion_scoring: true,
            effective_pair_selection: true,
            fixed_c: None,
        }
    }
}

/// Reference ratio for the fixed-cluster baseline: 1000 clusters for 924
/// training identities.
const FIXED_C_PER_IDENTITY: f64 = 1000.0 / 924.0;

impl AblationSwitches {
    /// Cluster count the fixed-C baseline uses for a given training set.
    pub fn effective_fixed_c(&self, train_videos: usize, train_identities: usize) -> Result<usize> {
        match self.fixed_c {
            Some(c) => {
                if c < 2 || c > train_videos {
                    return Err(FaaError::Config(format!(
                        "fixed_c = {c} out of range for {train_videos} train videos"
                    )));
                }
                Ok(c)
            }
            None => Ok(((train_identities as f64 * FIXED_C_PER_IDENTITY).round() as usize)
                .clamp(2, train_videos)),
        }
    }

    /// Bake the switches into a train config.
    pub fn apply(
        &self,
        base: &TrainConfig,
        train_videos: usize,
        train_identities: usize,
    ) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        cfg.loss = self.loss;
        cfg.fusion_scoring = self.fusion_scoring;
        cfg.pair_selection = if self.effective_pair_selection {
            PairSelectionMode::Progressive
        } else {
            PairSelectionMode::FixedC(self.effective_fixed_c(
                train_videos,
                train_identities,
            )?)
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationSwitches,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let encoder = EncoderConfig {
            face_dim: world.face_dim,
            voice_dim: world.voice_dim,
            ..EncoderConfig::default()
        };
        let model = ModelConfig {
            fusion: FusionConfig::desk(encoder.embed_dim),
            encoder,
        };
        Self {
            world,
            model,
            train: TrainConfig::desk(),
            eval: EvalConfig::default(),
            ablation: AblationSwitches::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.encoder.face_dim != self.world.face_dim
            || self.model.encoder.voice_dim != self.world.voice_dim
        {
            return Err(FaaError::Config(format!(
                "encoder dims ({}, {}) do not match world dims ({}, {})",
                self.model.encoder.face_dim,
                self.model.encoder.voice_dim,
                self.world.face_dim,
                self.world.voice_dim
            )));
        }
        Ok(())
    }

    /// Parse from JSON; missing fields take defaults.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| FaaError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    /// Rebuild the model section to match a dataset's world dims.
    pub fn with_world(mut self, world: &WorldConfig) -> Self {
        self.world = world.clone();
        self.model.encoder.face_dim = world.face_dim;
        self.model.encoder.voice_dim = world.voice_dim;
        self
    }

    /// Canonical hash of the whole config, for report provenance.
    pub fn hash(&self) -> String {
        crate::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}
