//! All learnable parameters of the pipeline, with canonical names for
//! checkpointing and optimizer state.

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, MlpHandles, MlpParams};
use crate::error::{FaaError, Result};
use crate::fusion::{FusionConfig, FusionHandles, FusionParams};
use crate::numerics::{Tape, Tensor};
use crate::rng::{self, tag};

/// Architecture description, serialized into checkpoints so a model can be
/// rebuilt without the original run config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        Self {
            fusion: FusionConfig::desk(encoder.embed_dim),
            encoder,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        if self.fusion.embed_dim != self.encoder.embed_dim {
            return Err(FaaError::Config(format!(
                "fusion embed_dim {} != encoder embed_dim {}",
                self.fusion.embed_dim, self.encoder.embed_dim
            )));
        }
        Ok(())
    }
}

/// Two unimodal encoders, the fusion transformer, and the matching head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub face_enc: MlpParams,
    pub voice_enc: MlpParams,
    pub fusion: FusionParams,
}

impl ModelParams {
    /// Deterministic initialization from a seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(rng::subseed(seed, &[tag::MODEL_INIT]));
        let e = &config.encoder;
        Ok(Self {
            config: config.clone(),
            face_enc: MlpParams::init(&mut r, e.face_dim, e.hidden_dim, e.embed_dim),
            voice_enc: MlpParams::init(&mut r, e.voice_dim, e.hidden_dim, e.embed_dim),
            fusion: FusionParams::init(&mut r, &config.fusion)?,
        })
    }

    /// All tensors with canonical names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.face_enc.visit("face_enc", &mut out);
        self.voice_enc.visit("voice_enc", &mut out);
        self.fusion.visit("fusion", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.face_enc.visit_mut("face_enc", &mut out);
        self.voice_enc.visit_mut("voice_enc", &mut out);
        self.fusion.visit_mut("fusion", &mut out);
        out
    }

    /// Register every tensor on a tape, in the same order as [`Self::named`].
    pub fn bind(&self, tape: &mut Tape) -> ModelHandles {
        ModelHandles {
            face_enc: self.face_enc.bind(tape),
            voice_enc: self.voice_enc.bind(tape),
            fusion: self.fusion.bind(tape),
        }
    }
}

impl ModelParams {
    /// Build typed handles over leaves already on a tape, in the canonical
    /// order of [`Self::named`]; used by whole-model gradient checks.
    pub fn handles_from_ids(&self, ids: &[crate::numerics::VarId]) -> ModelHandles {
        let mut k = 0;
        let mut next = || {
            let id = ids[k];
            k += 1;
            id
        };
        let mlp = |next: &mut dyn FnMut() -> crate::numerics::VarId| MlpHandles {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            proj_w: next(),
            proj_b: next(),
        };
        let face_enc = mlp(&mut next);
        let voice_enc = mlp(&mut next);
        let fusion = FusionHandles {
            config: self.fusion.config,
            token_w: next(),
            token_b: next(),
            type_face: next(),
            type_voice: next(),
            cls_token: self.fusion.cls_token.as_ref().map(|_| next()),
            layers: self
                .fusion
                .layers
                .iter()
                .map(|_| crate::fusion::LayerHandles {
                    ln1_gain: next(),
                    ln1_bias: next(),
                    wq: next(),
                    bq: next(),
                    wk: next(),
                    bk: next(),
                    wv: next(),
                    bv: next(),
                    wo: next(),
                    bo: next(),
                    ln2_gain: next(),
                    ln2_bias: next(),
                    ff1_w: next(),
                    ff1_b: next(),
                    ff2_w: next(),
                    ff2_b: next(),
                })
                .collect(),
            head_w: next(),
            head_b: next(),
        };
        ModelHandles {
            face_enc,
            voice_enc,
            fusion,
        }
    }
}

/// Tape handles for a bound model.
pub struct ModelHandles {
    pub face_enc: MlpHandles,
    pub voice_enc: MlpHandles,
    pub fusion: FusionHandles,
}

impl ModelHandles {
    /// Handle ids in the same order as [`ModelParams::named`].
    pub fn ordered(&self) -> Vec<crate::numerics::VarId> {
        let mut out = vec![
            self.face_enc.w1,
            self.face_enc.b1,
            self.face_enc.w2,
            self.face_enc.b2,
            self.face_enc.proj_w,
            self.face_enc.proj_b,
            self.voice_enc.w1,
            self.voice_enc.b1,
            self.voice_enc.w2,
            self.voice_enc.b2,
            self.voice_enc.proj_w,
            self.voice_enc.proj_b,
            self.fusion.token_w,
            self.fusion.token_b,
            self.fusion.type_face,
            self.fusion.type_voice,
        ];
        if let Some(cls) = self.fusion.cls_token {
            out.push(cls);
        }
        for l in &self.fusion.layers {
            out.extend([
                l.ln1_gain, l.ln1_bias, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo,
                l.ln2_gain, l.ln2_bias, l.ff1_w, l.ff1_b, l.ff2_w, l.ff2_b,
            ]);
        }
        out.extend([self.fusion.head_w, self.fusion.head_b]);
        out
    }
}
