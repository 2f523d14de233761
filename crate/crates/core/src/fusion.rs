//! Multimodal fusion encoder: a small pre-norm transformer over the
//! (face, voice) embedding pair, pooled to a joint representation, with a
//! binary matching head on top.

use serde::{Deserialize, Serialize};

use crate::error::{FaaError, Result};
use crate::numerics::{Tape, Tensor, VarId};
use crate::rng;

const LN_EPS: f64 = 1e-5;

/// How the output tokens collapse into the joint representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Cls,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FusionConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ff_expansion: usize,
    pub pooling: Pooling,
}

impl FusionConfig {
    /// Desk-scale default: 2 layers, 64 hidden, 4 heads.
    pub fn desk(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            hidden_dim: 64,
            num_heads: 4,
            num_layers: 2,
            ff_expansion: 4,
            pooling: Pooling::Mean,
        }
    }

    /// The reference architecture: 4 layers, 256 hidden, 4 heads.
    pub fn paper(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            hidden_dim: 256,
            num_heads: 4,
            num_layers: 4,
            ff_expansion: 4,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim % self.num_heads != 0 {
            return Err(FaaError::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.num_layers == 0 || self.ff_expansion == 0 {
            return Err(FaaError::Config("layers and ff_expansion must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::desk(64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub config: FusionConfig,
    pub token_w: Tensor,
    pub token_b: Tensor,
    pub type_face: Tensor,
    pub type_voice: Tensor,
    /// Present only under CLS pooling.
    pub cls_token: Option<Tensor>,
    pub layers: Vec<LayerParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl FusionParams {
    pub fn init(r: &mut rand_chacha::ChaCha8Rng, config: &FusionConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let ff = h * config.ff_expansion;
        let xavier = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            rng::random_tensor(rng, rows, cols, 1.0 / (rows as f64).sqrt())
        };
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                ln1_gain: Tensor::from_raw(1, h, vec![1.0; h]),
                ln1_bias: Tensor::zeros(1, h),
                wq: xavier(r, h, h),
                bq: Tensor::zeros(1, h),
                wk: xavier(r, h, h),
                bk: Tensor::zeros(1, h),
                wv: xavier(r, h, h),
                bv: Tensor::zeros(1, h),
                wo: xavier(r, h, h),
                bo: Tensor::zeros(1, h),
                ln2_gain: Tensor::from_raw(1, h, vec![1.0; h]),
                ln2_bias: Tensor::zeros(1, h),
                ff1_w: xavier(r, h, ff),
                ff1_b: Tensor::zeros(1, ff),
                ff2_w: xavier(r, ff, h),
                ff2_b: Tensor::zeros(1, h),
            })
            .collect();
        Ok(Self {
            config: *config,
            token_w: xavier(r, config.embed_dim, h),
            token_b: Tensor::zeros(1, h),
            type_face: rng::random_tensor(r, 1, h, 0.02),
            type_voice: rng::random_tensor(r, 1, h, 0.02),
            cls_token: match config.pooling {
                Pooling::Cls => Some(rng::random_tensor(r, 1, h, 0.02)),
                Pooling::Mean => None,
            },
            layers,
            // Head starts at zero so an untrained model scores 0.5 everywhere.
            head_w: Tensor::zeros(h, 2),
            head_b: Tensor::zeros(1, 2),
        })
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.token_w"), &self.token_w));
        out.push((format!("{prefix}.token_b"), &self.token_b));
        out.push((format!("{prefix}.type_face"), &self.type_face));
        out.push((format!("{prefix}.type_voice"), &self.type_voice));
        if let Some(cls) = &self.cls_token {
            out.push((format!("{prefix}.cls_token"), cls));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("{prefix}.layer{i}");
            out.push((format!("{p}.ln1_gain"), &l.ln1_gain));
            out.push((format!("{p}.ln1_bias"), &l.ln1_bias));
            out.push((format!("{p}.wq"), &l.wq));
            out.push((format!("{p}.bq"), &l.bq));
            out.push((format!("{p}.wk"), &l.wk));
            out.push((format!("{p}.bk"), &l.bk));
            out.push((format!("{p}.wv"), &l.wv));
            out.push((format!("{p}.bv"), &l.bv));
            out.push((format!("{p}.wo"), &l.wo));
            out.push((format!("{p}.bo"), &l.bo));
            out.push((format!("{p}.ln2_gain"), &l.ln2_gain));
            out.push((format!("{p}.ln2_bias"), &l.ln2_bias));
            out.push((format!("{p}.ff1_w"), &l.ff1_w));
            out.push((format!("{p}.ff1_b"), &l.ff1_b));
            out.push((format!("{p}.ff2_w"), &l.ff2_w));
            out.push((format!("{p}.ff2_b"), &l.ff2_b));
        }
        out.push((format!("{prefix}.head_w"), &self.head_w));
        out.push((format!("{prefix}.head_b"), &self.head_b));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.token_w"), &mut self.token_w));
        out.push((format!("{prefix}.token_b"), &mut self.token_b));
        out.push((format!("{prefix}.type_face"), &mut self.type_face));
        out.push((format!("{prefix}.type_voice"), &mut self.type_voice));
        if let Some(cls) = &mut self.cls_token {
            out.push((format!("{prefix}.cls_token"), cls));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("{prefix}.layer{i}");
            out.push((format!("{p}.ln1_gain"), &mut l.ln1_gain));
            out.push((format!("{p}.ln1_bias"), &mut l.ln1_bias));
            out.push((format!("{p}.wq"), &mut l.wq));
            out.push((format!("{p}.bq"), &mut l.bq));
            out.push((format!("{p}.wk"), &mut l.wk));
            out.push((format!("{p}.bk"), &mut l.bk));
            out.push((format!("{p}.wv"), &mut l.wv));
            out.push((format!("{p}.bv"), &mut l.bv));
            out.push((format!("{p}.wo"), &mut l.wo));
            out.push((format!("{p}.bo"), &mut l.bo));
            out.push((format!("{p}.ln2_gain"), &mut l.ln2_gain));
            out.push((format!("{p}.ln2_bias"), &mut l.ln2_bias));
            out.push((format!("{p}.ff1_w"), &mut l.ff1_w));
            out.push((format!("{p}.ff1_b"), &mut l.ff1_b));
            out.push((format!("{p}.ff2_w"), &mut l.ff2_w));
            out.push((format!("{p}.ff2_b"), &mut l.ff2_b));
        }
        out.push((format!("{prefix}.head_w"), &mut self.head_w));
        out.push((format!("{prefix}.head_b"), &mut self.head_b));
    }

    /// Register all tensors on a tape.
    pub fn bind(&self, tape: &mut Tape) -> FusionHandles {
        FusionHandles {
            config: self.config,
            token_w: tape.leaf(self.token_w.clone()),
            token_b: tape.leaf(self.token_b.clone()),
            type_face: tape.leaf(self.type_face.clone()),
            type_voice: tape.leaf(self.type_voice.clone()),
            cls_token: self.cls_token.as_ref().map(|t| tape.leaf(t.clone())),
            layers: self
                .layers
                .iter()
                .map(|l| LayerHandles {
                    ln1_gain: tape.leaf(l.ln1_gain.clone()),
                    ln1_bias: tape.leaf(l.ln1_bias.clone()),
                    wq: tape.leaf(l.wq.clone()),
                    bq: tape.leaf(l.bq.clone()),
                    wk: tape.leaf(l.wk.clone()),
                    bk: tape.leaf(l.bk.clone()),
                    wv: tape.leaf(l.wv.clone()),
                    bv: tape.leaf(l.bv.clone()),
                    wo: tape.leaf(l.wo.clone()),
                    bo: tape.leaf(l.bo.clone()),
                    ln2_gain: tape.leaf(l.ln2_gain.clone()),
                    ln2_bias: tape.leaf(l.ln2_bias.clone()),
                    ff1_w: tape.leaf(l.ff1_w.clone()),
                    ff1_b: tape.leaf(l.ff1_b.clone()),
                    ff2_w: tape.leaf(l.ff2_w.clone()),
                    ff2_b: tape.leaf(l.ff2_b.clone()),
                })
                .collect(),
            head_w: tape.leaf(self.head_w.clone()),
            head_b: tape.leaf(self.head_b.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerHandles {
    pub ln1_gain: VarId,
    pub ln1_bias: VarId,
    pub wq: VarId,
    pub bq: VarId,
    pub wk: VarId,
    pub bk: VarId,
    pub wv: VarId,
    pub bv: VarId,
    pub wo: VarId,
    pub bo: VarId,
    pub ln2_gain: VarId,
    pub ln2_bias: VarId,
    pub ff1_w: VarId,
    pub ff1_b: VarId,
    pub ff2_w: VarId,
    pub ff2_b: VarId,
}

#[derive(Debug, Clone)]
pub struct FusionHandles {
    pub config: FusionConfig,
    pub token_w: VarId,
    pub token_b: VarId,
    pub type_face: VarId,
    pub type_voice: VarId,
    pub cls_token: Option<VarId>,
    pub layers: Vec<LayerHandles>,
    pub head_w: VarId,
    pub head_b: VarId,
}

fn attention(tape: &mut Tape, x: VarId, l: &LayerHandles, cfg: &FusionConfig) -> Result<VarId> {
    let dh = cfg.hidden_dim / cfg.num_heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let q = tape.matmul(x, l.wq)?;
    let q = tape.add_row_vec(q, l.bq)?;
    let k = tape.matmul(x, l.wk)?;
    let k = tape.add_row_vec(k, l.bk)?;
    let v = tape.matmul(x, l.wv)?;
    let v = tape.add_row_vec(v, l.bv)?;
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for hix in 0..cfg.num_heads {
        let qh = tape.slice_cols(q, hix * dh, dh)?;
        let kh = tape.slice_cols(k, hix * dh, dh)?;
        let vh = tape.slice_cols(v, hix * dh, dh)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, inv_sqrt);
        let attn = tape.softmax_rows(scores);
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&heads)?;
    let out = tape.matmul(merged, l.wo)?;
    tape.add_row_vec(out, l.bo)
}

fn encoder_layer(tape: &mut Tape, x: VarId, l: &LayerHandles, cfg: &FusionConfig) -> Result<VarId> {
    // Pre-norm residual blocks.
    let n1 = tape.layer_norm(x, l.ln1_gain, l.ln1_bias, LN_EPS)?;
    let att = attention(tape, n1, l, cfg)?;
    let x = tape.add(x, att)?;
    let n2 = tape.layer_norm(x, l.ln2_gain, l.ln2_bias, LN_EPS)?;
    let f1 = tape.matmul(n2, l.ff1_w)?;
    let f1 = tape.add_row_vec(f1, l.ff1_b)?;
    let a = tape.tanh(f1);
    let f2 = tape.matmul(a, l.ff2_w)?;
    let f2 = tape.add_row_vec(f2, l.ff2_b)?;
    tape.add(x, f2)
}

/// Joint representation of a (face, voice) embedding pair: project each to
/// a token, add its modality-type vector, run the transformer, pool.
pub fn joint_representation(
    tape: &mut Tape,
    face_emb: VarId,
    voice_emb: VarId,
    h: &FusionHandles,
) -> Result<VarId> {
    for (name, id) in [("face", face_emb), ("voice", voice_emb)] {
        let shape = tape.value(id).shape();
        if shape != (1, h.config.embed_dim) {
            return Err(FaaError::Shape(format!(
                "{name} embedding is {shape:?}, expected (1, {})",
                h.config.embed_dim
            )));
        }
    }
    let pf = tape.matmul(face_emb, h.token_w)?;
    let pf = tape.add_row_vec(pf, h.token_b)?;
    let tok_f = tape.add(pf, h.type_face)?;
    let pv = tape.matmul(voice_emb, h.token_w)?;
    let pv = tape.add_row_vec(pv, h.token_b)?;
    let tok_v = tape.add(pv, h.type_voice)?;
    let mut x = match h.cls_token {
        Some(cls) => tape.concat_rows(&[cls, tok_f, tok_v])?,
        None => tape.concat_rows(&[tok_f, tok_v])?,
    };
    for l in &h.layers {
        x = encoder_layer(tape, x, l, &h.config)?;
    }
    match h.config.pooling {
        Pooling::Mean => Ok(tape.mean_rows(x)),
        Pooling::Cls => tape.row(x, 0),
    }
}

/// Positive-class matching probability for a pair, differentiable through
/// the whole stack.
pub fn match_score(
    tape: &mut Tape,
    face_emb: VarId,
    voice_emb: VarId,
    h: &FusionHandles,
) -> Result<VarId> {
    let joint = joint_representation(tape, face_emb, voice_emb, h)?;
    let logits = tape.matmul(joint, h.head_w)?;
    let logits = tape.add_row_vec(logits, h.head_b)?;
    let probs = tape.softmax_rows(logits);
    tape.col(probs, 1)
}

/// Score a pair of plain embedding vectors on a scratch tape.
pub fn match_score_values(face: &[f64], voice: &[f64], params: &FusionParams) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.leaf(Tensor::new(1, face.len(), face.to_vec())?);
    let v = tape.leaf(Tensor::new(1, voice.len(), voice.to_vec())?);
    let h = params.bind(&mut tape);
    let s = match_score(&mut tape, f, v, &h)?;
    Ok(tape.value(s).item())
}
