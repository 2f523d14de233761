//! Unimodal encoders: small MLPs mapping raw modality vectors into the
//! shared embedding space, with unit-norm outputs so cosine similarity
//! equals the dot product.

use serde::{Deserialize, Serialize};

use crate::error::{FaaError, Result};
use crate::numerics::{Tape, Tensor, VarId};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Voice,
}

/// Encoder shape; one instance covers both modalities (their input dims
/// come from the world config).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub face_dim: usize,
    pub voice_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            face_dim: 48,
            voice_dim: 32,
            hidden_dim: 64,
            embed_dim: 64,
        }
    }
}

/// Two-layer perceptron (input -> hidden -> embed) with tanh, plus a final
/// linear projection inside the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl MlpParams {
    pub fn init(r: &mut rand_chacha::ChaCha8Rng, input_dim: usize, hidden: usize, embed: usize) -> Self {
        let xavier = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            rng::random_tensor(rng, rows, cols, 1.0 / (rows as f64).sqrt())
        };
        Self {
            w1: xavier(r, input_dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: xavier(r, hidden, embed),
            b2: Tensor::zeros(1, embed),
            proj_w: xavier(r, embed, embed),
            proj_b: Tensor::zeros(1, embed),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }

    /// Register every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> MlpHandles {
        MlpHandles {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
            proj_w: tape.leaf(self.proj_w.clone()),
            proj_b: tape.leaf(self.proj_b.clone()),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w1"), &self.w1));
        out.push((format!("{prefix}.b1"), &self.b1));
        out.push((format!("{prefix}.w2"), &self.w2));
        out.push((format!("{prefix}.b2"), &self.b2));
        out.push((format!("{prefix}.proj_w"), &self.proj_w));
        out.push((format!("{prefix}.proj_b"), &self.proj_b));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w1"), &mut self.w1));
        out.push((format!("{prefix}.b1"), &mut self.b1));
        out.push((format!("{prefix}.w2"), &mut self.w2));
        out.push((format!("{prefix}.b2"), &mut self.b2));
        out.push((format!("{prefix}.proj_w"), &mut self.proj_w));
        out.push((format!("{prefix}.proj_b"), &mut self.proj_b));
    }
}

/// Tape handles for one bound encoder.
#[derive(Debug, Clone, Copy)]
pub struct MlpHandles {
    pub w1: VarId,
    pub b1: VarId,
    pub w2: VarId,
    pub b2: VarId,
    pub proj_w: VarId,
    pub proj_b: VarId,
}

/// Differentiable encode of a batch already on the tape: rows come out
/// L2-normalized.
pub fn encode(tape: &mut Tape, batch: VarId, h: &MlpHandles) -> Result<VarId> {
    let expect = tape.value(h.w1).rows();
    let got = tape.value(batch).cols();
    if got != expect {
        return Err(FaaError::Shape(format!(
            "encode: batch dim {got}, encoder expects {expect}"
        )));
    }
    let z1 = tape.matmul(batch, h.w1)?;
    let z1 = tape.add_row_vec(z1, h.b1)?;
    let a1 = tape.tanh(z1);
    let z2 = tape.matmul(a1, h.w2)?;
    let z2 = tape.add_row_vec(z2, h.b2)?;
    let a2 = tape.tanh(z2);
    let p = tape.matmul(a2, h.proj_w)?;
    let p = tape.add_row_vec(p, h.proj_b)?;
    Ok(tape.l2_normalize_rows(p))
}

/// Non-differentiable convenience wrapper over a scratch tape.
pub fn encode_values(batch: &Tensor, params: &MlpParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch.clone());
    let h = params.bind(&mut tape);
    let e = encode(&mut tape, x, &h)?;
    Ok(tape.value(e).clone())
}

/// Upcast a batch of f32 sample vectors into a tensor.
pub fn batch_from_samples(samples: &[&[f32]]) -> Result<Tensor> {
    let dim = samples
        .first()
        .ok_or_else(|| FaaError::DegenerateInput("empty sample batch".into()))?
        .len();
    let mut data = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        if s.len() != dim {
            return Err(FaaError::Shape(format!(
                "sample dim {} vs {dim}",
                s.len()
            )));
        }
        data.extend(s.iter().map(|v| *v as f64));
    }
    Tensor::new(samples.len(), dim, data)
}
