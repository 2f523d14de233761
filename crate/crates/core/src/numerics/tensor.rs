//! Dense row-major matrix of 64-bit floats.
//!
//! Everything in the pipeline is rank 2: vectors are 1xN rows. Keeping the
//! shape algebra two-dimensional makes every operation auditable by hand.

use crate::error::{FaaError, Result};

/// Dense 64-bit matrix, row-major, contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from external data, rejecting NaN/Inf and count mismatches.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FaaError::Shape(format!(
                "tensor dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(FaaError::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FaaError::Shape(format!(
                "non-finite value in {rows}x{cols} tensor"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for arithmetic results; skips the finiteness scan.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    /// 1xN row vector.
    pub fn row_vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(1, n, data)
    }

    /// 1x1 scalar tensor.
    pub fn scalar(v: f64) -> Self {
        Self::from_raw(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() requires a 1x1 tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack the rows of `parts` on top of each other. All parts must agree on cols.
    pub fn vstack(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| FaaError::Shape("vstack of zero tensors".into()))?;
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(FaaError::Shape(format!(
                    "vstack column mismatch: {} vs {cols}",
                    p.cols
                )));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_raw(rows, cols, data))
    }
}

/// Standard matrix product; returns a dimension error on inner mismatch.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(FaaError::Shape(format!(
            "matmul: {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aik = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(Tensor::from_raw(m, n, out))
}

pub fn transpose(a: &Tensor) -> Tensor {
    let mut out = vec![0.0; a.len()];
    for i in 0..a.rows {
        for j in 0..a.cols {
            out[j * a.rows + i] = a.data[i * a.cols + j];
        }
    }
    Tensor::from_raw(a.cols, a.rows, out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(FaaError::Shape(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_raw(a.rows, a.cols, data))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    Tensor::from_raw(a.rows, a.cols, a.data.iter().map(|x| c * x).collect())
}

/// Row-stabilized softmax: each output row is nonnegative and sums to 1.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.len()];
    for r in 0..x.rows {
        let row = x.row(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[r * x.cols..(r + 1) * x.cols];
        let mut sum = 0.0;
        for (o, v) in orow.iter_mut().zip(row) {
            *o = (v - mx).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::from_raw(x.rows, x.cols, out)
}

/// Per-row zero mean / unit variance before the affine map, eps inside the sqrt.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols;
    if gain.shape() != (1, d) || bias.shape() != (1, d) {
        return Err(FaaError::Shape(format!(
            "layer_norm: gain/bias must be 1x{d}, got {:?} and {:?}",
            gain.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; x.len()];
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let orow = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            orow[j] = gain.data[j] * (row[j] - mean) * inv + bias.data[j];
        }
    }
    Ok(Tensor::from_raw(x.rows, x.cols, out))
}

/// S[i][j] = <a_i, b_j> / (|a_i| |b_j|); zero-norm rows are rejected.
pub fn cosine_similarity_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.cols {
        return Err(FaaError::Shape(format!(
            "cosine: dim {} vs {}",
            a.cols, b.cols
        )));
    }
    let norms = |t: &Tensor, name: &str| -> Result<Vec<f64>> {
        (0..t.rows)
            .map(|r| {
                let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    Err(FaaError::DegenerateInput(format!(
                        "zero-norm row {r} in {name} operand"
                    )))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let na = norms(a, "left")?;
    let nb = norms(b, "right")?;
    let mut out = vec![0.0; a.rows * b.rows];
    for i in 0..a.rows {
        let ra = a.row(i);
        for j in 0..b.rows {
            let dot: f64 = ra.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            out[i * b.rows + j] = dot / (na[i] * nb[j]);
        }
    }
    Ok(Tensor::from_raw(a.rows, b.rows, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor::new(0, 2, vec![]).is_err());
        assert!(Tensor::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_zero_row_product() {
        let a = Tensor::new(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(2, 1, vec![0.0, 5.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().item(), 0.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = crate::rng::seeded(11);
        let a = crate::rng::random_tensor(&mut rng, 3, 4, 1.0);
        let b = crate::rng::random_tensor(&mut rng, 4, 2, 1.0);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.at(i, k) * b.at(k, j);
                }
                assert!((c.at(i, j) - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(FaaError::Shape(_))));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let x = Tensor::new(1, 2, vec![0.0, 0.0]).unwrap();
        let s = softmax_rows(&x);
        assert_eq!(s.data(), &[0.5, 0.5]);

        let big = Tensor::new(1, 2, vec![1000.0, 0.0]).unwrap();
        let s = softmax_rows(&big);
        assert!((s.at(0, 0) - 1.0).abs() < 1e-12);
        assert!(s.at(0, 1).abs() < 1e-12);
    }

    #[test]
    fn softmax_hand_oracle() {
        let x = Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax_rows(&x);
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for j in 0..3 {
            assert!((s.at(0, j) - ((j as f64) + 1.0).exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_at_large_magnitude() {
        let mut rng = crate::rng::seeded(3);
        let x = crate::rng::random_tensor(&mut rng, 8, 5, 1e4);
        let s = softmax_rows(&x);
        for r in 0..8 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::new(1, 4, vec![3.0; 4]).unwrap();
        let g = Tensor::new(1, 4, vec![1.0; 4]).unwrap();
        let b = Tensor::zeros(1, 4);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_hand_case() {
        let x = Tensor::new(1, 2, vec![1.0, -1.0]).unwrap();
        let g = Tensor::new(1, 2, vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(1, 2);
        let y = layer_norm(&x, &g, &b, 1e-15).unwrap();
        assert!((y.at(0, 0) - 1.0).abs() < 1e-6);
        assert!((y.at(0, 1) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_zero_gain_gives_bias() {
        let x = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let g = Tensor::zeros(1, 3);
        let b = Tensor::new(1, 3, vec![0.3, -0.2, 0.9]).unwrap();
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), b.data());
        }
    }

    #[test]
    fn cosine_matrix_cases() {
        let a = Tensor::new(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let s = cosine_similarity_matrix(&a, &a).unwrap();
        assert!((s.at(0, 0) - 1.0).abs() < 1e-15);
        let s = cosine_similarity_matrix(&a, &b).unwrap();
        assert!(s.at(0, 0).abs() < 1e-15);
        assert!((s.at(1, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_matrix_rejects_zero_norm() {
        let a = Tensor::new(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Tensor::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity_matrix(&a, &b),
            Err(FaaError::DegenerateInput(_))
        ));
    }

    #[test]
    fn cosine_entries_bounded() {
        let mut rng = crate::rng::seeded(5);
        let a = crate::rng::random_tensor(&mut rng, 6, 4, 2.0);
        let b = crate::rng::random_tensor(&mut rng, 5, 4, 2.0);
        let s = cosine_similarity_matrix(&a, &b).unwrap();
        assert!(s.data().iter().all(|v| *v <= 1.0 + 1e-12 && *v >= -1.0 - 1e-12));
    }
}
