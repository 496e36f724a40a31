//! Dense row-major tensor kernels: matrix product, masked softmax, layer
//! normalization, pooling, bilinear sampling, and L1 reductions.
//!
//! Everything here is a pure function over immutable inputs, computed in f64
//! with a fixed accumulation order, so results are bit-deterministic.

use crate::geometry::{BBox, BinaryMask};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not hold {len} values")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("inner dimensions disagree: {m}x{k} times {k2}x{n}")]
    MatmulDims { m: usize, k: usize, k2: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("empty attention row {0}: every row needs at least one allowed entry")]
    EmptyAttentionRow(usize),
    #[error("set cardinality mismatch: {a} vs {b}")]
    Cardinality { a: usize, b: usize },
    #[error("tensor holds a non-finite value")]
    NonFinite,
}

/// Dense row-major array of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch { shape, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    /// Construction without the finiteness scan, for values produced by the
    /// kernels themselves.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    fn expect_rank(&self, expected: usize) -> Result<(), TensorError> {
        if self.rank() != expected {
            return Err(TensorError::Rank { expected, shape: self.shape.clone() });
        }
        Ok(())
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn at3(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.shape[1] + x) * self.shape[2] + c]
    }

    pub fn set3(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.shape[1] + x) * self.shape[2] + c] = v;
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.shape[1];
        &self.data[r * d..(r + 1) * d]
    }
}

/// Standard matrix product with one left-to-right accumulation pass per
/// output element.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    a.expect_rank(2)?;
    b.expect_rank(2)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(TensorError::MatmulDims { m, k, k2, n });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a.data[i * k + l] * b.data[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Row-wise softmax where disallowed entries receive probability exactly 0.
/// Rows are shifted by their allowed maximum before exponentiation.
pub fn masked_softmax(scores: &Tensor, allow: &BinaryMask) -> Result<Tensor, TensorError> {
    scores.expect_rank(2)?;
    let (rows, cols) = (scores.shape[0], scores.shape[1]);
    if allow.rows() != rows || allow.cols() != cols {
        return Err(TensorError::DimMismatch(format!(
            "mask {}x{} vs scores {}x{}",
            allow.rows(),
            allow.cols(),
            rows,
            cols
        )));
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let mut max = f64::NEG_INFINITY;
        for c in 0..cols {
            if allow.get(r, c) {
                max = max.max(scores.at2(r, c));
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(TensorError::EmptyAttentionRow(r));
        }
        let mut sum = 0.0;
        for c in 0..cols {
            if allow.get(r, c) {
                let e = (scores.at2(r, c) - max).exp();
                out[r * cols + c] = e;
                sum += e;
            }
        }
        for c in 0..cols {
            out[r * cols + c] /= sum;
        }
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

/// Per-row normalization to zero mean and unit population variance (eps
/// inside the square root), followed by the affine gain/bias.
pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<Tensor, TensorError> {
    x.expect_rank(2)?;
    gain.expect_rank(1)?;
    bias.expect_rank(1)?;
    let (n, d) = (x.shape[0], x.shape[1]);
    if gain.shape[0] != d || bias.shape[0] != d {
        return Err(TensorError::DimMismatch(format!(
            "norm params of {} / {} vs row width {}",
            gain.shape[0], bias.shape[0], d
        )));
    }
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let denom = (var + eps).sqrt();
        for c in 0..d {
            out[r * d + c] = (row[c] - mean) / denom * gain.data[c] + bias.data[c];
        }
    }
    Ok(Tensor::from_parts(vec![n, d], out))
}

/// Global average pooling: channel-wise mean over all spatial positions of an
/// `h x w x c` map.
pub fn gap(f: &Tensor) -> Result<Vec<f64>, TensorError> {
    f.expect_rank(3)?;
    let (h, w, c) = (f.shape[0], f.shape[1], f.shape[2]);
    let mut out = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[ch] += f.at3(y, x, ch);
            }
        }
    }
    let n = (h * w) as f64;
    for v in &mut out {
        *v /= n;
    }
    Ok(out)
}

/// Bilinear read of a feature map at a continuous point, with pixel centers at
/// half-integer coordinates. Contributions from outside the map are 0.
fn sample_zero_pad(f: &Tensor, x: f64, y: f64, ch: usize) -> f64 {
    let (h, w) = (f.shape[0] as isize, f.shape[1] as isize);
    let u = x - 0.5;
    let v = y - 0.5;
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (px, py) = (x0 + dx, y0 + dy);
            if px >= 0 && px < w && py >= 0 && py < h {
                acc += wy * wx * f.at3(py as usize, px as usize, ch);
            }
        }
    }
    acc
}

/// RoI Align: pools a box of an `h x w x c` feature map into an `out x out`
/// grid. Each bin averages `samples x samples` bilinear reads taken at the
/// centers of an even subdivision of the bin; reads outside the map are 0.
pub fn roi_align(
    f: &Tensor,
    bbox: &BBox,
    out: usize,
    samples: usize,
) -> Result<Tensor, TensorError> {
    f.expect_rank(3)?;
    if out == 0 || samples == 0 {
        return Err(TensorError::DimMismatch("output grid and sample count must be positive".into()));
    }
    let c = f.shape[2];
    let bin_w = bbox.width() / out as f64;
    let bin_h = bbox.height() / out as f64;
    let mut data = vec![0.0; out * out * c];
    for by in 0..out {
        for bx in 0..out {
            for ch in 0..c {
                let mut acc = 0.0;
                for sy in 0..samples {
                    for sx in 0..samples {
                        let x = bbox.x1()
                            + bin_w * (bx as f64 + (sx as f64 + 0.5) / samples as f64);
                        let y = bbox.y1()
                            + bin_h * (by as f64 + (sy as f64 + 0.5) / samples as f64);
                        acc += sample_zero_pad(f, x, y, ch);
                    }
                }
                data[(by * out + bx) * c + ch] = acc / (samples * samples) as f64;
            }
        }
    }
    Ok(Tensor::from_parts(vec![out, out, c], data))
}

fn sample_clamped(img: &Tensor, x: f64, y: f64, ch: usize) -> f64 {
    let (h, w) = (img.shape[0] as isize, img.shape[1] as isize);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            acc += wy * wx * img.at3(clamp(y0 + dy, h), clamp(x0 + dx, w), ch);
        }
    }
    acc
}

/// Samples a box window of an image into an `out_h x out_w` image. Output
/// pixel `(i, j)` reads the source at
/// `x1 + (j + 0.5) * box_w / out_w - 0.5` (and likewise for rows), with
/// edge-clamped bilinear interpolation.
pub fn crop_resize(
    img: &Tensor,
    window: &BBox,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor, TensorError> {
    img.expect_rank(3)?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::DimMismatch("output size must be positive".into()));
    }
    let c = img.shape[2];
    let sx = window.width() / out_w as f64;
    let sy = window.height() / out_h as f64;
    let mut data = vec![0.0; out_h * out_w * c];
    for i in 0..out_h {
        for j in 0..out_w {
            let x = window.x1() + (j as f64 + 0.5) * sx - 0.5;
            let y = window.y1() + (i as f64 + 0.5) * sy - 0.5;
            for ch in 0..c {
                data[(i * out_w + j) * c + ch] = sample_clamped(img, x, y, ch);
            }
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], data))
}

/// Whole-image resize with the `(i + 0.5) * h / out_h - 0.5` source-coordinate
/// convention and edge clamping.
pub fn bilinear_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    img.expect_rank(3)?;
    let full = BBox::new(0.0, 0.0, img.shape[1] as f64, img.shape[0] as f64)
        .map_err(|_| TensorError::DimMismatch("empty image".into()))?;
    crop_resize(img, &full, out_h, out_w)
}

/// Reduction convention for the L1 distance between embedding sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum L1Reduction {
    /// Mean over pairs x coordinates; loss magnitude is invariant to batch
    /// and embedding size.
    #[default]
    Mean,
    Sum,
}

/// L1 distance between two aligned embedding sets under the given reduction.
pub fn l1_distance(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    reduction: L1Reduction,
) -> Result<f64, TensorError> {
    if a.len() != b.len() {
        return Err(TensorError::Cardinality { a: a.len(), b: b.len() });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (ea, eb) in a.iter().zip(b) {
        if ea.len() != eb.len() {
            return Err(TensorError::Cardinality { a: ea.len(), b: eb.len() });
        }
        for (va, vb) in ea.iter().zip(eb) {
            total += (va - vb).abs();
        }
        count += ea.len();
    }
    match reduction {
        L1Reduction::Mean => {
            if count == 0 {
                return Err(TensorError::Cardinality { a: 0, b: 0 });
            }
            Ok(total / count as f64)
        }
        L1Reduction::Sum => Ok(total),
    }
}

/// Mean absolute difference over all coordinates of all aligned pairs.
pub fn l1_mean(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, TensorError> {
    l1_distance(a, b, L1Reduction::Mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_tensor(rng: &mut ChaCha20Rng, shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &a).unwrap(), a);
    }

    #[test]
    fn matmul_zero() {
        let i2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = Tensor::zeros(vec![2, 3]);
        assert_eq!(matmul(&i2, &z).unwrap(), z);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![4, 2]);
        let got = matmul(&a, &b).unwrap();
        // Independent scalar oracle.
        for i in 0..3 {
            for j in 0..2 {
                let mut expect = 0.0;
                for l in 0..4 {
                    expect += a.at2(i, l) * b.at2(l, j);
                }
                assert!((got.at2(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(matmul(&a, &b), Err(TensorError::MatmulDims { .. })));
    }

    #[test]
    fn masked_softmax_uniform() {
        let scores = Tensor::new(vec![4, 4], vec![3.0; 16]).unwrap();
        let allow = BinaryMask::filled(4, 4, true);
        let p = masked_softmax(&scores, &allow).unwrap();
        for v in p.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_softmax_disallowed_is_exact_zero() {
        let scores = Tensor::new(vec![1, 3], vec![5.0, 100.0, -3.0]).unwrap();
        let allow = BinaryMask::new(1, 3, vec![true, false, true]).unwrap();
        let p = masked_softmax(&scores, &allow).unwrap();
        // Two-element softmax of [5, -3] evaluated directly.
        let e0 = (5.0f64 - 5.0).exp();
        let e2 = (-3.0f64 - 5.0).exp();
        assert!((p.at2(0, 0) - e0 / (e0 + e2)).abs() < 1e-15);
        assert_eq!(p.at2(0, 1), 0.0);
        assert!((p.at2(0, 2) - e2 / (e0 + e2)).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_identity_mask() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let scores = rand_tensor(&mut rng, vec![5, 5]);
        let mut allow = BinaryMask::filled(5, 5, false);
        for i in 0..5 {
            allow.set(i, i, true);
        }
        let p = masked_softmax(&scores, &allow).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(p.at2(r, c), if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..9);
            let scores = rand_tensor(&mut rng, vec![n, n]);
            let mut bits = vec![false; n * n];
            for (i, b) in bits.iter_mut().enumerate() {
                *b = rng.gen_bool(0.6) || i % (n + 1) == 0;
            }
            let allow = BinaryMask::new(n, n, bits).unwrap();
            let p = masked_softmax(&scores, &allow).unwrap();
            for r in 0..n {
                let sum: f64 = (0..n).map(|c| p.at2(r, c)).sum();
                assert!((sum - 1.0).abs() < 1e-9);
                for c in 0..n {
                    if allow.get(r, c) {
                        assert!(p.at2(r, c) > 0.0);
                    } else {
                        assert_eq!(p.at2(r, c), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn masked_softmax_empty_row_errors() {
        let scores = Tensor::zeros(vec![2, 2]);
        let allow = BinaryMask::new(2, 2, vec![true, true, false, false]).unwrap();
        assert_eq!(masked_softmax(&scores, &allow), Err(TensorError::EmptyAttentionRow(1)));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::new(vec![1, 4], vec![7.0; 4]).unwrap();
        let gain = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let bias = Tensor::zeros(vec![4]);
        let y = layer_norm(&x, &gain, &bias, 1e-12).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let gain = Tensor::new(vec![2], vec![1.0; 2]).unwrap();
        let bias = Tensor::zeros(vec![2]);
        let y = layer_norm(&x, &gain, &bias, 1e-15).unwrap();
        assert!((y.at2(0, 0) - 1.0).abs() < 1e-7);
        assert!((y.at2(0, 1) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_matches_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, vec![2, 8]);
        let gain = rand_tensor(&mut rng, vec![8]);
        let bias = rand_tensor(&mut rng, vec![8]);
        let eps = 1e-5;
        let y = layer_norm(&x, &gain, &bias, eps).unwrap();
        for r in 0..2 {
            let mut mean = 0.0;
            for c in 0..8 {
                mean += x.at2(r, c);
            }
            mean /= 8.0;
            let mut var = 0.0;
            for c in 0..8 {
                var += (x.at2(r, c) - mean).powi(2);
            }
            var /= 8.0;
            for c in 0..8 {
                let expect =
                    (x.at2(r, c) - mean) / (var + eps).sqrt() * gain.data()[c] + bias.data()[c];
                assert!((y.at2(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_identity_on_single_cell() {
        let f = Tensor::new(vec![1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(gap(&f).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn gap_all_ones() {
        let f = Tensor::new(vec![4, 4, 3], vec![1.0; 48]).unwrap();
        let g = gap(&f).unwrap();
        for v in g {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_matches_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let f = rand_tensor(&mut rng, vec![3, 5, 2]);
        let g = gap(&f).unwrap();
        for ch in 0..2 {
            let mut acc = 0.0;
            for y in 0..3 {
                for x in 0..5 {
                    acc += f.at3(y, x, ch);
                }
            }
            assert!((g[ch] - acc / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn roi_align_constant_cell() {
        let f = Tensor::new(vec![4, 4, 1], vec![3.25; 16]).unwrap();
        let b = BBox::new(1.0, 2.0, 2.0, 3.0).unwrap();
        let out = roi_align(&f, &b, 1, 2).unwrap();
        assert!((out.data()[0] - 3.25).abs() < 1e-12);
    }

    #[test]
    fn roi_align_whole_map_single_sample() {
        let f = Tensor::new(vec![2, 2, 1], vec![0.75; 4]).unwrap();
        let b = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let out = roi_align(&f, &b, 1, 1).unwrap();
        assert!((out.data()[0] - 0.75).abs() < 1e-12);
    }

    // Independent per-sample bilinear oracle used by the roi_align checks.
    fn oracle_bilinear(f: &Tensor, x: f64, y: f64, ch: usize) -> f64 {
        let (h, w) = (f.shape()[0] as f64, f.shape()[1] as f64);
        let u = x - 0.5;
        let v = y - 0.5;
        let x0 = u.floor() as i64;
        let y0 = v.floor() as i64;
        let fetch = |py: i64, px: i64| -> f64 {
            if px < 0 || py < 0 || px as f64 >= w || py as f64 >= h {
                0.0
            } else {
                f.at3(py as usize, px as usize, ch)
            }
        };
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        fetch(y0, x0) * (1.0 - fx) * (1.0 - fy)
            + fetch(y0, x0 + 1) * fx * (1.0 - fy)
            + fetch(y0 + 1, x0) * (1.0 - fx) * fy
            + fetch(y0 + 1, x0 + 1) * fx * fy
    }

    #[test]
    fn roi_align_matches_bilinear_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..20 {
            let f = rand_tensor(&mut rng, vec![6, 6, 1]);
            let x1 = rng.gen_range(-1.0..4.0);
            let y1 = rng.gen_range(-1.0..4.0);
            let b = BBox::new(x1, y1, x1 + rng.gen_range(0.5..3.0), y1 + rng.gen_range(0.5..3.0))
                .unwrap();
            let got = roi_align(&f, &b, 2, 2).unwrap();
            for by in 0..2 {
                for bx in 0..2 {
                    let bw = b.width() / 2.0;
                    let bh = b.height() / 2.0;
                    let mut acc = 0.0;
                    for sy in 0..2 {
                        for sx in 0..2 {
                            let x = b.x1() + bw * (bx as f64 + (sx as f64 + 0.5) / 2.0);
                            let y = b.y1() + bh * (by as f64 + (sy as f64 + 0.5) / 2.0);
                            acc += oracle_bilinear(&f, x, y, 0);
                        }
                    }
                    assert!((got.at3(by, bx, 0) - acc / 4.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn roi_align_linear_in_features() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let f = rand_tensor(&mut rng, vec![5, 5, 2]);
        let g = rand_tensor(&mut rng, vec![5, 5, 2]);
        let (alpha, beta) = (0.7, -1.3);
        let mixed = Tensor::new(
            vec![5, 5, 2],
            f.data().iter().zip(g.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        )
        .unwrap();
        let b = BBox::new(0.6, 1.1, 3.9, 4.2).unwrap();
        let ra = roi_align(&f, &b, 3, 2).unwrap();
        let rb = roi_align(&g, &b, 3, 2).unwrap();
        let rm = roi_align(&mixed, &b, 3, 2).unwrap();
        for i in 0..rm.data().len() {
            assert!((rm.data()[i] - (alpha * ra.data()[i] + beta * rb.data()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn roi_align_rejects_degenerate_box() {
        assert!(BBox::new(1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn resize_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let img = rand_tensor(&mut rng, vec![3, 4, 3]);
        let out = bilinear_resize(&img, 3, 4).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_constant_image() {
        let img = Tensor::new(vec![2, 3, 3], vec![0.25; 18]).unwrap();
        let out = bilinear_resize(&img, 5, 7).unwrap();
        for v in out.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_matches_formula_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let img = rand_tensor(&mut rng, vec![2, 2, 3]);
        let out = bilinear_resize(&img, 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                // Source coordinate per the stated convention, edge clamped.
                let sx = (j as f64 + 0.5) * 2.0 / 4.0 - 0.5;
                let sy = (i as f64 + 0.5) * 2.0 / 4.0 - 0.5;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let cl = |v: f64| (v.max(0.0) as usize).min(1);
                for ch in 0..3 {
                    let v00 = img.at3(cl(y0), cl(x0), ch);
                    let v01 = img.at3(cl(y0), cl(x0 + 1.0), ch);
                    let v10 = img.at3(cl(y0 + 1.0), cl(x0), ch);
                    let v11 = img.at3(cl(y0 + 1.0), cl(x0 + 1.0), ch);
                    let expect = v00 * (1.0 - fx) * (1.0 - fy)
                        + v01 * fx * (1.0 - fy)
                        + v10 * (1.0 - fx) * fy
                        + v11 * fx * fy;
                    assert!((out.at3(i, j, ch) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn l1_identical_sets_zero() {
        let a = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        assert_eq!(l1_mean(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn l1_single_pair() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![1.0, 1.0]];
        assert_eq!(l1_mean(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn l1_matches_loop_oracle_and_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let a: Vec<Vec<f64>> =
            (0..2).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> =
            (0..2).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..5 {
                total += (a[i][j] - b[i][j]).abs();
            }
        }
        let expect = total / 10.0;
        assert!((l1_mean(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert_eq!(l1_mean(&a, &b).unwrap(), l1_mean(&b, &a).unwrap());
        assert!((l1_distance(&a, &b, L1Reduction::Sum).unwrap() - total).abs() < 1e-12);
    }

    #[test]
    fn l1_rejects_mismatched_sets() {
        let a = vec![vec![1.0]];
        let b = vec![vec![1.0], vec![2.0]];
        assert!(l1_mean(&a, &b).is_err());
        let c = vec![vec![1.0, 2.0]];
        assert!(l1_mean(&a, &c).is_err());
    }
}
