//! The distillation pyramid: object/block/global L1 losses, the detection
//! classification loss over base categories, the weighted total, a
//! deterministic student stub producing correctly shaped embeddings, and
//! analytic gradients of every loss with respect to the student embeddings.

use crate::classify::{cosine_logit, softmax, CategoryTable, ClassifyError, Split};
use crate::geometry::{BBox, GeomError};
use crate::tensor::{gap, l1_mean, roi_align, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("proposal {index} carries novel label '{name}'; detection labels are base or background")]
    NovelLabel { index: usize, name: String },
    #[error("{0} labels for {1} proposals")]
    LabelCount(usize, usize),
    #[error("category index {0} out of range")]
    BadCategoryIndex(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// Loss weights of the pyramid. The published operating point is
/// (0.5, 0.25, 0.25).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidWeights {
    pub object: f64,
    pub block: f64,
    pub global: f64,
}

impl Default for PyramidWeights {
    fn default() -> Self {
        Self { object: 0.5, block: 0.25, global: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub detection: f64,
    pub object: f64,
    pub block: f64,
    pub global: f64,
}

/// Mean absolute difference between aligned student and teacher proposal
/// embeddings.
pub fn loss_object(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<f64, DistillError> {
    Ok(l1_mean(student, teacher)?)
}

pub fn loss_block(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<f64, DistillError> {
    Ok(l1_mean(student, teacher)?)
}

/// Global case: the single-element set.
pub fn loss_global(student: &[f64], teacher: &[f64]) -> Result<f64, DistillError> {
    Ok(l1_mean(&[student.to_vec()], &[teacher.to_vec()])?)
}

/// Per-proposal label for the detection loss: a base category (by table
/// index) or background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcnnLabel {
    Category(usize),
    Background,
}

/// Softmax probabilities restricted to base categories plus background, in
/// (base table order, background last).
fn base_restricted_probs(
    e: &[f64],
    base: &[usize],
    table: &CategoryTable,
) -> Result<Vec<f64>, DistillError> {
    let mut logits = Vec::with_capacity(base.len() + 1);
    for &i in base {
        logits.push(cosine_logit(e, &table.categories[i].embedding)?);
    }
    logits.push(cosine_logit(e, &table.bg_embedding)?);
    Ok(softmax(&logits))
}

/// Detection classification loss: negative log-likelihood of each proposal's
/// label under the softmax restricted to base categories and background
/// (novel categories receive no mass by construction).
pub fn rcnn_cls_loss(
    embeddings: &[Vec<f64>],
    labels: &[RcnnLabel],
    table: &CategoryTable,
) -> Result<f64, DistillError> {
    if embeddings.len() != labels.len() {
        return Err(DistillError::LabelCount(labels.len(), embeddings.len()));
    }
    let base = table.base_indices();
    let mut loss = 0.0;
    for (i, (e, label)) in embeddings.iter().zip(labels).enumerate() {
        let probs = base_restricted_probs(e, &base, table)?;
        let p = match label {
            RcnnLabel::Background => probs[base.len()],
            RcnnLabel::Category(idx) => {
                let cat =
                    table.categories.get(*idx).ok_or(DistillError::BadCategoryIndex(*idx))?;
                if cat.split == Split::Novel {
                    return Err(DistillError::NovelLabel { index: i, name: cat.name.clone() });
                }
                let pos = base.iter().position(|b| b == idx).expect("base index is in base list");
                probs[pos]
            }
        };
        loss -= p.ln();
    }
    Ok(loss)
}

/// Weighted total: detection loss plus the three pyramid terms.
pub fn total_loss(parts: &LossParts, w: &PyramidWeights) -> f64 {
    parts.detection + w.object * parts.object + w.block * parts.block + w.global * parts.global
}

/// Gradient of an L1-mean loss with respect to the first (student) argument:
/// `sign(s - t) / count` per coordinate. Coordinates with an exact tie get
/// subgradient 0 and raise the `tied` flag.
#[derive(Debug, Clone)]
pub struct L1Grad {
    pub grads: Vec<Vec<f64>>,
    pub tied: bool,
}

pub fn l1_mean_grad(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<L1Grad, DistillError> {
    if student.len() != teacher.len() {
        return Err(DistillError::Tensor(TensorError::Cardinality {
            a: student.len(),
            b: teacher.len(),
        }));
    }
    let count: usize = student.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(DistillError::Tensor(TensorError::Cardinality { a: 0, b: 0 }));
    }
    let mut tied = false;
    let mut grads = Vec::with_capacity(student.len());
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() {
            return Err(DistillError::Tensor(TensorError::Cardinality { a: s.len(), b: t.len() }));
        }
        let row = s
            .iter()
            .zip(t)
            .map(|(a, b)| {
                let d = a - b;
                if d == 0.0 {
                    tied = true;
                    0.0
                } else {
                    d.signum() / count as f64
                }
            })
            .collect();
        grads.push(row);
    }
    Ok(L1Grad { grads, tied })
}

/// Gradient of [`rcnn_cls_loss`] with respect to each proposal embedding:
/// `(softmax - onehot)` pulled back through the cosine-logit Jacobian
/// `d l_c / d e = (t_c/|t_c| - l_c * e/|e|) / |e|`.
pub fn rcnn_cls_grad(
    embeddings: &[Vec<f64>],
    labels: &[RcnnLabel],
    table: &CategoryTable,
) -> Result<Vec<Vec<f64>>, DistillError> {
    if embeddings.len() != labels.len() {
        return Err(DistillError::LabelCount(labels.len(), embeddings.len()));
    }
    let base = table.base_indices();
    let mut out = Vec::with_capacity(embeddings.len());
    for (i, (e, label)) in embeddings.iter().zip(labels).enumerate() {
        let probs = base_restricted_probs(e, &base, table)?;
        let target = match label {
            RcnnLabel::Background => base.len(),
            RcnnLabel::Category(idx) => {
                let cat =
                    table.categories.get(*idx).ok_or(DistillError::BadCategoryIndex(*idx))?;
                if cat.split == Split::Novel {
                    return Err(DistillError::NovelLabel { index: i, name: cat.name.clone() });
                }
                base.iter().position(|b| b == idx).expect("base index is in base list")
            }
        };
        let norm_e: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut grad = vec![0.0; e.len()];
        for (slot, t) in base
            .iter()
            .map(|&b| table.categories[b].embedding.as_slice())
            .chain(std::iter::once(table.bg_embedding.as_slice()))
            .enumerate()
        {
            let coeff = probs[slot] - if slot == target { 1.0 } else { 0.0 };
            let norm_t: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            let logit = e.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / (norm_e * norm_t);
            for (g, (ev, tv)) in grad.iter_mut().zip(e.iter().zip(t)) {
                *g += coeff * (tv / norm_t - logit * ev / norm_e) / norm_e;
            }
        }
        out.push(grad);
    }
    Ok(out)
}

const STUB_CHANNELS: usize = 8;
const STUB_ROI_OUT: usize = 2;
const STUB_ROI_SAMPLES: usize = 2;
/// Pyramid strides, finest first (the analogue of levels F2..F6).
const STUB_STRIDES: [usize; 5] = [4, 8, 16, 32, 64];

/// Affine map drawn from a seeded stream.
#[derive(Debug, Clone)]
struct AffineHead {
    weight: Tensor,
    bias: Tensor,
}

impl AffineHead {
    fn seeded(rng: &mut rand_chacha::ChaCha20Rng, input: usize, output: usize) -> Self {
        use rand::Rng;
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Tensor::from_parts(
            vec![input, output],
            (0..input * output).map(|_| rng.gen_range(-bound..bound)).collect(),
        );
        let bias = Tensor::from_parts(
            vec![output],
            (0..output).map(|_| rng.gen_range(-bound..bound)).collect(),
        );
        Self { weight, bias }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let (din, dout) = (self.weight.shape()[0], self.weight.shape()[1]);
        debug_assert_eq!(input.len(), din);
        let mut out = self.bias.data().to_vec();
        for (i, v) in input.iter().enumerate() {
            for c in 0..dout {
                out[c] += v * self.weight.at2(i, c);
            }
        }
        out
    }
}

/// Minimal deterministic detector stand-in: a strided average-pool pyramid
/// with a seeded channel mix, plus affine object/block/global/detection
/// heads. Its contracts are shape, determinism, and smoothness of the loss
/// inputs; it is not trainable.
#[derive(Debug, Clone)]
pub struct StudentStub {
    pub seed: u64,
    pub embed_dim: usize,
    channel_mix: AffineHead,
    object_head: AffineHead,
    block_head: AffineHead,
    rcnn_head: AffineHead,
    global_head: AffineHead,
}

impl StudentStub {
    pub fn new(seed: u64, embed_dim: usize) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let roi_dim = STUB_ROI_OUT * STUB_ROI_OUT * STUB_CHANNELS;
        Self {
            seed,
            embed_dim,
            channel_mix: AffineHead::seeded(&mut rng, 3, STUB_CHANNELS),
            object_head: AffineHead::seeded(&mut rng, roi_dim, embed_dim),
            block_head: AffineHead::seeded(&mut rng, roi_dim, embed_dim),
            rcnn_head: AffineHead::seeded(&mut rng, roi_dim, embed_dim),
            global_head: AffineHead::seeded(&mut rng, STUB_CHANNELS, embed_dim),
        }
    }

    /// Hierarchical feature maps: stride-s average pooling of the image (ceil
    /// division at the border) followed by the seeded 3-to-C channel mix.
    pub fn features(&self, image: &Tensor) -> Result<Vec<Tensor>, DistillError> {
        if image.rank() != 3 || image.shape()[2] != 3 {
            return Err(DistillError::Tensor(TensorError::Rank {
                expected: 3,
                shape: image.shape().to_vec(),
            }));
        }
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let mut levels = Vec::with_capacity(STUB_STRIDES.len());
        for stride in STUB_STRIDES {
            let fh = h.div_ceil(stride);
            let fw = w.div_ceil(stride);
            let mut level = Tensor::zeros(vec![fh, fw, STUB_CHANNELS]);
            for fy in 0..fh {
                for fx in 0..fw {
                    let y_end = ((fy + 1) * stride).min(h);
                    let x_end = ((fx + 1) * stride).min(w);
                    let mut mean = [0.0f64; 3];
                    let mut count = 0.0;
                    for y in fy * stride..y_end {
                        for x in fx * stride..x_end {
                            for ch in 0..3 {
                                mean[ch] += image.at3(y, x, ch);
                            }
                            count += 1.0;
                        }
                    }
                    for m in &mut mean {
                        *m /= count;
                    }
                    let mixed = self.channel_mix.apply(&mean);
                    for (ch, v) in mixed.iter().enumerate() {
                        level.set3(fy, fx, ch, *v);
                    }
                }
            }
            levels.push(level);
        }
        Ok(levels)
    }
}

/// Student embeddings for one image.
#[derive(Debug, Clone)]
pub struct StudentEmbeddings {
    /// Object-head embeddings, one per proposal.
    pub object: Vec<Vec<f64>>,
    /// Block-head embeddings, one per block.
    pub block: Vec<Vec<f64>>,
    /// Global embedding from the coarsest level.
    pub global: Vec<f64>,
    /// Detection-head embeddings, one per proposal.
    pub rcnn: Vec<Vec<f64>>,
}

fn roi_embed(
    level: &Tensor,
    stride: usize,
    bbox: &BBox,
    head: &AffineHead,
) -> Result<Vec<f64>, DistillError> {
    let s = stride as f64;
    let scaled = BBox::new(bbox.x1() / s, bbox.y1() / s, bbox.x2() / s, bbox.y2() / s)?;
    let pooled = roi_align(level, &scaled, STUB_ROI_OUT, STUB_ROI_SAMPLES)?;
    Ok(head.apply(pooled.data()))
}

/// Runs the stub end to end: object and detection embeddings from
/// RoI-aligned finest-level features, block embeddings through block pooling
/// on the same level, and the global embedding from pooled coarsest-level
/// features.
pub fn student_forward(
    stub: &StudentStub,
    image: &Tensor,
    proposals: &[BBox],
    blocks: &[BBox],
) -> Result<StudentEmbeddings, DistillError> {
    let levels = stub.features(image)?;
    let finest = &levels[0];
    let coarsest = levels.last().expect("pyramid is non-empty");

    let mut object = Vec::with_capacity(proposals.len());
    let mut rcnn = Vec::with_capacity(proposals.len());
    for p in proposals {
        object.push(roi_embed(finest, STUB_STRIDES[0], p, &stub.object_head)?);
        rcnn.push(roi_embed(finest, STUB_STRIDES[0], p, &stub.rcnn_head)?);
    }
    let mut block = Vec::with_capacity(blocks.len());
    for b in blocks {
        block.push(roi_embed(finest, STUB_STRIDES[0], b, &stub.block_head)?);
    }
    let global = stub.global_head.apply(&gap(coarsest)?);
    Ok(StudentEmbeddings { object, block, global, rcnn })
}
