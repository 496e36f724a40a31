//! Pseudo-label generation: probabilities over the full category space,
//! confidence fusion with objectness, class-wise NMS over novel categories,
//! and filtering.

use crate::classify::{probs_no_bg, CategoryTable, ClassifyError};
use crate::encoder::{encode_obj, EncoderError, EncoderWeights};
use crate::geometry::{
    iou, patch_overlap_mask, transform_proposal, BBox, GeomError, ImageSize, Proposal,
};
use crate::tensor::{crop_resize, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlError {
    #[error("pseudo-label config: {0}")]
    Config(String),
    #[error("table has no novel categories to label")]
    NoNovelCategories,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Pseudo-label generation knobs. `gamma` follows the published 0.3; the
/// defaults `score_threshold = 0` and `max_per_image = 100` mirror the
/// fixed-budget regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlConfig {
    pub gamma: f64,
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub max_per_image: usize,
    /// Emit one candidate per (proposal, novel category) instead of only the
    /// argmax novel category per proposal.
    pub emit_all_novel: bool,
}

impl Default for PlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            nms_iou: 0.5,
            score_threshold: 0.0,
            max_per_image: 100,
            emit_all_novel: false,
        }
    }
}

impl PlConfig {
    pub fn validate(&self) -> Result<(), PlError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PlError::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(PlError::Config(format!("nms_iou must lie in (0, 1), got {}", self.nms_iou)));
        }
        if self.score_threshold < 0.0 {
            return Err(PlError::Config("score_threshold must be non-negative".into()));
        }
        if self.max_per_image == 0 {
            return Err(PlError::Config("max_per_image must be at least 1".into()));
        }
        Ok(())
    }
}

/// A generated annotation: box, novel category (table index), confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub bbox: BBox,
    pub category: usize,
    pub score: f64,
}

/// Serialized pseudo-label record (category by name).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlRecord {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: String,
    pub score: f64,
}

/// One output line per image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlImageRecord {
    pub image_id: String,
    pub pls: Vec<PlRecord>,
}

/// Softmax of cosine logits over every category, base and novel alike (no
/// background slot); running it over the full space suppresses false
/// positives on novel categories.
pub fn pl_probs(e: &[f64], table: &CategoryTable) -> Result<Vec<f64>, PlError> {
    Ok(probs_no_bg(e, table)?)
}

/// Confidence fusion `P^gamma * o^(1-gamma)`. Both inputs live in `[0, 1]`;
/// `0^0` evaluates to 1, so degenerate exponents stay defined.
pub fn confidence(pl_prob: f64, objectness: f64, gamma: f64) -> f64 {
    pl_prob.powf(gamma) * objectness.powf(1.0 - gamma)
}

/// Candidate detection entering NMS.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bbox: BBox,
    pub category: usize,
    pub score: f64,
}

/// Greedy descending-score suppression run independently per category: a
/// candidate is dropped iff a kept candidate of the same category overlaps it
/// with IoU strictly above the threshold. Ties break by earlier input index.
/// Returns kept candidates in (score desc, input index asc) order.
pub fn classwise_nms(candidates: &[Candidate], iou_thr: f64) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .score
            .partial_cmp(&candidates[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            candidates[k].category == candidates[i].category
                && iou(&candidates[k].bbox, &candidates[i].bbox) > iou_thr
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| candidates[i].clone()).collect()
}

/// Result of a per-image pseudo-label run.
#[derive(Debug, Clone)]
pub struct PlOutput {
    pub labels: Vec<PseudoLabel>,
    /// Proposals skipped because their object mask was empty.
    pub skipped: usize,
}

/// Full per-image pipeline: square each proposal, crop and resize, encode the
/// object token, score novel categories, fuse with objectness, then
/// class-wise NMS, score filtering, and the per-image budget. Base
/// categories are never emitted.
pub fn generate_pls(
    image: &Tensor,
    proposals: &[Proposal],
    weights: &EncoderWeights,
    table: &CategoryTable,
    scale_ratio: f64,
    cfg: &PlConfig,
) -> Result<PlOutput, PlError> {
    cfg.validate()?;
    let novel = table.novel_indices();
    if novel.is_empty() {
        return Err(PlError::NoNovelCategories);
    }
    let size = ImageSize::new(image.shape()[1] as u32, image.shape()[0] as u32)?;
    let resolution = weights.config.resolution;

    // Per-proposal encodes are independent; gather in input order.
    let encoded: Vec<Result<Option<Vec<f64>>, PlError>> = crate::par_map(proposals, |p| {
        let square = transform_proposal(&p.bbox, scale_ratio, size)?;
        let mask = match patch_overlap_mask(&p.bbox, &square, resolution, weights.config.patch) {
            Ok(m) => m,
            Err(GeomError::EmptyObjectMask) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let crop = crop_resize(image, &square, resolution, resolution)?;
        Ok(Some(encode_obj(&crop, weights, &mask)?))
    });

    let mut skipped = 0usize;
    let mut candidates = Vec::new();
    for (p, enc) in proposals.iter().zip(encoded) {
        let Some(embedding) = enc? else {
            skipped += 1;
            continue;
        };
        let probs = pl_probs(&embedding, table)?;
        if cfg.emit_all_novel {
            for &c in &novel {
                candidates.push(Candidate {
                    bbox: p.bbox,
                    category: c,
                    score: confidence(probs[c], p.objectness, cfg.gamma),
                });
            }
        } else {
            // Single-label reading: only the argmax novel category.
            let &best = novel
                .iter()
                .max_by(|&&a, &&b| probs[a].partial_cmp(&probs[b]).unwrap())
                .expect("novel set is non-empty");
            candidates.push(Candidate {
                bbox: p.bbox,
                category: best,
                score: confidence(probs[best], p.objectness, cfg.gamma),
            });
        }
    }

    let kept = classwise_nms(&candidates, cfg.nms_iou);
    let mut labels: Vec<PseudoLabel> = kept
        .into_iter()
        .filter(|c| c.score >= cfg.score_threshold)
        .map(|c| PseudoLabel { bbox: c.bbox, category: c.category, score: c.score })
        .collect();
    labels.truncate(cfg.max_per_image);
    Ok(PlOutput { labels, skipped })
}
