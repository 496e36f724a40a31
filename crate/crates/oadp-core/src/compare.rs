//! Crop-strategy comparison grid on synthetic distractor scenes: three ways
//! of squaring a ground-truth box (minimum bounding square, fixed-size
//! square, adaptive square) crossed with plain versus object-masked encoding,
//! scored by classification precision against encoder-derived category
//! prototypes.

use crate::classify::{cosine_logit, Category, CategoryTable, ClassifyError, Split};
use crate::encoder::{encode_cls, encode_obj, EncoderError, EncoderWeights};
use crate::geometry::{fit_square, patch_overlap_mask, transform_proposal, GeomError, ImageSize};
use crate::metrics::{macro_precision, weighted_precision, ClassificationRecord, MetricsError};
use crate::synthetic::{render_scene, SceneRect, SceneSpec};
use crate::tensor::{crop_resize, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("scenes reference category {0}, beyond the available patterns")]
    BadCategory(usize),
    #[error("no scenes to compare")]
    NoScenes,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Minimum bounding square of the box.
    Mbs,
    /// Square of the encoder input resolution, regardless of the box.
    Fixed,
    /// Adaptive square of side `sqrt(r * h * w)`.
    Adaptive,
}

pub const ALL_STRATEGIES: [Strategy; 3] = [Strategy::Mbs, Strategy::Fixed, Strategy::Adaptive];

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "mbs" => Some(Strategy::Mbs),
            "fixed" => Some(Strategy::Fixed),
            "adaptive" => Some(Strategy::Adaptive),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Mbs => "mbs",
            Strategy::Fixed => "fixed",
            Strategy::Adaptive => "adaptive",
        }
    }
}

/// The squared crop window for a ground-truth box under a strategy.
pub fn strategy_square(
    bbox: &crate::geometry::BBox,
    strategy: Strategy,
    img: ImageSize,
    scale_ratio: f64,
    resolution: usize,
) -> Result<crate::geometry::BBox, GeomError> {
    match strategy {
        Strategy::Mbs => fit_square(bbox.center(), bbox.width().max(bbox.height()), img),
        Strategy::Fixed => fit_square(bbox.center(), resolution as f64, img),
        Strategy::Adaptive => transform_proposal(bbox, scale_ratio, img),
    }
}

/// One cell of the comparison grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub strategy: Strategy,
    pub masked: bool,
    pub macro_precision: f64,
    pub weighted_precision: f64,
    pub records: usize,
}

const PROTO_CANVAS: u32 = 96;
const PROTO_SIDE: f64 = 16.0;

/// Canonical clean scene of one category: a square object centered on a bare
/// canvas.
fn prototype_spec(category: usize) -> SceneSpec {
    let c = PROTO_CANVAS as f64 / 2.0;
    let h = PROTO_SIDE / 2.0;
    SceneSpec {
        width: PROTO_CANVAS,
        height: PROTO_CANVAS,
        seed: 0,
        objects: vec![SceneRect {
            bbox: crate::geometry::BBox::new(c - h, c - h, c + h, c + h)
                .expect("prototype box is valid"),
            category,
        }],
        distractors: vec![],
    }
}

/// Masked embedding of one canonical object under the adaptive framing; the
/// normalized result acts as that category's reference embedding.
fn prototype_embedding(
    weights: &EncoderWeights,
    category: usize,
    scale_ratio: f64,
) -> Result<Vec<f64>, CompareError> {
    let spec = prototype_spec(category);
    let image = render_scene(&spec);
    let object = spec.objects[0];
    let square = transform_proposal(&object.bbox, scale_ratio, spec.image_size())?;
    let resolution = weights.config.resolution;
    let crop = crop_resize(&image, &square, resolution, resolution)?;
    let mask = patch_overlap_mask(&object.bbox, &square, resolution, weights.config.patch)?;
    let mut e = encode_obj(&crop, weights, &mask)?;
    let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut e {
        *v /= norm;
    }
    Ok(e)
}

/// Reference table for `n_base + n_novel` pattern categories: embeddings are
/// the encoder's own prototype outputs, so cosine classification against the
/// table is meaningful without any training. Category `i` is named
/// `cat{i}`; the first `n_base` are flagged base.
pub fn prototype_table(
    weights: &EncoderWeights,
    n_base: usize,
    n_novel: usize,
    scale_ratio: f64,
) -> Result<CategoryTable, CompareError> {
    let total = n_base + n_novel;
    if total == 0 || total > crate::synthetic::PATTERN_COUNT {
        return Err(CompareError::BadCategory(total));
    }
    let categories = (0..total)
        .map(|i| {
            Ok(Category {
                name: format!("cat{i}"),
                split: if i < n_base { Split::Base } else { Split::Novel },
                embedding: prototype_embedding(weights, i, scale_ratio)?,
            })
        })
        .collect::<Result<Vec<_>, CompareError>>()?;
    let dim = categories[0].embedding.len();
    let bg = vec![1.0 / (dim as f64).sqrt(); dim];
    Ok(CategoryTable::new(categories, bg)?)
}

fn argmax_category(e: &[f64], table: &CategoryTable) -> Result<usize, ClassifyError> {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, c) in table.categories.iter().enumerate() {
        let sim = cosine_logit(e, &c.embedding)?;
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Ok(best)
}

/// Classification records of every scene object under every requested cell,
/// plus the aggregated precision grid. Scenes are processed in parallel;
/// records are gathered in scene order.
pub fn run_grid(
    scenes: &[SceneSpec],
    weights: &EncoderWeights,
    table: &CategoryTable,
    scale_ratio: f64,
    strategies: &[Strategy],
    masked_modes: &[bool],
) -> Result<Vec<GridCell>, CompareError> {
    if scenes.is_empty() {
        return Err(CompareError::NoScenes);
    }
    let resolution = weights.config.resolution;
    type SceneRecords = Vec<(usize, bool, ClassificationRecord)>;
    let per_scene: Vec<Result<SceneRecords, CompareError>> = crate::par_map(scenes, |spec| {
        let image = render_scene(spec);
        let size = spec.image_size();
        let mut records = Vec::new();
        for object in &spec.objects {
            if object.category >= table.len() {
                return Err(CompareError::BadCategory(object.category));
            }
            for (si, &strategy) in strategies.iter().enumerate() {
                let square = strategy_square(&object.bbox, strategy, size, scale_ratio, resolution)?;
                let crop = crop_resize(&image, &square, resolution, resolution)?;
                for &masked in masked_modes {
                    let embedding = if masked {
                        let mask = patch_overlap_mask(
                            &object.bbox,
                            &square,
                            resolution,
                            weights.config.patch,
                        )?;
                        encode_obj(&crop, weights, &mask)?
                    } else {
                        encode_cls(&crop, weights)?
                    };
                    let predicted = argmax_category(&embedding, table)?;
                    records.push((
                        si,
                        masked,
                        ClassificationRecord {
                            truth: table.categories[object.category].name.clone(),
                            predicted: table.categories[predicted].name.clone(),
                        },
                    ));
                }
            }
        }
        Ok(records)
    });

    let mut by_cell: std::collections::HashMap<(usize, bool), Vec<ClassificationRecord>> =
        std::collections::HashMap::new();
    for scene in per_scene {
        for (si, masked, record) in scene? {
            by_cell.entry((si, masked)).or_default().push(record);
        }
    }
    let mut cells = Vec::new();
    for (si, &strategy) in strategies.iter().enumerate() {
        for &masked in masked_modes {
            let records = by_cell.remove(&(si, masked)).unwrap_or_default();
            cells.push(GridCell {
                strategy,
                masked,
                macro_precision: macro_precision(&records)?,
                weighted_precision: weighted_precision(&records)?,
                records: records.len(),
            });
        }
    }
    Ok(cells)
}
