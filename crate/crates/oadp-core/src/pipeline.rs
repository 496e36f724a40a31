//! Manifest-level runs behind the command-line surface. Each run is a pure
//! function of its input files plus the run configuration, so command output
//! equals the corresponding library calls.

use crate::classify::CategoryTable;
use crate::distill::{
    l1_mean_grad, loss_block, loss_object, rcnn_cls_grad, rcnn_cls_loss,
    student_forward, DistillError, LossParts, PyramidWeights, RcnnLabel, StudentStub,
};
use crate::encoder::{encode_cls, encode_obj, EncoderError, EncoderWeights};
use crate::geometry::{
    iou, partition_blocks, patch_overlap_mask, transform_proposal, BBox, GeomError, ImageSize,
};
use crate::io::config::{Precision, RunConfig};
use crate::io::container::TensorContainer;
use crate::io::manifest::{load_image, ManifestEntry};
use crate::io::FormatError;
use crate::metrics::{pl_stats, GtBox, ImageDetections, MetricsReport, PredBox};
use crate::pseudolabel::{generate_pls, PlConfig, PlError, PlImageRecord, PlRecord};
use crate::tensor::{bilinear_resize, crop_resize, Tensor, TensorError};
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pl(#[from] PlError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Classify(#[from] crate::classify::ClassifyError),
    #[error("manifest image '{0}': {1}")]
    Image(String, String),
}

fn embedding_key(image_id: &str, proposal_index: usize) -> String {
    format!("img{image_id}/prop{proposal_index}")
}

fn encode_proposal(
    image: &Tensor,
    p: &crate::geometry::Proposal,
    weights: &EncoderWeights,
    scale_ratio: f64,
    size: ImageSize,
) -> Result<Option<Vec<f64>>, PipelineError> {
    let resolution = weights.config.resolution;
    let square = transform_proposal(&p.bbox, scale_ratio, size)?;
    let mask = match patch_overlap_mask(&p.bbox, &square, resolution, weights.config.patch) {
        Ok(m) => m,
        Err(GeomError::EmptyObjectMask) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let crop = crop_resize(image, &square, resolution, resolution)?;
    Ok(Some(encode_obj(&crop, weights, &mask)?))
}

/// Teacher embeddings of every proposal of one image: squared crop, masked
/// object-token encode. Proposals whose mask is empty come back as `None`.
/// Runs per proposal in parallel, gathered in input order.
pub fn oake_embeddings(
    image: &Tensor,
    proposals: &[crate::geometry::Proposal],
    weights: &EncoderWeights,
    scale_ratio: f64,
) -> Result<Vec<Option<Vec<f64>>>, PipelineError> {
    let size = ImageSize::new(image.shape()[1] as u32, image.shape()[0] as u32)?;
    crate::par_map(proposals, |p| encode_proposal(image, p, weights, scale_ratio, size))
        .into_iter()
        .collect()
}

/// Single-threaded [`oake_embeddings`]; output is identical.
pub fn oake_embeddings_seq(
    image: &Tensor,
    proposals: &[crate::geometry::Proposal],
    weights: &EncoderWeights,
    scale_ratio: f64,
) -> Result<Vec<Option<Vec<f64>>>, PipelineError> {
    let size = ImageSize::new(image.shape()[1] as u32, image.shape()[0] as u32)?;
    crate::seq_map(proposals, |p| encode_proposal(image, p, weights, scale_ratio, size))
        .into_iter()
        .collect()
}

/// Outcome of the knowledge-extraction run: one container entry per encoded
/// proposal, keyed `img{ID}/prop{J}`.
pub struct OakeOutcome {
    pub container: TensorContainer,
    pub proposals: usize,
    pub skipped: usize,
}

pub fn run_oake(
    manifest_path: &Path,
    entries: &[ManifestEntry],
    weights: &EncoderWeights,
    config: &RunConfig,
) -> Result<OakeOutcome, PipelineError> {
    let mut container = TensorContainer::new();
    let mut total = 0usize;
    let mut skipped = 0usize;
    for entry in entries {
        let image = load_image(manifest_path, entry)
            .map_err(|e| PipelineError::Image(entry.image_id.clone(), e.to_string()))?;
        let embeddings = oake_embeddings(&image, &entry.proposals, weights, config.r)?;
        for (j, emb) in embeddings.into_iter().enumerate() {
            total += 1;
            match emb {
                Some(e) => {
                    let key = embedding_key(&entry.image_id, j);
                    match config.precision {
                        Precision::F64 => container.insert_f64(&key, vec![e.len()], e)?,
                        Precision::F32 => container.insert_f32(
                            &key,
                            vec![e.len()],
                            e.into_iter().map(|v| v as f32).collect(),
                        )?,
                    }
                }
                None => skipped += 1,
            }
        }
    }
    Ok(OakeOutcome { container, proposals: total, skipped })
}

/// Outcome of the pseudo-label run.
pub struct PlOutcome {
    pub records: Vec<PlImageRecord>,
    pub skipped: usize,
}

pub fn run_pl(
    manifest_path: &Path,
    entries: &[ManifestEntry],
    weights: &EncoderWeights,
    table: &CategoryTable,
    config: &RunConfig,
) -> Result<PlOutcome, PipelineError> {
    let pl_cfg = PlConfig {
        gamma: config.gamma,
        nms_iou: config.nms_iou,
        score_threshold: config.score_threshold,
        max_per_image: config.max_per_image,
        emit_all_novel: false,
    };
    let mut records = Vec::with_capacity(entries.len());
    let mut skipped = 0usize;
    for entry in entries {
        let image = load_image(manifest_path, entry)
            .map_err(|e| PipelineError::Image(entry.image_id.clone(), e.to_string()))?;
        let out = generate_pls(&image, &entry.proposals, weights, table, config.r, &pl_cfg)?;
        skipped += out.skipped;
        records.push(PlImageRecord {
            image_id: entry.image_id.clone(),
            pls: out
                .labels
                .into_iter()
                .map(|l| PlRecord {
                    bbox: l.bbox,
                    category: table.categories[l.category].name.clone(),
                    score: l.score,
                })
                .collect(),
        });
    }
    Ok(PlOutcome { records, skipped })
}

pub fn write_pl_records(records: &[PlImageRecord], path: &Path) -> Result<(), FormatError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    crate::io::atomic_write(path, out.as_bytes())
}

pub fn read_pl_records(path: &Path) -> Result<Vec<PlImageRecord>, FormatError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(line).map_err(|source| FormatError::Json { line: i + 1, source })?,
        );
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub object_max_rel_err: f64,
    pub block_max_rel_err: f64,
    pub global_max_rel_err: f64,
    pub detection_max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub detection: f64,
    pub object: f64,
    pub block: f64,
    pub global: f64,
    pub total: f64,
    pub w_o: f64,
    pub w_b: f64,
    pub w_g: f64,
    pub images: usize,
    pub proposals: usize,
    pub teacher_matched: usize,
    pub gradient_check: GradCheckSummary,
}

const GRAD_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn fd_check_l1(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<f64, DistillError> {
    let analytic = l1_mean_grad(student, teacher)?;
    let mut worst = 0.0f64;
    for i in 0..student.len() {
        let mut numeric = vec![0.0; student[i].len()];
        for j in 0..student[i].len() {
            let mut plus = student.to_vec();
            plus[i][j] += FD_STEP;
            let mut minus = student.to_vec();
            minus[i][j] -= FD_STEP;
            numeric[j] = (crate::tensor::l1_mean(&plus, teacher)?
                - crate::tensor::l1_mean(&minus, teacher)?)
                / (2.0 * FD_STEP);
        }
        worst = worst.max(max_rel_err(&analytic.grads[i], &numeric));
    }
    Ok(worst)
}

fn fd_check_rcnn(
    embeddings: &[Vec<f64>],
    labels: &[RcnnLabel],
    table: &CategoryTable,
) -> Result<f64, DistillError> {
    let analytic = rcnn_cls_grad(embeddings, labels, table)?;
    let mut worst = 0.0f64;
    for i in 0..embeddings.len() {
        let mut numeric = vec![0.0; embeddings[i].len()];
        for j in 0..embeddings[i].len() {
            let mut plus = embeddings.to_vec();
            plus[i][j] += FD_STEP;
            let mut minus = embeddings.to_vec();
            minus[i][j] -= FD_STEP;
            numeric[j] = (rcnn_cls_loss(&plus, labels, table)?
                - rcnn_cls_loss(&minus, labels, table)?)
                / (2.0 * FD_STEP);
        }
        worst = worst.max(max_rel_err(&analytic[i], &numeric));
    }
    Ok(worst)
}

/// Rounds a dimension up to the next multiple of the block side.
fn round_up(v: u32, block: u32) -> u32 {
    v.div_ceil(block) * block
}

/// Proposal-to-label assignment: the base-category annotation with the best
/// IoU at or above 0.5 wins; everything else is background. Novel
/// annotations never produce labels.
fn assign_labels(
    proposals: &[BBox],
    annotations: &[crate::io::manifest::Annotation],
    table: &CategoryTable,
) -> Vec<RcnnLabel> {
    let base: Vec<(usize, &BBox)> = annotations
        .iter()
        .filter_map(|a| {
            table.index_of(&a.category).and_then(|idx| {
                (table.categories[idx].split == crate::classify::Split::Base)
                    .then_some((idx, &a.bbox))
            })
        })
        .collect();
    proposals
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (idx, bbox) in &base {
                let overlap = iou(p, bbox);
                if overlap >= 0.5 && best.map(|(_, b)| overlap > b).unwrap_or(true) {
                    best = Some((*idx, overlap));
                }
            }
            match best {
                Some((idx, _)) => RcnnLabel::Category(idx),
                None => RcnnLabel::Background,
            }
        })
        .collect()
}

/// Computes the full loss pyramid over a manifest: student embeddings from
/// the seeded stub, teacher object embeddings from the extraction container,
/// teacher global/block embeddings from the encoder, the detection loss from
/// IoU-assigned labels, plus a finite-difference check of every analytic
/// gradient on the actual instance. The whole manifest is treated as one
/// batch: embedding sets concatenate across images and the detection loss
/// sums per proposal.
pub fn run_losses(
    manifest_path: &Path,
    entries: &[ManifestEntry],
    teacher: &TensorContainer,
    weights: &EncoderWeights,
    table: &CategoryTable,
    config: &RunConfig,
    seed: u64,
) -> Result<LossReport, PipelineError> {
    let stub = StudentStub::new(seed, weights.config.embed_dim);
    let block_side = config.resolution;
    let resolution = weights.config.resolution;

    let mut student_object = Vec::new();
    let mut teacher_object = Vec::new();
    let mut student_block = Vec::new();
    let mut teacher_block = Vec::new();
    let mut student_global = Vec::new();
    let mut teacher_global = Vec::new();
    let mut rcnn_embeddings = Vec::new();
    let mut rcnn_labels = Vec::new();
    let mut proposals_total = 0usize;

    for entry in entries {
        let image = load_image(manifest_path, entry)
            .map_err(|e| PipelineError::Image(entry.image_id.clone(), e.to_string()))?;
        let (w, h) = (entry.size[0], entry.size[1]);
        let (rw, rh) = (round_up(w, block_side), round_up(h, block_side));
        let resized = if (rw, rh) == (w, h) {
            image.clone()
        } else {
            bilinear_resize(&image, rh as usize, rw as usize)?
        };
        let (sx, sy) = (rw as f64 / w as f64, rh as f64 / h as f64);
        let scaled_proposals: Vec<BBox> = entry
            .proposals
            .iter()
            .map(|p| {
                BBox::new(
                    p.bbox.x1() * sx,
                    p.bbox.y1() * sy,
                    p.bbox.x2() * sx,
                    p.bbox.y2() * sy,
                )
            })
            .collect::<Result<_, _>>()?;
        let blocks = partition_blocks(ImageSize::new(rw, rh)?, block_side)?;

        let student = student_forward(&stub, &resized, &scaled_proposals, &blocks)?;
        proposals_total += entry.proposals.len();

        // Object pairs exist only where the teacher produced an embedding.
        for (j, se) in student.object.iter().enumerate() {
            if let Some(te) = teacher.get(&embedding_key(&entry.image_id, j)) {
                student_object.push(se.clone());
                teacher_object.push(te.as_f64());
            }
        }

        for (bbox, se) in blocks.iter().zip(student.block) {
            let crop = crop_resize(&resized, bbox, resolution, resolution)?;
            teacher_block.push(encode_cls(&crop, weights)?);
            student_block.push(se);
        }

        let whole = bilinear_resize(&image, resolution, resolution)?;
        teacher_global.push(encode_cls(&whole, weights)?);
        student_global.push(student.global);

        let labels = assign_labels(&scaled_proposals_orig(&entry.proposals), &entry.annotations, table);
        rcnn_embeddings.extend(student.rcnn);
        rcnn_labels.extend(labels);
    }

    let object = if student_object.is_empty() {
        0.0
    } else {
        loss_object(&student_object, &teacher_object)?
    };
    let block = if student_block.is_empty() {
        0.0
    } else {
        loss_block(&student_block, &teacher_block)?
    };
    let global = if student_global.is_empty() {
        0.0
    } else {
        crate::tensor::l1_mean(&student_global, &teacher_global)?
    };
    let detection = if rcnn_embeddings.is_empty() {
        0.0
    } else {
        rcnn_cls_loss(&rcnn_embeddings, &rcnn_labels, table)?
    };

    let weights_cfg = PyramidWeights { object: config.w_o, block: config.w_b, global: config.w_g };
    let parts = LossParts { detection, object, block, global };
    let total = crate::distill::total_loss(&parts, &weights_cfg);

    let object_err = if student_object.is_empty() {
        0.0
    } else {
        fd_check_l1(&student_object, &teacher_object)?
    };
    let block_err =
        if student_block.is_empty() { 0.0 } else { fd_check_l1(&student_block, &teacher_block)? };
    let global_err = if student_global.is_empty() {
        0.0
    } else {
        fd_check_l1(&student_global, &teacher_global)?
    };
    let detection_err = if rcnn_embeddings.is_empty() {
        0.0
    } else {
        fd_check_rcnn(&rcnn_embeddings, &rcnn_labels, table)?
    };
    let passed = [object_err, block_err, global_err, detection_err]
        .iter()
        .all(|e| *e < GRAD_TOLERANCE);

    Ok(LossReport {
        detection,
        object,
        block,
        global,
        total,
        w_o: config.w_o,
        w_b: config.w_b,
        w_g: config.w_g,
        images: entries.len(),
        proposals: proposals_total,
        teacher_matched: student_object.len(),
        gradient_check: GradCheckSummary {
            object_max_rel_err: object_err,
            block_max_rel_err: block_err,
            global_max_rel_err: global_err,
            detection_max_rel_err: detection_err,
            tolerance: GRAD_TOLERANCE,
            passed,
        },
    })
}

/// Label assignment runs in original image coordinates (annotations are not
/// rescaled), so use the raw proposal boxes.
fn scaled_proposals_orig(proposals: &[crate::geometry::Proposal]) -> Vec<BBox> {
    proposals.iter().map(|p| p.bbox).collect()
}

/// Evaluation of pseudo-label files against manifest ground truth. When a
/// category table is given, AP is restricted to its novel categories;
/// otherwise every ground-truth category counts. Classification records pair
/// each prediction with its best-IoU ground-truth box (at 0.5 or above).
pub fn run_eval(
    records: &[PlImageRecord],
    entries: &[ManifestEntry],
    table: Option<&CategoryTable>,
) -> MetricsReport {
    let mut detections = Vec::new();
    let mut class_records = Vec::new();
    for entry in entries {
        let preds: Vec<PredBox> = records
            .iter()
            .filter(|r| r.image_id == entry.image_id)
            .flat_map(|r| r.pls.iter())
            .map(|pl| PredBox { bbox: pl.bbox, category: pl.category.clone(), score: pl.score })
            .collect();
        let truths: Vec<GtBox> = entry
            .annotations
            .iter()
            .map(|a| GtBox { bbox: a.bbox, category: a.category.clone() })
            .collect();
        for p in &preds {
            let mut best: Option<(usize, f64)> = None;
            for (ti, t) in truths.iter().enumerate() {
                let overlap = iou(&p.bbox, &t.bbox);
                if overlap >= 0.5 && best.map(|(_, b)| overlap > b).unwrap_or(true) {
                    best = Some((ti, overlap));
                }
            }
            if let Some((ti, _)) = best {
                class_records.push(crate::metrics::ClassificationRecord {
                    truth: truths[ti].category.clone(),
                    predicted: p.category.clone(),
                });
            }
        }
        detections.push(ImageDetections { truths, preds });
    }

    let (mut per_category, mut mean) = crate::metrics::map50(&detections);
    if let Some(table) = table {
        let novel: std::collections::BTreeSet<&str> =
            table.novel_indices().into_iter().map(|i| table.categories[i].name.as_str()).collect();
        per_category.retain(|name, _| novel.contains(name.as_str()));
        mean = if per_category.is_empty() {
            None
        } else {
            Some(per_category.values().sum::<f64>() / per_category.len() as f64)
        };
    }
    let stats = pl_stats(records);
    MetricsReport {
        macro_precision: crate::metrics::macro_precision(&class_records).ok(),
        weighted_precision: crate::metrics::weighted_precision(&class_records).ok(),
        ap50_per_category: per_category,
        map50: mean,
        pl_per_image: stats.mean_per_image,
        pl_total: stats.total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::geometry::Proposal;
    use crate::io::manifest::{save_image, write_manifest, Annotation};
    use crate::synthetic::{gen_category_table, gen_scene, gen_weights, SceneRect, SceneSpec};

    fn write_scene_dataset(dir: &Path, n_images: usize) -> (std::path::PathBuf, Vec<ManifestEntry>) {
        let mut entries = Vec::new();
        for i in 0..n_images {
            let spec = SceneSpec {
                width: 64,
                height: 64,
                seed: i as u64,
                objects: vec![
                    SceneRect {
                        bbox: BBox::new(10.0, 12.0, 28.0, 30.0).unwrap(),
                        category: i % 2,
                    },
                    SceneRect {
                        bbox: BBox::new(36.0, 34.0, 54.0, 56.0).unwrap(),
                        category: (i + 1) % 2,
                    },
                ],
                distractors: vec![],
            };
            let scene = gen_scene(&spec);
            let image_file = format!("img{i}.oadp");
            save_image(&scene.image, &dir.join(&image_file)).unwrap();
            entries.push(ManifestEntry {
                image_id: format!("{i}"),
                image: image_file,
                size: [64, 64],
                proposals: scene.proposals,
                annotations: scene
                    .truths
                    .iter()
                    .map(|t| Annotation {
                        bbox: t.bbox,
                        category: format!("base{}", t.category),
                    })
                    .collect(),
            });
        }
        let manifest = dir.join("manifest.jsonl");
        write_manifest(&entries, &manifest).unwrap();
        (manifest, entries)
    }

    #[test]
    fn oake_writes_one_entry_per_proposal() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, entries) = write_scene_dataset(dir.path(), 2);
        let weights = gen_weights(&EncoderConfig::toy(), 1);
        let config = RunConfig::default();
        let out = run_oake(&manifest, &entries, &weights, &config).unwrap();
        assert_eq!(out.proposals, 4);
        assert_eq!(out.skipped, 0);
        assert_eq!(out.container.len(), 4);
        assert!(out.container.get("img0/prop1").is_some());
        let e = out.container.get("img1/prop0").unwrap();
        assert_eq!(e.dims(), &[32]);
    }

    #[test]
    fn oake_embeddings_match_direct_library_calls() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, entries) = write_scene_dataset(dir.path(), 1);
        let weights = gen_weights(&EncoderConfig::toy(), 1);
        let config = RunConfig::default();
        let out = run_oake(&manifest, &entries, &weights, &config).unwrap();

        let image = load_image(&manifest, &entries[0]).unwrap();
        let p = &entries[0].proposals[0];
        let size = ImageSize::new(64, 64).unwrap();
        let square = transform_proposal(&p.bbox, config.r, size).unwrap();
        let crop = crop_resize(&image, &square, 32, 32).unwrap();
        let mask = patch_overlap_mask(&p.bbox, &square, 32, 8).unwrap();
        let direct = encode_obj(&crop, &weights, &mask).unwrap();
        assert_eq!(out.container.get("img0/prop0").unwrap().as_f64(), direct);
    }

    #[test]
    fn f32_precision_writes_f32_entries() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, entries) = write_scene_dataset(dir.path(), 1);
        let weights = gen_weights(&EncoderConfig::toy(), 1);
        let config = RunConfig { precision: Precision::F32, ..Default::default() };
        let out = run_oake(&manifest, &entries, &weights, &config).unwrap();
        assert_eq!(out.container.get("img0/prop0").unwrap().dtype(), crate::io::container::Dtype::F32);
    }

    #[test]
    fn pl_run_produces_records_per_image() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, entries) = write_scene_dataset(dir.path(), 2);
        let weights = gen_weights(&EncoderConfig::toy(), 1);
        let table = gen_category_table(3, 32, 2, 2);
        let config = RunConfig::default();
        let out = run_pl(&manifest, &entries, &weights, &table, &config).unwrap();
        assert_eq!(out.records.len(), 2);
        for r in &out.records {
            for pl in &r.pls {
                assert!(pl.category.starts_with("novel"));
            }
        }
        let path = dir.path().join("pl.jsonl");
        write_pl_records(&out.records, &path).unwrap();
        let back = read_pl_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].pls.len(), out.records[0].pls.len());
    }

    #[test]
    fn losses_report_is_finite_and_gradients_pass() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, entries) = write_scene_dataset(dir.path(), 2);
        let weights = gen_weights(&EncoderConfig::toy(), 1);
        let table = gen_category_table(3, 32, 2, 2);
        let config = RunConfig::default();
        let oake = run_oake(&manifest, &entries, &weights, &config).unwrap();
        let report =
            run_losses(&manifest, &entries, &oake.container, &weights, &table, &config, 7).unwrap();
        assert!(report.total.is_finite());
        assert!(report.object > 0.0);
        assert!(report.block > 0.0);
        assert!(report.global > 0.0);
        assert_eq!(report.teacher_matched, 4);
        assert!(
            report.gradient_check.passed,
            "gradient check failed: {:?}",
            report.gradient_check
        );
        let expect_total = report.detection
            + config.w_o * report.object
            + config.w_b * report.block
            + config.w_g * report.global;
        assert!((report.total - expect_total).abs() < 1e-12);
    }

    #[test]
    fn eval_scores_perfect_pls_at_one() {
        let entries = vec![ManifestEntry {
            image_id: "0".into(),
            image: "unused".into(),
            size: [64, 64],
            proposals: vec![],
            annotations: vec![Annotation {
                bbox: BBox::new(10.0, 10.0, 30.0, 30.0).unwrap(),
                category: "novel0".into(),
            }],
        }];
        let records = vec![PlImageRecord {
            image_id: "0".into(),
            pls: vec![PlRecord {
                bbox: BBox::new(10.0, 10.0, 30.0, 30.0).unwrap(),
                category: "novel0".into(),
                score: 0.9,
            }],
        }];
        let report = run_eval(&records, &entries, None);
        assert_eq!(report.map50, Some(1.0));
        assert_eq!(report.macro_precision, Some(1.0));
        assert!((report.pl_per_image - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_on_empty_pl_file_yields_zeros() {
        let entries = vec![ManifestEntry {
            image_id: "0".into(),
            image: "unused".into(),
            size: [64, 64],
            proposals: vec![],
            annotations: vec![Annotation {
                bbox: BBox::new(10.0, 10.0, 30.0, 30.0).unwrap(),
                category: "novel0".into(),
            }],
        }];
        let report = run_eval(&[], &entries, None);
        assert_eq!(report.pl_total, 0);
        assert_eq!(report.pl_per_image, 0.0);
        assert_eq!(report.map50, Some(0.0));
        assert!(report.macro_precision.is_none());
    }

    #[test]
    fn proposals_are_labeled_by_iou_against_base_annotations() {
        let table = gen_category_table(3, 32, 2, 1);
        let annotations = vec![
            Annotation { bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), category: "base0".into() },
            Annotation { bbox: BBox::new(20.0, 20.0, 30.0, 30.0).unwrap(), category: "novel0".into() },
        ];
        let proposals = vec![
            Proposal::new(BBox::new(1.0, 0.0, 11.0, 10.0).unwrap(), 0.9).unwrap(),
            Proposal::new(BBox::new(20.0, 20.0, 30.0, 30.0).unwrap(), 0.9).unwrap(),
            Proposal::new(BBox::new(40.0, 40.0, 50.0, 50.0).unwrap(), 0.9).unwrap(),
        ];
        let labels = assign_labels(&scaled_proposals_orig(&proposals), &annotations, &table);
        assert_eq!(labels[0], RcnnLabel::Category(0));
        // A novel annotation never labels a proposal.
        assert_eq!(labels[1], RcnnLabel::Background);
        assert_eq!(labels[2], RcnnLabel::Background);
    }
}
