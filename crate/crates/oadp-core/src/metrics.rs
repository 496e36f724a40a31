//! Evaluation primitives: per-category classification precision (macro and
//! truth-count weighted), single-threshold average precision with all-point
//! interpolation, and pseudo-label statistics.

use crate::geometry::{iou, BBox};
use crate::pseudolabel::PlImageRecord;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no classification records")]
    EmptyRecords,
}

/// One classified box: what it was, what the classifier said.
#[derive(Debug, Clone)]
pub struct ClassificationRecord {
    pub truth: String,
    pub predicted: String,
}

/// Per-category precision grouped by the true category: correct / total among
/// records whose truth is that category.
fn per_category_precision(
    records: &[ClassificationRecord],
) -> Result<BTreeMap<&str, (usize, usize)>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = counts.entry(r.truth.as_str()).or_insert((0, 0));
        e.1 += 1;
        if r.truth == r.predicted {
            e.0 += 1;
        }
    }
    Ok(counts)
}

/// Unweighted mean of per-category precision.
pub fn macro_precision(records: &[ClassificationRecord]) -> Result<f64, MetricsError> {
    let counts = per_category_precision(records)?;
    let sum: f64 = counts.values().map(|&(c, t)| c as f64 / t as f64).sum();
    Ok(sum / counts.len() as f64)
}

/// Per-category precision weighted by each category's truth count.
pub fn weighted_precision(records: &[ClassificationRecord]) -> Result<f64, MetricsError> {
    let counts = per_category_precision(records)?;
    let total: usize = counts.values().map(|&(_, t)| t).sum();
    let sum: f64 = counts.values().map(|&(c, t)| (c as f64 / t as f64) * t as f64).sum();
    Ok(sum / total as f64)
}

#[derive(Debug, Clone)]
pub struct GtBox {
    pub bbox: BBox,
    pub category: String,
}

#[derive(Debug, Clone)]
pub struct PredBox {
    pub bbox: BBox,
    pub category: String,
    pub score: f64,
}

/// Ground truth and predictions of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageDetections {
    pub truths: Vec<GtBox>,
    pub preds: Vec<PredBox>,
}

const AP_IOU: f64 = 0.5;

/// Average precision for one category at IoU 0.5: predictions greedily match
/// unmatched truths in descending score (highest IoU wins, lower truth index
/// on ties), then the all-point interpolated area under precision-recall.
/// `None` when the category has no ground truth.
pub fn ap50(records: &[ImageDetections], category: &str) -> Option<f64> {
    let total_gt: usize = records
        .iter()
        .map(|img| img.truths.iter().filter(|t| t.category == category).count())
        .sum();
    if total_gt == 0 {
        return None;
    }

    // (image index, pred index, score), globally sorted by score descending
    // with input order breaking ties.
    let mut preds: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, img) in records.iter().enumerate() {
        for (pi, p) in img.preds.iter().enumerate() {
            if p.category == category {
                preds.push((ii, pi, p.score));
            }
        }
    }
    preds.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then((a.0, a.1).cmp(&(b.0, b.1))));

    let mut matched: Vec<Vec<bool>> =
        records.iter().map(|img| vec![false; img.truths.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(preds.len());
    for (ii, pi, _) in preds {
        let img = &records[ii];
        let pbox = &img.preds[pi].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in img.truths.iter().enumerate() {
            if t.category != category || matched[ii][ti] {
                continue;
            }
            let overlap = iou(pbox, &t.bbox);
            if overlap >= AP_IOU && best.map(|(_, b)| overlap > b).unwrap_or(true) {
                best = Some((ti, overlap));
            }
        }
        match best {
            Some((ti, _)) => {
                matched[ii][ti] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }

    // Area under the precision envelope.
    let mut suffix_max = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for i in (0..curve.len()).rev() {
        running = running.max(curve[i].1);
        suffix_max[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in curve.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * suffix_max[i];
            prev_recall = recall;
        }
    }
    Some(ap)
}

/// AP per category (categories with ground truth only) and their mean.
pub fn map50(records: &[ImageDetections]) -> (BTreeMap<String, f64>, Option<f64>) {
    let mut categories: Vec<String> = records
        .iter()
        .flat_map(|img| img.truths.iter().map(|t| t.category.clone()))
        .collect();
    categories.sort();
    categories.dedup();
    let per: BTreeMap<String, f64> = categories
        .into_iter()
        .filter_map(|c| ap50(records, &c).map(|ap| (c, ap)))
        .collect();
    let mean = if per.is_empty() {
        None
    } else {
        Some(per.values().sum::<f64>() / per.len() as f64)
    };
    (per, mean)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PlStats {
    pub images: usize,
    pub total: usize,
    pub mean_per_image: f64,
    pub per_category: BTreeMap<String, usize>,
}

/// Count statistics over pseudo-label records.
pub fn pl_stats(records: &[PlImageRecord]) -> PlStats {
    let total: usize = records.iter().map(|r| r.pls.len()).sum();
    let mut per_category = BTreeMap::new();
    for r in records {
        for pl in &r.pls {
            *per_category.entry(pl.category.clone()).or_insert(0) += 1;
        }
    }
    PlStats {
        images: records.len(),
        total,
        mean_per_image: if records.is_empty() { 0.0 } else { total as f64 / records.len() as f64 },
        per_category,
    }
}

/// Aggregate report emitted by the evaluation command.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub macro_precision: Option<f64>,
    pub weighted_precision: Option<f64>,
    pub ap50_per_category: BTreeMap<String, f64>,
    pub map50: Option<f64>,
    pub pl_per_image: f64,
    pub pl_total: usize,
}
