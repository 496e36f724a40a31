//! Box arithmetic, the adaptive proposal transform, block partitioning, and
//! attention-mask construction.
//!
//! All boxes are axis-aligned with the half-open convention
//! `[x1, x2) x [y1, y2)`: rectangles that only touch at a boundary do not
//! overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("degenerate box: ({x1}, {y1}, {x2}, {y2}) requires x1 < x2 and y1 < y2")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box coordinates must be finite")]
    NonFiniteBox,
    #[error("objectness {0} outside [0, 1]")]
    ObjectnessRange(f64),
    #[error("image size must be at least 1x1")]
    EmptyImage,
    #[error("scale ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("{width}x{height} image is not a multiple of the {block} block size; resize to {need_w}x{need_h} first")]
    PartitionMismatch { width: u32, height: u32, block: u32, need_w: u32, need_h: u32 },
    #[error("encoder resolution {resolution} is not divisible by patch size {patch}")]
    PatchGrid { resolution: usize, patch: usize },
    #[error("empty object mask: the proposal overlaps no patch cell")]
    EmptyObjectMask,
    #[error("mask shape {rows}x{cols} does not match the expected token count")]
    MaskShape { rows: usize, cols: usize },
}

/// Axis-aligned rectangle in image or feature coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeomError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeomError::NonFiniteBox);
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(GeomError::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Intersection area under the half-open convention.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeomError;

    fn try_from(v: [f64; 4]) -> Result<Self, GeomError> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> [f64; 4] {
        b.to_array()
    }
}

/// Candidate object box with its objectness score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f64,
}

impl Proposal {
    pub fn new(bbox: BBox, objectness: f64) -> Result<Self, GeomError> {
        if !(0.0..=1.0).contains(&objectness) {
            return Err(GeomError::ObjectnessRange(objectness));
        }
        Ok(Self { bbox, objectness })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeomError> {
        if width == 0 || height == 0 {
            return Err(GeomError::EmptyImage);
        }
        Ok(Self { width, height })
    }
}

/// Dense boolean matrix; rows are attention sources, columns are targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self, GeomError> {
        if data.len() != rows * cols {
            return Err(GeomError::MaskShape { rows, cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.cols + c] = value;
    }

    /// Entries of a single row, in column order.
    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Squares a proposal to side `sqrt(r * h * w)` around its center, translating
/// (never shrinking) the square back into the image when it sticks out. If the
/// ideal square cannot fit at all, its side is clamped to `min(W, H)` first.
pub fn transform_proposal(p: &BBox, r: f64, img: ImageSize) -> Result<BBox, GeomError> {
    if r <= 0.0 || !r.is_finite() {
        return Err(GeomError::NonPositiveRatio(r));
    }
    fit_square(p.center(), (r * p.height() * p.width()).sqrt(), img)
}

/// Square of the given side around a center, clamped to `min(W, H)` and
/// translated per axis so it lies fully inside the image.
pub fn fit_square(center: (f64, f64), side: f64, img: ImageSize) -> Result<BBox, GeomError> {
    let (w, h) = (img.width as f64, img.height as f64);
    let side = side.min(w.min(h));
    let (x1, x2) = shift_into(center.0 - side / 2.0, side, w);
    let (y1, y2) = shift_into(center.1 - side / 2.0, side, h);
    BBox::new(x1, y1, x2, y2)
}

/// Minimal translation of an interval of length `len` into `[0, limit]`.
/// Flush intervals take the boundary coordinate exactly, so rounding can
/// never push an edge past the image.
fn shift_into(start: f64, len: f64, limit: f64) -> (f64, f64) {
    if start < 0.0 {
        (0.0, len)
    } else if start + len > limit {
        (limit - len, limit)
    } else {
        (start, start + len)
    }
}

/// Tiles a `W x H` image into `R x R` blocks, row-major. Both dimensions must
/// be exact multiples of `R`.
pub fn partition_blocks(img: ImageSize, block: u32) -> Result<Vec<BBox>, GeomError> {
    if block == 0 {
        return Err(GeomError::EmptyImage);
    }
    if !img.width.is_multiple_of(block) || !img.height.is_multiple_of(block) {
        return Err(GeomError::PartitionMismatch {
            width: img.width,
            height: img.height,
            block,
            need_w: img.width.div_ceil(block) * block,
            need_h: img.height.div_ceil(block) * block,
        });
    }
    let (nx, ny) = (img.width / block, img.height / block);
    let s = block as f64;
    let mut blocks = Vec::with_capacity((nx * ny) as usize);
    for by in 0..ny {
        for bx in 0..nx {
            let (x1, y1) = (bx as f64 * s, by as f64 * s);
            blocks.push(BBox::new(x1, y1, x1 + s, y1 + s).expect("block sides are positive"));
        }
    }
    Ok(blocks)
}

/// Marks the patch cells of the crop grid that the original proposal `p`
/// covers once `p` is mapped into the crop frame of its transformed square
/// `p_sq`. "Covers" means positive-area intersection. The returned mask has
/// one row of `(resolution/patch)^2 + 1` entries; the trailing entry is the
/// summary-token position and is always 0.
pub fn patch_overlap_mask(
    p: &BBox,
    p_sq: &BBox,
    resolution: usize,
    patch: usize,
) -> Result<BinaryMask, GeomError> {
    if patch == 0 || !resolution.is_multiple_of(patch) {
        return Err(GeomError::PatchGrid { resolution, patch });
    }
    let grid = resolution / patch;
    let scale = resolution as f64 / p_sq.width();
    let mx1 = (p.x1() - p_sq.x1()) * scale;
    let my1 = (p.y1() - p_sq.y1()) * scale;
    let mx2 = (p.x2() - p_sq.x1()) * scale;
    let my2 = (p.y2() - p_sq.y1()) * scale;

    let mut data = vec![false; grid * grid + 1];
    let cell = patch as f64;
    let mut any = false;
    for gy in 0..grid {
        for gx in 0..grid {
            let cx1 = gx as f64 * cell;
            let cy1 = gy as f64 * cell;
            let overlaps = mx1 < cx1 + cell && mx2 > cx1 && my1 < cy1 + cell && my2 > cy1;
            if overlaps {
                data[gy * grid + gx] = true;
                any = true;
            }
        }
    }
    if !any {
        return Err(GeomError::EmptyObjectMask);
    }
    BinaryMask::new(1, grid * grid + 1, data)
}

/// Expands a one-row object mask `m` into the full attention mask: existing
/// tokens attend to each other and never to the appended object token; the
/// object token attends to its masked patches and itself.
pub fn build_attention_mask(m: &BinaryMask) -> BinaryMask {
    let n = m.cols();
    let mut out = BinaryMask::filled(n + 1, n + 1, false);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, true);
        }
    }
    for c in 0..n {
        out.set(n, c, m.get(0, c));
    }
    out.set(n, n, true);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn iou_identical_is_one() {
        let a = bx(1.0, 2.0, 4.0, 6.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(2.0, 2.0, 3.0, 3.0)), 0.0);
        // Boundary touch is not overlap under the half-open convention.
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // inter = 1x2 = 2, union = 4 + 4 - 2 = 6
        let v = iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 0.0, 3.0, 2.0));
        assert!((v - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn transform_centered_no_clipping() {
        // 9 wide, 4 tall, r = 1 -> side sqrt(36) = 6
        let img = ImageSize::new(100, 100).unwrap();
        let p = bx(45.5, 48.0, 54.5, 52.0);
        let sq = transform_proposal(&p, 1.0, img).unwrap();
        assert!((sq.width() - 6.0).abs() < 1e-12);
        assert!((sq.height() - 6.0).abs() < 1e-12);
        let (cx, cy) = sq.center();
        assert!((cx - 50.0).abs() < 1e-12);
        assert!((cy - 50.0).abs() < 1e-12);
    }

    #[test]
    fn transform_translates_at_border() {
        let img = ImageSize::new(100, 100).unwrap();
        let p = bx(0.0, 0.0, 4.0, 9.0);
        let sq = transform_proposal(&p, 1.0, img).unwrap();
        // Raw square (-1, 1.5, 5, 7.5) shifts right to (0, 1.5, 6, 7.5).
        assert!((sq.x1() - 0.0).abs() < 1e-12);
        assert!((sq.y1() - 1.5).abs() < 1e-12);
        assert!((sq.x2() - 6.0).abs() < 1e-12);
        assert!((sq.y2() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn transform_side_matches_closed_form() {
        let img = ImageSize::new(200, 200).unwrap();
        let p = bx(50.0, 50.0, 60.0, 60.0);
        let sq = transform_proposal(&p, 1.5, img).unwrap();
        let expected = (1.5f64 * 10.0 * 10.0).sqrt();
        assert!((sq.width() - expected).abs() < 1e-12);
    }

    #[test]
    fn transform_clamps_oversized_square() {
        let img = ImageSize::new(50, 30).unwrap();
        let p = bx(0.0, 0.0, 49.0, 29.0);
        let sq = transform_proposal(&p, 4.0, img).unwrap();
        assert!((sq.width() - 30.0).abs() < 1e-12);
        assert!(sq.x1() >= 0.0 && sq.y1() >= 0.0);
        assert!(sq.x2() <= 50.0 && sq.y2() <= 30.0);
    }

    #[test]
    fn transform_square_identity() {
        // r = 1 on a centered square proposal keeps the box.
        let img = ImageSize::new(64, 64).unwrap();
        let p = bx(24.0, 24.0, 40.0, 40.0);
        let sq = transform_proposal(&p, 1.0, img).unwrap();
        for (a, b) in sq.to_array().iter().zip(p.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_single_block() {
        let img = ImageSize::new(224, 224).unwrap();
        let blocks = partition_blocks(img, 224).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].to_array(), [0.0, 0.0, 224.0, 224.0]);
    }

    #[test]
    fn partition_two_blocks_row_major() {
        let img = ImageSize::new(448, 224).unwrap();
        let blocks = partition_blocks(img, 224).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].to_array(), [0.0, 0.0, 224.0, 224.0]);
        assert_eq!(blocks[1].to_array(), [224.0, 0.0, 448.0, 224.0]);
    }

    #[test]
    fn partition_tiles_exactly() {
        let img = ImageSize::new(672, 448).unwrap();
        let blocks = partition_blocks(img, 224).unwrap();
        assert_eq!(blocks.len(), 6);
        let total: f64 = blocks.iter().map(BBox::area).sum();
        assert!((total - 672.0 * 448.0).abs() < 1e-9);
        for i in 0..blocks.len() {
            for j in i + 1..blocks.len() {
                assert_eq!(iou(&blocks[i], &blocks[j]), 0.0);
            }
        }
    }

    #[test]
    fn partition_rejects_non_multiple() {
        let img = ImageSize::new(300, 224).unwrap();
        let err = partition_blocks(img, 224).unwrap_err();
        match err {
            GeomError::PartitionMismatch { need_w, need_h, .. } => {
                assert_eq!((need_w, need_h), (448, 224));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn overlap_mask_full_coverage() {
        let p = bx(10.0, 10.0, 20.0, 20.0);
        let m = patch_overlap_mask(&p, &p, 8, 4).unwrap();
        assert_eq!(m.cols(), 5);
        assert_eq!(m.row(0), &[true, true, true, true, false]);
    }

    #[test]
    fn overlap_mask_quadrant() {
        // p maps exactly onto the top-left quadrant of a 2x2 grid.
        let sq = bx(0.0, 0.0, 16.0, 16.0);
        let p = bx(0.0, 0.0, 8.0, 8.0);
        let m = patch_overlap_mask(&p, &sq, 8, 4).unwrap();
        assert_eq!(m.row(0), &[true, false, false, false, false]);
    }

    #[test]
    fn overlap_mask_thin_strip() {
        // A strip down the left half crosses both left cells.
        let sq = bx(0.0, 0.0, 16.0, 16.0);
        let p = bx(1.0, 2.0, 4.0, 14.0);
        let m = patch_overlap_mask(&p, &sq, 8, 4).unwrap();
        assert_eq!(m.row(0), &[true, false, true, false, false]);
    }

    #[test]
    fn overlap_mask_monotone_under_enlargement() {
        let sq = bx(0.0, 0.0, 32.0, 32.0);
        let small = bx(9.0, 9.0, 15.0, 15.0);
        let large = bx(5.0, 6.0, 20.0, 22.0);
        let ms = patch_overlap_mask(&small, &sq, 16, 4).unwrap();
        let ml = patch_overlap_mask(&large, &sq, 16, 4).unwrap();
        for c in 0..ms.cols() {
            if ms.get(0, c) {
                assert!(ml.get(0, c), "enlarging p must not clear cell {c}");
            }
        }
    }

    #[test]
    fn attention_mask_matches_block_structure() {
        let m = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        let full = build_attention_mask(&m);
        assert_eq!(full.row(0), &[true, true, false]);
        assert_eq!(full.row(1), &[true, true, false]);
        assert_eq!(full.row(2), &[true, false, true]);
    }

    #[test]
    fn attention_mask_self_only_object_row() {
        let m = BinaryMask::new(1, 4, vec![false, false, false, false]).unwrap();
        let full = build_attention_mask(&m);
        assert_eq!(full.row(4), &[false, false, false, false, true]);
    }

    #[test]
    fn attention_mask_random_structure() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(2..12);
            let mut bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            bits[n - 1] = false; // summary-token slot
            let m = BinaryMask::new(1, n, bits.clone()).unwrap();
            let full = build_attention_mask(&m);
            for r in 0..n {
                for c in 0..n {
                    assert!(full.get(r, c));
                }
                assert!(!full.get(r, n));
            }
            for c in 0..n {
                assert_eq!(full.get(n, c), bits[c]);
            }
            assert!(full.get(n, n));
        }
    }
}
