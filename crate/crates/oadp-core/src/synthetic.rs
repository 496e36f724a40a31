//! Deterministic generators for desk-scale experiments: seeded encoder
//! weights, near-orthogonal category tables, and synthetic scenes with
//! planted pattern-coded objects and adjacent distractors.

use crate::classify::{Category, CategoryTable, Split};
use crate::encoder::{EncoderConfig, EncoderWeights, LayerWeights};
use crate::geometry::{iou, BBox, ImageSize, Proposal};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Distinct fill patterns available to scenes.
pub const PATTERN_COUNT: usize = 6;

const PALETTE: [[f64; 3]; 3] = [[0.90, 0.15, 0.15], [0.15, 0.90, 0.15], [0.15, 0.15, 0.90]];

const BACKGROUND: f64 = 0.5;
const NOISE_AMPLITUDE: f64 = 0.01;

/// Category-coded fill color at local pattern coordinates (pixels relative to
/// the rectangle origin, so the pattern travels with its box). Categories
/// pair up per palette color and differ by stripe period (4px vs 8px), which
/// makes the patterns scale-sensitive: resampling a crop shifts the apparent
/// period and can alias one category of a pair into the other.
pub fn pattern_pixel(category: usize, x: f64, y: f64) -> [f64; 3] {
    let category = category % PATTERN_COUNT;
    let base = PALETTE[category / 2];
    let period = if category.is_multiple_of(2) { 4.0 } else { 8.0 };
    let phase = match category / 2 {
        0 => x,
        1 => y,
        _ => x + y,
    };
    let stripe = if ((phase / period).floor() as i64).rem_euclid(2) == 0 { 1.0 } else { 0.55 };
    [base[0] * stripe, base[1] * stripe, base[2] * stripe]
}

/// A rectangle painted with a category-coded pattern.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SceneRect {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: usize,
}

/// Deterministic description of a synthetic image: planted objects,
/// distractor rectangles, and the seed driving noise and proposal jitter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub objects: Vec<SceneRect>,
    #[serde(default)]
    pub distractors: Vec<SceneRect>,
}

impl SceneSpec {
    pub fn image_size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height).expect("scene dimensions are positive")
    }
}

/// A rendered scene: the image, jittered proposals (objectness = IoU with the
/// planted box), and the planted ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Tensor,
    pub proposals: Vec<Proposal>,
    pub truths: Vec<SceneRect>,
}

/// Renders the image only: background, objects, then distractors, plus a
/// low-amplitude seeded noise field that does not depend on the rectangles.
pub fn render_scene(spec: &SceneSpec) -> Tensor {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut img = Tensor::from_parts(vec![h, w, 3], vec![BACKGROUND; h * w * 3]);
    for rect in spec.objects.iter().chain(&spec.distractors) {
        paint(&mut img, rect);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    for v in img.data_mut() {
        *v = (*v + rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE)).clamp(0.0, 1.0);
    }
    img
}

fn paint(img: &mut Tensor, rect: &SceneRect) {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let b = rect.bbox;
    for py in 0..h {
        for px in 0..w {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            if cx >= b.x1() && cx < b.x2() && cy >= b.y1() && cy < b.y2() {
                let color = pattern_pixel(rect.category, cx - b.x1(), cy - b.y1());
                for ch in 0..3 {
                    img.set3(py, px, ch, color[ch]);
                }
            }
        }
    }
}

/// Maximum proposal jitter as a fraction of the box side. A pure translation
/// of at most 5% per axis keeps IoU with the planted box above 0.8.
pub const JITTER_FRACTION: f64 = 0.05;

/// Renders the scene and derives proposals by jittering each planted box.
pub fn gen_scene(spec: &SceneSpec) -> Scene {
    let image = render_scene(spec);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let size = spec.image_size();
    let (w, h) = (size.width as f64, size.height as f64);
    let proposals = spec
        .objects
        .iter()
        .map(|rect| {
            let b = rect.bbox;
            let dx = rng.gen_range(-JITTER_FRACTION..JITTER_FRACTION) * b.width();
            let dy = rng.gen_range(-JITTER_FRACTION..JITTER_FRACTION) * b.height();
            let dx = dx.clamp(-b.x1(), w - b.x2());
            let dy = dy.clamp(-b.y1(), h - b.y2());
            let shifted = BBox::new(b.x1() + dx, b.y1() + dy, b.x2() + dx, b.y2() + dy)
                .expect("translation preserves validity");
            let objectness = iou(&shifted, &b);
            Proposal::new(shifted, objectness).expect("iou lies in [0, 1]")
        })
        .collect();
    Scene { image, proposals, truths: spec.objects.clone() }
}

fn uniform_tensor(rng: &mut ChaCha20Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_parts(shape, data)
}

/// Seeded encoder weights: every tensor drawn uniform in `[-a, a]` with
/// `a = 1/sqrt(fan_in)` (the input dimension of the owning linear map;
/// positional embeddings and the summary seed use the token width). Norm
/// gains start at 1, norm biases at 0. Draw order is fixed, so a seed fully
/// determines the weights.
pub fn gen_weights(config: &EncoderConfig, seed: u64) -> EncoderWeights {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = config.token_dim;
    let n = config.n_tokens();
    let pdim = config.patch * config.patch * 3;
    let ones = Tensor::from_parts(vec![d], vec![1.0; d]);
    let zeros = Tensor::zeros(vec![d]);

    let patch_proj = uniform_tensor(&mut rng, vec![pdim, d], pdim);
    let patch_bias = uniform_tensor(&mut rng, vec![d], pdim);
    let pos_embed = uniform_tensor(&mut rng, vec![n, d], d);
    let cls_seed = uniform_tensor(&mut rng, vec![d], d);
    let layers = (0..config.layers)
        .map(|_| LayerWeights {
            ln1_gain: ones.clone(),
            ln1_bias: zeros.clone(),
            w_q: uniform_tensor(&mut rng, vec![d, d], d),
            b_q: uniform_tensor(&mut rng, vec![d], d),
            w_k: uniform_tensor(&mut rng, vec![d, d], d),
            b_k: uniform_tensor(&mut rng, vec![d], d),
            w_v: uniform_tensor(&mut rng, vec![d, d], d),
            b_v: uniform_tensor(&mut rng, vec![d], d),
            w_o: uniform_tensor(&mut rng, vec![d, d], d),
            b_o: uniform_tensor(&mut rng, vec![d], d),
            ln2_gain: ones.clone(),
            ln2_bias: zeros.clone(),
            mlp_w1: uniform_tensor(&mut rng, vec![d, 4 * d], d),
            mlp_b1: uniform_tensor(&mut rng, vec![4 * d], d),
            mlp_w2: uniform_tensor(&mut rng, vec![4 * d, d], 4 * d),
            mlp_b2: uniform_tensor(&mut rng, vec![d], 4 * d),
        })
        .collect();
    let final_gain = ones;
    let final_bias = zeros;
    let out_proj = uniform_tensor(&mut rng, vec![d, config.embed_dim], d);

    EncoderWeights {
        config: *config,
        patch_proj,
        patch_bias,
        pos_embed,
        cls_seed,
        layers,
        final_gain,
        final_bias,
        out_proj,
    }
}

/// Mutually orthogonal unit vectors via Gram-Schmidt on seeded draws, so
/// cosine classification against the table is well conditioned. Needs
/// `dim >= n_base + n_novel + 1` (one extra vector for the background).
pub fn gen_category_table(seed: u64, dim: usize, n_base: usize, n_novel: usize) -> CategoryTable {
    let total = n_base + n_novel + 1;
    assert!(dim >= total, "need dim >= {total} for {total} orthogonal embeddings");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(total);
    while basis.len() < total {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    let categories = (0..n_base + n_novel)
        .map(|i| Category {
            name: if i < n_base { format!("base{i}") } else { format!("novel{}", i - n_base) },
            split: if i < n_base { Split::Base } else { Split::Novel },
            embedding: basis[i].clone(),
        })
        .collect();
    CategoryTable::new(categories, basis[total - 1].clone()).expect("generated table is valid")
}

/// Scene builder for the distractor experiments: one square object in the
/// middle region and one larger confuser of a different category placed a
/// few pixels away on a random side.
pub fn distractor_scene_spec(seed: u64, n_categories: usize) -> SceneSpec {
    assert!((2..=PATTERN_COUNT).contains(&n_categories));
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(7));
    let (w, h) = (96u32, 96u32);
    let category = rng.gen_range(0..n_categories);
    let mut confuser = rng.gen_range(0..n_categories);
    if confuser == category {
        confuser = (confuser + 1) % n_categories;
    }

    let side_len = rng.gen_range(15.0..19.0);
    let cx = 48.0 + rng.gen_range(-6.0..6.0);
    let cy = 48.0 + rng.gen_range(-6.0..6.0);
    let half = side_len / 2.0;
    let object =
        BBox::new(cx - half, cy - half, cx + half, cy + half).expect("object box is valid");

    let gap = rng.gen_range(1.0..3.0);
    let dw = side_len * rng.gen_range(1.1..1.5);
    let dh = side_len * rng.gen_range(1.1..1.5);
    let side = rng.gen_range(0..4u8);
    let (dx1, dy1) = match side {
        0 => (object.x2() + gap, cy - dh / 2.0),
        1 => (object.x1() - gap - dw, cy - dh / 2.0),
        2 => (cx - dw / 2.0, object.y2() + gap),
        _ => (cx - dw / 2.0, object.y1() - gap - dh),
    };
    let dx1 = dx1.clamp(0.0, w as f64 - dw);
    let dy1 = dy1.clamp(0.0, h as f64 - dh);
    let distractor =
        BBox::new(dx1, dy1, dx1 + dw, dy1 + dh).expect("distractor box is valid");

    SceneSpec {
        width: w,
        height: h,
        seed,
        objects: vec![SceneRect { bbox: object, category }],
        distractors: vec![SceneRect { bbox: distractor, category: confuser }],
    }
}

pub fn read_scene_specs(path: &std::path::Path) -> Result<Vec<SceneSpec>, crate::io::FormatError> {
    let text = std::fs::read_to_string(path)?;
    let mut specs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: SceneSpec = serde_json::from_str(line)
            .map_err(|source| crate::io::FormatError::Json { line: i + 1, source })?;
        specs.push(spec);
    }
    Ok(specs)
}

pub fn write_scene_specs(
    specs: &[SceneSpec],
    path: &std::path::Path,
) -> Result<(), crate::io::FormatError> {
    let mut out = String::new();
    for s in specs {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    crate::io::atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_cls, encode_obj};
    use crate::geometry::{patch_overlap_mask, transform_proposal};

    #[test]
    fn weights_are_seed_deterministic() {
        let cfg = EncoderConfig::toy();
        assert_eq!(gen_weights(&cfg, 5), gen_weights(&cfg, 5));
        assert_ne!(gen_weights(&cfg, 5), gen_weights(&cfg, 6));
    }

    #[test]
    fn weight_draws_pass_mean_sanity() {
        // pos_embed has n_tokens * token_dim >= 1000 draws at toy scale;
        // the sample mean of uniform[-a, a] should sit within 5 sigma of 0.
        let cfg = EncoderConfig::toy();
        let w = gen_weights(&cfg, 11);
        let values = w.pos_embed.data();
        assert!(values.len() >= 1000);
        let a = 1.0 / (cfg.token_dim as f64).sqrt();
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let sigma_mean = a / (3.0 * values.len() as f64).sqrt();
        assert!(mean.abs() < 5.0 * sigma_mean, "mean {mean} vs bound {}", 5.0 * sigma_mean);
    }

    #[test]
    fn category_table_is_orthonormal() {
        let t = gen_category_table(3, 16, 3, 2);
        assert_eq!(t.categories.len(), 5);
        let mut all: Vec<&[f64]> = t.categories.iter().map(|c| c.embedding.as_slice()).collect();
        all.push(&t.bg_embedding);
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let dot: f64 = a.iter().zip(*b).map(|(x, y)| x * y).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scene_render_is_deterministic() {
        let spec = distractor_scene_spec(42, 4);
        let a = gen_scene(&spec);
        let b = gen_scene(&spec);
        assert_eq!(a.image, b.image);
        assert_eq!(a.proposals, b.proposals);
    }

    #[test]
    fn single_object_proposal_has_high_objectness() {
        for seed in 0..20 {
            let spec = SceneSpec {
                width: 64,
                height: 64,
                seed,
                objects: vec![SceneRect {
                    bbox: BBox::new(20.0, 18.0, 40.0, 42.0).unwrap(),
                    category: 1,
                }],
                distractors: vec![],
            };
            let scene = gen_scene(&spec);
            assert_eq!(scene.proposals.len(), 1);
            // 5% translation jitter bounds IoU well above 0.5.
            assert!(scene.proposals[0].objectness >= 0.5);
        }
    }

    #[test]
    fn masked_embedding_ignores_distractor_pattern() {
        // The object box is chosen so its mapped footprint is exactly the
        // central patch cells of the crop; the distractor sits 4px away,
        // beyond bilinear reach of any mask cell. At L=1 the object-token
        // output must be identical across distractor patterns, while the
        // plain summary embedding must move.
        let cfg = EncoderConfig { layers: 1, ..EncoderConfig::toy() };
        let w = gen_weights(&cfg, 3);
        let object = SceneRect { bbox: BBox::new(40.0, 40.0, 56.0, 56.0).unwrap(), category: 0 };
        let make = |confuser: usize| SceneSpec {
            width: 96,
            height: 96,
            seed: 9,
            objects: vec![object],
            distractors: vec![SceneRect {
                bbox: BBox::new(60.0, 40.0, 76.0, 56.0).unwrap(),
                category: confuser,
            }],
        };
        let img_a = render_scene(&make(1));
        let img_b = render_scene(&make(2));

        // r = 4 doubles the square side: crop (32..64), object in the middle.
        let size = ImageSize::new(96, 96).unwrap();
        let sq = transform_proposal(&object.bbox, 4.0, size).unwrap();
        let crop_a = crate::tensor::crop_resize(&img_a, &sq, 32, 32).unwrap();
        let crop_b = crate::tensor::crop_resize(&img_b, &sq, 32, 32).unwrap();
        let m = patch_overlap_mask(&object.bbox, &sq, 32, 8).unwrap();

        let e_a = encode_obj(&crop_a, &w, &m).unwrap();
        let e_b = encode_obj(&crop_b, &w, &m).unwrap();
        let obj_diff = e_a.iter().zip(&e_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(obj_diff < 1e-9, "object embedding moved by {obj_diff}");

        let c_a = encode_cls(&crop_a, &w).unwrap();
        let c_b = encode_cls(&crop_b, &w).unwrap();
        let cls_diff = c_a.iter().zip(&c_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(cls_diff > 1e-6, "summary embedding should react to the distractor");
    }

    #[test]
    fn scene_specs_round_trip_as_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let specs: Vec<SceneSpec> = (0..3).map(|s| distractor_scene_spec(s, 4)).collect();
        write_scene_specs(&specs, &path).unwrap();
        let back = read_scene_specs(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].seed, specs[1].seed);
        assert_eq!(back[2].objects[0].category, specs[2].objects[0].category);
    }
}
