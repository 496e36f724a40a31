//! CLIP-style ViT visual encoder at configurable toy scale, plus its
//! object-aware variant: an appended object token that attends only to the
//! patch cells covered by the original proposal.
//!
//! The default forward pass is the full pre-norm block
//! (norm -> attention -> residual, norm -> MLP -> residual) so that real
//! checkpoint layouts stay loadable. `attention_only` switches every layer to
//! the bare residual attention form `softmax(log M + Q K^T) V + X`, which is
//! what the hand-computed oracles check.

use crate::geometry::{build_attention_mask, BinaryMask, GeomError};
use crate::io::container::{Dtype, TensorContainer};
use crate::tensor::{layer_norm, masked_softmax, Tensor, TensorError};
use std::path::Path;
use thiserror::Error;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("crop must be {expected}x{expected}x3, got {got:?}")]
    CropShape { expected: usize, got: Vec<usize> },
    #[error("weight tensor '{name}' has shape {got:?}, expected {expected:?}")]
    WeightShape { name: String, got: Vec<usize>, expected: Vec<usize> },
    #[error("object mask has {got} entries, expected {expected}")]
    MaskLen { got: usize, expected: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("weight file: {0}")]
    Format(#[from] crate::io::FormatError),
}

/// Shape of the encoder: input resolution, patch size, token width, head
/// count, layer count, and output embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub resolution: usize,
    pub patch: usize,
    pub token_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub embed_dim: usize,
    /// Reproduce the bare residual attention layer (no norms, no MLP, no
    /// output projection, unscaled scores).
    pub attention_only: bool,
}

impl EncoderConfig {
    /// Desk-scale default: every invariant check runs in milliseconds.
    pub fn toy() -> Self {
        Self {
            resolution: 32,
            patch: 8,
            token_dim: 64,
            heads: 4,
            layers: 2,
            embed_dim: 32,
            attention_only: false,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.patch == 0 || !self.resolution.is_multiple_of(self.patch) {
            return Err(EncoderError::Config(format!(
                "resolution {} must be a positive multiple of patch {}",
                self.resolution, self.patch
            )));
        }
        if self.heads == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return Err(EncoderError::Config(format!(
                "token_dim {} must be a positive multiple of heads {}",
                self.token_dim, self.heads
            )));
        }
        if self.layers == 0 || self.embed_dim == 0 {
            return Err(EncoderError::Config("layers and embed_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.resolution / self.patch
    }

    /// Token count including the summary token: `(R/patch)^2 + 1`.
    pub fn n_tokens(&self) -> usize {
        self.grid() * self.grid() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

/// Full parameter set of the encoder. Immutable after construction; forward
/// passes never mutate, so shared concurrent use is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub patch_proj: Tensor,
    pub patch_bias: Tensor,
    pub pos_embed: Tensor,
    pub cls_seed: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub out_proj: Tensor,
}

impl EncoderWeights {
    pub fn validate(&self) -> Result<(), EncoderError> {
        self.config.validate()?;
        let d = self.config.token_dim;
        let n = self.config.n_tokens();
        let pdim = self.config.patch * self.config.patch * 3;
        let check = |name: &str, t: &Tensor, expected: Vec<usize>| {
            if t.shape() != expected.as_slice() {
                Err(EncoderError::WeightShape {
                    name: name.into(),
                    got: t.shape().to_vec(),
                    expected,
                })
            } else {
                Ok(())
            }
        };
        check("patch_proj", &self.patch_proj, vec![pdim, d])?;
        check("patch_bias", &self.patch_bias, vec![d])?;
        check("pos_embed", &self.pos_embed, vec![n, d])?;
        check("cls_seed", &self.cls_seed, vec![d])?;
        if self.layers.len() != self.config.layers {
            return Err(EncoderError::Config(format!(
                "{} layer blocks for a {}-layer config",
                self.layers.len(),
                self.config.layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers/{i}/{s}");
            check(&p("ln1/gain"), &l.ln1_gain, vec![d])?;
            check(&p("ln1/bias"), &l.ln1_bias, vec![d])?;
            for (name, t) in
                [("attn/w_q", &l.w_q), ("attn/w_k", &l.w_k), ("attn/w_v", &l.w_v), ("attn/w_o", &l.w_o)]
            {
                check(&p(name), t, vec![d, d])?;
            }
            for (name, t) in
                [("attn/b_q", &l.b_q), ("attn/b_k", &l.b_k), ("attn/b_v", &l.b_v), ("attn/b_o", &l.b_o)]
            {
                check(&p(name), t, vec![d])?;
            }
            check(&p("ln2/gain"), &l.ln2_gain, vec![d])?;
            check(&p("ln2/bias"), &l.ln2_bias, vec![d])?;
            check(&p("mlp/w1"), &l.mlp_w1, vec![d, 4 * d])?;
            check(&p("mlp/b1"), &l.mlp_b1, vec![4 * d])?;
            check(&p("mlp/w2"), &l.mlp_w2, vec![4 * d, d])?;
            check(&p("mlp/b2"), &l.mlp_b2, vec![d])?;
        }
        check("final_norm/gain", &self.final_gain, vec![d])?;
        check("final_norm/bias", &self.final_bias, vec![d])?;
        check("out_proj", &self.out_proj, vec![d, self.config.embed_dim])?;
        Ok(())
    }
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let mut out = crate::tensor::matmul(x, w)?;
    let (n, d) = (out.shape()[0], out.shape()[1]);
    for r in 0..n {
        for c in 0..d {
            let v = out.at2(r, c) + b.data()[c];
            out.set2(r, c, v);
        }
    }
    Ok(out)
}

fn quick_gelu(x: f64) -> f64 {
    x / (1.0 + (-1.702 * x).exp())
}

/// Maps an `R x R x 3` crop to its token matrix: row-major non-overlapping
/// patches, flattened (pixel row, pixel column, channel), projected, with
/// positional embeddings added and the summary seed appended as the last row.
pub fn tokenize(crop: &Tensor, w: &EncoderWeights) -> Result<Tensor, EncoderError> {
    let r = w.config.resolution;
    if crop.shape() != [r, r, 3] {
        return Err(EncoderError::CropShape { expected: r, got: crop.shape().to_vec() });
    }
    let grid = w.config.grid();
    let patch = w.config.patch;
    let d = w.config.token_dim;
    let n = w.config.n_tokens();
    let pdim = patch * patch * 3;

    let mut flat = vec![0.0; (n - 1) * pdim];
    for gy in 0..grid {
        for gx in 0..grid {
            let row = gy * grid + gx;
            let mut k = 0;
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..3 {
                        flat[row * pdim + k] = crop.at3(gy * patch + py, gx * patch + px, ch);
                        k += 1;
                    }
                }
            }
        }
    }
    let patches = Tensor::from_parts(vec![n - 1, pdim], flat);
    let projected = linear(&patches, &w.patch_proj, &w.patch_bias)?;

    let mut data = vec![0.0; n * d];
    for row in 0..n - 1 {
        for c in 0..d {
            data[row * d + c] = projected.at2(row, c) + w.pos_embed.at2(row, c);
        }
    }
    for c in 0..d {
        data[(n - 1) * d + c] = w.cls_seed.data()[c] + w.pos_embed.at2(n - 1, c);
    }
    Ok(Tensor::from_parts(vec![n, d], data))
}

/// Appends the object token, initialized from the position-augmented summary
/// row (the last row of the token matrix).
pub fn append_obj_token(x: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut data = x.data().to_vec();
    data.extend_from_slice(x.row(n - 1));
    Tensor::from_parts(vec![n + 1, d], data)
}

fn attention(
    x: &Tensor,
    l: &LayerWeights,
    heads: usize,
    allow: &BinaryMask,
    scaled: bool,
) -> Result<Tensor, EncoderError> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let dh = d / heads;
    let q = linear(x, &l.w_q, &l.b_q)?;
    let k = linear(x, &l.w_k, &l.b_k)?;
    let v = linear(x, &l.w_v, &l.b_v)?;
    let scale = if scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
    let mut concat = vec![0.0; n * d];
    for h in 0..heads {
        let off = h * dh;
        let mut scores = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..dh {
                    acc += q.at2(i, off + t) * k.at2(j, off + t);
                }
                scores.set2(i, j, acc * scale);
            }
        }
        let probs = masked_softmax(&scores, allow)?;
        for i in 0..n {
            for t in 0..dh {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += probs.at2(i, j) * v.at2(j, off + t);
                }
                concat[i * d + off + t] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, d], concat))
}

/// Runs the L transformer blocks over a token matrix with the given attention
/// mask applied in every layer. Returns the final token matrix (before the
/// final norm and output projection).
pub fn run_layers(
    tokens: Tensor,
    w: &EncoderWeights,
    allow: &BinaryMask,
) -> Result<Tensor, EncoderError> {
    let heads = w.config.heads;
    let mut x = tokens;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    for l in &w.layers {
        if w.config.attention_only {
            let attn = attention(&x, l, heads, allow, false)?;
            let mut data = x.data().to_vec();
            for i in 0..n * d {
                data[i] += attn.data()[i];
            }
            x = Tensor::from_parts(vec![n, d], data);
        } else {
            let h = layer_norm(&x, &l.ln1_gain, &l.ln1_bias, LN_EPS)?;
            let attn = attention(&h, l, heads, allow, true)?;
            let proj = linear(&attn, &l.w_o, &l.b_o)?;
            let mut data = x.data().to_vec();
            for i in 0..n * d {
                data[i] += proj.data()[i];
            }
            let x1 = Tensor::from_parts(vec![n, d], data);

            let h2 = layer_norm(&x1, &l.ln2_gain, &l.ln2_bias, LN_EPS)?;
            let mut hidden = linear(&h2, &l.mlp_w1, &l.mlp_b1)?;
            for v in hidden.data_mut() {
                *v = quick_gelu(*v);
            }
            let mlp = linear(&hidden, &l.mlp_w2, &l.mlp_b2)?;
            let mut data = x1.data().to_vec();
            for i in 0..n * d {
                data[i] += mlp.data()[i];
            }
            x = Tensor::from_parts(vec![n, d], data);
        }
    }
    Ok(x)
}

/// Final norm of one token row followed by the output projection.
fn project_row(tokens: &Tensor, row: usize, w: &EncoderWeights) -> Result<Vec<f64>, EncoderError> {
    let d = w.config.token_dim;
    let r = Tensor::from_parts(vec![1, d], tokens.row(row).to_vec());
    let normed = layer_norm(&r, &w.final_gain, &w.final_bias, LN_EPS)?;
    let out = crate::tensor::matmul(&normed, &w.out_proj)?;
    Ok(out.data().to_vec())
}

/// Final token matrix of the plain encoder (full attention).
pub fn forward_tokens(crop: &Tensor, w: &EncoderWeights) -> Result<Tensor, EncoderError> {
    let x = tokenize(crop, w)?;
    let n = x.shape()[0];
    run_layers(x, w, &BinaryMask::filled(n, n, true))
}

/// Final token matrix of the object-aware encoder: object token appended,
/// masked attention in every layer.
pub fn forward_tokens_obj(
    crop: &Tensor,
    w: &EncoderWeights,
    m: &BinaryMask,
) -> Result<Tensor, EncoderError> {
    let x = tokenize(crop, w)?;
    let n = x.shape()[0];
    if m.rows() != 1 || m.cols() != n {
        return Err(EncoderError::MaskLen { got: m.rows() * m.cols(), expected: n });
    }
    let x = append_obj_token(&x);
    let full = build_attention_mask(m);
    run_layers(x, w, &full)
}

/// Image embedding: projection of the final summary-token row.
pub fn encode_cls(crop: &Tensor, w: &EncoderWeights) -> Result<Vec<f64>, EncoderError> {
    let tokens = forward_tokens(crop, w)?;
    project_row(&tokens, tokens.shape()[0] - 1, w)
}

/// Proposal embedding: projection of the final object-token row under the
/// overlap mask `m`.
pub fn encode_obj(
    crop: &Tensor,
    w: &EncoderWeights,
    m: &BinaryMask,
) -> Result<Vec<f64>, EncoderError> {
    let tokens = forward_tokens_obj(crop, w, m)?;
    project_row(&tokens, tokens.shape()[0] - 1, w)
}

const WEIGHTS_CONFIG_KEY: &str = "config";

/// Serializes weights into the named-tensor container format.
pub fn save_weights(w: &EncoderWeights, path: &Path) -> Result<(), EncoderError> {
    w.validate()?;
    let mut c = TensorContainer::new();
    let cfg = &w.config;
    c.insert_f64(
        WEIGHTS_CONFIG_KEY,
        vec![7],
        vec![
            cfg.resolution as f64,
            cfg.patch as f64,
            cfg.token_dim as f64,
            cfg.heads as f64,
            cfg.layers as f64,
            cfg.embed_dim as f64,
            if cfg.attention_only { 1.0 } else { 0.0 },
        ],
    )?;
    let mut put = |name: &str, t: &Tensor| {
        c.insert_f64(name, t.shape().to_vec(), t.data().to_vec())
    };
    put("patch_proj/weight", &w.patch_proj)?;
    put("patch_proj/bias", &w.patch_bias)?;
    put("pos_embed", &w.pos_embed)?;
    put("cls_seed", &w.cls_seed)?;
    for (i, l) in w.layers.iter().enumerate() {
        put(&format!("layers/{i}/ln1/gain"), &l.ln1_gain)?;
        put(&format!("layers/{i}/ln1/bias"), &l.ln1_bias)?;
        put(&format!("layers/{i}/attn/w_q"), &l.w_q)?;
        put(&format!("layers/{i}/attn/b_q"), &l.b_q)?;
        put(&format!("layers/{i}/attn/w_k"), &l.w_k)?;
        put(&format!("layers/{i}/attn/b_k"), &l.b_k)?;
        put(&format!("layers/{i}/attn/w_v"), &l.w_v)?;
        put(&format!("layers/{i}/attn/b_v"), &l.b_v)?;
        put(&format!("layers/{i}/attn/w_o"), &l.w_o)?;
        put(&format!("layers/{i}/attn/b_o"), &l.b_o)?;
        put(&format!("layers/{i}/ln2/gain"), &l.ln2_gain)?;
        put(&format!("layers/{i}/ln2/bias"), &l.ln2_bias)?;
        put(&format!("layers/{i}/mlp/w1"), &l.mlp_w1)?;
        put(&format!("layers/{i}/mlp/b1"), &l.mlp_b1)?;
        put(&format!("layers/{i}/mlp/w2"), &l.mlp_w2)?;
        put(&format!("layers/{i}/mlp/b2"), &l.mlp_b2)?;
    }
    put("final_norm/gain", &w.final_gain)?;
    put("final_norm/bias", &w.final_bias)?;
    put("out_proj", &w.out_proj)?;
    c.save(path)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<EncoderWeights, EncoderError> {
    let c = TensorContainer::load(path)?;
    let cfg_entry = c.get(WEIGHTS_CONFIG_KEY).ok_or_else(|| {
        EncoderError::Format(crate::io::FormatError::MissingEntry(WEIGHTS_CONFIG_KEY.into()))
    })?;
    let cv = cfg_entry.as_f64();
    if cv.len() != 7 {
        return Err(EncoderError::Config(format!("config entry holds {} values", cv.len())));
    }
    let config = EncoderConfig {
        resolution: cv[0] as usize,
        patch: cv[1] as usize,
        token_dim: cv[2] as usize,
        heads: cv[3] as usize,
        layers: cv[4] as usize,
        embed_dim: cv[5] as usize,
        attention_only: cv[6] != 0.0,
    };
    let fetch = |name: String| -> Result<Tensor, EncoderError> {
        let e = c
            .get(&name)
            .ok_or_else(|| EncoderError::Format(crate::io::FormatError::MissingEntry(name.clone())))?;
        if e.dtype() != Dtype::F64 {
            return Err(EncoderError::Format(crate::io::FormatError::Malformed(format!(
                "weight entry '{name}' must be f64"
            ))));
        }
        Ok(Tensor::new(e.dims().to_vec(), e.as_f64())?)
    };
    let layers = (0..config.layers)
        .map(|i| -> Result<LayerWeights, EncoderError> {
            Ok(LayerWeights {
                ln1_gain: fetch(format!("layers/{i}/ln1/gain"))?,
                ln1_bias: fetch(format!("layers/{i}/ln1/bias"))?,
                w_q: fetch(format!("layers/{i}/attn/w_q"))?,
                b_q: fetch(format!("layers/{i}/attn/b_q"))?,
                w_k: fetch(format!("layers/{i}/attn/w_k"))?,
                b_k: fetch(format!("layers/{i}/attn/b_k"))?,
                w_v: fetch(format!("layers/{i}/attn/w_v"))?,
                b_v: fetch(format!("layers/{i}/attn/b_v"))?,
                w_o: fetch(format!("layers/{i}/attn/w_o"))?,
                b_o: fetch(format!("layers/{i}/attn/b_o"))?,
                ln2_gain: fetch(format!("layers/{i}/ln2/gain"))?,
                ln2_bias: fetch(format!("layers/{i}/ln2/bias"))?,
                mlp_w1: fetch(format!("layers/{i}/mlp/w1"))?,
                mlp_b1: fetch(format!("layers/{i}/mlp/b1"))?,
                mlp_w2: fetch(format!("layers/{i}/mlp/w2"))?,
                mlp_b2: fetch(format!("layers/{i}/mlp/b2"))?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let w = EncoderWeights {
        config,
        patch_proj: fetch("patch_proj/weight".into())?,
        patch_bias: fetch("patch_proj/bias".into())?,
        pos_embed: fetch("pos_embed".into())?,
        cls_seed: fetch("cls_seed".into())?,
        layers,
        final_gain: fetch("final_norm/gain".into())?,
        final_bias: fetch("final_norm/bias".into())?,
        out_proj: fetch("out_proj".into())?,
    };
    w.validate()?;
    Ok(w)
}
