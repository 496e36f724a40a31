//! Embedding-space classification: cosine logits, softmax with and without a
//! background slot, and the calibrated score fusion used at inference.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding dimensions disagree: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("probability vectors are misaligned: {0} vs {1} entries")]
    Misaligned(usize, usize),
    #[error("category table: {0}")]
    Table(String),
    #[error("lambda must lie in (0, 1), got {0}")]
    LambdaRange(f64),
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Novel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub split: Split,
    pub embedding: Vec<f64>,
}

/// Category names, their embeddings, base/novel flags, and the background
/// embedding. Category order is insertion order everywhere, with the
/// background slot trailing when present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryTable {
    pub categories: Vec<Category>,
    pub bg_embedding: Vec<f64>,
}

impl CategoryTable {
    pub fn new(categories: Vec<Category>, bg_embedding: Vec<f64>) -> Result<Self, ClassifyError> {
        let t = Self { categories, bg_embedding };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.categories.is_empty() {
            return Err(ClassifyError::Table("need at least one category".into()));
        }
        let d = self.categories[0].embedding.len();
        let mut seen = std::collections::HashSet::new();
        let mut has_base = false;
        for c in &self.categories {
            if c.embedding.len() != d {
                return Err(ClassifyError::DimMismatch(d, c.embedding.len()));
            }
            if norm(&c.embedding) == 0.0 {
                return Err(ClassifyError::Table(format!("category '{}' has a zero embedding", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(ClassifyError::Table(format!("duplicate category name '{}'", c.name)));
            }
            has_base |= c.split == Split::Base;
        }
        if !has_base {
            return Err(ClassifyError::Table("need at least one base category".into()));
        }
        if self.bg_embedding.len() != d {
            return Err(ClassifyError::DimMismatch(d, self.bg_embedding.len()));
        }
        if norm(&self.bg_embedding) == 0.0 {
            return Err(ClassifyError::Table("background embedding is zero".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.categories[0].embedding.len()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn base_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i].split == Split::Base).collect()
    }

    pub fn novel_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i].split == Split::Novel).collect()
    }

    pub fn load(path: &Path) -> Result<Self, crate::io::FormatError> {
        let t: CategoryTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.validate().map_err(|e| crate::io::FormatError::Config(e.to_string()))?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), crate::io::FormatError> {
        crate::io::atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub lambda: f64,
}

impl CalibrationConfig {
    pub fn new(lambda: f64) -> Result<Self, ClassifyError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(ClassifyError::LambdaRange(lambda));
        }
        Ok(Self { lambda })
    }
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { lambda: 2.0 / 3.0 }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two nonzero embeddings, in `[-1, 1]`.
pub fn cosine_logit(e: &[f64], t: &[f64]) -> Result<f64, ClassifyError> {
    if e.len() != t.len() {
        return Err(ClassifyError::DimMismatch(e.len(), t.len()));
    }
    let (ne, nt) = (norm(e), norm(t));
    if ne == 0.0 || nt == 0.0 {
        return Err(ClassifyError::ZeroVector);
    }
    let dot: f64 = e.iter().zip(t).map(|(a, b)| a * b).sum();
    Ok(dot / (ne * nt))
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cosine_logits_over(
    e: &[f64],
    table: &CategoryTable,
    with_bg: bool,
    temperature: f64,
) -> Result<Vec<f64>, ClassifyError> {
    let mut logits = Vec::with_capacity(table.len() + 1);
    for c in &table.categories {
        logits.push(cosine_logit(e, &c.embedding)? / temperature);
    }
    if with_bg {
        logits.push(cosine_logit(e, &table.bg_embedding)? / temperature);
    }
    Ok(logits)
}

/// Softmax over all categories plus the trailing background slot.
pub fn probs_with_bg(e: &[f64], table: &CategoryTable) -> Result<Vec<f64>, ClassifyError> {
    probs_with_bg_scaled(e, table, 1.0)
}

/// [`probs_with_bg`] with a softmax temperature, for callers loading real
/// CLIP embeddings. The default pipeline keeps the temperature at 1.
pub fn probs_with_bg_scaled(
    e: &[f64],
    table: &CategoryTable,
    temperature: f64,
) -> Result<Vec<f64>, ClassifyError> {
    Ok(softmax(&cosine_logits_over(e, table, true, temperature)?))
}

/// Softmax over the categories only, background excluded.
pub fn probs_no_bg(e: &[f64], table: &CategoryTable) -> Result<Vec<f64>, ClassifyError> {
    probs_no_bg_scaled(e, table, 1.0)
}

pub fn probs_no_bg_scaled(
    e: &[f64],
    table: &CategoryTable,
    temperature: f64,
) -> Result<Vec<f64>, ClassifyError> {
    Ok(softmax(&cosine_logits_over(e, table, false, temperature)?))
}

/// Geometric mix of two probabilities. Identical factors return the common
/// value untouched (q^a * q^(1-a) == q algebraically; skipping the powers
/// keeps it exact in floating point too).
fn geometric_mix(p: f64, q: f64, exponent_p: f64) -> f64 {
    if p == q {
        p
    } else {
        p.powf(exponent_p) * q.powf(1.0 - exponent_p)
    }
}

/// Calibrated ranking scores over categories plus background. `probs` must
/// come from [`probs_with_bg`] (length `|C| + 1`) and `obj_probs` from
/// [`probs_no_bg`] (length `|C|`), both in table order. Base categories mix
/// as `P^lambda * Po^(1-lambda)`, novel ones with the exponents swapped, and
/// the background score is one minus the category mass of `probs`. The
/// output ranks candidates; it is not a distribution.
pub fn calibrate(
    probs: &[f64],
    obj_probs: &[f64],
    table: &CategoryTable,
    cfg: &CalibrationConfig,
) -> Result<Vec<f64>, ClassifyError> {
    let n = table.len();
    if probs.len() != n + 1 {
        return Err(ClassifyError::Misaligned(probs.len(), n + 1));
    }
    if obj_probs.len() != n {
        return Err(ClassifyError::Misaligned(obj_probs.len(), n));
    }
    let lambda = cfg.lambda;
    let mut out = Vec::with_capacity(n + 1);
    for (i, cat) in table.categories.iter().enumerate() {
        let exponent = match cat.split {
            Split::Base => lambda,
            Split::Novel => 1.0 - lambda,
        };
        out.push(geometric_mix(probs[i], obj_probs[i], exponent));
    }
    let category_mass: f64 = probs[..n].iter().sum();
    out.push(1.0 - category_mass);
    Ok(out)
}
