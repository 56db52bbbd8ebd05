//! Head-level activation steering on a reference transformer.
//!
//! An [`InterventionSpec`] adds `alpha * sigma * theta` to chosen head
//! outputs before the output projection, at every position.

mod fixture;
mod model;
mod sweep;

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{ActivationSet, LabelKind, Layout};
use crate::probe::{top_k_heads, ProbeAtlas, ProbeError};

pub use fixture::{capture_activations, planted_fixture, EvalItem, Fixture, FixtureConfig};
pub use model::{ForwardOutput, LayerWeights, ModelShape, RefTransformer, WEIGHTS_HEADER_BYTES, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use sweep::{
    answer_of, evaluate, read_eval_jsonl, sweep, sweep_csv, write_eval_jsonl, write_sweep_csv, EvalOutcome, SweepRow,
};

/// Largest accepted |alpha|; keeps steered activations well inside f32 range.
pub const MAX_ABS_ALPHA: f64 = 1e4;
pub const THETA_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error("input of {len} tokens exceeds max length {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("token {token} outside vocabulary of {vocab}")]
    UnknownToken { token: usize, vocab: usize },
    #[error("head (layer {layer}, head {head}) not in model")]
    HeadNotFound { layer: usize, head: usize },
    #[error("theta for (layer {layer}, head {head}) has {found} values, expected {expected}")]
    ThetaDimension { layer: usize, head: usize, expected: usize, found: usize },
    #[error("theta for (layer {layer}, head {head}) has norm {norm}, expected 1")]
    ThetaNotUnit { layer: usize, head: usize, norm: f64 },
    #[error("duplicate entry for (layer {layer}, head {head})")]
    DuplicateEntry { layer: usize, head: usize },
    #[error("sigma {sigma} for (layer {layer}, head {head}) must be finite and >= 0")]
    InvalidSigma { layer: usize, head: usize, sigma: f64 },
    #[error("alpha {0} outside [-{MAX_ABS_ALPHA}, {MAX_ABS_ALPHA}]")]
    AlphaOutOfRange(f64),
    #[error("activation layout {acts:?} differs from probe layout {probes:?}")]
    LayoutMismatch { acts: Layout, probes: Layout },
    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Score(#[from] crate::evalharness::ScoreError),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: need {expected} bytes, have {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("{0} bytes past the declared payload")]
    TrailingData(usize),
    #[error("non-finite weight at flat index {0}")]
    NonFiniteValue(usize),
    #[error("invalid model shape {0:?}")]
    InvalidShape(ModelShape),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEntry {
    pub layer: usize,
    pub head: usize,
    pub theta: Vec<f32>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub entries: Vec<SpecEntry>,
    pub alpha: f64,
}

impl InterventionSpec {
    pub fn empty() -> Self {
        InterventionSpec { entries: Vec::new(), alpha: 0.0 }
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        InterventionSpec { entries: self.entries.clone(), alpha }
    }

    /// Checks the invariants that do not depend on a model.
    pub fn validate(&self) -> Result<(), InterventionError> {
        if !self.alpha.is_finite() || self.alpha.abs() > MAX_ABS_ALPHA {
            return Err(InterventionError::AlphaOutOfRange(self.alpha));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let (layer, head) = (e.layer, e.head);
            if !seen.insert((layer, head)) {
                return Err(InterventionError::DuplicateEntry { layer, head });
            }
            if !e.sigma.is_finite() || e.sigma < 0.0 {
                return Err(InterventionError::InvalidSigma { layer, head, sigma: e.sigma });
            }
            let norm = e.theta.iter().map(|&t| (t as f64).powi(2)).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > THETA_NORM_TOLERANCE {
                return Err(InterventionError::ThetaNotUnit { layer, head, norm });
            }
        }
        Ok(())
    }

    pub fn check_against(&self, layout: Layout) -> Result<(), InterventionError> {
        self.validate()?;
        for e in &self.entries {
            if !layout.contains(e.layer, e.head) {
                return Err(InterventionError::HeadNotFound { layer: e.layer, head: e.head });
            }
            if e.theta.len() != layout.dim {
                return Err(InterventionError::ThetaDimension {
                    layer: e.layer,
                    head: e.head,
                    expected: layout.dim,
                    found: e.theta.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> Result<(), InterventionError> {
        fs::write(path, self.to_json()).map_err(|source| InterventionError::Io { path: path.to_path_buf(), source })
    }

    /// Reads and validates a spec file.
    pub fn read(path: &Path) -> Result<Self, InterventionError> {
        let text = fs::read_to_string(path).map_err(|source| InterventionError::Io { path: path.to_path_buf(), source })?;
        let spec = InterventionSpec::from_json(&text)
            .map_err(|e| InterventionError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Population standard deviation of the projections `x_i . theta`.
pub fn head_sigma(acts: &ActivationSet, layer: usize, head: usize, theta: &[f32]) -> f64 {
    let n = acts.len();
    if n == 0 {
        return 0.0;
    }
    let proj: Vec<f64> = (0..n)
        .map(|i| acts.head(i, layer, head).iter().zip(theta).map(|(&x, &t)| x as f64 * t as f64).sum())
        .collect();
    let mean = proj.iter().sum::<f64>() / n as f64;
    (proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Unit probe direction, flipped if needed so the positive class projects
/// higher on average.
fn oriented_direction(acts: &ActivationSet, kind: LabelKind, layer: usize, head: usize, weights: &[f32]) -> Vec<f32> {
    let norm = weights.iter().map(|&w| (w as f64).powi(2)).sum::<f64>().sqrt();
    let dim = weights.len();
    if norm == 0.0 || !norm.is_finite() {
        let mut e = vec![0.0; dim];
        if dim > 0 {
            e[0] = 1.0;
        }
        return e;
    }
    let unit: Vec<f64> = weights.iter().map(|&w| w as f64 / norm).collect();
    let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0usize, 0usize);
    for (i, label) in acts.labels().iter().enumerate() {
        let p: f64 = acts.head(i, layer, head).iter().zip(&unit).map(|(&x, &u)| x as f64 * u).sum();
        if kind.of(label) {
            pos += p;
            np += 1;
        } else {
            neg += p;
            nn += 1;
        }
    }
    let flip = np > 0 && nn > 0 && pos / (np as f64) < neg / (nn as f64);
    unit.iter().map(|&u| if flip { -u as f32 } else { u as f32 }).collect()
}

/// Steering spec over the `k` most accurate heads of `atlas`.
pub fn build_intervention(
    atlas: &ProbeAtlas,
    acts: &ActivationSet,
    k: usize,
    alpha: f64,
) -> Result<InterventionSpec, InterventionError> {
    if acts.layout() != atlas.layout {
        return Err(InterventionError::LayoutMismatch { acts: acts.layout(), probes: atlas.layout });
    }
    let heads = top_k_heads(atlas, k)?;
    let entries = heads
        .into_iter()
        .map(|(layer, head)| {
            let theta = oriented_direction(acts, atlas.label_kind, layer, head, &atlas.get(layer, head).theta);
            let sigma = head_sigma(acts, layer, head, &theta);
            SpecEntry { layer, head, theta, sigma }
        })
        .collect();
    let spec = InterventionSpec { entries, alpha };
    spec.validate()?;
    Ok(spec)
}
