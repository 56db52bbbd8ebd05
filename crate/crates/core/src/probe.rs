//! Per-head logistic probes, accuracy atlas, head ranking and 2-D belief geometry.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{ActivationSet, LabelKind, Layout};

pub const PROBE_MAGIC: [u8; 4] = *b"GTMP";
pub const PROBE_VERSION: u32 = 1;
pub const PROBE_HEADER_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("features have zero variance in every dimension")]
    DegenerateFeatures,
    #[error("need at least {min} samples, got {found}")]
    TooFewSamples { min: usize, found: usize },
    #[error("x has {found} values, expected N x D = {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds the {available} available heads")]
    KTooLarge { k: usize, available: usize },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: need {expected} bytes, have {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("{0} bytes past the declared payload")]
    TrailingData(usize),
    #[error("non-finite parameter at flat index {0}")]
    NonFiniteValue(usize),
    #[error("unknown label kind code {0}")]
    UnknownLabelKind(u8),
    #[error("probe grid does not match layout {0:?}")]
    LayoutMismatch(Layout),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    pub val_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { learning_rate: 0.1, iterations: 500, l2: 1e-3, val_fraction: 0.25 }
    }
}

pub const MIN_PROBE_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub layer: usize,
    pub head: usize,
    /// Weights in raw activation space.
    pub theta: Vec<f32>,
    pub bias: f32,
    pub val_accuracy: f64,
}

impl ProbeModel {
    pub fn logit(&self, x: &[f32]) -> f64 {
        self.theta.iter().zip(x).map(|(t, v)| *t as f64 * *v as f64).sum::<f64>() + self.bias as f64
    }

    pub fn predict(&self, x: &[f32]) -> bool {
        sigmoid(self.logit(x)) >= 0.5
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Seeded stratified split: `val_fraction` of each class goes to validation.
pub fn split_indices(y: &[bool], seed: u64, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Logistic regression on row-major `x` (N x D) with a held-out split.
pub fn train_probe(x: &[f32], dim: usize, y: &[bool], split_seed: u64, cfg: &ProbeConfig) -> Result<ProbeModel, ProbeError> {
    let n = y.len();
    if x.len() != n * dim {
        return Err(ProbeError::ShapeMismatch { expected: n * dim, found: x.len() });
    }
    if n < MIN_PROBE_SAMPLES {
        return Err(ProbeError::TooFewSamples { min: MIN_PROBE_SAMPLES, found: n });
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(ProbeError::SingleClass);
    }
    let (train, val) = split_indices(y, split_seed, cfg.val_fraction);
    let row = |i: usize| &x[i * dim..(i + 1) * dim];

    let nt = train.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(row(i)) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nt);
    let mut std = vec![0.0f64; dim];
    for &i in &train {
        for ((s, v), m) in std.iter_mut().zip(row(i)).zip(&mean) {
            *s += (*v as f64 - m).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / nt).sqrt());
    if std.iter().all(|s| *s == 0.0) {
        return Err(ProbeError::DegenerateFeatures);
    }
    let inv: Vec<f64> = std.iter().map(|s| if *s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    let z: Vec<f64> = train
        .iter()
        .flat_map(|&i| row(i).iter().zip(&mean).zip(&inv).map(|((v, m), s)| (*v as f64 - m) * s).collect::<Vec<_>>())
        .collect();
    let yt: Vec<f64> = train.iter().map(|&i| y[i] as u8 as f64).collect();

    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut grad = vec![0.0f64; dim];
    for _ in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (r, target) in z.chunks_exact(dim).zip(&yt) {
            let logit = r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = sigmoid(logit) - target;
            for (g, a) in grad.iter_mut().zip(r) {
                *g += err * a;
            }
            grad_b += err;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= cfg.learning_rate * (g / nt + cfg.l2 * *wi);
        }
        b -= cfg.learning_rate * grad_b / nt;
    }

    // Fold standardization back into raw-space parameters.
    let theta: Vec<f64> = w.iter().zip(&inv).map(|(wi, s)| wi * s).collect();
    let bias = b - theta.iter().zip(&mean).map(|(t, m)| t * m).sum::<f64>();
    let mut model = ProbeModel {
        layer: 0,
        head: 0,
        theta: theta.iter().map(|t| *t as f32).collect(),
        bias: bias as f32,
        val_accuracy: 0.0,
    };
    let eval = |idx: &[usize]| {
        // Decide in standardized space so classifications do not depend on
        // the f32 rounding of the exported parameters.
        let hits = idx
            .iter()
            .filter(|&&i| {
                let logit = row(i).iter().zip(&mean).zip(&inv).zip(&w).map(|(((v, m), s), c)| (*v as f64 - m) * s * c).sum::<f64>() + b;
                (sigmoid(logit) >= 0.5) == y[i]
            })
            .count();
        hits as f64 / idx.len().max(1) as f64
    };
    model.val_accuracy = eval(&val);
    Ok(model)
}

/// Training-set predictions of a freshly trained probe (used by
/// scale-invariance checks).
pub fn train_and_classify(x: &[f32], dim: usize, y: &[bool], split_seed: u64, cfg: &ProbeConfig) -> Result<Vec<bool>, ProbeError> {
    let model = train_probe(x, dim, y, split_seed, cfg)?;
    Ok(x.chunks_exact(dim).map(|r| model.predict(r)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAtlas {
    pub layout: Layout,
    pub label_kind: LabelKind,
    pub seed: u64,
    /// Layer-major grid of L x H probes.
    pub probes: Vec<ProbeModel>,
}

impl ProbeAtlas {
    pub fn get(&self, layer: usize, head: usize) -> &ProbeModel {
        &self.probes[layer * self.layout.heads + head]
    }

    pub fn accuracy_grid(&self) -> Vec<Vec<f64>> {
        self.probes.chunks(self.layout.heads).map(|r| r.iter().map(|p| p.val_accuracy).collect()).collect()
    }

    pub fn max_accuracy(&self) -> f64 {
        self.probes.iter().map(|p| p.val_accuracy).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `atlas.json`: the accuracy grid without parameters.
    pub fn summary_json(&self) -> serde_json::Value {
        let grid: Vec<serde_json::Value> = self
            .probes
            .iter()
            .map(|p| serde_json::json!({ "layer": p.layer, "head": p.head, "val_accuracy": p.val_accuracy }))
            .collect();
        serde_json::json!({
            "label_kind": self.label_kind,
            "layers": self.layout.layers,
            "heads": self.layout.heads,
            "dim": self.layout.dim,
            "seed": self.seed,
            "grid": grid,
        })
    }

    pub fn write_accuracy_csv(&self, path: &Path) -> Result<(), ProbeError> {
        let mut s = String::from("layer,head,val_accuracy\n");
        for p in &self.probes {
            s.push_str(&format!("{},{},{}\n", p.layer, p.head, p.val_accuracy));
        }
        fs::write(path, s).map_err(|source| ProbeError::Io { path: path.to_path_buf(), source })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&PROBE_MAGIC);
        out.extend_from_slice(&PROBE_VERSION.to_le_bytes());
        for d in [self.layout.layers, self.layout.heads, self.layout.dim] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        out.push(self.label_kind.code());
        out.push(0);
        for p in &self.probes {
            for t in &p.theta {
                out.extend_from_slice(&t.to_le_bytes());
            }
            out.extend_from_slice(&p.bias.to_le_bytes());
        }
        out
    }

    /// Parses `probes.gtomp`. Accuracies are not stored there; they come back
    /// as NaN unless merged from `atlas.json`.
    pub fn from_bytes(bytes: &[u8], seed: u64) -> Result<Self, ProbeError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(ProbeError::TruncatedFile { expected: n, found: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != PROBE_MAGIC {
            return Err(ProbeError::BadMagic(magic));
        }
        need(PROBE_HEADER_BYTES)?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != PROBE_VERSION {
            return Err(ProbeError::VersionMismatch { found: version, expected: PROBE_VERSION });
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap()) as usize;
        let layout = Layout::new(u16_at(8), u16_at(10), u16_at(12));
        let label_kind = LabelKind::from_code(bytes[14]).ok_or(ProbeError::UnknownLabelKind(bytes[14]))?;
        let per_head = (layout.dim + 1) * 4;
        let total = PROBE_HEADER_BYTES + layout.head_count() * per_head;
        need(total)?;
        if bytes.len() > total {
            return Err(ProbeError::TrailingData(bytes.len() - total));
        }
        let floats: Vec<f32> =
            bytes[PROBE_HEADER_BYTES..total].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = floats.iter().position(|v| !v.is_finite()) {
            return Err(ProbeError::NonFiniteValue(i));
        }
        let probes = layout
            .heads_iter()
            .zip(floats.chunks_exact(layout.dim + 1))
            .map(|((layer, head), c)| ProbeModel {
                layer,
                head,
                theta: c[..layout.dim].to_vec(),
                bias: c[layout.dim],
                val_accuracy: f64::NAN,
            })
            .collect();
        Ok(ProbeAtlas { layout, label_kind, seed, probes })
    }

    /// Copies accuracies from an `atlas.json` summary onto parsed probes.
    pub fn merge_accuracies(&mut self, summary: &serde_json::Value) -> Result<(), ProbeError> {
        let grid = summary["grid"].as_array().ok_or(ProbeError::LayoutMismatch(self.layout))?;
        if grid.len() != self.probes.len() {
            return Err(ProbeError::LayoutMismatch(self.layout));
        }
        for (p, g) in self.probes.iter_mut().zip(grid) {
            if g["layer"].as_u64() != Some(p.layer as u64) || g["head"].as_u64() != Some(p.head as u64) {
                return Err(ProbeError::LayoutMismatch(self.layout));
            }
            p.val_accuracy = g["val_accuracy"].as_f64().ok_or(ProbeError::LayoutMismatch(self.layout))?;
        }
        Ok(())
    }
}

pub fn write_probes(path: &Path, atlas: &ProbeAtlas) -> Result<(), ProbeError> {
    fs::write(path, atlas.to_bytes()).map_err(|source| ProbeError::Io { path: path.to_path_buf(), source })
}

pub fn read_probes(path: &Path) -> Result<ProbeAtlas, ProbeError> {
    let bytes = fs::read(path).map_err(|source| ProbeError::Io { path: path.to_path_buf(), source })?;
    ProbeAtlas::from_bytes(&bytes, 0)
}

pub const PROBES_FILE: &str = "probes.gtomp";
pub const ATLAS_FILE: &str = "atlas.json";
pub const ACCURACY_CSV: &str = "accuracy.csv";

/// Writes `probes.gtomp`, `atlas.json` and `accuracy.csv` into `dir`.
pub fn write_probe_dir(dir: &Path, atlas: &ProbeAtlas) -> Result<(), ProbeError> {
    fs::create_dir_all(dir).map_err(|source| ProbeError::Io { path: dir.to_path_buf(), source })?;
    write_probes(&dir.join(PROBES_FILE), atlas)?;
    let summary = dir.join(ATLAS_FILE);
    let text = serde_json::to_string_pretty(&atlas.summary_json()).expect("summary serializes");
    fs::write(&summary, text + "\n").map_err(|source| ProbeError::Io { path: summary, source })?;
    atlas.write_accuracy_csv(&dir.join(ACCURACY_CSV))
}

/// Reads a directory written by [`write_probe_dir`], accuracies included.
pub fn read_probe_dir(dir: &Path) -> Result<ProbeAtlas, ProbeError> {
    let mut atlas = read_probes(&dir.join(PROBES_FILE))?;
    let path = dir.join(ATLAS_FILE);
    let text = fs::read_to_string(&path).map_err(|source| ProbeError::Io { path: path.clone(), source })?;
    let summary: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| ProbeError::Io { path: path.clone(), source: io::Error::new(io::ErrorKind::InvalidData, e) })?;
    atlas.merge_accuracies(&summary)?;
    atlas.seed = summary["seed"].as_u64().unwrap_or(0);
    Ok(atlas)
}

/// One probe per (layer, head), all sharing the same seeded split.
pub fn probe_atlas(acts: &ActivationSet, label_kind: LabelKind, seed: u64, cfg: &ProbeConfig) -> Result<ProbeAtlas, ProbeError> {
    let layout = acts.layout();
    let y = acts.targets(label_kind);
    let heads: Vec<(usize, usize)> = layout.heads_iter().collect();
    let probes = heads
        .par_iter()
        .map(|&(layer, head)| {
            let x = acts.head_matrix(layer, head);
            train_probe(&x, layout.dim, &y, seed, cfg).map(|mut m| {
                m.layer = layer;
                m.head = head;
                m
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProbeAtlas { layout, label_kind, seed, probes })
}

/// Heads by validation accuracy, descending; ties by (layer, head) ascending.
pub fn top_k_heads(atlas: &ProbeAtlas, k: usize) -> Result<Vec<(usize, usize)>, ProbeError> {
    if k > atlas.probes.len() {
        return Err(ProbeError::KTooLarge { k, available: atlas.probes.len() });
    }
    let mut order: Vec<&ProbeModel> = atlas.probes.iter().collect();
    order.sort_by(|a, b| {
        b.val_accuracy.total_cmp(&a.val_accuracy).then(a.layer.cmp(&b.layer)).then(a.head.cmp(&b.head))
    });
    Ok(order.into_iter().take(k).map(|p| (p.layer, p.head)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGeometry {
    pub mean: Vec<f64>,
    /// Class-separating unit direction, oriented toward the positive class.
    pub theta: Vec<f64>,
    /// Top principal direction of the residual, orthogonal to `theta`.
    pub theta_prime: Vec<f64>,
    /// Distance between class means along `theta`.
    pub separation: f64,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<bool>,
}

impl BeliefGeometry {
    pub fn write_csv(&self, path: &Path) -> Result<(), ProbeError> {
        let wrap = |source| ProbeError::Io { path: path.to_path_buf(), source };
        let mut f = io::BufWriter::new(fs::File::create(path).map_err(wrap)?);
        writeln!(f, "x,y,label").map_err(wrap)?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            writeln!(f, "{},{},{}", p[0], p[1], *l as u8).map_err(wrap)?;
        }
        f.flush().map_err(wrap)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Difference-of-means direction plus the dominant orthogonal residual axis.
pub fn belief_geometry(x: &[f32], dim: usize, y: &[bool]) -> Result<BeliefGeometry, ProbeError> {
    let n = y.len();
    if x.len() != n * dim {
        return Err(ProbeError::ShapeMismatch { expected: n * dim, found: x.len() });
    }
    if dim < 2 {
        return Err(ProbeError::DegenerateFeatures);
    }
    let (n_pos, n_neg) = (y.iter().filter(|v| **v).count(), y.iter().filter(|v| !**v).count());
    if n_pos == 0 || n_neg == 0 {
        return Err(ProbeError::DegenerateFeatures);
    }
    let rows: Vec<&[f32]> = x.chunks_exact(dim).collect();
    let mut mean = vec![0.0; dim];
    let mut mu_pos = vec![0.0; dim];
    let mut mu_neg = vec![0.0; dim];
    for (r, &label) in rows.iter().zip(y) {
        for d in 0..dim {
            let v = r[d] as f64;
            mean[d] += v / n as f64;
            if label {
                mu_pos[d] += v / n_pos as f64;
            } else {
                mu_neg[d] += v / n_neg as f64;
            }
        }
    }
    let mut theta: Vec<f64> = mu_pos.iter().zip(&mu_neg).map(|(p, q)| p - q).collect();
    let separation = normalize(&mut theta);
    if separation < 1e-12 {
        return Err(ProbeError::DegenerateFeatures);
    }
    let residual: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let c: Vec<f64> = (0..dim).map(|d| r[d] as f64 - mean[d]).collect();
            let along = dot(&c, &theta);
            c.iter().zip(&theta).map(|(v, t)| v - along * t).collect()
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for r in &residual {
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += r[i] * r[j] / n as f64;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let top = (0..dim).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(b.cmp(&a))).unwrap();
    let mut theta_prime: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    if eig.eigenvalues[top] <= 1e-12 {
        // No residual spread: use the basis vector least aligned with theta.
        let axis = (0..dim).min_by(|&a, &b| theta[a].abs().total_cmp(&theta[b].abs())).unwrap();
        theta_prime = (0..dim).map(|d| (d == axis) as u8 as f64).collect();
    }
    let along = dot(&theta_prime, &theta);
    theta_prime.iter_mut().zip(&theta).for_each(|(v, t)| *v -= along * t);
    normalize(&mut theta_prime);
    // Deterministic sign: largest-magnitude component positive.
    let pivot = (0..dim).max_by(|&a, &b| theta_prime[a].abs().total_cmp(&theta_prime[b].abs()).then(b.cmp(&a))).unwrap();
    if theta_prime[pivot] < 0.0 {
        theta_prime.iter_mut().for_each(|v| *v = -*v);
    }
    let points = rows
        .iter()
        .map(|r| {
            let c: Vec<f64> = (0..dim).map(|d| r[d] as f64 - mean[d]).collect();
            [dot(&c, &theta), dot(&c, &theta_prime)]
        })
        .collect();
    Ok(BeliefGeometry { mean, theta, theta_prime, separation, points, labels: y.to_vec() })
}
