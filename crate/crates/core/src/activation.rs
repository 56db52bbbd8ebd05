//! Labeled per-head activation tensors and the GTOM-ACT container.
//!
//! Layout on disk (all integers little-endian):
//!
//! ```text
//! "GTOM" | version u32 | N u64 | L u16 | H u16 | D u16 | pad u16 | 8 reserved bytes
//! N x (sample_id u64 | y_p u8 | y_o u8 | condition u8 | 5 pad bytes)
//! N x L x H x D float32
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACT_MAGIC: [u8; 4] = *b"GTOM";
pub const ACT_VERSION: u32 = 1;
pub const ACT_HEADER_BYTES: usize = 32;
pub const ACT_LABEL_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum ActError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: need {expected} bytes, have {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("{found} bytes past the declared payload of {expected}")]
    TrailingData { expected: usize, found: usize },
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),
    #[error("sample {sample}: {field} = {value} is not a 0/1 label")]
    InvalidLabel { sample: usize, field: &'static str, value: u8 },
    #[error("data length {found} does not match N x L x H x D = {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("layout dimension {0} exceeds u16")]
    LayoutTooLarge(usize),
    #[error("invalid plant: {0}")]
    InvalidPlant(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
}

impl Layout {
    pub fn new(layers: usize, heads: usize, dim: usize) -> Self {
        Layout { layers, heads, dim }
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.layers * self.heads * self.dim
    }

    pub fn head_count(&self) -> usize {
        self.layers * self.heads
    }

    pub fn contains(&self, layer: usize, head: usize) -> bool {
        layer < self.layers && head < self.heads
    }

    /// All (layer, head) pairs in layer-major order.
    pub fn heads_iter(&self) -> impl Iterator<Item = (usize, usize)> {
        let heads = self.heads;
        (0..self.layers).flat_map(move |l| (0..heads).map(move |h| (l, h)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleLabel {
    pub sample_id: u64,
    pub y_p: u8,
    pub y_o: u8,
    /// 0 = TB, 1 = FB.
    pub condition: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelKind {
    #[serde(rename = "y_p")]
    Protagonist,
    #[serde(rename = "y_o")]
    Omniscient,
}

impl LabelKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LabelKind::Protagonist),
            1 => Some(LabelKind::Omniscient),
            _ => None,
        }
    }

    pub fn of(self, label: &SampleLabel) -> bool {
        match self {
            LabelKind::Protagonist => label.y_p == 1,
            LabelKind::Omniscient => label.y_o == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    layout: Layout,
    labels: Vec<SampleLabel>,
    data: Vec<f32>,
}

impl ActivationSet {
    pub fn new(layout: Layout, labels: Vec<SampleLabel>, data: Vec<f32>) -> Result<Self, ActError> {
        for d in [layout.layers, layout.heads, layout.dim] {
            if d > u16::MAX as usize {
                return Err(ActError::LayoutTooLarge(d));
            }
        }
        let expected = labels.len() * layout.sample_len();
        if data.len() != expected {
            return Err(ActError::ShapeMismatch { expected, found: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ActError::NonFiniteValue(i));
        }
        for (sample, l) in labels.iter().enumerate() {
            for (field, value) in [("y_p", l.y_p), ("y_o", l.y_o), ("condition", l.condition)] {
                if value > 1 {
                    return Err(ActError::InvalidLabel { sample, field, value });
                }
            }
        }
        Ok(ActivationSet { layout, labels, data })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[SampleLabel] {
        &self.labels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn head(&self, sample: usize, layer: usize, head: usize) -> &[f32] {
        let d = self.layout.dim;
        let start = sample * self.layout.sample_len() + (layer * self.layout.heads + head) * d;
        &self.data[start..start + d]
    }

    /// Row-major N x D matrix of one head's activations.
    pub fn head_matrix(&self, layer: usize, head: usize) -> Vec<f32> {
        (0..self.len()).flat_map(|i| self.head(i, layer, head).iter().copied()).collect()
    }

    pub fn targets(&self, kind: LabelKind) -> Vec<bool> {
        self.labels.iter().map(|l| kind.of(l)).collect()
    }

    /// Same data with one label column replaced.
    pub fn with_targets(&self, kind: LabelKind, targets: &[bool]) -> Self {
        let mut out = self.clone();
        for (l, &t) in out.labels.iter_mut().zip(targets) {
            match kind {
                LabelKind::Protagonist => l.y_p = t as u8,
                LabelKind::Omniscient => l.y_o = t as u8,
            }
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        ACT_HEADER_BYTES + self.len() * ACT_LABEL_BYTES + self.data.len() * 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&ACT_MAGIC);
        out.extend_from_slice(&ACT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for d in [self.layout.layers, self.layout.heads, self.layout.dim, 0] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        out.extend_from_slice(&[0u8; 8]);
        for l in &self.labels {
            out.extend_from_slice(&l.sample_id.to_le_bytes());
            out.extend_from_slice(&[l.y_p, l.y_o, l.condition, 0, 0, 0, 0, 0]);
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ActError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(ActError::TruncatedFile { expected: n, found: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != ACT_MAGIC {
            return Err(ActError::BadMagic(magic));
        }
        need(ACT_HEADER_BYTES)?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != ACT_VERSION {
            return Err(ActError::VersionMismatch { found: version, expected: ACT_VERSION });
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap()) as usize;
        let layout = Layout::new(u16_at(16), u16_at(18), u16_at(20));
        let label_end = n
            .checked_mul(ACT_LABEL_BYTES)
            .and_then(|b| b.checked_add(ACT_HEADER_BYTES))
            .ok_or(ActError::TruncatedFile { expected: usize::MAX, found: bytes.len() })?;
        let total = n
            .checked_mul(layout.sample_len())
            .and_then(|v| v.checked_mul(4))
            .and_then(|b| b.checked_add(label_end))
            .ok_or(ActError::TruncatedFile { expected: usize::MAX, found: bytes.len() })?;
        need(total)?;
        if bytes.len() > total {
            return Err(ActError::TrailingData { expected: total, found: bytes.len() - total });
        }
        let labels = bytes[ACT_HEADER_BYTES..label_end]
            .chunks_exact(ACT_LABEL_BYTES)
            .map(|c| SampleLabel {
                sample_id: u64::from_le_bytes(c[0..8].try_into().unwrap()),
                y_p: c[8],
                y_o: c[9],
                condition: c[10],
            })
            .collect();
        let data = bytes[label_end..total].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        ActivationSet::new(layout, labels, data)
    }
}

pub fn write_act(path: &Path, set: &ActivationSet) -> Result<(), ActError> {
    fs::write(path, set.to_bytes()).map_err(|source| ActError::Io { path: path.to_path_buf(), source })
}

pub fn read_act(path: &Path) -> Result<ActivationSet, ActError> {
    let bytes = fs::read(path).map_err(|source| ActError::Io { path: path.to_path_buf(), source })?;
    ActivationSet::from_bytes(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedHead {
    pub layer: usize,
    pub head: usize,
    /// Unit-norm class direction.
    pub direction: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub planted: Vec<PlantedHead>,
    /// Distance between the two class means along the direction.
    pub margin: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl PlantSpec {
    /// Plant with seeded random unit directions at the given heads.
    pub fn random(layout: Layout, heads: &[(usize, usize)], margin: f32, noise_sigma: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1CE);
        let planted = heads
            .iter()
            .map(|&(layer, head)| {
                let v: Vec<f64> = (0..layout.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                PlantedHead { layer, head, direction: v.iter().map(|x| (x / norm) as f32).collect() }
            })
            .collect();
        PlantSpec { planted, margin, noise_sigma, seed }
    }

    fn validate(&self, layout: Layout) -> Result<(), ActError> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(ActError::InvalidPlant(format!("margin {} must be finite and >= 0", self.margin)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ActError::InvalidPlant(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        for p in &self.planted {
            if !layout.contains(p.layer, p.head) {
                return Err(ActError::InvalidPlant(format!("head ({}, {}) outside layout", p.layer, p.head)));
            }
            if p.direction.len() != layout.dim {
                return Err(ActError::InvalidPlant(format!("direction length {} != D", p.direction.len())));
            }
            let norm = p.direction.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(ActError::InvalidPlant(format!("direction norm {norm} is not 1")));
            }
        }
        Ok(())
    }
}

/// Synthetic set: isotropic noise everywhere plus class means at
/// `±margin/2 · direction` on planted heads. Sample `i` has label `i % 2`.
pub fn synth_activations(layout: Layout, plant: &PlantSpec, n: usize) -> Result<ActivationSet, ActError> {
    plant.validate(layout)?;
    if n % 2 != 0 {
        return Err(ActError::InvalidPlant(format!("n = {n} must be even for balanced labels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plant.seed);
    let mut offsets: Vec<Option<&[f32]>> = vec![None; layout.head_count()];
    for p in &plant.planted {
        offsets[p.layer * layout.heads + p.head] = Some(&p.direction);
    }
    let half = plant.margin as f64 / 2.0;
    let mut data = Vec::with_capacity(n * layout.sample_len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for dir in &offsets {
            for d in 0..layout.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mean = dir.map_or(0.0, |v| sign * half * v[d] as f64);
                data.push((mean + plant.noise_sigma as f64 * z) as f32);
            }
        }
        labels.push(SampleLabel { sample_id: i as u64, y_p: y, y_o: y, condition: ((i / 2) % 2) as u8 });
    }
    ActivationSet::new(layout, labels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> ActivationSet {
        let layout = Layout::new(2, 4, 8);
        let plant = PlantSpec::random(layout, &[(1, 2)], 6.0, 1.0, 3);
        synth_activations(layout, &plant, 10).unwrap()
    }

    #[test]
    fn round_trip_bit_identical() {
        let set = small();
        let bytes = set.to_bytes();
        assert_eq!(bytes.len(), 32 + 10 * 16 + 10 * 2 * 4 * 8 * 4);
        let back = ActivationSet::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, set);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = small().to_bytes();
        assert!(matches!(ActivationSet::from_bytes(&bytes[..bytes.len() - 1]), Err(ActError::TruncatedFile { .. })));
        assert!(matches!(ActivationSet::from_bytes(&bytes[..10]), Err(ActError::TruncatedFile { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ActivationSet::from_bytes(&bad), Err(ActError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(ActivationSet::from_bytes(&bad), Err(ActError::VersionMismatch { found: 9, .. })));
        let mut bad = bytes.clone();
        let at = bad.len() - 4;
        bad[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(ActivationSet::from_bytes(&bad), Err(ActError::NonFiniteValue(_))));
        let mut bad = bytes.clone();
        bad[32 + 8] = 2;
        assert!(matches!(ActivationSet::from_bytes(&bad), Err(ActError::InvalidLabel { field: "y_p", .. })));
        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(ActivationSet::from_bytes(&bad), Err(ActError::TrailingData { .. })));
    }

    #[test]
    fn synth_is_seed_deterministic() {
        assert_eq!(small().to_bytes(), small().to_bytes());
    }

    #[test]
    fn zero_margin_matches_noise_only() {
        let layout = Layout::new(1, 2, 4);
        let mut plant = PlantSpec::random(layout, &[(0, 1)], 0.0, 1.0, 5);
        let a = synth_activations(layout, &plant, 6).unwrap();
        plant.planted.clear();
        let b = synth_activations(layout, &plant, 6).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn odd_n_rejected() {
        let layout = Layout::new(1, 1, 2);
        let plant = PlantSpec::random(layout, &[], 1.0, 1.0, 0);
        assert!(matches!(synth_activations(layout, &plant, 3), Err(ActError::InvalidPlant(_))));
    }

    proptest! {
        #[test]
        fn file_size_formula(n in 0usize..6, l in 1usize..4, h in 1usize..4, d in 1usize..6, seed in any::<u64>()) {
            let layout = Layout::new(l, h, d);
            let plant = PlantSpec::random(layout, &[], 1.0, 1.0, seed);
            let set = synth_activations(layout, &plant, n * 2).unwrap();
            let bytes = set.to_bytes();
            prop_assert_eq!(bytes.len(), 32 + n * 2 * (8 + 3 + 5) + n * 2 * l * h * d * 4);
            prop_assert_eq!(ActivationSet::from_bytes(&bytes).unwrap(), set);
        }
    }
}
