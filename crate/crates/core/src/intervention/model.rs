//! Reference multi-head transformer built only from attention blocks.
//!
//! Each layer updates the residual stream `T` as
//! `T <- T + sum_h Attn_h(P_h T) W°_h`, where `P_h` maps the `H*D` stream
//! into a `D`-wide head space and `W°_h` is head h's `D x H*D` slice of the
//! output projection. There is no normalization and no MLP. Head outputs are
//! tapped (and optionally steered) between `Attn_h` and `W°`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{InterventionError, InterventionSpec};
use crate::activation::Layout;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"GTMW";
pub const WEIGHTS_VERSION: u32 = 1;
/// magic, version, then layers, heads, dim, vocab, max_len as u32.
pub const WEIGHTS_HEADER_BYTES: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl ModelShape {
    pub fn stream(&self) -> usize {
        self.heads * self.dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.layers, self.heads, self.dim)
    }
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { layers: 4, heads: 8, dim: 16, vocab: 32, max_len: 32 }
    }
}

/// Per-layer weights. Head matrices are stacked head-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// H x (D x DH): head input projections, row-major.
    pub p: Vec<f32>,
    /// H x (D x D) each; `q = Wq z` for head-space row `z`.
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    /// (H*D) x DH; rows h*D..(h+1)*D are head h's slice.
    pub w_o: Vec<f32>,
}

impl LayerWeights {
    fn zeros(s: &ModelShape) -> Self {
        let (h, d, dh) = (s.heads, s.dim, s.stream());
        LayerWeights {
            p: vec![0.0; h * d * dh],
            wq: vec![0.0; h * d * d],
            wk: vec![0.0; h * d * d],
            wv: vec![0.0; h * d * d],
            w_o: vec![0.0; dh * dh],
        }
    }

    fn tensors(&self) -> [&Vec<f32>; 5] {
        [&self.p, &self.wq, &self.wk, &self.wv, &self.w_o]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f32>; 5] {
        [&mut self.p, &mut self.wq, &mut self.wk, &mut self.wv, &mut self.w_o]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefTransformer {
    pub shape: ModelShape,
    /// vocab x DH
    pub tok_emb: Vec<f32>,
    /// max_len x DH
    pub pos_emb: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    /// DH x 2
    pub readout: Vec<f32>,
    pub readout_bias: [f32; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: [f64; 2],
    /// L x H x D final-token head outputs in `Layout` order.
    pub captures: Vec<f32>,
}

impl RefTransformer {
    pub fn zeros(shape: ModelShape) -> Self {
        let dh = shape.stream();
        RefTransformer {
            shape,
            tok_emb: vec![0.0; shape.vocab * dh],
            pos_emb: vec![0.0; shape.max_len * dh],
            layers: (0..shape.layers).map(|_| LayerWeights::zeros(&shape)).collect(),
            readout: vec![0.0; dh * 2],
            readout_bias: [0.0; 2],
        }
    }

    /// Gaussian weights scaled by 1/sqrt(fan-in).
    pub fn random(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = RefTransformer::zeros(shape);
        let (d, dh) = (shape.dim as f64, shape.stream() as f64);
        let mut fill = |v: &mut [f32], scale: f64| {
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = (z * scale) as f32;
            }
        };
        fill(&mut m.tok_emb, 1.0);
        fill(&mut m.pos_emb, 0.1);
        for layer in &mut m.layers {
            let [p, wq, wk, wv, w_o] = layer.tensors_mut();
            fill(p, 1.0 / dh.sqrt());
            fill(wq, 1.0 / d.sqrt());
            fill(wk, 1.0 / d.sqrt());
            fill(wv, 1.0 / d.sqrt());
            fill(w_o, 1.0 / dh.sqrt());
        }
        fill(&mut m.readout, 1.0 / dh.sqrt());
        m
    }

    pub fn layout(&self) -> Layout {
        self.shape.layout()
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardOutput, InterventionError> {
        self.run(tokens, None)
    }

    pub fn forward_intervened(&self, tokens: &[u32], spec: &InterventionSpec) -> Result<ForwardOutput, InterventionError> {
        spec.check_against(self.layout())?;
        self.run(tokens, Some(spec))
    }

    fn run(&self, tokens: &[u32], spec: Option<&InterventionSpec>) -> Result<ForwardOutput, InterventionError> {
        let s = self.shape;
        let (hn, d, dh, n) = (s.heads, s.dim, s.stream(), tokens.len());
        if n == 0 {
            return Err(InterventionError::EmptyInput);
        }
        if n > s.max_len {
            return Err(InterventionError::LengthOverflow { len: n, max: s.max_len });
        }
        let mut stream = vec![0.0f64; n * dh];
        for (t, &tok) in tokens.iter().enumerate() {
            let tok = tok as usize;
            if tok >= s.vocab {
                return Err(InterventionError::UnknownToken { token: tok, vocab: s.vocab });
            }
            for j in 0..dh {
                stream[t * dh + j] = self.tok_emb[tok * dh + j] as f64 + self.pos_emb[t * dh + j] as f64;
            }
        }
        let mut steer: Vec<Option<Vec<f64>>> = vec![None; s.layers * hn];
        if let Some(spec) = spec {
            for e in &spec.entries {
                let scale = spec.alpha * e.sigma;
                if scale == 0.0 {
                    continue;
                }
                let slot = steer[e.layer * hn + e.head].get_or_insert_with(|| vec![0.0; d]);
                for (acc, &th) in slot.iter_mut().zip(&e.theta) {
                    *acc += scale * th as f64;
                }
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut captures = vec![0.0f32; s.layers * hn * d];
        let mut heads_out = vec![0.0f64; n * hn * d];
        let (mut z, mut q, mut k, mut v) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
        let mut weights = vec![0.0f64; n];
        for (l, lw) in self.layers.iter().enumerate() {
            for h in 0..hn {
                let p = &lw.p[h * d * dh..(h + 1) * d * dh];
                for t in 0..n {
                    let x = &stream[t * dh..(t + 1) * dh];
                    for r in 0..d {
                        z[t * d + r] = dot_f32(&p[r * dh..(r + 1) * dh], x);
                    }
                }
                let off = h * d * d;
                for (out, w) in [(&mut q, &lw.wq), (&mut k, &lw.wk), (&mut v, &lw.wv)] {
                    let w = &w[off..off + d * d];
                    for t in 0..n {
                        let zt = &z[t * d..(t + 1) * d];
                        for r in 0..d {
                            out[t * d + r] = dot_f32(&w[r * d..(r + 1) * d], zt);
                        }
                    }
                }
                for t in 0..n {
                    let qt = &q[t * d..(t + 1) * d];
                    let mut max = f64::NEG_INFINITY;
                    for u in 0..=t {
                        let sc = qt.iter().zip(&k[u * d..(u + 1) * d]).map(|(a, b)| a * b).sum::<f64>() * scale;
                        weights[u] = sc;
                        max = max.max(sc);
                    }
                    let mut total = 0.0;
                    for w in &mut weights[..=t] {
                        *w = (*w - max).exp();
                        total += *w;
                    }
                    let out = &mut heads_out[(t * hn + h) * d..(t * hn + h + 1) * d];
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for u in 0..=t {
                        let a = weights[u] / total;
                        for (o, &vv) in out.iter_mut().zip(&v[u * d..(u + 1) * d]) {
                            *o += a * vv;
                        }
                    }
                    if let Some(shift) = &steer[l * hn + h] {
                        for (o, s) in out.iter_mut().zip(shift) {
                            *o += s;
                        }
                    }
                }
                let last = &heads_out[((n - 1) * hn + h) * d..((n - 1) * hn + h + 1) * d];
                let cap = &mut captures[(l * hn + h) * d..(l * hn + h + 1) * d];
                for (c, &o) in cap.iter_mut().zip(last) {
                    *c = o as f32;
                }
            }
            for t in 0..n {
                let a = &heads_out[t * hn * d..(t + 1) * hn * d];
                let x = &mut stream[t * dh..(t + 1) * dh];
                for (r, &ar) in a.iter().enumerate() {
                    if ar == 0.0 {
                        continue;
                    }
                    for (xj, &w) in x.iter_mut().zip(&lw.w_o[r * dh..(r + 1) * dh]) {
                        *xj += ar * w as f64;
                    }
                }
            }
        }
        let x = &stream[(n - 1) * dh..n * dh];
        let mut logits = [self.readout_bias[0] as f64, self.readout_bias[1] as f64];
        for (j, &xj) in x.iter().enumerate() {
            logits[0] += xj * self.readout[j * 2] as f64;
            logits[1] += xj * self.readout[j * 2 + 1] as f64;
        }
        Ok(ForwardOutput { logits, captures })
    }

    fn tensor_lens(&self) -> Vec<usize> {
        let s = self.shape;
        let (h, d, dh) = (s.heads, s.dim, s.stream());
        let mut lens = vec![s.vocab * dh, s.max_len * dh];
        for _ in 0..s.layers {
            lens.extend([h * d * dh, h * d * d, h * d * d, h * d * d, dh * dh]);
        }
        lens.extend([dh * 2, 2]);
        lens
    }

    /// Header followed by float32-LE tensors: tok_emb, pos_emb, then per layer
    /// P, Wq, Wk, Wv, W°, then readout and readout bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.shape;
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        for v in [s.layers, s.heads, s.dim, s.vocab, s.max_len] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut push = |v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        push(&self.tok_emb);
        push(&self.pos_emb);
        for l in &self.layers {
            for t in l.tensors() {
                push(t);
            }
        }
        push(&self.readout);
        push(&self.readout_bias);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InterventionError> {
        if bytes.len() < WEIGHTS_HEADER_BYTES {
            return Err(InterventionError::TruncatedFile { expected: WEIGHTS_HEADER_BYTES, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != WEIGHTS_MAGIC {
            return Err(InterventionError::BadMagic(magic));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != WEIGHTS_VERSION {
            return Err(InterventionError::VersionMismatch { found: version, expected: WEIGHTS_VERSION });
        }
        let dims: Vec<usize> = (0..5).map(|i| u32_at(8 + 4 * i) as usize).collect();
        let shape = ModelShape { layers: dims[0], heads: dims[1], dim: dims[2], vocab: dims[3], max_len: dims[4] };
        if shape.layers == 0 || shape.heads == 0 || shape.dim == 0 || shape.vocab == 0 || shape.max_len == 0 {
            return Err(InterventionError::InvalidShape(shape));
        }
        if shape.layers.max(shape.heads).max(shape.dim) > u16::MAX as usize
            || shape.stream() > 1 << 16
            || shape.vocab.max(shape.max_len) > 1 << 20
        {
            return Err(InterventionError::InvalidShape(shape));
        }
        let mut m = RefTransformer::zeros(shape);
        let expected = WEIGHTS_HEADER_BYTES + 4 * m.tensor_lens().iter().sum::<usize>();
        if bytes.len() < expected {
            return Err(InterventionError::TruncatedFile { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(InterventionError::TrailingData(bytes.len() - expected));
        }
        let mut values = bytes[WEIGHTS_HEADER_BYTES..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut index = 0usize;
        let mut take = |dst: &mut [f32]| -> Result<(), InterventionError> {
            for x in dst.iter_mut() {
                let v = values.next().expect("length checked");
                if !v.is_finite() {
                    return Err(InterventionError::NonFiniteValue(index));
                }
                *x = v;
                index += 1;
            }
            Ok(())
        };
        take(&mut m.tok_emb)?;
        take(&mut m.pos_emb)?;
        for l in &mut m.layers {
            for t in l.tensors_mut() {
                take(t)?;
            }
        }
        take(&mut m.readout)?;
        take(&mut m.readout_bias)?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), InterventionError> {
        fs::write(path, self.to_bytes()).map_err(|source| InterventionError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, InterventionError> {
        let bytes = fs::read(path).map_err(|source| InterventionError::Io { path: path.to_path_buf(), source })?;
        RefTransformer::from_bytes(&bytes)
    }
}

fn dot_f32(w: &[f32], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn small() -> ModelShape {
        ModelShape { layers: 2, heads: 2, dim: 4, vocab: 6, max_len: 8 }
    }

    /// Direct matrix evaluation of the residual update, written independently
    /// of the loop-based forward pass.
    fn naive_logits(m: &RefTransformer, tokens: &[u32]) -> [f64; 2] {
        let s = m.shape;
        let (hn, d, dh, n) = (s.heads, s.dim, s.stream(), tokens.len());
        let mat = |v: &[f32], r: usize, c: usize| DMatrix::from_row_slice(r, c, &v.iter().map(|&x| x as f64).collect::<Vec<_>>());
        let mut t = DMatrix::<f64>::zeros(n, dh);
        for (i, &tok) in tokens.iter().enumerate() {
            for j in 0..dh {
                t[(i, j)] = m.tok_emb[tok as usize * dh + j] as f64 + m.pos_emb[i * dh + j] as f64;
            }
        }
        for lw in &m.layers {
            let mut update = DMatrix::<f64>::zeros(n, dh);
            for h in 0..hn {
                let p = mat(&lw.p[h * d * dh..(h + 1) * d * dh], d, dh);
                let z = &t * p.transpose();
                let q = &z * mat(&lw.wq[h * d * d..(h + 1) * d * d], d, d).transpose();
                let k = &z * mat(&lw.wk[h * d * d..(h + 1) * d * d], d, d).transpose();
                let v = &z * mat(&lw.wv[h * d * d..(h + 1) * d * d], d, d).transpose();
                let mut scores = &q * k.transpose() / (d as f64).sqrt();
                for i in 0..n {
                    for j in i + 1..n {
                        scores[(i, j)] = f64::NEG_INFINITY;
                    }
                    let row_max = (0..=i).map(|j| scores[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = (0..=i).map(|j| (scores[(i, j)] - row_max).exp()).sum();
                    for j in 0..n {
                        scores[(i, j)] = if j <= i { (scores[(i, j)] - row_max).exp() / total } else { 0.0 };
                    }
                }
                let attn = scores * v;
                let w_o_h = mat(&lw.w_o[h * d * dh..(h + 1) * d * dh], d, dh);
                update += attn * w_o_h;
            }
            t += update;
        }
        let last = t.row(n - 1);
        let r = mat(&m.readout, dh, 2);
        let out = last * r;
        [out[0] + m.readout_bias[0] as f64, out[1] + m.readout_bias[1] as f64]
    }

    #[test]
    fn matches_naive_residual_composition() {
        for seed in 0..5 {
            let m = RefTransformer::random(small(), seed);
            for tokens in [vec![0u32], vec![1, 2, 3], vec![5, 4, 3, 2, 1, 0, 1, 2]] {
                let got = m.forward(&tokens).unwrap().logits;
                let want = naive_logits(&m, &tokens);
                for i in 0..2 {
                    assert!((got[i] - want[i]).abs() <= 1e-6, "seed {seed}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn zero_model_returns_bias() {
        let mut m = RefTransformer::zeros(small());
        m.readout_bias = [0.25, -3.0];
        let out = m.forward(&[1, 2]).unwrap();
        assert_eq!(out.logits, [0.25, -3.0]);
        assert_eq!(out.captures.len(), 2 * 2 * 4);
    }

    #[test]
    fn deterministic_and_bounded() {
        let m = RefTransformer::random(small(), 9);
        assert_eq!(m.forward(&[1, 2, 3]).unwrap(), m.forward(&[1, 2, 3]).unwrap());
        assert!(matches!(m.forward(&[0; 9]), Err(InterventionError::LengthOverflow { len: 9, max: 8 })));
        assert!(matches!(m.forward(&[]), Err(InterventionError::EmptyInput)));
        assert!(matches!(m.forward(&[6]), Err(InterventionError::UnknownToken { .. })));
    }

    #[test]
    fn weights_round_trip_and_corruption() {
        let m = RefTransformer::random(small(), 3);
        let bytes = m.to_bytes();
        let back = RefTransformer::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RefTransformer::from_bytes(&bad), Err(InterventionError::BadMagic(_))));
        assert!(matches!(
            RefTransformer::from_bytes(&bytes[..bytes.len() - 1]),
            Err(InterventionError::TruncatedFile { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(RefTransformer::from_bytes(&long), Err(InterventionError::TrailingData(1))));
        let mut nan = bytes.clone();
        nan[WEIGHTS_HEADER_BYTES..WEIGHTS_HEADER_BYTES + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(RefTransformer::from_bytes(&nan), Err(InterventionError::NonFiniteValue(0))));
    }
}
