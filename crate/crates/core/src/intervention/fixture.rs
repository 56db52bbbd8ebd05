//! A reference model with known belief-carrying heads.
//!
//! Stream dim 0 carries a sign token (+amp for TB, -amp for FB). Only the
//! planted heads read it: head dim 0 copies stream dim 0 under uniform
//! attention, and their output projection writes it into stream dim 1
//! with a gain that maps the sign onto a logit offset of ±1. The readout compares
//! stream dim 1 against a negative bias, so the unsteered model answers B
//! everywhere. No other head reads or writes dims 0 and 1, so the answer
//! logits are affine in any steering applied to the planted heads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ModelShape, RefTransformer};
use super::{InterventionError, InterventionSpec};
use crate::activation::{ActivationSet, SampleLabel};
use crate::annotator::OptionLetter;
use crate::scenario::Condition;

pub const QUERY_TOKEN: u32 = 0;
pub const TB_SIGNAL_TOKEN: u32 = 1;
pub const FB_SIGNAL_TOKEN: u32 = 2;
pub const FIRST_FILLER_TOKEN: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub qa_id: String,
    pub pair_id: usize,
    pub condition: Condition,
    pub tokens: Vec<u32>,
    pub correct: OptionLetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub shape: ModelShape,
    pub planted: Vec<(usize, usize)>,
    /// Tokens per item, query included.
    pub seq_len: usize,
    pub signal_amp: f64,
    pub filler_noise: f64,
    /// Bias on logit A; logit B has none.
    pub bias: f64,
    pub probe_pairs: usize,
    pub eval_pairs: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            shape: ModelShape { layers: 4, heads: 8, dim: 16, vocab: 32, max_len: 16 },
            planted: vec![(3, 1), (3, 4), (3, 6)],
            seq_len: 8,
            signal_amp: 4.0,
            filler_noise: 0.2,
            bias: -1.5,
            probe_pairs: 200,
            eval_pairs: 100,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub config: FixtureConfig,
    pub model: RefTransformer,
    pub probe_items: Vec<EvalItem>,
    pub eval_items: Vec<EvalItem>,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f32 {
    let z: f64 = StandardNormal.sample(rng);
    (z * sd) as f32
}

fn build_model(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> RefTransformer {
    let shape = cfg.shape;
    let (hn, d, dh) = (shape.heads, shape.dim, shape.stream());
    let mut m = RefTransformer::random(shape, rng.gen());
    for tok in 0..shape.vocab {
        let row = &mut m.tok_emb[tok * dh..(tok + 1) * dh];
        match tok as u32 {
            TB_SIGNAL_TOKEN | FB_SIGNAL_TOKEN => {
                row.iter_mut().for_each(|x| *x = 0.0);
                row[0] = if tok as u32 == TB_SIGNAL_TOKEN { cfg.signal_amp as f32 } else { -cfg.signal_amp as f32 };
            }
            QUERY_TOKEN => {
                row[0] = 0.0;
                row[1] = 0.0;
            }
            _ => {
                row[0] = normal(rng, cfg.filler_noise);
                row[1] = 0.0;
            }
        }
    }
    for t in 0..shape.max_len {
        m.pos_emb[t * dh] = 0.0;
        m.pos_emb[t * dh + 1] = 0.0;
    }
    let gain = cfg.seq_len as f64 / (cfg.planted.len().max(1) as f64 * cfg.signal_amp);
    for (l, lw) in m.layers.iter_mut().enumerate() {
        for h in 0..hn {
            let planted = cfg.planted.contains(&(l, h));
            let p = &mut lw.p[h * d * dh..(h + 1) * d * dh];
            for r in 0..d {
                p[r * dh] = 0.0;
                p[r * dh + 1] = 0.0;
            }
            let w_o = &mut lw.w_o[h * d * dh..(h + 1) * d * dh];
            for r in 0..d {
                w_o[r * dh] = 0.0;
                w_o[r * dh + 1] = 0.0;
            }
            if planted {
                p[..dh].iter_mut().for_each(|x| *x = 0.0);
                p[0] = 1.0;
                let off = h * d * d;
                lw.wq[off..off + d * d].iter_mut().for_each(|x| *x = 0.0);
                lw.wk[off..off + d * d].iter_mut().for_each(|x| *x = 0.0);
                let wv = &mut lw.wv[off..off + d * d];
                for r in 0..d {
                    for c in 0..d {
                        wv[r * d + c] = if r == c { 1.0 } else { 0.0 };
                    }
                }
                w_o[..dh].iter_mut().for_each(|x| *x = 0.0);
                w_o[1] = gain as f32;
            }
        }
    }
    m.readout.iter_mut().for_each(|x| *x = 0.0);
    m.readout[2] = 1.0;
    m.readout_bias = [cfg.bias as f32, 0.0];
    m
}

fn make_items(cfg: &FixtureConfig, pairs: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Vec<EvalItem> {
    let fillers: Vec<u32> = (FIRST_FILLER_TOKEN..cfg.shape.vocab as u32).collect();
    let mut out = Vec::with_capacity(pairs * 2);
    for pair_id in 0..pairs {
        let mut tokens: Vec<u32> = (0..cfg.seq_len - 1).map(|_| *fillers.choose(rng).expect("fillers")).collect();
        let at = rng.gen_range(0..cfg.seq_len - 1);
        tokens.push(QUERY_TOKEN);
        for cond in Condition::BOTH {
            let mut t = tokens.clone();
            let (signal, correct) = match cond {
                Condition::TrueBelief => (TB_SIGNAL_TOKEN, OptionLetter::A),
                Condition::FalseBelief => (FB_SIGNAL_TOKEN, OptionLetter::B),
            };
            t[at] = signal;
            out.push(EvalItem {
                qa_id: format!("{prefix}{pair_id:04}_{}", cond.short()),
                pair_id,
                condition: cond,
                tokens: t,
                correct,
            });
        }
    }
    out
}

pub fn planted_fixture(cfg: &FixtureConfig) -> Fixture {
    assert!(cfg.seq_len >= 2 && cfg.seq_len <= cfg.shape.max_len, "seq_len must fit the model");
    assert!(cfg.shape.vocab > FIRST_FILLER_TOKEN as usize, "vocab needs filler tokens");
    assert!(cfg.shape.stream() >= 2, "stream needs two reserved dims");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = build_model(cfg, &mut rng);
    let probe_items = make_items(cfg, cfg.probe_pairs, "probe", &mut rng);
    let eval_items = make_items(cfg, cfg.eval_pairs, "eval", &mut rng);
    Fixture { config: cfg.clone(), model, probe_items, eval_items }
}

/// Final-token captures for every item; TB items are the positive class.
pub fn capture_activations(
    model: &RefTransformer,
    items: &[EvalItem],
    spec: Option<&InterventionSpec>,
) -> Result<ActivationSet, InterventionError> {
    let outs: Vec<Vec<f32>> = items
        .par_iter()
        .map(|it| {
            let out = match spec {
                Some(s) => model.forward_intervened(&it.tokens, s)?,
                None => model.forward(&it.tokens)?,
            };
            Ok(out.captures)
        })
        .collect::<Result<_, InterventionError>>()?;
    let labels = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let y = (it.condition == Condition::TrueBelief) as u8;
            SampleLabel { sample_id: i as u64, y_p: y, y_o: y, condition: it.condition.code() }
        })
        .collect();
    Ok(ActivationSet::new(model.layout(), labels, outs.concat()).expect("captures match layout"))
}
