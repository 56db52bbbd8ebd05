//! Accuracy over a (k, alpha) grid of interventions.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fixture::EvalItem;
use super::model::RefTransformer;
use super::{build_intervention, InterventionError, InterventionSpec};
use crate::activation::ActivationSet;
use crate::annotator::{ItemCondition, QaCategory};
use crate::evalharness::{score, AnswerKey, AnswerRecord, KeyEntry, ParsedAnswer};
use crate::probe::ProbeAtlas;

/// Argmax over the two logits; ties and non-finite logits are Invalid.
pub fn answer_of(logits: [f64; 2]) -> ParsedAnswer {
    let [a, b] = logits;
    if !a.is_finite() || !b.is_finite() || a == b {
        ParsedAnswer::Invalid
    } else if a > b {
        ParsedAnswer::A
    } else {
        ParsedAnswer::B
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub tb: f64,
    pub fb: f64,
    pub both: f64,
    pub invalid_count: usize,
    pub answers: Vec<ParsedAnswer>,
}

fn key_for(items: &[EvalItem]) -> AnswerKey {
    AnswerKey::from_entries(items.iter().map(|it| KeyEntry {
        qa_id: it.qa_id.clone(),
        pair_id: it.pair_id,
        condition: ItemCondition::from(it.condition),
        category: QaCategory::FirstOrder,
        correct: it.correct,
        options: ["A".into(), "B".into()],
    }))
}

pub fn evaluate(model: &RefTransformer, items: &[EvalItem], spec: &InterventionSpec) -> Result<EvalOutcome, InterventionError> {
    spec.check_against(model.layout())?;
    let answers: Vec<ParsedAnswer> = items
        .par_iter()
        .map(|it| model.forward_intervened(&it.tokens, spec).map(|o| answer_of(o.logits)))
        .collect::<Result<_, _>>()?;
    let records: Vec<AnswerRecord> = items
        .iter()
        .zip(&answers)
        .map(|(it, &parsed)| AnswerRecord {
            qa_id: it.qa_id.clone(),
            raw_text: String::new(),
            parsed,
            pair_id: it.pair_id,
            condition: ItemCondition::from(it.condition),
            category: QaCategory::FirstOrder,
        })
        .collect();
    let report = score(&records, &key_for(items))?;
    let c = report.category(QaCategory::FirstOrder);
    let get = |f: fn(&crate::evalharness::CategoryReport) -> Option<f64>| c.and_then(f).unwrap_or(0.0);
    Ok(EvalOutcome {
        tb: get(|r| r.tb_acc),
        fb: get(|r| r.fb_acc),
        both: get(|r| r.both_acc),
        invalid_count: answers.iter().filter(|a| **a == ParsedAnswer::Invalid).count(),
        answers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub alpha: f64,
    pub tb: f64,
    pub fb: f64,
    pub both: f64,
    pub invalid_count: usize,
}

/// One row per (k, alpha), k-major in grid order.
pub fn sweep(
    model: &RefTransformer,
    items: &[EvalItem],
    atlas: &ProbeAtlas,
    acts: &ActivationSet,
    k_grid: &[usize],
    alpha_grid: &[f64],
) -> Result<Vec<SweepRow>, InterventionError> {
    if k_grid.is_empty() {
        return Err(InterventionError::EmptyGrid("k"));
    }
    if alpha_grid.is_empty() {
        return Err(InterventionError::EmptyGrid("alpha"));
    }
    let mut rows = Vec::with_capacity(k_grid.len() * alpha_grid.len());
    for &k in k_grid {
        let base = build_intervention(atlas, acts, k, 0.0)?;
        for &alpha in alpha_grid {
            let spec = base.with_alpha(alpha);
            let out = evaluate(model, items, &spec)?;
            rows.push(SweepRow { k, alpha, tb: out.tb, fb: out.fb, both: out.both, invalid_count: out.invalid_count });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k,alpha,tb,fb,both,invalid_count\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4},{:.4},{:.4},{}\n", r.k, r.alpha, r.tb, r.fb, r.both, r.invalid_count));
    }
    s
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), InterventionError> {
    fs::write(path, sweep_csv(rows)).map_err(|source| InterventionError::Io { path: path.to_path_buf(), source })
}

pub fn write_eval_jsonl(path: &Path, items: &[EvalItem]) -> Result<(), InterventionError> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("items serialize"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|source| InterventionError::Io { path: path.to_path_buf(), source })
}

pub fn read_eval_jsonl(path: &Path) -> Result<Vec<EvalItem>, InterventionError> {
    let io_err = |source| InterventionError::Io { path: path.to_path_buf(), source };
    let f = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| InterventionError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}
