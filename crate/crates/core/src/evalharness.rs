//! Answer parsing and TB/FB/Both scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{read_qa_jsonl, ItemCondition, OptionLetter, QaCategory, QaItem};
use crate::pipeline::{read_split, PipelineError, QA_FILE};
use crate::scenario::{SplitName, BASE_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParsedAnswer {
    A,
    B,
    Invalid,
}

impl ParsedAnswer {
    pub fn letter(self) -> Option<OptionLetter> {
        match self {
            ParsedAnswer::A => Some(OptionLetter::A),
            ParsedAnswer::B => Some(OptionLetter::B),
            ParsedAnswer::Invalid => None,
        }
    }

    pub fn from_letter(letter: OptionLetter) -> Self {
        match letter {
            OptionLetter::A => ParsedAnswer::A,
            OptionLetter::B => ParsedAnswer::B,
        }
    }
}

struct Patterns {
    leading: Regex,
    parenthesized: Regex,
    named: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        // "A", "a.", "(B)", "[b]", "B:" at the start of the reply.
        leading: Regex::new(r"(?i)^\s*(?:\(([ab])\)|\[([ab])\]|([ab])(?:\s*$|[.):,]))").unwrap(),
        parenthesized: Regex::new(r"(?i)\(([ab])\)").unwrap(),
        named: Regex::new(r"(?i)\b(?:answer|option|choice)\s*(?:is|:)?\s*:?\s*([ab])\b").unwrap(),
    })
}

fn letter_of(s: &str) -> ParsedAnswer {
    match s.to_ascii_uppercase().as_str() {
        "A" => ParsedAnswer::A,
        "B" => ParsedAnswer::B,
        _ => ParsedAnswer::Invalid,
    }
}

fn unique(found: BTreeSet<ParsedAnswer>) -> Option<ParsedAnswer> {
    match found.len() {
        0 => None,
        1 => found.into_iter().next(),
        _ => Some(ParsedAnswer::Invalid),
    }
}

fn letters(re: &Regex, raw: &str) -> BTreeSet<ParsedAnswer> {
    re.captures_iter(raw)
        .filter_map(|c| c.iter().skip(1).flatten().next().map(|m| letter_of(m.as_str())))
        .collect()
}

/// Maps a free-text reply onto an option. Tiers are tried in order: leading
/// letter, parenthesized letter, "answer is X", then a unique option-text
/// match. Two different letters within one tier make the reply Invalid, as
/// does a leading letter contradicted by a parenthesized one.
pub fn parse_answer(raw: &str, options: &[String]) -> ParsedAnswer {
    let p = patterns();
    if let Some(c) = p.leading.captures(raw) {
        if let Some(m) = c.iter().skip(1).flatten().next() {
            let lead = letter_of(m.as_str());
            let conflict = letters(&p.parenthesized, raw).into_iter().any(|l| l != lead);
            return if conflict { ParsedAnswer::Invalid } else { lead };
        }
    }
    for re in [&p.parenthesized, &p.named] {
        if let Some(found) = unique(letters(re, raw)) {
            return found;
        }
    }
    let lower = raw.to_lowercase();
    let hits: BTreeSet<ParsedAnswer> = options
        .iter()
        .take(2)
        .enumerate()
        .filter(|(_, o)| !o.trim().is_empty() && lower.contains(&o.to_lowercase()))
        .map(|(i, _)| if i == 0 { ParsedAnswer::A } else { ParsedAnswer::B })
        .collect();
    unique(hits).unwrap_or(ParsedAnswer::Invalid)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub qa_id: String,
    pub raw_text: String,
    pub parsed: ParsedAnswer,
    pub pair_id: usize,
    pub condition: ItemCondition,
    pub category: QaCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub qa_id: String,
    pub pair_id: usize,
    pub condition: ItemCondition,
    pub category: QaCategory,
    pub correct: OptionLetter,
    pub options: [String; 2],
}

impl From<&QaItem> for KeyEntry {
    fn from(item: &QaItem) -> Self {
        KeyEntry {
            qa_id: item.id.clone(),
            pair_id: item.pair_id,
            condition: item.condition,
            category: item.category,
            correct: item.correct,
            options: item.options.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerKey {
    entries: BTreeMap<String, KeyEntry>,
}

impl AnswerKey {
    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a QaItem>) -> Self {
        AnswerKey { entries: items.into_iter().map(|i| (i.id.clone(), KeyEntry::from(i))).collect() }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = KeyEntry>) -> Self {
        AnswerKey { entries: entries.into_iter().map(|e| (e.qa_id.clone(), e)).collect() }
    }

    pub fn get(&self, qa_id: &str) -> Option<&KeyEntry> {
        self.entries.get(qa_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &KeyEntry> {
        self.entries.values()
    }

    /// Builds an answer record by parsing `raw_text` against the key.
    pub fn record(&self, qa_id: &str, raw_text: &str) -> Result<AnswerRecord, ScoreError> {
        let e = self.get(qa_id).ok_or_else(|| ScoreError::UnknownQaId(qa_id.to_string()))?;
        Ok(AnswerRecord {
            qa_id: qa_id.to_string(),
            raw_text: raw_text.to_string(),
            parsed: parse_answer(raw_text, &e.options),
            pair_id: e.pair_id,
            condition: e.condition,
            category: e.category,
        })
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("pair {pair_id} ({category:?}) lacks its {missing:?} member")]
    MissingPairMember { pair_id: usize, category: QaCategory, missing: ItemCondition },
    #[error("unknown qa_id {0}")]
    UnknownQaId(String),
    #[error("answers missing for {} qa_ids: {}", .0.len(), .0.join(", "))]
    IncompleteCoverage(Vec<String>),
    #[error("qa_id {0} answered more than once")]
    DuplicateAnswer(String),
    #[error("parse error in {path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: QaCategory,
    pub n_items: usize,
    /// TB/FB pairs; 0 for pair-less initial items.
    pub n_pairs: usize,
    /// Percent of items answered correctly.
    pub accuracy: f64,
    pub tb_acc: Option<f64>,
    pub fb_acc: Option<f64>,
    pub both_acc: Option<f64>,
    /// Fraction of items whose answer could not be parsed.
    pub invalid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub categories: Vec<CategoryReport>,
}

impl ScoreReport {
    pub fn category(&self, c: QaCategory) -> Option<&CategoryReport> {
        self.categories.iter().find(|r| r.category == c)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        let mut s = String::from("category,n_items,n_pairs,accuracy,tb,fb,both,invalid_rate\n");
        for r in &self.categories {
            s.push_str(&format!(
                "{:?},{},{},{:.4},{},{},{},{:.4}\n",
                r.category,
                r.n_items,
                r.n_pairs,
                r.accuracy,
                opt(r.tb_acc),
                opt(r.fb_acc),
                opt(r.both_acc),
                r.invalid_rate
            ));
        }
        s
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Scores records per category. Invalid answers count as incorrect.
pub fn score(records: &[AnswerRecord], key: &AnswerKey) -> Result<ScoreReport, ScoreError> {
    let mut by_cat: BTreeMap<QaCategory, Vec<(&AnswerRecord, bool)>> = BTreeMap::new();
    for r in records {
        let e = key.get(&r.qa_id).ok_or_else(|| ScoreError::UnknownQaId(r.qa_id.clone()))?;
        let ok = r.parsed.letter() == Some(e.correct);
        by_cat.entry(e.category).or_default().push((r, ok));
    }
    let mut categories = Vec::new();
    for (category, rows) in by_cat {
        let n_items = rows.len();
        let correct = rows.iter().filter(|(_, ok)| *ok).count();
        let invalid = rows.iter().filter(|(r, _)| r.parsed == ParsedAnswer::Invalid).count();
        let mut report = CategoryReport {
            category,
            n_items,
            n_pairs: 0,
            accuracy: pct(correct, n_items),
            tb_acc: None,
            fb_acc: None,
            both_acc: None,
            invalid_rate: invalid as f64 / n_items.max(1) as f64,
        };
        let conditioned: Vec<&(&AnswerRecord, bool)> =
            rows.iter().filter(|(r, _)| key.get(&r.qa_id).unwrap().condition != ItemCondition::NotApplicable).collect();
        if !conditioned.is_empty() {
            let mut pairs: BTreeMap<usize, [Option<bool>; 2]> = BTreeMap::new();
            for (r, ok) in &conditioned {
                let slot = match key.get(&r.qa_id).unwrap().condition {
                    ItemCondition::TrueBelief => 0,
                    _ => 1,
                };
                pairs.entry(r.pair_id).or_default()[slot] = Some(*ok);
            }
            let (mut tb, mut fb, mut both) = (0, 0, 0);
            for (&pair_id, members) in &pairs {
                let (Some(t), Some(f)) = (members[0], members[1]) else {
                    let missing =
                        if members[0].is_none() { ItemCondition::TrueBelief } else { ItemCondition::FalseBelief };
                    return Err(ScoreError::MissingPairMember { pair_id, category, missing });
                };
                tb += t as usize;
                fb += f as usize;
                both += (t && f) as usize;
            }
            report.n_pairs = pairs.len();
            report.tb_acc = Some(pct(tb, pairs.len()));
            report.fb_acc = Some(pct(fb, pairs.len()));
            report.both_acc = Some(pct(both, pairs.len()));
        }
        categories.push(report);
    }
    Ok(ScoreReport { categories })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub qa_id: String,
    pub raw_text: String,
}

pub fn read_answers_jsonl(path: &Path) -> Result<Vec<RawAnswer>, ScoreError> {
    let f = fs::File::open(path).map_err(|source| ScoreError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| ScoreError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let a: RawAnswer = serde_json::from_str(&line).map_err(|e| ScoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(a);
    }
    Ok(out)
}

pub fn write_answers_jsonl(path: &Path, answers: &[RawAnswer]) -> Result<(), ScoreError> {
    let mut s = String::new();
    for a in answers {
        s.push_str(&serde_json::to_string(a).expect("answers serialize"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|source| ScoreError::Io { path: path.to_path_buf(), source })
}

/// Scores `answers` against every item of `key`, requiring full coverage.
pub fn score_answers(answers: &[RawAnswer], key: &AnswerKey) -> Result<ScoreReport, ScoreError> {
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(answers.len());
    for a in answers {
        if !seen.insert(a.qa_id.as_str()) {
            return Err(ScoreError::DuplicateAnswer(a.qa_id.clone()));
        }
        records.push(key.record(&a.qa_id, &a.raw_text)?);
    }
    let missing: Vec<String> = key.entries().filter(|e| !seen.contains(e.qa_id.as_str())).map(|e| e.qa_id.clone()).collect();
    if !missing.is_empty() {
        return Err(ScoreError::IncompleteCoverage(missing));
    }
    score(&records, key)
}

pub const REPORT_JSON: &str = "score_report.json";
pub const REPORT_CSV: &str = "score_report.csv";

/// Answer key for the items of `dataset_dir` whose base pair lies in `split`
/// (all items when `split` is `None`).
pub fn load_key(dataset_dir: &Path, split: Option<SplitName>) -> Result<AnswerKey, ScoreError> {
    let qa_path = dataset_dir.join(QA_FILE);
    let items = read_qa_jsonl(&qa_path).map_err(|source| ScoreError::Io { path: qa_path, source })?;
    let Some(name) = split else {
        return Ok(AnswerKey::from_items(&items));
    };
    let members: BTreeSet<usize> = read_split(dataset_dir)?.members(name).iter().copied().collect();
    Ok(AnswerKey::from_items(items.iter().filter(|i| members.contains(&(i.pair_id % BASE_SAMPLES)))))
}

/// Scores an answers file against a generated dataset. Answers for items
/// outside the chosen split are ignored; every item inside it must be
/// answered.
pub fn run_protocol(dataset_dir: &Path, answers_path: &Path, split: Option<SplitName>) -> Result<ScoreReport, ScoreError> {
    let key = load_key(dataset_dir, split)?;
    let full = if split.is_some() { Some(load_key(dataset_dir, None)?) } else { None };
    let answers: Vec<RawAnswer> = read_answers_jsonl(answers_path)?
        .into_iter()
        .filter(|a| match &full {
            Some(all) => key.get(&a.qa_id).is_some() || all.get(&a.qa_id).is_none(),
            None => true,
        })
        .collect();
    score_answers(&answers, &key)
}

pub fn write_reports(report: &ScoreReport, out_dir: &Path) -> Result<(), ScoreError> {
    fs::create_dir_all(out_dir).map_err(|source| ScoreError::Io { path: out_dir.to_path_buf(), source })?;
    let json = out_dir.join(REPORT_JSON);
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json, text + "\n").map_err(|source| ScoreError::Io { path: json, source })?;
    let csv = out_dir.join(REPORT_CSV);
    fs::write(&csv, report.to_csv()).map_err(|source| ScoreError::Io { path: csv, source })
}
