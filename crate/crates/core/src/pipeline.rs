//! End-to-end dataset generation: timelines, frames, narrations, QA.
//!
//! Output directory layout:
//!
//! ```text
//! dataset_manifest.json   per-sample metadata, key frames, split, probe samples
//! qa.jsonl                deduplicated QA items
//! narrations.jsonl        one annotation bundle per (sample, perspective)
//! splits.json             pair-level train/val/test split
//! frames/                 PNG frames, named by sample, perspective and tick
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{dedup_items, gen_questions, narrate, statement_text, write_qa_jsonl, AnnotationBundle, QaError, QaItem};
use crate::perception::{probe_samples, Perspective, ProbeSample};
use crate::renderer::{export_frames, frame_file_name, frames_for, ExportedFrame, FrameSelection, RenderError};
use crate::scenario::{
    enumerate_scenarios, split_pairs, DatasetSplit, MapLibrary, Roles, ScenarioConfig, ScenarioError, ScenarioSpec,
    SplitName, StageInterval, Timeline, TimelineOptions,
};

pub const MANIFEST_FILE: &str = "dataset_manifest.json";
pub const QA_FILE: &str = "qa.jsonl";
pub const NARRATIONS_FILE: &str = "narrations.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const FRAMES_DIR: &str = "frames";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub scenario: ScenarioConfig,
    pub timeline: TimelineOptions,
    /// `None` skips PNG export.
    pub frames: Option<FrameSelection>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { scenario: ScenarioConfig::default(), timeline: TimelineOptions::default(), frames: Some(FrameSelection::Eval) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestProbeSample {
    #[serde(flatten)]
    pub sample: ProbeSample,
    pub statement_text: String,
    /// Eval-frame files for this sample's perspective.
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub spec_id: usize,
    pub pair_id: usize,
    pub base_index: usize,
    pub spec: ScenarioSpec,
    pub roles: Roles,
    pub frame_count: usize,
    pub key_frames: [usize; 4],
    pub eval_frames: Vec<usize>,
    pub stages: [StageInterval; 3],
    pub split: SplitName,
    pub qa_ids: Vec<String>,
    pub frames: Vec<ExportedFrame>,
    pub probe_samples: Vec<ManifestProbeSample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: GenConfig,
    pub n_samples: usize,
    pub n_pairs: usize,
    pub n_maps: usize,
    pub n_qa_items: usize,
    pub n_initial_items: usize,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrationRecord {
    pub spec_id: usize,
    pub bundle: AnnotationBundle,
}

/// Everything generated for one scenario, before deduplication.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub record: SampleRecord,
    pub items: Vec<QaItem>,
    pub narrations: Vec<NarrationRecord>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub items: Vec<QaItem>,
    pub narrations: Vec<NarrationRecord>,
    pub split: DatasetSplit,
}

/// Builds timeline, QA, narrations and probe samples for one spec, exporting
/// frames into `frames_dir` when given.
pub fn process_spec(
    library: &MapLibrary,
    spec: &ScenarioSpec,
    cfg: &GenConfig,
    split: &DatasetSplit,
    frames_dir: Option<&Path>,
) -> Result<SampleOutput, PipelineError> {
    let t = library.build(spec, &cfg.timeline)?;
    let items = gen_questions(&t)?;
    let eval_frames = frames_for(&t, FrameSelection::Eval);
    let frames = match (cfg.frames, frames_dir) {
        (Some(sel), Some(dir)) => export_frames(&t, dir, sel)?,
        _ => Vec::new(),
    };
    let record = SampleRecord {
        spec_id: spec.spec_id(),
        pair_id: spec.pair_id(),
        base_index: spec.base_index(),
        spec: *spec,
        roles: t.roles,
        frame_count: t.frames.len(),
        key_frames: t.key_frames,
        eval_frames: eval_frames.clone(),
        stages: t.stages,
        split: split.which(spec.base_index()).expect("split covers every generated pair"),
        qa_ids: items.iter().map(|i| i.id.clone()).collect(),
        frames,
        probe_samples: manifest_probe_samples(&t, &eval_frames),
    };
    let narrations =
        Perspective::ALL.iter().map(|&p| NarrationRecord { spec_id: spec.spec_id(), bundle: narrate(&t, p) }).collect();
    Ok(SampleOutput { record, items, narrations })
}

fn manifest_probe_samples(t: &Timeline, eval_frames: &[usize]) -> Vec<ManifestProbeSample> {
    probe_samples(t)
        .into_iter()
        .map(|sample| ManifestProbeSample {
            statement_text: statement_text(t, &sample.statement),
            frames: eval_frames.iter().map(|&f| frame_file_name(t.spec.spec_id(), sample.perspective, f)).collect(),
            sample,
        })
        .collect()
}

/// Generates the dataset in memory, writing frames under `frames_dir` if set.
/// Work is spread over the current rayon pool; output order follows the
/// scenario enumeration.
pub fn build_dataset(cfg: &GenConfig, frames_dir: Option<&Path>) -> Result<Dataset, PipelineError> {
    let library = MapLibrary::bundled().map_err(ScenarioError::from)?;
    let specs = enumerate_scenarios(&cfg.scenario)?;
    let mut bases: Vec<usize> = specs.iter().map(|s| s.base_index()).collect();
    bases.sort_unstable();
    bases.dedup();
    let split = split_pairs(&bases, cfg.scenario.seed);
    let outputs: Vec<SampleOutput> = specs
        .par_iter()
        .map(|spec| process_spec(&library, spec, cfg, &split, frames_dir))
        .collect::<Result<_, _>>()?;
    let mut all_items = Vec::new();
    let mut narrations = Vec::with_capacity(outputs.len() * 3);
    let mut samples = Vec::with_capacity(outputs.len());
    for o in outputs {
        all_items.extend(o.items);
        narrations.extend(o.narrations);
        samples.push(o.record);
    }
    let items = dedup_items(all_items);
    let mut pairs: Vec<usize> = samples.iter().map(|s| s.pair_id).collect();
    pairs.dedup();
    let mut maps: Vec<usize> = samples.iter().map(|s| s.spec.map_id).collect();
    maps.sort_unstable();
    maps.dedup();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        n_samples: samples.len(),
        n_pairs: pairs.len(),
        n_maps: maps.len(),
        n_qa_items: items.len(),
        n_initial_items: items.iter().filter(|i| i.category.is_initial()).count(),
        samples,
    };
    Ok(Dataset { manifest, items, narrations, split })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::Io { path: path.to_path_buf(), source: e.into() })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

/// Generates and writes a full dataset into `out_dir`.
pub fn generate(cfg: &GenConfig, out_dir: &Path) -> Result<Dataset, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let frames_dir = out_dir.join(FRAMES_DIR);
    let ds = build_dataset(cfg, cfg.frames.map(|_| frames_dir.as_path()))?;
    write_json(&out_dir.join(MANIFEST_FILE), &ds.manifest)?;
    write_json(&out_dir.join(SPLITS_FILE), &ds.split)?;
    let qa = out_dir.join(QA_FILE);
    write_qa_jsonl(&qa, &ds.items).map_err(io_err(&qa))?;
    let np = out_dir.join(NARRATIONS_FILE);
    let f = fs::File::create(&np).map_err(io_err(&np))?;
    let mut w = BufWriter::new(f);
    for n in &ds.narrations {
        serde_json::to_writer(&mut w, n).map_err(|e| PipelineError::Io { path: np.clone(), source: e.into() })?;
        w.write_all(b"\n").map_err(io_err(&np))?;
    }
    w.flush().map_err(io_err(&np))?;
    Ok(ds)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

pub fn read_manifest(dataset_dir: &Path) -> Result<DatasetManifest, PipelineError> {
    read_json(&dataset_dir.join(MANIFEST_FILE))
}

pub fn read_split(dataset_dir: &Path) -> Result<DatasetSplit, PipelineError> {
    read_json(&dataset_dir.join(SPLITS_FILE))
}
