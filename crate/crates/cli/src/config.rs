//! Run configuration: defaults, then a JSON config file, then flags.

use std::path::PathBuf;

use gridtom_core::activation::LabelKind;
use gridtom_core::probe::ProbeConfig;
use gridtom_core::scenario::{BeliefOrder, SplitName};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FramesMode {
    #[default]
    Eval,
    All,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    #[default]
    Test,
    Train,
    Val,
    All,
}

impl SplitChoice {
    pub fn split(self) -> Option<SplitName> {
        match self {
            SplitChoice::Test => Some(SplitName::Test),
            SplitChoice::Train => Some(SplitName::Train),
            SplitChoice::Val => Some(SplitName::Val),
            SplitChoice::All => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub n: usize,
    pub margin: f32,
    pub noise: f32,
    pub planted: Vec<(usize, usize)>,
    pub shuffle_labels: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            layers: 4,
            heads: 8,
            dim: 16,
            n: 400,
            margin: 6.0,
            noise: 1.0,
            planted: vec![(1, 3), (2, 5), (3, 0)],
            shuffle_labels: false,
        }
    }
}

/// Every parameter a run can use. Written to `run_config.json` in each
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,

    pub maps: Option<usize>,
    pub orders: Vec<BeliefOrder>,
    pub frame_count: Option<usize>,
    pub frames: FramesMode,

    pub acts: Option<PathBuf>,
    pub label: LabelKind,
    pub probe: ProbeConfig,

    pub weights: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub k_grid: Vec<usize>,
    pub alpha_grid: Vec<f64>,
    pub k: usize,
    pub alpha: f64,

    pub dataset: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub split: SplitChoice,

    pub synth: SynthParams,
    pub fixture_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: String::new(),
            seed: 0,
            jobs: None,
            out: None,
            maps: None,
            orders: vec![BeliefOrder::First],
            frame_count: None,
            frames: FramesMode::Eval,
            acts: None,
            label: LabelKind::Protagonist,
            probe: ProbeConfig::default(),
            weights: None,
            probes: None,
            eval: None,
            k_grid: vec![0, 1, 2, 3, 4, 8],
            alpha_grid: vec![-4.0, -2.0, -1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 8.0],
            k: 3,
            alpha: 1.5,
            dataset: None,
            answers: None,
            split: SplitChoice::Test,
            synth: SynthParams::default(),
            fixture_seed: None,
        }
    }
}
