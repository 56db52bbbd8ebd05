mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gridtom_core::activation::{read_act, synth_activations, write_act, ActivationSet, LabelKind, Layout, PlantSpec};
use gridtom_core::evalharness::{run_protocol, write_reports, ScoreReport};
use gridtom_core::intervention::{
    build_intervention, capture_activations, planted_fixture, read_eval_jsonl, sweep, write_eval_jsonl,
    write_sweep_csv, FixtureConfig, RefTransformer, MAX_ABS_ALPHA,
};
use gridtom_core::pipeline::{generate, GenConfig};
use gridtom_core::probe::{belief_geometry, probe_atlas, read_probe_dir, top_k_heads, write_probe_dir};
use gridtom_core::renderer::FrameSelection;
use gridtom_core::gridworld::BUNDLED_MAP_COUNT;
use gridtom_core::scenario::{BeliefOrder, ScenarioConfig, TimelineOptions, MAX_FRAMES, MIN_FRAMES};

use config::{FramesMode, RunConfig, SplitChoice};

const RUN_CONFIG_FILE: &str = "run_config.json";
const ACTS_FILE: &str = "activations.gtomact";
const WEIGHTS_FILE: &str = "model.gtmw";
const EVAL_FILE: &str = "eval.jsonl";
const SPEC_FILE: &str = "intervention_spec.json";

#[derive(Parser, Debug)]
#[command(name = "gridtom", version, about = "Gridworld belief scenarios and attention-head probing tools")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the scenario dataset: manifest, frames, QA, narrations, splits.
    Gen(GenArgs),
    /// Train one linear probe per head on a GTOM-ACT file.
    Probe(ProbeArgs),
    /// Sweep steering strength and head count on a reference model.
    Intervene(InterveneArgs),
    /// Write a single intervention spec for the top-k heads.
    BuildSpec(BuildSpecArgs),
    /// Score an answers file against a generated dataset.
    Score(ScoreArgs),
    /// Write a synthetic GTOM-ACT file with planted heads.
    SynthActs(SynthArgs),
    /// Write the planted reference model, its probe captures and eval items.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Use the first N bundled maps.
    #[arg(long)]
    maps: Option<usize>,
    /// Belief orders to generate; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',')]
    order: Vec<OrderArg>,
    #[arg(long)]
    frame_count: Option<usize>,
    #[arg(long, value_enum)]
    frames: Option<FramesMode>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum OrderArg {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LabelArg {
    #[value(name = "y_p")]
    Protagonist,
    #[value(name = "y_o")]
    Omniscient,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    acts: Option<PathBuf>,
    #[arg(long, value_enum)]
    label: Option<LabelArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct InterveneArgs {
    /// Reference model weights (GTMW).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Directory written by `probe`.
    #[arg(long)]
    probes: Option<PathBuf>,
    /// GTOM-ACT file the probes were trained on; used for sigma.
    #[arg(long)]
    acts: Option<PathBuf>,
    /// Eval items JSONL.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha_grid: Vec<f64>,
}

#[derive(Args, Debug)]
struct BuildSpecArgs {
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long)]
    acts: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// JSONL of {qa_id, raw_text}.
    #[arg(long)]
    answers: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    margin: Option<f32>,
    #[arg(long)]
    noise: Option<f32>,
    /// Planted heads as `layer:head`, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_head)]
    planted: Vec<(usize, usize)>,
    /// Permute labels so no head carries signal.
    #[arg(long)]
    shuffle_labels: bool,
}

#[derive(Args, Debug)]
struct FixtureArgs {}

fn parse_head(s: &str) -> Result<(usize, usize), String> {
    let (l, h) = s.split_once(':').ok_or_else(|| format!("expected layer:head, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(l)?, n(h)?))
}

enum CliError {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(anyhow::anyhow!(msg.into()))
}

trait DataContext<T> {
    fn data(self, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> DataContext<T> for Result<T, E> {
    fn data(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.into().context(what.to_string())))
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(CliError::Config)?;
            serde_json::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(CliError::Config)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    match &cli.command {
        Command::Gen(a) => {
            cfg.subcommand = "gen".into();
            if a.maps.is_some() {
                cfg.maps = a.maps;
            }
            if !a.order.is_empty() {
                let mut orders: Vec<BeliefOrder> = a
                    .order
                    .iter()
                    .map(|o| match o {
                        OrderArg::First => BeliefOrder::First,
                        OrderArg::Second => BeliefOrder::Second,
                    })
                    .collect();
                orders.sort();
                orders.dedup();
                cfg.orders = orders;
            }
            if a.frame_count.is_some() {
                cfg.frame_count = a.frame_count;
            }
            if let Some(f) = a.frames {
                cfg.frames = f;
            }
        }
        Command::Probe(a) => {
            cfg.subcommand = "probe".into();
            if a.acts.is_some() {
                cfg.acts = a.acts.clone();
            }
            if let Some(l) = a.label {
                cfg.label = match l {
                    LabelArg::Protagonist => LabelKind::Protagonist,
                    LabelArg::Omniscient => LabelKind::Omniscient,
                };
            }
            if let Some(v) = a.lr {
                cfg.probe.learning_rate = v;
            }
            if let Some(v) = a.iters {
                cfg.probe.iterations = v;
            }
            if let Some(v) = a.l2 {
                cfg.probe.l2 = v;
            }
            if let Some(v) = a.val_fraction {
                cfg.probe.val_fraction = v;
            }
        }
        Command::Intervene(a) => {
            cfg.subcommand = "intervene".into();
            for (dst, src) in [(&mut cfg.weights, &a.weights), (&mut cfg.probes, &a.probes), (&mut cfg.acts, &a.acts), (&mut cfg.eval, &a.eval)] {
                if src.is_some() {
                    *dst = src.clone();
                }
            }
            if !a.k_grid.is_empty() {
                cfg.k_grid = a.k_grid.clone();
            }
            if !a.alpha_grid.is_empty() {
                cfg.alpha_grid = a.alpha_grid.clone();
            }
        }
        Command::BuildSpec(a) => {
            cfg.subcommand = "build-spec".into();
            if a.probes.is_some() {
                cfg.probes = a.probes.clone();
            }
            if a.acts.is_some() {
                cfg.acts = a.acts.clone();
            }
            if let Some(k) = a.k {
                cfg.k = k;
            }
            if let Some(alpha) = a.alpha {
                cfg.alpha = alpha;
            }
        }
        Command::Score(a) => {
            cfg.subcommand = "score".into();
            if a.dataset.is_some() {
                cfg.dataset = a.dataset.clone();
            }
            if a.answers.is_some() {
                cfg.answers = a.answers.clone();
            }
            if let Some(s) = a.split {
                cfg.split = s;
            }
        }
        Command::SynthActs(a) => {
            cfg.subcommand = "synth-acts".into();
            let s = &mut cfg.synth;
            for (dst, src) in [(&mut s.layers, a.layers), (&mut s.heads, a.heads), (&mut s.dim, a.dim), (&mut s.n, a.n)] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
            if let Some(v) = a.margin {
                s.margin = v;
            }
            if let Some(v) = a.noise {
                s.noise = v;
            }
            if !a.planted.is_empty() {
                s.planted = a.planted.clone();
            }
            if a.shuffle_labels {
                s.shuffle_labels = true;
            }
        }
        Command::Fixture(_) => cfg.subcommand = "fixture".into(),
    }
    Ok(cfg)
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| config_err(format!("--{flag} is required")))
}

fn write_run_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(CliError::Data)?;
    let path = dir.join(RUN_CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    fs::write(&path, text).data("writing run_config.json")
}

fn cmd_gen(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    let map_ids: Vec<usize> = match cfg.maps {
        Some(0) => return Err(config_err("--maps must be at least 1")),
        Some(n) if n > BUNDLED_MAP_COUNT => {
            return Err(config_err(format!("--maps {n} exceeds the {BUNDLED_MAP_COUNT} bundled maps")))
        }
        Some(n) => (0..n).collect(),
        None => (0..BUNDLED_MAP_COUNT).collect(),
    };
    if cfg.orders.is_empty() {
        return Err(config_err("at least one --order is required"));
    }
    if let Some(n) = cfg.frame_count {
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&n) {
            return Err(config_err(format!("--frame-count {n} outside [{MIN_FRAMES}, {MAX_FRAMES}]")));
        }
    }
    let gen = GenConfig {
        scenario: ScenarioConfig { map_ids, orders: cfg.orders.clone(), seed: cfg.seed },
        timeline: TimelineOptions { frame_count: cfg.frame_count },
        frames: match cfg.frames {
            FramesMode::Eval => Some(FrameSelection::Eval),
            FramesMode::All => Some(FrameSelection::All),
            FramesMode::None => None,
        },
    };
    let ds = generate(&gen, out).data("generating dataset")?;
    write_run_config(out, cfg)?;
    let m = &ds.manifest;
    println!(
        "generated {} samples ({} pairs, {} maps), {} QA items ({} initial) -> {}",
        m.n_samples,
        m.n_pairs,
        m.n_maps,
        m.n_qa_items,
        m.n_initial_items,
        out.display()
    );
    Ok(())
}

fn cmd_probe(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    let acts_path = require(&cfg.acts, "acts")?;
    let acts = read_act(acts_path).data("reading activations")?;
    let atlas = probe_atlas(&acts, cfg.label, cfg.seed, &cfg.probe).data("training probes")?;
    write_probe_dir(out, &atlas).data("writing probes")?;
    let top = top_k_heads(&atlas, atlas.probes.len().min(5)).data("ranking heads")?;
    if let Some(&(layer, head)) = top.first() {
        let geo = belief_geometry(&acts.head_matrix(layer, head), acts.layout().dim, &acts.targets(cfg.label))
            .data("projecting top head")?;
        geo.write_csv(&out.join("geometry.csv")).data("writing geometry")?;
    }
    write_run_config(out, cfg)?;
    println!("trained {} probes; top heads:", atlas.probes.len());
    for (layer, head) in top {
        println!("  layer {layer} head {head}: {:.3}", atlas.get(layer, head).val_accuracy);
    }
    Ok(())
}

fn check_alphas(alphas: &[f64]) -> CliResult<()> {
    match alphas.iter().find(|a| !a.is_finite() || a.abs() > MAX_ABS_ALPHA) {
        Some(a) => Err(config_err(format!("alpha {a} outside [-{MAX_ABS_ALPHA}, {MAX_ABS_ALPHA}]"))),
        None => Ok(()),
    }
}

fn load_probe_inputs(cfg: &RunConfig) -> CliResult<(gridtom_core::probe::ProbeAtlas, ActivationSet)> {
    let atlas = read_probe_dir(require(&cfg.probes, "probes")?).data("reading probes")?;
    let acts = read_act(require(&cfg.acts, "acts")?).data("reading activations")?;
    Ok((atlas, acts))
}

fn cmd_intervene(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    if cfg.k_grid.is_empty() || cfg.alpha_grid.is_empty() {
        return Err(config_err("--k-grid and --alpha-grid must be non-empty"));
    }
    check_alphas(&cfg.alpha_grid)?;
    let model = RefTransformer::read(require(&cfg.weights, "weights")?).data("reading model weights")?;
    let (atlas, acts) = load_probe_inputs(cfg)?;
    if let Some(&k) = cfg.k_grid.iter().find(|&&k| k > atlas.probes.len()) {
        return Err(config_err(format!("k = {k} exceeds the {} probed heads", atlas.probes.len())));
    }
    let items = read_eval_jsonl(require(&cfg.eval, "eval")?).data("reading eval items")?;
    let rows = sweep(&model, &items, &atlas, &acts, &cfg.k_grid, &cfg.alpha_grid).data("running sweep")?;
    fs::create_dir_all(out).data("creating output directory")?;
    write_sweep_csv(&out.join("sweep.csv"), &rows).data("writing sweep.csv")?;
    let best = rows.iter().fold(&rows[0], |b, r| if r.both > b.both { r } else { b });
    build_intervention(&atlas, &acts, best.k, best.alpha)
        .data("building best spec")?
        .write(&out.join(SPEC_FILE))
        .data("writing spec")?;
    write_run_config(out, cfg)?;
    let base = rows.iter().find(|r| r.k == 0 || r.alpha == 0.0);
    if let Some(b) = base {
        println!("baseline: tb {:.1} fb {:.1} both {:.1}", b.tb, b.fb, b.both);
    }
    println!("best: k {} alpha {} -> tb {:.1} fb {:.1} both {:.1}", best.k, best.alpha, best.tb, best.fb, best.both);
    Ok(())
}

fn cmd_build_spec(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    check_alphas(&[cfg.alpha])?;
    let (atlas, acts) = load_probe_inputs(cfg)?;
    if cfg.k > atlas.probes.len() {
        return Err(config_err(format!("k = {} exceeds the {} probed heads", cfg.k, atlas.probes.len())));
    }
    let spec = build_intervention(&atlas, &acts, cfg.k, cfg.alpha).data("building spec")?;
    fs::create_dir_all(out).data("creating output directory")?;
    spec.write(&out.join(SPEC_FILE)).data("writing spec")?;
    write_run_config(out, cfg)?;
    println!("wrote {} entries -> {}", spec.k(), out.join(SPEC_FILE).display());
    Ok(())
}

fn print_report(r: &ScoreReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    println!("{:<18} {:>6} {:>6} {:>7} {:>6} {:>6} {:>6} {:>8}", "category", "items", "pairs", "acc", "tb", "fb", "both", "invalid");
    for c in &r.categories {
        println!(
            "{:<18} {:>6} {:>6} {:>7.1} {:>6} {:>6} {:>6} {:>8.3}",
            format!("{:?}", c.category),
            c.n_items,
            c.n_pairs,
            c.accuracy,
            opt(c.tb_acc),
            opt(c.fb_acc),
            opt(c.both_acc),
            c.invalid_rate
        );
    }
}

fn cmd_score(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    let dataset = require(&cfg.dataset, "dataset")?;
    let answers = require(&cfg.answers, "answers")?;
    let report = run_protocol(dataset, answers, cfg.split.split()).data("scoring answers")?;
    write_reports(&report, out).data("writing reports")?;
    write_run_config(out, cfg)?;
    print_report(&report);
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    let s = &cfg.synth;
    if s.layers == 0 || s.heads == 0 || s.dim == 0 {
        return Err(config_err("layers, heads and dim must be positive"));
    }
    let layout = Layout::new(s.layers, s.heads, s.dim);
    if let Some(&(l, h)) = s.planted.iter().find(|&&(l, h)| !layout.contains(l, h)) {
        return Err(config_err(format!("planted head {l}:{h} outside the layout")));
    }
    let plant = PlantSpec::random(layout, &s.planted, s.margin, s.noise, cfg.seed);
    let mut acts = synth_activations(layout, &plant, s.n).map_err(|e| CliError::Config(e.into()))?;
    if s.shuffle_labels {
        let mut y = acts.targets(cfg.label);
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED));
        acts = acts.with_targets(cfg.label, &y);
    }
    fs::create_dir_all(out).data("creating output directory")?;
    write_act(&out.join(ACTS_FILE), &acts).data("writing activations")?;
    fs::write(out.join("plant.json"), serde_json::to_string_pretty(&plant).expect("plant serializes") + "\n")
        .data("writing plant.json")?;
    write_run_config(out, cfg)?;
    println!("wrote {} samples ({}x{}x{}) -> {}", acts.len(), s.layers, s.heads, s.dim, out.join(ACTS_FILE).display());
    Ok(())
}

fn cmd_fixture(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    let fx_cfg = FixtureConfig { seed: cfg.fixture_seed.unwrap_or(cfg.seed), ..FixtureConfig::default() };
    let fx = planted_fixture(&fx_cfg);
    let acts = capture_activations(&fx.model, &fx.probe_items, None).data("capturing activations")?;
    fs::create_dir_all(out).data("creating output directory")?;
    fx.model.write(&out.join(WEIGHTS_FILE)).data("writing weights")?;
    write_act(&out.join(ACTS_FILE), &acts).data("writing activations")?;
    write_eval_jsonl(&out.join(EVAL_FILE), &fx.eval_items).data("writing eval items")?;
    fs::write(out.join("fixture.json"), serde_json::to_string_pretty(&fx_cfg).expect("fixture serializes") + "\n")
        .data("writing fixture.json")?;
    write_run_config(out, cfg)?;
    println!(
        "wrote fixture with planted heads {:?}: {} probe captures, {} eval items -> {}",
        fx_cfg.planted,
        acts.len(),
        fx.eval_items.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    if cfg.jobs == Some(0) {
        return Err(config_err("--jobs must be at least 1"));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.into()))?;
    pool.install(|| match cli.command {
        Command::Gen(_) => cmd_gen(&cfg),
        Command::Probe(_) => cmd_probe(&cfg),
        Command::Intervene(_) => cmd_intervene(&cfg),
        Command::BuildSpec(_) => cmd_build_spec(&cfg),
        Command::Score(_) => cmd_score(&cfg),
        Command::SynthActs(_) => cmd_synth(&cfg),
        Command::Fixture(_) => cmd_fixture(&cfg),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, err) = match &e {
                CliError::Config(err) => ("config error", err),
                CliError::Data(err) => ("error", err),
            };
            eprintln!("{kind}: {err:#}");
            ExitCode::from(e.code())
        }
    }
}
