//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{noise_sweep, write_report, ConfusionCounts, SweepConfig};
use crate::dataset::{build_dataset, Dataset};
use crate::error::{Error, Result};
use crate::gate::{
    decide, evaluate, read_policy, read_scored_csv, tune_thresholds, write_policy, write_scored_csv, GateInput,
    GatePolicy, PolicyKind, ScoredRecord,
};
use crate::gradcam::{gradcam, render_svg, write_csv as write_gradcam_csv, DEFAULT_LAYER};
use crate::model::{event_score, LayerId, Model, ModelConfig, Phase};
use crate::shapley::{
    explain_batch, importance_stats, write_abs_phi_csv, write_importance_csv, Baseline, WindowExplanation,
};
use crate::synth::{GenConfig, NoiseKind};
use crate::train::{train, write_history_csv, TrainConfig};
use crate::weights;

pub const OUT_DIR_ENV: &str = "SEISXAI_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "seisxai", version, about = "Explainable seismic event detection")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with default values; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all artifacts.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// A few hundred windows.
    Desk,
    /// Field-scale test set (9,000 windows).
    Full,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic train and test datasets.
    GenData(GenDataArgs),
    /// Train a detector and write its weights and loss history.
    Train(TrainArgs),
    /// Classify windows with a gating policy.
    Detect(DetectArgs),
    /// Produce Grad-CAM or Shapley explanations.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Tune gate thresholds on scored windows.
    TuneGate(TuneArgs),
    /// Noise-robustness sweep over kinds, amplitudes and splits.
    BenchNoise(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Windows in the train split (half signal, half noise).
    #[arg(long)]
    pub train: Option<usize>,
    /// Windows in the test split (half signal, half noise).
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Shorthand for `--scale full`.
    #[arg(long)]
    pub full: bool,
    /// Quiet background noise.
    #[arg(long)]
    pub high_snr: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Narrow stride-2 architecture for quick experiments.
    #[arg(long)]
    pub toy: bool,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Policy record from `tune-gate`; without it a probability threshold is used.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_parser = parse_baseline, default_value = "zeros")]
    pub baseline: Baseline,
}

#[derive(Subcommand, Debug)]
pub enum ExplainCommand {
    /// Grad-CAM heatmaps for selected windows.
    Gradcam(GradcamArgs),
    /// Exact channel Shapley values for every window.
    Shap(ShapArgs),
}

#[derive(Args, Debug)]
pub struct GradcamArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Window ids; default is the first signal window.
    #[arg(long, value_delimiter = ',')]
    pub window: Vec<usize>,
    #[arg(long, value_parser = parse_phase, default_value = "P")]
    pub class: Phase,
    /// Layer name such as merge0, down2 or output.
    #[arg(long, value_parser = parse_layer)]
    pub layer: Option<LayerId>,
}

#[derive(Args, Debug)]
pub struct ShapArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_parser = parse_baseline, default_value = "zeros")]
    pub baseline: Baseline,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// `event_prob,s6,label` CSV, as written by `explain shap`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_parser = parse_policy, default_value = "combined")]
    pub kind: PolicyKind,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Dataset the train splits are drawn from.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_noise_kind)]
    pub kinds: Vec<NoiseKind>,
    #[arg(long, value_delimiter = ',')]
    pub amplitudes: Vec<f64>,
    #[arg(long)]
    pub splits: Option<usize>,
    /// Signal and noise windows per train split.
    #[arg(long)]
    pub train_per_class: Option<usize>,
}

fn parse_baseline(s: &str) -> std::result::Result<Baseline, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_phase(s: &str) -> std::result::Result<Phase, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_layer(s: &str) -> std::result::Result<LayerId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_noise_kind(s: &str) -> std::result::Result<NoiseKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Values a config file may supply. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub train_windows: Option<usize>,
    pub test_windows: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub splits: Option<usize>,
    pub amplitudes: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Settings after merging flags, config file and defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub file: FileConfig,
}

impl RunConfig {
    fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Self {
            seed: cli.seed.or(file.seed).unwrap_or(0),
            out_dir: cli.out_dir.clone().or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out")),
            threads: cli.threads.or(file.threads),
            file,
        })
    }

    fn data(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or(self.file.data.clone())
            .unwrap_or_else(|| self.out_dir.join("data").join("train"))
    }

    fn test_data(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or(self.file.test_data.clone())
            .unwrap_or_else(|| self.out_dir.join("data").join("test"))
    }

    fn weights(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or(self.file.weights.clone())
            .unwrap_or_else(|| self.out_dir.join("model.pnw"))
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} `{}` not found", path.display()),
        )))
    }
}

fn load_data(path: &Path) -> Result<Dataset> {
    require(path, "dataset")?;
    Dataset::read(path)
}

fn load_weights(path: &Path) -> Result<Model<f32>> {
    require(path, "weights file")?;
    weights::load(path)
}

/// Parse arguments and run; returns the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run a parsed command and return its one-line summary.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = RunConfig::resolve(cli)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    fs::create_dir_all(&cfg.out_dir)?;
    match &cli.command {
        Command::GenData(a) => gen_data(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Detect(a) => detect(&cfg, a),
        Command::Explain(ExplainCommand::Gradcam(a)) => explain_gradcam(&cfg, a),
        Command::Explain(ExplainCommand::Shap(a)) => explain_shap(&cfg, a),
        Command::TuneGate(a) => tune_gate(&cfg, a),
        Command::BenchNoise(a) => bench_noise(&cfg, a),
    }
}

fn gen_data(cfg: &RunConfig, a: &GenDataArgs) -> Result<String> {
    let scale = if a.full { Some(Scale::Full) } else { a.scale }
        .or(cfg.file.scale)
        .unwrap_or(Scale::Desk);
    let (d_train, d_test) = match scale {
        Scale::Desk => (200, 200),
        Scale::Full => (100, 9000),
    };
    let n_train = a.train.or(cfg.file.train_windows).unwrap_or(d_train);
    let n_test = a.test.or(cfg.file.test_windows).unwrap_or(d_test);
    if n_train < 2 || n_test < 2 {
        return Err(Error::InvalidConfig("each split needs at least two windows".into()));
    }
    let gen = if a.high_snr { GenConfig::high_snr() } else { GenConfig::default() };
    let root = cfg.out_dir.join("data");
    let split = |n: usize| (n - n / 2, n / 2);
    let (ts, tn) = split(n_train);
    let (vs, vn) = split(n_test);
    build_dataset(&gen, ts, tn, cfg.seed, 0, root.join("train"))?;
    // the test split gets its own seed stream and id range
    build_dataset(
        &gen,
        vs,
        vn,
        crate::synth::derive_seed(cfg.seed, u64::MAX),
        n_train,
        root.join("test"),
    )?;
    Ok(format!(
        "wrote {n_train} train and {n_test} test windows to {}",
        root.display()
    ))
}

fn train_cmd(cfg: &RunConfig, a: &TrainArgs) -> Result<String> {
    let data = load_data(&cfg.data(&a.data))?;
    let mut mc = if a.toy { ModelConfig::toy() } else { ModelConfig::default() };
    mc.input_length = data.manifest.length;
    mc.seed = cfg.seed;
    let tc = TrainConfig {
        epochs: a.epochs.or(cfg.file.epochs).unwrap_or(TrainConfig::default().epochs),
        learning_rate: a
            .learning_rate
            .or(cfg.file.learning_rate)
            .unwrap_or(TrainConfig::default().learning_rate),
        batch_size: a
            .batch_size
            .or(cfg.file.batch_size)
            .unwrap_or(TrainConfig::default().batch_size),
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::assemble(mc)?;
    let out = train(&model, &data.windows, &tc)?;
    let wpath = cfg.out_dir.join("model.pnw");
    weights::save(&out.model, &wpath)?;
    write_history_csv(cfg.out_dir.join("loss.csv"), &out.history)?;
    Ok(format!(
        "trained {} epochs on {} windows, final loss {:.5}, weights in {}",
        tc.epochs,
        data.windows.len(),
        out.history.last().copied().unwrap_or(f64::NAN),
        wpath.display()
    ))
}

#[derive(Serialize)]
struct DetectionRow {
    window_id: usize,
    label: crate::window::Label,
    event_prob: f64,
    s6: Option<f64>,
    predicted: crate::window::Label,
}

fn detect(cfg: &RunConfig, a: &DetectArgs) -> Result<String> {
    let data = load_data(&cfg.test_data(&a.data))?;
    let model = load_weights(&cfg.weights(&a.weights))?;
    let policy = match a.policy.clone().or(cfg.file.policy.clone()) {
        Some(p) => {
            require(&p, "policy record")?;
            read_policy(&p)?.0
        }
        None => GatePolicy::prob_only(a.threshold),
    };
    policy.validate()?;
    let rows: Vec<DetectionRow> = if policy.kind == PolicyKind::ProbOnly {
        use rayon::prelude::*;
        data.windows
            .par_iter()
            .map(|w| {
                let p = event_score(&model.forward_window(w)?.probs) as f64;
                Ok(DetectionRow {
                    window_id: w.id,
                    label: w.label,
                    event_prob: p,
                    s6: None,
                    predicted: decide(GateInput { event_prob: p, s6: 0.0 }, &policy),
                })
            })
            .collect::<Result<_>>()?
    } else {
        explain_batch(&model, &data.windows, a.baseline)?
            .into_iter()
            .map(|e| DetectionRow {
                window_id: e.window_id,
                label: e.label,
                event_prob: e.event_prob,
                s6: Some(e.s6()),
                predicted: decide(
                    GateInput {
                        event_prob: e.event_prob,
                        s6: e.s6(),
                    },
                    &policy,
                ),
            })
            .collect()
    };
    let mut w = csv::Writer::from_path(cfg.out_dir.join("detections.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let c = ConfusionCounts::from_pairs(rows.iter().map(|r| (r.predicted.is_signal(), r.label.is_signal())));
    let m = c.metrics();
    Ok(format!(
        "{} windows, {} policy: tp {} fp {} fn {} tn {}, precision {:.3} recall {:.3} F1 {:.3}",
        rows.len(),
        policy.kind.as_str(),
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        m.precision,
        m.recall,
        m.f1
    ))
}

fn explain_gradcam(cfg: &RunConfig, a: &GradcamArgs) -> Result<String> {
    let data = load_data(&cfg.test_data(&a.data))?;
    let model = load_weights(&cfg.weights(&a.weights))?;
    let ids = if a.window.is_empty() {
        vec![data
            .signals()
            .next()
            .ok_or(Error::Empty("signal windows in dataset"))?
            .id]
    } else {
        a.window.clone()
    };
    let layer = a.layer.unwrap_or(DEFAULT_LAYER);
    let dir = cfg.out_dir.join("gradcam");
    fs::create_dir_all(&dir)?;
    for id in &ids {
        let w = data
            .windows
            .iter()
            .find(|w| w.id == *id)
            .ok_or_else(|| Error::InvalidInput(format!("window {id} is not in the dataset")))?;
        let cam = gradcam(&model, w, a.class, layer)?;
        write_gradcam_csv(dir.join(format!("window_{id}.csv")), w, &cam)?;
        fs::write(dir.join(format!("window_{id}.svg")), render_svg(w, &cam))?;
    }
    Ok(format!(
        "Grad-CAM ({} at {layer}) for {} window(s) in {}",
        a.class,
        ids.len(),
        dir.display()
    ))
}

fn explain_shap(cfg: &RunConfig, a: &ShapArgs) -> Result<String> {
    let data = load_data(&cfg.test_data(&a.data))?;
    let model = load_weights(&cfg.weights(&a.weights))?;
    let ex: Vec<WindowExplanation> = explain_batch(&model, &data.windows, a.baseline)?;
    let mut f = std::io::BufWriter::new(fs::File::create(cfg.out_dir.join("shap.jsonl"))?);
    for e in &ex {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    let mut stats = Vec::new();
    for (pop, signal) in [("signal", true), ("noise", false)] {
        let sel: Vec<&WindowExplanation> = ex.iter().filter(|e| e.label.is_signal() == signal).collect();
        if sel.is_empty() {
            continue;
        }
        for class in [Phase::P, Phase::S] {
            let atts: Vec<_> = sel
                .iter()
                .map(|e| if class == Phase::P { e.phi_p } else { e.phi_s })
                .collect();
            stats.push(importance_stats(&atts, class, pop)?);
        }
    }
    write_importance_csv(cfg.out_dir.join("importance.csv"), &stats)?;
    write_abs_phi_csv(cfg.out_dir.join("abs_phi.csv"), &stats)?;
    let scored: Vec<ScoredRecord> = ex
        .iter()
        .map(|e| ScoredRecord {
            event_prob: e.event_prob,
            s6: e.s6(),
            label: e.label,
        })
        .collect();
    write_scored_csv(cfg.out_dir.join("scored.csv"), &scored)?;
    Ok(format!(
        "explained {} windows; importance table in {}",
        ex.len(),
        cfg.out_dir.join("importance.csv").display()
    ))
}

fn tune_gate(cfg: &RunConfig, a: &TuneArgs) -> Result<String> {
    let path = a.scores.clone().unwrap_or_else(|| cfg.out_dir.join("scored.csv"));
    require(&path, "score file")?;
    let records = read_scored_csv(&path)?;
    let t = tune_thresholds(&records, a.kind)?;
    let out = cfg.file.policy.clone().unwrap_or_else(|| cfg.out_dir.join("policy.toml"));
    write_policy(&out, &t.policy, Some(t.train_f1))?;
    let c = evaluate(&records, &t.policy);
    Ok(format!(
        "{} policy: prob {} shap {}, train F1 {:.3} ({} windows), written to {}",
        a.kind.as_str(),
        fmt_opt(t.policy.prob_threshold),
        fmt_opt(t.policy.shap_threshold),
        t.train_f1,
        c.total(),
        out.display()
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn bench_noise(cfg: &RunConfig, a: &BenchArgs) -> Result<String> {
    let pool = load_data(&cfg.data(&a.pool))?;
    let test = load_data(&cfg.test_data(&a.test))?;
    let model = load_weights(&cfg.weights(&a.weights))?;
    let mut sc = SweepConfig {
        seed: cfg.seed,
        ..SweepConfig::default()
    };
    if !a.kinds.is_empty() {
        sc.kinds = a.kinds.clone();
    }
    if !a.amplitudes.is_empty() {
        sc.amplitudes = a.amplitudes.clone();
    } else if let Some(v) = &cfg.file.amplitudes {
        sc.amplitudes = v.clone();
    }
    if let Some(n) = a.splits.or(cfg.file.splits) {
        sc.n_splits = n;
    }
    if let Some(n) = a.train_per_class {
        sc.train_per_class = n;
    }
    let table = noise_sweep(&model, &pool.windows, &test.windows, &sc)?;
    write_report(&cfg.out_dir, &table)?;
    Ok(format!(
        "{} sweep rows over {} kinds x {} amplitudes x {} splits in {}",
        table.rows.len(),
        sc.kinds.len(),
        sc.amplitudes.len(),
        sc.n_splits,
        cfg.out_dir.join("sweep.csv").display()
    ))
}
