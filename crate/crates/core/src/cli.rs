//! Command-line pipeline: generate, label, train, evaluate, ablate, inject
//! and plot.
//!
//! Exit codes: 0 success, 1 usage error or unsupported request, 2 data
//! error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{complete_scene, load_dataset, load_dataset_raw, save_dataset};
use crate::error::{Error, Result};
use crate::harness::{
    self, ablate, evaluate, inject_edges, parse_override, read_metrics_csv, select_split, write_ablation_csv,
    write_metrics_csv, Split, TrainConfig,
};
use crate::labeler::label_scene;
use crate::model::{Model, Variant};
use crate::plot::{render_svg, ScenePanel};
use crate::scene::Scene;
use crate::scenegen::{gen_dataset, parse_mix};

#[derive(Debug, Parser)]
#[command(name = "ign", version, about = "Interaction-aware multi-agent trajectory prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset (JSON lines).
    Generate(GenerateArgs),
    /// Label every scene of a dataset from its future trajectories.
    Label(LabelArgs),
    /// Train a model; prints the training log CSV to stdout.
    Train(TrainArgs),
    /// Evaluate a checkpoint; prints a metrics CSV to stdout.
    Evaluate(EvaluateArgs),
    /// Train and evaluate model variants over several seeds.
    Ablate(AblateArgs),
    /// Roll out with fixed interaction types on chosen pairs.
    Inject(InjectArgs),
    /// Render scenes, predictions and metrics as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scene counts per kind, e.g. crossing=800,following=400,independent=400,multi=400.
    #[arg(long)]
    pub kind_mix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of position noise in metres.
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// baseline, untyped, untyped_no_ignoring, oracle, oracle_no_ignoring,
    /// joint_supervised or joint_unsupervised.
    #[arg(long, default_value = "joint_supervised")]
    pub variant: Variant,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Scenes per gradient step.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-entropy weight; defaults to 5 for joint_supervised, else 0.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint path.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// all, train, val or test.
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    /// Comma-separated variants; all seven by default.
    #[arg(long, default_value = "all")]
    pub variants: String,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    /// Encoder and decoder hidden size.
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    /// Graph network attribute width.
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Checkpoint of a three-type variant.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Index of the scene in the dataset.
    #[arg(long, default_value_t = 0)]
    pub scene: usize,
    /// Override as i,j=label (ignoring, going, yielding); repeatable.
    #[arg(long = "set", required = true)]
    pub set: Vec<String>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Dataset whose scenes are drawn.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint used to draw predictions next to the ground truth.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Metrics CSV from `evaluate`, drawn as a horizon bar chart.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Index of the first scene drawn.
    #[arg(long, default_value_t = 0)]
    pub first: usize,
    /// Number of scenes drawn.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Inject(a) => inject(a),
        Command::Plot(a) => plot(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn generate(a: GenerateArgs) -> Result<()> {
    if !(a.noise_sigma >= 0.0 && a.noise_sigma.is_finite()) {
        return Err(Error::Input(format!("invalid noise sigma {}", a.noise_sigma)));
    }
    let scenes = gen_dataset(&parse_mix(&a.kind_mix)?, a.seed, a.noise_sigma)?;
    save_dataset(&a.out, &scenes)
}

fn label(a: LabelArgs) -> Result<()> {
    let scenes = load_dataset_raw(&a.data)?
        .into_iter()
        .map(|s| {
            let mut s = label_scene(&s)?;
            complete_scene(&mut s);
            Ok(s)
        })
        .collect::<Result<Vec<Scene>>>()?;
    save_dataset(&a.out, &scenes)
}

/// Scenes of `split`, or all scenes when that split is empty.
fn split_or_all(scenes: &[Scene], split: Split) -> Vec<Scene> {
    let part = select_split(scenes, split);
    if part.is_empty() {
        eprintln!("note: {split:?} split is empty; using all {} scenes", scenes.len());
        scenes.to_vec()
    } else {
        part
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let scenes = load_dataset(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        seed: a.seed,
        alpha: a.alpha,
        ..TrainConfig::new(a.variant)
    };
    cfg.validate()?;
    let train_set = split_or_all(&scenes, Split::Train);
    let val_set = split_or_all(&scenes, Split::Val);
    let mut stdout = io::stdout().lock();
    let mut header = true;
    let outcome = harness::train_with(&cfg, &train_set, &val_set, |row| {
        let mut buf = Vec::new();
        let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(&mut buf);
        let _ = w.serialize(row);
        drop(w);
        header = false;
        let _ = stdout.write_all(&buf);
        let _ = stdout.flush();
    })?;
    outcome.model.save(&a.out, cfg.hyperparams())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let (model, _) = Model::load(&a.model)?;
    let scenes = load_dataset(&a.data)?;
    let scenes = match a.split.as_str() {
        "all" => scenes,
        "train" => select_split(&scenes, Split::Train),
        "val" => select_split(&scenes, Split::Val),
        "test" => select_split(&scenes, Split::Test),
        other => return Err(Error::Unsupported(format!("unknown split {other:?}"))),
    };
    let report = evaluate(&model, &scenes)?;
    write_metrics_csv(io::stdout().lock(), &report)
}

fn parse_list<T>(text: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| Error::Unsupported(format!("invalid {what} {s:?}"))))
        .collect()
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let scenes = load_dataset(&a.data)?;
    let seeds = parse_list(&a.seeds, "seed", |s| s.parse().ok())?;
    let variants = if a.variants == "all" {
        Variant::ALL.to_vec()
    } else {
        parse_list(&a.variants, "variant", |s| s.parse().ok())?
    };
    let base = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        hidden: a.hidden,
        width: a.width,
        ..TrainConfig::new(Variant::Baseline)
    };
    let rows = ablate(&scenes, &seeds, &base, &variants)?;
    write_ablation_csv(output(a.out.as_deref())?, &rows)
}

fn inject(a: InjectArgs) -> Result<()> {
    let (model, _) = Model::load(&a.model)?;
    if !model.variant().supports_injection() {
        return Err(Error::Unsupported("variant does not support injection".into()));
    }
    let scenes = load_dataset(&a.data)?;
    let scene = scenes.get(a.scene).ok_or_else(|| {
        Error::Input(format!("scene index {} out of range ({} scenes)", a.scene, scenes.len()))
    })?;
    let mut overrides = BTreeMap::new();
    for spec in &a.set {
        let (pair, label) = parse_override(spec).map_err(|e| Error::Unsupported(e.to_string()))?;
        overrides.insert(pair, label);
    }
    let (_, report) = inject_edges(&model, scene, &overrides)?;
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let scenes = match &a.data {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    let shown: Vec<Scene> = scenes.into_iter().skip(a.first).take(a.count).collect();
    let predictions = match &a.model {
        Some(p) => {
            let (model, _) = Model::load(p)?;
            shown
                .iter()
                .map(|s| model.predict(s).map(|pred| Some(pred.futures)))
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![None; shown.len()],
    };
    let panels: Vec<ScenePanel> = shown
        .iter()
        .zip(&predictions)
        .map(|(scene, p)| ScenePanel { scene, predictions: p.as_deref() })
        .collect();
    let metrics = match &a.metrics {
        Some(p) => Some(read_metrics_csv(File::open(p)?)?),
        None => None,
    };
    let svg = render_svg(&panels, metrics.as_ref())?;
    std::fs::write(&a.out, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_flags_are_exactly_the_documented_set() {
        let cmd = Cli::command();
        let train = cmd.find_subcommand("train").unwrap();
        let mut flags: Vec<&str> = train.get_arguments().filter_map(|a| a.get_long()).collect();
        flags.sort();
        assert_eq!(flags, ["alpha", "batch", "data", "epochs", "lr", "out", "seed", "variant"]);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["ign", "train", "--bogus"]), 1);
        assert_eq!(run(["ign", "frobnicate"]), 1);
        assert_eq!(run(["ign", "generate", "--kind-mix", "crossing=1"]), 1);
        assert_eq!(run(["ign", "train", "--data", "x", "--out", "y", "--variant", "nope"]), 1);
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for flag in ["--data", "--out", "--variant", "--epochs", "--batch", "--lr", "--seed", "--alpha"] {
            assert!(help.contains(flag), "{flag} missing from help");
        }
        assert!(help.contains("[default: 0.001]"));
    }

    #[test]
    fn missing_files_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.jsonl");
        let out = dir.path().join("out.jsonl");
        let args: Vec<OsString> = vec![
            "ign".into(),
            "label".into(),
            "--data".into(),
            missing.into_os_string(),
            "--out".into(),
            out.into_os_string(),
        ];
        let code = run(args);
        assert_eq!(code, 2);
    }
}
