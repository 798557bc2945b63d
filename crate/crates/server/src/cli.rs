//! Command-line entry points: synth, train, eval, explain, serve.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use protots::checkpoint::ModelCheckpoint;
use protots::data::{load_csv, synth_generate, write_csv, write_labels_csv, Split, SynthConfig, VariableSchema};
use protots::evaluation::{activation_report, evaluate_with, explain, SeasonalNaive};
use protots::io::write_json;
use protots::model::{ModelConfig, ProtoTsModel};
use protots::trainer::{staged_train, TrainConfig, TrainData};
use protots::{Error, Result};

use crate::service::{serve, AppState, ServeData};

#[derive(Debug, Parser)]
#[command(name = "protots", version, about = "Interpretable forecasting with hierarchical prototypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-regime dataset: data.csv, schema.json, labels.csv.
    Synth(SynthArgs),
    /// Staged training; writes model.ckpt and train_report.json.
    Train(TrainArgs),
    /// Forecast metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Explanation of one window, or an activation timeline for a split.
    Explain(ExplainArgs),
    /// Run the steering HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub regimes: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with a `ts` column, the target and every covariate.
    #[arg(long)]
    pub data: PathBuf,
    /// Variable schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run configuration JSON (`model`, `train`, `stride`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides `train.seed`; also seeds initialization.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Report errors in original units instead of normalized space.
    #[arg(long)]
    pub denormalize: bool,
    /// Output file for the metric report.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Start row of the window to explain; without it an activation
    /// timeline of the whole split is written.
    #[arg(long)]
    pub instance: Option<usize>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Leaves per window in the timeline.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Output JSON; a timeline also gets a sibling `.csv`.
    #[arg(long, default_value = "explain.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

/// Contents of a `train --config` file. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Window stride; 0 means 1.
    pub stride: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    ModelCheckpoint::load(path)
}

fn load_data(args: &DataArgs) -> Result<(VariableSchema, protots::DatasetBundle)> {
    let schema = VariableSchema::load(&args.schema)?;
    let bundle = load_csv(&args.data, &schema)?;
    Ok((schema, bundle))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.regimes {
        cfg.regimes = v;
    }
    if let Some(v) = args.periods {
        cfg.periods = v;
    }
    if let Some(v) = args.period {
        cfg.period = v;
    }
    if let Some(v) = args.sigma {
        cfg.sigma = v;
    }
    let out = synth_generate(&cfg, args.seed)?;
    ensure_dir(&args.out)?;
    write_csv(args.out.join("data.csv"), &out.bundle, &out.schema)?;
    write_json(&args.out.join("schema.json"), &out.schema)?;
    write_labels_csv(args.out.join("labels.csv"), &out.bundle.timestamps, &out.labels)?;
    write_json(&args.out.join("synth_config.json"), &cfg)?;
    println!("wrote {} rows to {}", out.bundle.len(), args.out.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut run: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    run.train.validate()?;
    let (schema, bundle) = load_data(&args.data)?;
    let (norm, data) = TrainData::prepare(&bundle, &schema, run.stride.max(1));
    let mut model = ProtoTsModel::init(run.model.clone(), schema, norm, run.train.seed)?;
    let report = staged_train(&mut model, &data, &run.train)?;
    ensure_dir(&args.out)?;
    let ckpt_path = args.out.join("model.ckpt");
    ModelCheckpoint::new(model, Some(run.train.clone())).save(&ckpt_path)?;
    write_json(&args.out.join("train_report.json"), &report)?;
    let test = report.test.as_ref().map(|t| format!("{:.4}", t.mae)).unwrap_or("n/a".into());
    println!(
        "trained {} epochs in {:.1}s; test MAE {test}; checkpoint {}",
        report.epochs.len(),
        report.wall_clock_secs,
        ckpt_path.display()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (schema, bundle) = load_data(&args.data)?;
    let data = ServeData::new(&bundle, &schema, &ckpt.model);
    let windows = data.split(args.split);
    let report = evaluate_with(&ckpt.model, windows, args.denormalize)?;
    let baseline = SeasonalNaive::fit(&ckpt.model.normalizer.apply(&bundle), schema.period)?.evaluate(windows)?;
    write_json(
        &args.out,
        &serde_json::json!({ "split": args.split, "model": report, "seasonal_naive": baseline }),
    )?;
    println!(
        "{:?}: MAE {:.4} MSE {:.4} over {} windows (seasonal-naive MAE {:.4})",
        args.split, report.mae, report.mse, report.count, baseline.mae
    );
    Ok(())
}

pub fn explain_cmd(args: &ExplainArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (schema, bundle) = load_data(&args.data)?;
    let data = ServeData::new(&bundle, &schema, &ckpt.model);
    match args.instance {
        Some(start) => {
            let w = data
                .all
                .iter()
                .find(|w| w.start == start)
                .ok_or_else(|| Error::Contract(format!("no window starts at row {start}")))?;
            let e = explain(&ckpt.model, w)?;
            write_json(&args.out, &e)?;
            println!("explained window {start}: top leaf {}", e.contributions[0].leaf);
        }
        None => {
            let timeline = activation_report(&ckpt.model, data.split(args.split), args.k)?;
            write_json(&args.out, &timeline)?;
            timeline.write_csv(&args.out.with_extension("csv"))?;
            println!("wrote activations of {} windows", timeline.entries.len());
        }
    }
    Ok(())
}

pub fn serve_cmd(args: &ServeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (schema, bundle) = load_data(&args.data)?;
    if schema != ckpt.model.schema {
        return Err(Error::Schema("dataset schema differs from the checkpoint's".into()));
    }
    let data = ServeData::new(&bundle, &schema, &ckpt.model);
    let state = AppState::new(ckpt, data);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from(&args.bind),
        source: e,
    })?;
    rt.block_on(serve(state, &args.bind)).map_err(|e| Error::Io {
        path: PathBuf::from(&args.bind),
        source: e,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}
