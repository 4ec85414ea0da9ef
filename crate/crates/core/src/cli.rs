//! Command-line workflow: `split`, `train`, `eval`, `predict-map`, `inspect`.
//!
//! Settings come from an optional JSON config file (`--config`), then
//! command-line flags, which win. Errors go to stderr as
//! `error[CODE]: message` and the process exits with status 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data_io::{
    load_cube, load_labels, load_split, save_split, split_with_rule, BandNormalizer, HsiCube, LabelGrid,
    SplitManifest, SplitRule,
};
use crate::error::{Error, Result};
use crate::metrics::{overall_accuracy, render_map, write_report, Report};
use crate::network::{
    build_model, load_checkpoint, param_count, save_checkpoint, shape_trace, Model, ModelConfig, DEFAULT_WINDOW,
};
use crate::training::{
    evaluate, predict_map, train, write_history, OptimizerState, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY,
};

pub const DEFAULT_PER_CLASS_TRAIN: usize = 200;
pub const CHECKPOINT_FILE: &str = "model.ckpt.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SPLIT_FILE: &str = "split.split.json";

#[derive(Debug, Parser)]
#[command(name = "specnet3d", version, about = "Residual 3D CNN for hyperspectral pixel classification")]
pub struct Cli {
    /// Worker threads for batch-parallel kernels (1 = sequential reference mode; results are identical at any count)
    #[arg(long, global = true, env = "SPECNET3D_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a stratified train/test split and print per-class counts
    Split {
        #[command(flatten)]
        run: RunArgs,
        /// Output manifest path [default: <out-dir>/split.split.json]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the network and write checkpoint, history and report
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Record test-set overall accuracy after every epoch
        #[arg(long)]
        eval_test: bool,
        /// Print the effective configuration and exit
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a checkpoint on the split's test set
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint manifest (.ckpt.json)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the training pixels instead of the test pixels
        #[arg(long)]
        on_train: bool,
        /// Report path [default: <out-dir>/report.json]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify every pixel of a cube and write a binary PPM map
    PredictMap {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint manifest (.ckpt.json)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output image (.ppm)
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the shape trace and per-layer parameter table
    Inspect {
        /// Spectral bands S
        #[arg(long, default_value_t = 102)]
        bands: usize,
        /// Number of classes C
        #[arg(long, default_value_t = 9)]
        classes: usize,
        /// Spatial window (odd)
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
}

/// Every experiment setting. Unset flags fall back to the config file,
/// then to the documented defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cube header (.hsc.json)
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// Label header (.lbl.json)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Existing split manifest (.split.json); drawn from the split fields when absent
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Training pixels per class [default: 200]
    #[arg(long, conflicts_with = "percent")]
    pub per_class_train: Option<usize>,
    /// Training percentage per class (floor, minimum 1) instead of a fixed count
    #[arg(long)]
    pub percent: Option<f64>,
    /// Seed for the split and the mini-batch shuffle [default: 0]
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Seed for weight initialization [default: 0]
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// SGD learning rate [default: 0.02]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight decay on conv and FC weights [default: 0.0005]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Training epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Spatial window, odd [default: 7]
    #[arg(long)]
    pub window: Option<usize>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// On-disk form of [`RunArgs`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub per_class_train: Option<usize>,
    pub percent: Option<f64>,
    pub split_seed: Option<u64>,
    pub model_seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub window: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub split_rule: SplitRule,
    pub split_seed: u64,
    pub model_seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub window: usize,
    pub out_dir: PathBuf,
}

fn config_error(reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        stage: "run config".into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file: RunConfigFile = match &args.config {
            Some(path) => crate::data_io::read_json(path)?,
            None => RunConfigFile::default(),
        };
        let split_rule = match (args.per_class_train, args.percent) {
            (Some(n), _) => SplitRule::PerClass(n),
            (None, Some(p)) => SplitRule::Percent(p),
            (None, None) => match (file.per_class_train, file.percent) {
                (Some(_), Some(_)) => return Err(config_error("per_class_train and percent are exclusive")),
                (_, Some(p)) => SplitRule::Percent(p),
                (n, None) => SplitRule::PerClass(n.unwrap_or(DEFAULT_PER_CLASS_TRAIN)),
            },
        };
        let config = RunConfig {
            cube: args.cube.clone().or(file.cube),
            labels: args.labels.clone().or(file.labels),
            split: args.split.clone().or(file.split),
            split_rule,
            split_seed: args.split_seed.or(file.split_seed).unwrap_or(0),
            model_seed: args.model_seed.or(file.model_seed).unwrap_or(0),
            learning_rate: args.learning_rate.or(file.learning_rate).unwrap_or(DEFAULT_LEARNING_RATE),
            momentum: args.momentum.or(file.momentum).unwrap_or(DEFAULT_MOMENTUM),
            weight_decay: args.weight_decay.or(file.weight_decay).unwrap_or(DEFAULT_WEIGHT_DECAY),
            epochs: args.epochs.or(file.epochs).unwrap_or(DEFAULT_EPOCHS),
            batch_size: args.batch_size.or(file.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
            window: args.window.or(file.window).unwrap_or(DEFAULT_WINDOW),
            out_dir: args.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from(".")),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(config_error(format!("window {} must be odd", self.window)));
        }
        if let SplitRule::Percent(p) = self.split_rule {
            if !(p > 0.0 && p <= 100.0) {
                return Err(config_error(format!("percent {p} outside (0, 100]")));
            }
        }
        self.train_config().validate()?;
        OptimizerState::new(self.learning_rate, self.momentum, self.weight_decay)?;
        for (name, path) in [("cube", &self.cube), ("labels", &self.labels), ("split", &self.split)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(config_error(format!("{name} path {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle_seed: self.split_seed,
            log_every: 1,
            eval_test: false,
        }
    }

    fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| config_error(format!("--{flag} is required")))
    }

    fn effective_line(&self) -> String {
        let split = match self.split_rule {
            SplitRule::PerClass(n) => format!("per_class_train={n}"),
            SplitRule::Percent(p) => format!("percent={p}"),
        };
        format!(
            "learning_rate={} momentum={} weight_decay={} epochs={} batch_size={} window={} {} split_seed={} model_seed={}",
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.epochs,
            self.batch_size,
            self.window,
            split,
            self.split_seed,
            self.model_seed
        )
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Split { run, out } => cmd_split(&RunConfig::resolve(&run)?, out),
        Command::Train { run, eval_test, dry_run } => {
            let config = RunConfig::resolve(&run)?;
            println!("effective: {}", config.effective_line());
            if dry_run {
                return Ok(());
            }
            cmd_train(&config, eval_test)
        }
        Command::Eval {
            run,
            checkpoint,
            on_train,
            out,
        } => cmd_eval(&RunConfig::resolve(&run)?, &checkpoint, on_train, out),
        Command::PredictMap { run, checkpoint, out } => {
            cmd_predict_map(&RunConfig::resolve(&run)?, &checkpoint, &out)
        }
        Command::Inspect { bands, classes, window } => {
            print!("{}", inspect_text(&ModelConfig::new(bands, classes).with_window(window))?);
            Ok(())
        }
    }
}

fn print_split_table(split: &SplitManifest, labels: &LabelGrid) {
    println!("class train test");
    for (i, (train, test)) in split.class_counts(labels.classes()).into_iter().enumerate() {
        println!("{} {} {}", labels.class_name(i + 1), train, test);
    }
}

fn obtain_split(config: &RunConfig, labels: &LabelGrid) -> Result<SplitManifest> {
    let split = match &config.split {
        Some(path) => load_split(path)?,
        None => split_with_rule(labels, config.split_rule, config.split_seed)?,
    };
    split.validate(labels)?;
    Ok(split)
}

pub fn cmd_split(config: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let labels = load_labels(config.require(&config.labels, "labels")?)?;
    let split = split_with_rule(&labels, config.split_rule, config.split_seed)?;
    let path = match out {
        Some(p) => p,
        None => {
            config.ensure_out_dir()?;
            config.out_dir.join(SPLIT_FILE)
        }
    };
    save_split(&split, &path)?;
    print_split_table(&split, &labels);
    Ok(())
}

pub fn cmd_train(config: &RunConfig, eval_test: bool) -> Result<()> {
    let cube = load_cube(config.require(&config.cube, "cube")?)?;
    let labels = load_labels(config.require(&config.labels, "labels")?)?;
    let split = obtain_split(config, &labels)?;
    let model_config = ModelConfig::new(cube.bands(), labels.classes()).with_window(config.window);
    let mut model = build_model(model_config, config.model_seed)?;
    let mut opt = OptimizerState::new(config.learning_rate, config.momentum, config.weight_decay)?;
    let train_config = TrainConfig {
        eval_test,
        ..config.train_config()
    };
    config.ensure_out_dir()?;
    if config.split.is_none() {
        save_split(&split, &config.out_dir.join(SPLIT_FILE))?;
    }
    let outcome = train(&mut model, &cube, &labels, &split, &train_config, &mut opt, |r| {
        match r.test_overall_accuracy {
            Some(oa) => eprintln!("epoch {} loss {:.6} test_oa {:.4}", r.epoch, r.mean_loss, oa),
            None => eprintln!("epoch {} loss {:.6}", r.epoch, r.mean_loss),
        }
    })?;
    save_checkpoint(&config.out_dir.join(CHECKPOINT_FILE), &model, Some(&outcome.normalizer))?;
    write_history(&config.out_dir.join(HISTORY_FILE), &outcome.history)?;
    let prepared = outcome.normalizer.apply(&cube)?;
    let pixels = if split.test.is_empty() { &split.train } else { &split.test };
    let m = evaluate(&model, &prepared, &labels, pixels)?;
    let report = write_report(&m, Some(&outcome.history), &config.out_dir.join(REPORT_FILE))?;
    print_summary(&report, if split.test.is_empty() { "train" } else { "test" });
    Ok(())
}

fn print_summary(report: &Report, set: &str) {
    let kappa = report.kappa.map_or_else(|| "undefined".to_string(), |k| format!("{k:.4}"));
    println!("{set} overall_accuracy {:.4} kappa {kappa}", report.overall_accuracy);
}

/// Normalizes `cube` with the checkpoint's statistics, or with statistics
/// fit on `split` for checkpoints that carry none.
fn prepare_cube(cube: &HsiCube, normalizer: Option<&BandNormalizer>, split: Option<&SplitManifest>) -> Result<HsiCube> {
    match (normalizer, split) {
        (Some(n), _) => n.apply(cube),
        (None, Some(s)) => BandNormalizer::fit(cube, s)?.apply(cube),
        (None, None) => Ok(cube.clone()),
    }
}

fn check_checkpoint_cube(model: &Model<f32>, cube: &HsiCube) -> Result<()> {
    if model.config.spectral_depth != cube.bands() {
        return Err(Error::DimMismatch {
            context: "checkpoint input shape vs cube",
            expected: model.config.input_dims(1).to_vec(),
            actual: cube.dims().to_vec(),
        });
    }
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, on_train: bool, out: Option<PathBuf>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cube = load_cube(config.require(&config.cube, "cube")?)?;
    check_checkpoint_cube(&ckpt.model, &cube)?;
    let labels = load_labels(config.require(&config.labels, "labels")?)?;
    let split = obtain_split(config, &labels)?;
    let prepared = prepare_cube(&cube, ckpt.normalizer.as_ref(), Some(&split))?;
    let (set, pixels) = if on_train { ("train", &split.train) } else { ("test", &split.test) };
    let m = evaluate(&ckpt.model, &prepared, &labels, pixels)?;
    overall_accuracy(&m)?;
    let path = match out {
        Some(p) => p,
        None => {
            config.ensure_out_dir()?;
            config.out_dir.join(REPORT_FILE)
        }
    };
    let report = write_report(&m, None, &path)?;
    print_summary(&report, set);
    Ok(())
}

pub fn cmd_predict_map(config: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cube = load_cube(config.require(&config.cube, "cube")?)?;
    check_checkpoint_cube(&ckpt.model, &cube)?;
    let split = match (&ckpt.normalizer, &config.split) {
        (None, Some(path)) => Some(load_split(path)?),
        _ => None,
    };
    let prepared = prepare_cube(&cube, ckpt.normalizer.as_ref(), split.as_ref())?;
    let map = predict_map(&ckpt.model, &prepared)?;
    render_map(&map, out)
}

/// Shape trace followed by the per-layer parameter table.
pub fn inspect_text(config: &ModelConfig) -> Result<String> {
    use std::fmt::Write;
    let trace = shape_trace(config)?;
    let model = Model::<f32>::zeroed(*config, 0)?;
    let ledger = param_count(&model);
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>8} {:>6} {:>6} {:>6}", "stage", "channels", "height", "width", "depth");
    for st in &trace.stages {
        let [c, h, w, d] = st.dims;
        let _ = writeln!(s, "{:<10} {c:>8} {h:>6} {w:>6} {d:>6}", st.name);
    }
    let _ = writeln!(s, "flatten {}", trace.flattened);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>10}", "layer", "params");
    for (name, count) in &ledger.layers {
        if name != "FC" {
            let _ = writeln!(s, "{name:<10} {count:>10}");
        }
    }
    let _ = writeln!(s, "{:<10} {:>10}", "conv_total", ledger.conv_total);
    let _ = writeln!(s, "{:<10} {:>10}", "FC", ledger.classifier);
    let _ = writeln!(s, "{:<10} {:>10}", "total", ledger.total);
    Ok(s)
}
