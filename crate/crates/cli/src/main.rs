//! `framefuse` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use framefuse::cells::CellKind;
use framefuse::checkpoint::{load_checkpoint, save_checkpoint};
use framefuse::dataset_io::{load_dataset, write_dataset, DatasetFormat};
use framefuse::encoder::EncoderConfig;
use framefuse::fusion::{FusionConfig, FusionMode};
use framefuse::gradcheck::{finite_diff_check, GradCheckOptions};
use framefuse::model::AttentionConfig;
use framefuse::optim::LrSchedule;
use framefuse::predictions::{read_predictions, write_predictions};
use framefuse::train::Trainer;
use framefuse::{
    ensemble_combine, evaluate, generate_synthetic, predict_set, DatasetSpec, Error, FrameExample, Model, ModelConfig,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "framefuse", version, about = "Recurrent multimodal video classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic planted-signal corpus (`.bin` selects the binary format).
    Generate(GenerateArgs),
    /// Train a model on the training split and save a checkpoint.
    Train(TrainArgs),
    /// GAP@k of a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Write top-k predictions for the test split as CSV.
    Predict(PredictArgs),
    /// GAP-weighted combination of prediction files.
    Ensemble(EnsembleArgs),
    /// Finite-difference audit of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2500)]
    videos: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    dv: usize,
    #[arg(long, default_value_t = 4)]
    da: usize,
    #[arg(long, default_value_t = 2.0)]
    labels_per_video: f64,
    #[arg(long, default_value_t = 1.0)]
    signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cell {
    Lstm,
    Gru,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Concat,
    Shared,
    Project,
}

#[derive(Args, Clone)]
struct ArchArgs {
    #[arg(long, value_enum, default_value = "gru")]
    cell: Cell,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    bidirectional: bool,
    /// Stacked recurrent layers; 0 trains the video-level logistic regression.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, value_enum, default_value = "concat")]
    fusion: Fusion,
    #[arg(long, default_value_t = 16)]
    shared_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda_align: f64,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    attention: bool,
}

impl ArchArgs {
    fn config(&self, visual_dim: usize, audio_dim: usize, num_classes: usize) -> Result<ModelConfig, CliError> {
        let fusion = FusionConfig {
            mode: match self.fusion {
                Fusion::Concat => FusionMode::Concat,
                Fusion::Shared => FusionMode::SharedSpace,
                Fusion::Project => FusionMode::Projection,
            },
            shared_dim: self.shared_dim,
            lambda_align: self.lambda_align,
        };
        let encoder = (self.layers > 0).then(|| EncoderConfig {
            cell: match self.cell {
                Cell::Lstm => CellKind::Lstm,
                Cell::Gru => CellKind::Gru,
            },
            hidden_dim: self.hidden,
            num_layers: self.layers,
            bidirectional: self.bidirectional,
            ..EncoderConfig::default()
        });
        if encoder.is_none() && self.attention {
            return Err(CliError::Usage("--attention true needs --layers >= 1".into()));
        }
        let cfg = ModelConfig {
            visual_dim,
            audio_dim,
            num_classes,
            fusion,
            encoder,
            attention: self.attention.then_some(AttentionConfig {
                embed_dim: None,
                attn_dim: None,
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    /// Base learning rate of the decay schedule.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.95)]
    decay: f64,
    #[arg(long, default_value_t = 1000)]
    decay_steps: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Where to write the JSON report; defaults to `<checkpoint>.gap.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, num_args = 1.., required = true)]
    preds: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    gaps: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// JSON model configuration; overrides the architecture flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    /// Check every cell/direction/depth/fusion/attention combination.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_numeric_error() {
            CliError::Numeric(msg)
        } else if matches!(e, Error::Parameter(_) | Error::Mode { .. }) {
            CliError::Usage(msg)
        } else {
            CliError::Data(msg)
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let spec = DatasetSpec {
        num_videos: a.videos,
        num_classes: a.classes,
        frames: a.frames,
        visual_dim: a.dv,
        audio_dim: a.da,
        labels_per_video: a.labels_per_video,
        seed: a.seed,
        signal_strength: a.signal,
        ..DatasetSpec::default()
    };
    let dataset = generate_synthetic(&spec)?;
    write_dataset(&dataset, &a.out, DatasetFormat::from_path(&a.out)).map_err(with_path(&a.out))?;
    println!(
        "wrote {} videos ({} train, {} test) to {}",
        dataset.examples.len(),
        dataset.train().len(),
        dataset.test().len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let data = load_dataset(&a.data).map_err(with_path(&a.data))?;
    let h = &data.header;
    let config = a.arch.config(h.visual_dim, h.audio_dim, h.num_classes)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        schedule: Some(LrSchedule {
            base_lr: a.lr,
            decay_factor: a.decay,
            decay_steps: a.decay_steps,
            late_decay_steps: a.decay_steps,
            switch_step: None,
        }),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    if data.train().is_empty() {
        return Err(CliError::Data(format!("{}: no training records", a.data.display())));
    }
    let mut trainer = Trainer::new(Model::init(config, a.seed)?);
    for _ in 0..cfg.epochs {
        let e = trainer.run_epoch(data.train(), data.test(), &cfg)?;
        match e.valid_gap {
            Some(g) => println!("epoch {} loss {} gap {g}", e.epoch, e.mean_loss),
            None => println!("epoch {} loss {}", e.epoch, e.mean_loss),
        }
    }
    save_checkpoint(&trainer, &a.checkpoint).map_err(with_path(&a.checkpoint))?;
    Ok(())
}

fn test_split(data: &framefuse::Dataset, path: &Path) -> Result<Vec<FrameExample>, CliError> {
    if data.test().is_empty() {
        return Err(CliError::Data(format!("{}: no test records", path.display())));
    }
    Ok(data.test().to_vec())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), CliError> {
    let data = load_dataset(&a.data).map_err(with_path(&a.data))?;
    let trainer = load_checkpoint(&a.checkpoint).map_err(with_path(&a.checkpoint))?;
    let test = test_split(&data, &a.data)?;
    let report = evaluate(&trainer.model, &test, a.k)?;
    let path = a.report.unwrap_or_else(|| a.checkpoint.with_extension("gap.json"));
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numeric(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    println!("GAP@{} {}", a.k, report.gap);
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let data = load_dataset(&a.data).map_err(with_path(&a.data))?;
    let trainer = load_checkpoint(&a.checkpoint).map_err(with_path(&a.checkpoint))?;
    let test = test_split(&data, &a.data)?;
    let preds = predict_set(&trainer.model, &test, a.k)?;
    write_predictions(&preds, &a.out).map_err(with_path(&a.out))?;
    println!("wrote predictions for {} videos to {}", preds.len(), a.out.display());
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> Result<(), CliError> {
    if a.preds.len() != a.gaps.len() {
        return Err(CliError::Usage(format!(
            "{} prediction files but {} GAP values",
            a.preds.len(),
            a.gaps.len()
        )));
    }
    let sets = a
        .preds
        .iter()
        .map(|p| read_predictions(p).map_err(with_path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let combined = ensemble_combine(&sets, &a.gaps, a.k)?;
    write_predictions(&combined, &a.out).map_err(with_path(&a.out))?;
    println!("wrote ensemble of {} models to {}", sets.len(), a.out.display());
    Ok(())
}

fn gradcheck_one(config: ModelConfig, frames: usize, seed: u64, tolerance: f64) -> Result<bool, CliError> {
    let data = generate_synthetic(&DatasetSpec {
        num_videos: 3,
        num_classes: config.num_classes,
        frames,
        visual_dim: config.visual_dim,
        audio_dim: config.audio_dim,
        labels_per_video: 1.0,
        seed,
        ..DatasetSpec::default()
    })?;
    let batch: Vec<&FrameExample> = data.examples.iter().collect();
    let model = Model::init(config, seed)?;
    let report = finite_diff_check(
        &model,
        &batch,
        &GradCheckOptions {
            seed,
            ..GradCheckOptions::default()
        },
    )?;
    let worst = report.worst().map_or("-", |g| g.name.as_str());
    let ok = report.max_error() <= tolerance;
    println!(
        "{} max relative error {:.3e} ({worst})",
        if ok { "ok  " } else { "FAIL" },
        report.max_error()
    );
    Ok(ok)
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let (visual_dim, audio_dim, num_classes) = (6, 3, 4);
    let configs = if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let cfg: ModelConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        vec![cfg]
    } else if a.all {
        let mut out = Vec::new();
        for cell in [Cell::Lstm, Cell::Gru] {
            for bidirectional in [false, true] {
                for layers in [1, 2] {
                    for fusion in [Fusion::Concat, Fusion::Shared, Fusion::Project] {
                        for attention in [false, true] {
                            let arch = ArchArgs {
                                cell,
                                bidirectional,
                                layers,
                                fusion,
                                attention,
                                ..a.arch.clone()
                            };
                            out.push(arch.config(visual_dim, audio_dim, num_classes)?);
                        }
                    }
                }
            }
        }
        out
    } else {
        vec![a.arch.config(visual_dim, audio_dim, num_classes)?]
    };
    let mut failed = 0;
    for cfg in configs {
        let label = describe(&cfg);
        print!("{label:<48} ");
        if !gradcheck_one(cfg, a.frames, a.seed, a.tolerance)? {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} configuration(s) exceed tolerance {}",
            a.tolerance
        )));
    }
    Ok(())
}

fn describe(cfg: &ModelConfig) -> String {
    let enc = match &cfg.encoder {
        Some(e) => format!(
            "{}{} x{} h{}",
            if e.bidirectional { "bi-" } else { "" },
            e.cell.as_str(),
            e.num_layers,
            e.hidden_dim
        ),
        None => "video-level".into(),
    };
    format!(
        "{enc} {} {}",
        cfg.fusion.mode.as_str(),
        if cfg.attention.is_some() {
            "attention"
        } else {
            "last-state"
        }
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
