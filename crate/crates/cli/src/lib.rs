//! The `monoe` command: synthetic data generation, cross-validated
//! training, checkpoint evaluation and cross-fold reporting.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 integrity (malformed or
//! corrupt files).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use monoe_core::io::{
    aggregate_rows, load_checkpoint, read_csv, read_dataset, report_row, rows_for_fold, save_checkpoint,
    write_aggregate, write_csv, write_dataset, Checkpoint, DatasetFile,
};
use monoe_core::nn::{ClassifierConfig, GeneratorConfig};
use monoe_core::phantom::{make_dataset, PhantomSpec, Role};
use monoe_core::trainer::{evaluate_epoch, kfold_split, run_fold, ClassifierInput, Pools, TrainConfig, TrainMode};
use monoe_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(Error::Io { .. }) => EXIT_IO,
            CliError::Core(Error::Format { .. } | Error::Integrity { .. }) => EXIT_INTEGRITY,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "monoe", version, about = "Joint CT translation and lesion classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset file.
    GenData(GenDataArgs),
    /// Cross-validated training; writes per-fold checkpoints and metrics.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset and append one CSV row.
    Eval(EvalArgs),
    /// Aggregate per-fold metrics logs across folds.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RoleArg {
    Paired,
    Labeled,
    Eval,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Paired => Role::Paired,
            RoleArg::Labeled => Role::Labeled,
            RoleArg::Eval => Role::Eval,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Joint,
    Sequential,
    ClassifierOnly,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Joint => TrainMode::Joint,
            ModeArg::Sequential => TrainMode::Sequential,
            ModeArg::ClassifierOnly => TrainMode::ClassifierOnly,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_patients: usize,
    #[arg(long)]
    pub slices_per_patient: usize,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[arg(long, default_value_t = 0.5)]
    pub lesion_prob: f64,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub paired: Option<PathBuf>,
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Train only this fold instead of all of them.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub epochs_const: Option<usize>,
    #[arg(long)]
    pub epochs_decay: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mix_fraction: Option<f64>,
    #[arg(long)]
    pub gen_base_channels: Option<usize>,
    #[arg(long)]
    pub gen_blocks: Option<usize>,
    #[arg(long)]
    pub cls_base_channels: Option<usize>,
    #[arg(long)]
    pub cls_stages: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("monoe: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> CliResult<()> {
    if a.n_patients == 0 || a.slices_per_patient == 0 {
        return Err(usage("--n-patients and --slices-per-patient must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.lesion_prob) {
        return Err(usage(format!("--lesion-prob {} outside [0, 1]", a.lesion_prob)));
    }
    if a.image_size < 16 || !a.image_size.is_multiple_of(4) {
        return Err(usage(format!("--image-size {} must be a multiple of 4 and at least 16", a.image_size)));
    }
    let spec = PhantomSpec { lesion_prob: a.lesion_prob, ..PhantomSpec::with_size(a.image_size) };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let records = make_dataset(&spec, a.n_patients, a.slices_per_patient, a.role.into(), a.seed)?;
    let file = DatasetFile::from_records(records)?;
    write_dataset(&a.out, &file)?;
    let labels: Vec<u8> = file.records.iter().filter_map(|r| r.label).collect();
    let prevalence = if labels.is_empty() {
        "n/a".to_string()
    } else {
        format!("{:.4}", labels.iter().map(|&z| f64::from(z)).sum::<f64>() / labels.len() as f64)
    };
    println!("wrote {} records to {} (label prevalence {prevalence})", file.records.len(), a.out.display());
    Ok(())
}

/// Builds the training configuration from flags; checks nothing on disk.
pub fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mode: TrainMode = a.mode.into();
    let mut cfg = TrainConfig::desk(mode);
    cfg.seed = a.seed;
    cfg.folds = a.folds;
    if let Some(v) = a.epochs_const {
        cfg.epochs_const = v;
    }
    if let Some(v) = a.epochs_decay {
        cfg.epochs_decay = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = a.mix_fraction {
        cfg.mix_fraction = v;
    }
    cfg.generator = GeneratorConfig {
        in_channels: 1,
        base_channels: a.gen_base_channels.unwrap_or(cfg.generator.base_channels),
        n_blocks: a.gen_blocks.unwrap_or(cfg.generator.n_blocks),
    };
    cfg.classifier = ClassifierConfig {
        in_channels: 1,
        base_channels: a.cls_base_channels.unwrap_or(cfg.classifier.base_channels),
        n_stages: a.cls_stages.unwrap_or(cfg.classifier.n_stages),
    };
    if mode.uses_generator() && a.paired.is_none() {
        return Err(usage(format!("{mode} mode requires --paired")));
    }
    if let Some(f) = a.fold {
        if f >= a.folds {
            return Err(usage(format!("--fold {f} is not below --folds {}", a.folds)));
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.generator.base_channels < 4 || cfg.generator.n_blocks < 1 {
        return Err(usage("generator needs --gen-base-channels >= 4 and --gen-blocks >= 1"));
    }
    if cfg.classifier.base_channels < 4 || cfg.classifier.n_stages < 1 {
        return Err(usage("classifier needs --cls-base-channels >= 4 and --cls-stages >= 1"));
    }
    Ok(cfg)
}

fn load_pool(path: &Path, what: &str, need_mono: bool, need_labels: bool) -> CliResult<DatasetFile> {
    let file = read_dataset(path)?;
    if need_mono && !file.has_mono() {
        return Err(usage(format!("{what} file {} carries no mono targets", path.display())));
    }
    if need_labels && !file.has_labels() {
        return Err(usage(format!("{what} file {} carries no labels", path.display())));
    }
    if file.records.is_empty() {
        return Err(usage(format!("{what} file {} is empty", path.display())));
    }
    Ok(file)
}

pub fn metrics_file_name(mode: TrainMode, fold: usize) -> String {
    format!("metrics_{mode}_fold{fold}.csv")
}

pub fn checkpoint_dir_name(mode: TrainMode, fold: usize) -> String {
    format!("checkpoint_{mode}_fold{fold}")
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = train_config(a)?;
    let labeled = load_pool(&a.labeled, "labeled", false, true)?;
    let paired = match (&a.paired, cfg.mode.uses_generator()) {
        (Some(p), true) => Some(load_pool(p, "paired", true, false)?),
        _ => None,
    };
    let eval = a.eval.as_deref().map(|p| load_pool(p, "eval", true, true)).transpose()?;
    let size = (labeled.height, labeled.width);
    if size.0 != size.1 {
        return Err(usage(format!("images must be square, got {}x{}", size.0, size.1)));
    }
    for (what, f) in [("paired", paired.as_ref()), ("eval", eval.as_ref())] {
        if let Some(f) = f {
            if (f.height, f.width) != size {
                return Err(usage(format!("{what} images are {}x{}, labeled are {}x{}", f.height, f.width, size.0, size.1)));
            }
        }
    }
    cfg.image_size = size.0;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let ids: Vec<u32> = labeled.records.iter().map(|r| r.patient_id).collect();
    let splits = kfold_split(&ids, cfg.folds, cfg.seed).map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io { path: a.out_dir.clone(), source: e })?;
    let pools = Pools {
        paired: paired.as_ref().map_or(&[][..], |p| &p.records),
        labeled: &labeled.records,
        eval: eval.as_ref().map(|e| &e.records[..]),
    };
    for split in splits.iter().filter(|s| a.fold.is_none_or(|f| f == s.fold_id)) {
        let fold = split.fold_id;
        let quiet = a.quiet;
        let outcome = run_fold(&cfg, pools, split, &mut |log| {
            if !quiet {
                let val = log.val.as_ref().map_or(String::new(), |v| format!(" val_auroc {:.4}", v.auroc_or_nan()));
                eprintln!(
                    "[{} fold {fold}] epoch {} l1 {:.4} cls {:.4}{val}",
                    cfg.mode, log.epoch, log.train.l1, log.train.cls
                );
            }
        })?;
        let ckpt = Checkpoint {
            config: cfg.clone(),
            fold,
            epoch: outcome.best_epoch,
            models: outcome.best.clone(),
            optimizer_state: true,
        };
        save_checkpoint(&a.out_dir.join(checkpoint_dir_name(cfg.mode, fold)), &ckpt)?;
        write_csv(&a.out_dir.join(metrics_file_name(cfg.mode, fold)), &rows_for_fold(cfg.mode, &outcome), false)?;
        let eval_note = outcome.eval.as_ref().map_or(String::new(), |e| {
            format!(" eval psnr {:.3} ssim {:.4} auroc {:.4}", e.psnr_mean, e.ssim_mean, e.auroc_or_nan())
        });
        println!(
            "{} fold {fold}: best epoch {} test auroc {:.4}{eval_note}",
            cfg.mode,
            outcome.best_epoch,
            outcome.test.auroc_or_nan()
        );
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = load_pool(&a.eval, "eval", false, false)?;
    let translator = match ckpt.config.classifier_input {
        ClassifierInput::Generated => ckpt.models.generator.as_ref(),
        ClassifierInput::Poly => None,
    };
    let report = evaluate_epoch(translator, Some(&ckpt.models.classifier), &data.records, ckpt.fold, ckpt.epoch)?;
    write_csv(&a.out, &[report_row(ckpt.config.mode, "eval", &report)], true)?;
    println!(
        "{} fold {} epoch {}: psnr {:.3} ssim {:.4} auroc {}",
        ckpt.config.mode,
        ckpt.fold,
        ckpt.epoch,
        report.psnr_mean,
        report.ssim_mean,
        report.auroc.as_ref().map_or_else(|e| format!("undefined ({e})"), |v| format!("{v:.4}"))
    );
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> CliResult<()> {
    let entries = fs::read_dir(&a.logs).map_err(|e| Error::Io { path: a.logs.clone(), source: e })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("metrics_") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no metrics_*.csv logs in {}", a.logs.display())));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_csv(f)?);
    }
    let agg = aggregate_rows(&rows).map_err(|e| usage(e.to_string()))?;
    write_aggregate(&a.out, &agg)?;
    println!("{:<16} {:>5} {:>17} {:>17} {:>17}", "mode", "folds", "PSNR", "SSIM", "test AuROC");
    for r in &agg {
        println!(
            "{:<16} {:>5} {:>8.3} ± {:<6.3} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            r.mode, r.n_folds, r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std, r.auroc_mean, r.auroc_std
        );
    }
    Ok(())
}
