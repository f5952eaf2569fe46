use std::path::PathBuf;
use std::process::ExitCode;

use brainage::cnn::CnnConfig;
use brainage::ensemble::EnsembleSpec;
use brainage::pipeline::{
    self, AnalyzeOptions, BvdOptions, BvdSourceKind, CvOptions, CvSource, EnsembleFitOptions,
    ReportOptions, ResidualSet, TrainOptions,
};
use brainage::stats::{Outcome, TrendMode};
use brainage::synth::{ConditionOffsets, SynthConfig};
use brainage::Modality;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Brain-age estimation from synthetic or real MRI slices.
#[derive(Parser, Debug)]
#[command(name = "brainage", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort (images + metadata.csv + truth.csv).
    Synth(SynthArgs),
    /// Train one modality's CNN.
    Train(TrainArgs),
    /// Fit a stacking ensemble on the four trained models.
    EnsembleFit(EnsembleFitArgs),
    /// K-fold cross-validation over ensemble families.
    CvSelect(CvArgs),
    /// Fit the ensemble, analyse residuals and write the study report.
    Analyze(AnalyzeArgs),
    /// Monte Carlo bias-variance decomposition.
    Bvd(BvdArgs),
    /// Re-render markdown and plots from an existing report.json.
    Report(ReportArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug)]
struct Common {
    /// File of newline-delimited key=value pairs; explicit flags win.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 400)]
    subjects: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 20.0)]
    age_min: f64,
    #[arg(long, default_value_t = 80.0)]
    age_max: f64,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    /// Per-subject apparent-age jitter (years).
    #[arg(long, default_value_t = 2.5)]
    jitter: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    offset_htn: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    offset_dm: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset_mtbi: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    offset_sad: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    offset_aad: f64,
    /// Extra effective-age offset for subjects with two or more conditions.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    multi_flag_offset: f64,
    /// Per-modality probability that an image is missing.
    #[arg(long, default_value_t = 0.024)]
    missing: f64,
    #[arg(long, default_value_t = 0.9)]
    male_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Seed of the train/test split; keep it equal across train and analyze.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    split: SplitArgs,
    /// Cohort directory or metadata CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    modality: Modality,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Network input side; images are resampled to it.
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Do not mirror-augment the training images.
    #[arg(long)]
    no_mirror: bool,
    /// Train on complete training-split records only.
    #[arg(long)]
    no_incomplete: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EnsembleFitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// average, linear, second, third or fourth, optionally with "+interactions".
    #[arg(long, default_value = "third")]
    ensemble: EnsembleSpec,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Seed of the train/test split.
    #[arg(long, alias = "split-seed", default_value_t = 0)]
    seed: u64,
    /// Fit on out-of-fold base predictions from K per-fold retrainings.
    #[arg(long, value_name = "K")]
    out_of_fold: Option<usize>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct CvArgs {
    #[command(flatten)]
    common: Common,
    /// Base-prediction CSV (rows with split=test are skipped).
    #[arg(long, conflicts_with_all = ["data", "models"])]
    preds: Option<PathBuf>,
    #[arg(long, requires = "models")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    models: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// Comma-separated ensemble families.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "average,linear,second,third,fourth"
    )]
    candidates: Vec<EnsembleSpec>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TrendArg {
    SlopesAndIntercepts,
    SlopesOnly,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ResidualArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, default_value = "third")]
    ensemble: EnsembleSpec,
    /// Families compared by cross-validation; pass an empty string to skip.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "average,linear,second,third,fourth"
    )]
    candidates: Vec<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed of the cross-validation folds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which predictions feed the residual statistics.
    #[arg(long, value_enum, default_value = "train")]
    residual_set: ResidualArg,
    #[arg(long, default_value_t = 49.0)]
    age_threshold: f64,
    #[arg(long, value_enum, default_value = "slopes-and-intercepts")]
    trend_mode: TrendArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SourceArg {
    Stacking,
    Constant,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BvdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "stacking")]
    source: SourceArg,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "average,linear,second,third,fourth"
    )]
    candidates: Vec<EnsembleSpec>,
    /// Training-set size per repeat [default: 100 stacking, 25 constant].
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long, default_value_t = 200)]
    eval_points: usize,
    #[arg(long, default_value_t = 500)]
    repeats: usize,
    /// Target noise sd [default: 3 stacking, 1 constant].
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding report.json, or the file itself.
    #[arg(long)]
    input: PathBuf,
    /// Accepted for uniformity; rendering is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Splices `--config` file entries in front of the explicit flags so that
/// the explicit ones override them.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, (u8, String)> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| (1, format!("{path}: {e}")))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err((
                2,
                format!("{path}:{}: expected key=value, got {line:?}", n + 1),
            ));
        };
        let key = format!("--{}", k.trim().replace('_', "-"));
        match v.trim() {
            "true" => extra.push(key),
            "false" => {}
            v => {
                extra.push(key);
                extra.push(v.to_string());
            }
        }
    }
    // args[0] is the binary and args[1] the subcommand.
    let at = 2.min(args.len());
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn show(o: &Outcome<brainage::ensemble::MetricSummary>) -> String {
    match o {
        Outcome::Ok { result: m } => format!("R2 {:.3}  MAE {:.3}  MSE {:.3}", m.r2, m.mae, m.mse),
        Outcome::NotApplicable { reason } => format!("n/a ({reason})"),
    }
}

fn run(cmd: Command) -> Result<(), pipeline::PipelineError> {
    match cmd {
        Command::Synth(a) => {
            let config = SynthConfig {
                subjects: a.subjects,
                age_min: a.age_min,
                age_max: a.age_max,
                image_side: a.side,
                pixel_noise: a.noise,
                anatomical_jitter: a.jitter,
                offsets: ConditionOffsets {
                    htn: a.offset_htn,
                    dm: a.offset_dm,
                    mtbi: a.offset_mtbi,
                    sad: a.offset_sad,
                    aad: a.offset_aad,
                },
                multi_flag_offset: a.multi_flag_offset,
                missing_probability: a.missing,
                male_fraction: a.male_fraction,
                seed: a.seed,
                ..SynthConfig::default()
            };
            let (cohort, manifest) = pipeline::run_synth(&config, &a.common.out)?;
            println!(
                "{} subjects ({} complete) -> {}",
                cohort.subjects.len(),
                cohort.complete_count(),
                cohort.metadata_path.display()
            );
            println!("manifest: {}", manifest.display());
        }
        Command::Train(a) => {
            let cnn = CnnConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                seed: a.seed,
                ..CnnConfig::with_side(a.side)
            };
            let opts = TrainOptions {
                data: a.data,
                modality: a.modality,
                cnn,
                train_fraction: a.split.train_fraction,
                split_seed: a.split.split_seed,
                use_incomplete: !a.no_incomplete,
                mirror: !a.no_mirror,
                out: a.common.out,
            };
            let out = pipeline::run_train(&opts)?;
            let last = out.model.history.last().copied().unwrap_or(f64::NAN);
            println!(
                "{}: {} images, {} epochs, final train MSE {last:.4} -> {}",
                opts.modality,
                out.training_images,
                out.model.history.len(),
                out.model_path.display()
            );
        }
        Command::EnsembleFit(a) => {
            let opts = EnsembleFitOptions {
                data: a.data,
                models: a.models,
                spec: a.ensemble,
                train_fraction: a.train_fraction,
                split_seed: a.seed,
                out_of_fold: a.out_of_fold,
                out: a.common.out,
            };
            let (file, _) = pipeline::run_ensemble_fit(&opts)?;
            println!("{} ensemble", opts.spec.title());
            println!("  train: {}", show(&file.train));
            println!("  test:  {}", show(&file.test));
        }
        Command::CvSelect(a) => {
            let source = match (a.preds, a.data, a.models) {
                (Some(path), _, _) => CvSource::Predictions { path },
                (None, Some(data), Some(models)) => CvSource::Cohort {
                    data,
                    models,
                    train_fraction: a.split.train_fraction,
                    split_seed: a.split.split_seed,
                },
                _ => {
                    return Err(pipeline::PipelineError::Invalid(
                        "give --preds or both --data and --models".into(),
                    ))
                }
            };
            let opts = CvOptions {
                source,
                candidates: a.candidates,
                folds: a.folds,
                seed: a.seed,
                out: a.common.out,
            };
            let (report, _) = pipeline::run_cv_select(&opts)?;
            print!("{}", brainage::report::cv_table(&report));
        }
        Command::Analyze(a) => {
            let candidates = a
                .candidates
                .iter()
                .filter(|c| !c.trim().is_empty())
                .map(|c| {
                    c.parse::<EnsembleSpec>()
                        .map_err(pipeline::PipelineError::Invalid)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let opts = AnalyzeOptions {
                spec: a.ensemble,
                train_fraction: a.split.train_fraction,
                split_seed: a.split.split_seed,
                cv_candidates: candidates,
                cv_folds: a.folds,
                cv_seed: a.seed,
                residual_set: match a.residual_set {
                    ResidualArg::Train => ResidualSet::Train,
                    ResidualArg::Test => ResidualSet::Test,
                    ResidualArg::All => ResidualSet::All,
                },
                age_threshold: a.age_threshold,
                trend_mode: match a.trend_mode {
                    TrendArg::SlopesAndIntercepts => TrendMode::SlopesAndIntercepts,
                    TrendArg::SlopesOnly => TrendMode::SlopesOnly,
                },
                ..AnalyzeOptions::new(a.data, a.models, a.common.out)
            };
            let out = pipeline::run_analyze(&opts)?;
            println!("ensemble train: {}", show(&out.report.ensemble_train));
            println!("ensemble test:  {}", show(&out.report.ensemble_test));
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bvd(a) => {
            let source = match a.source {
                SourceArg::Stacking => BvdSourceKind::Stacking,
                SourceArg::Constant => BvdSourceKind::Constant,
            };
            let constant = source == BvdSourceKind::Constant;
            let opts = BvdOptions {
                source,
                candidates: a.candidates,
                train_size: a.train_size.unwrap_or(if constant { 25 } else { 100 }),
                eval_points: a.eval_points,
                repeats: a.repeats,
                noise_sd: a.noise_sd.unwrap_or(if constant { 1.0 } else { 3.0 }),
                seed: a.seed,
                out: a.common.out,
            };
            let (rows, _) = pipeline::run_bvd(&opts)?;
            for r in rows {
                let e = r.estimate;
                println!(
                    "{:<14} bias2 {:.4}  variance {:.4}  noise {:.4}  total {:.4}  empirical {:.4}",
                    r.model, e.bias_squared, e.variance, e.irreducible, e.total, e.empirical_error
                );
            }
        }
        Command::Report(a) => {
            let opts = ReportOptions {
                input: a.input,
                out: a.common.out,
            };
            let (_, manifest) = pipeline::run_report(&opts)?;
            println!("report re-rendered; manifest: {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
