//! `painrec` command line: synthesize datasets, extract features, and run
//! cross-validated experiments.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 experiment
//! failure (partial results are preserved).

mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::ConfigFile;
use painrec_core::data::{
    load_csv_path, save_feature_csv, save_ground_truth_csv, save_raw_csv, synthesize_dataset,
    ClassLabel, DataError, SynthConfig,
};
use painrec_core::eval::{
    report_table, run_experiment, write_reports, Classifier, CvReport, EvalError, ExperimentSpec,
    FeatureSet, RunOptions, StandardizationScope, TableFormat,
};
use painrec_core::features::ExtractionConfig;
use painrec_core::nn::Optimizer;
use painrec_core::seed;
use painrec_core::signal::BandpassSpec;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const RESULTS_DIR_ENV: &str = "PAINREC_RESULTS_DIR";

#[derive(Parser)]
#[command(
    name = "painrec",
    version,
    about = "Physiological pain recognition: synthetic data, feature extraction, \
             and cross-validated classifier experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic raw dataset plus its ground-truth sidecar
    Synth(SynthArgs),
    /// Extract the 17 per-window features from a raw CSV
    Extract(ExtractArgs),
    /// Run one experiment, or the full task x feature-set x classifier sweep
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for raw.csv and ground_truth.csv
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic subjects
    #[arg(long)]
    subjects: Option<usize>,
    /// Windows per class and subject
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Class-separation strength
    #[arg(long)]
    effect_size: Option<f64>,
    /// Per-subject response-gain spread (negative gains flip polarity)
    #[arg(long)]
    heterogeneity: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// TOML config overlay; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Raw CSV to read
    #[arg(long)]
    input: PathBuf,
    /// Feature CSV to write
    #[arg(long)]
    output: PathBuf,
    /// ECG pre-filter low edge (Hz)
    #[arg(long)]
    band_low: Option<f64>,
    /// ECG pre-filter high edge (Hz); must stay below Nyquist
    #[arg(long)]
    band_high: Option<f64>,
    /// ECG pre-filter order
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV (raw or feature schema); raw data is extracted first
    #[arg(long)]
    data: PathBuf,
    /// Results directory (default: $PAINREC_RESULTS_DIR or ./results)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    classifier: Option<ClassifierArg>,
    /// Positive class of the binary task (baseline is always the negative)
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    features: Option<FeatureSetArg>,
    /// Run the full 4-task x 3-feature-set x 4-classifier grid
    #[arg(long, conflicts_with_all = ["classifier", "task", "features"])]
    sweep: bool,
    #[arg(long)]
    k: Option<usize>,
    /// Top-level seed; every fold and model derives its own stream from it
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for fold/experiment parallelism
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,

    // hyperparameter overrides
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_norm: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    shared_width: Option<usize>,
    #[arg(long)]
    task_width: Option<usize>,
    /// Ridge strength for logistic regression
    #[arg(long)]
    l2: Option<f64>,
    /// Hinge weight for the linear SVM
    #[arg(long)]
    svm_c: Option<f64>,
    /// Inner 3-fold grid search for l2 / svm-c
    #[arg(long)]
    grid_search: bool,
    #[arg(long, value_enum)]
    standardization: Option<StandardizationArg>,
    // extraction settings for raw inputs
    #[arg(long)]
    band_low: Option<f64>,
    #[arg(long)]
    band_high: Option<f64>,
    #[arg(long)]
    filter_order: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy)]
enum ClassifierArg {
    Lr,
    #[value(name = "svm-l", alias = "svml")]
    SvmL,
    #[value(name = "st-nn", alias = "stnn")]
    StNn,
    #[value(name = "mt-nn", alias = "mtnn")]
    MtNn,
}

impl From<ClassifierArg> for Classifier {
    fn from(a: ClassifierArg) -> Self {
        match a {
            ClassifierArg::Lr => Classifier::Lr,
            ClassifierArg::SvmL => Classifier::SvmLinear,
            ClassifierArg::StNn => Classifier::StNn,
            ClassifierArg::MtNn => Classifier::MtNn,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum TaskArg {
    P1,
    P2,
    P3,
    P4,
}

impl From<TaskArg> for ClassLabel {
    fn from(a: TaskArg) -> Self {
        match a {
            TaskArg::P1 => ClassLabel::P1,
            TaskArg::P2 => ClassLabel::P2,
            TaskArg::P3 => ClassLabel::P3,
            TaskArg::P4 => ClassLabel::P4,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum FeatureSetArg {
    Sc,
    Ecg,
    #[value(name = "sc+ecg", alias = "sc-ecg")]
    ScEcg,
}

impl From<FeatureSetArg> for FeatureSet {
    fn from(a: FeatureSetArg) -> Self {
        match a {
            FeatureSetArg::Sc => FeatureSet::Sc,
            FeatureSetArg::Ecg => FeatureSet::Ecg,
            FeatureSetArg::ScEcg => FeatureSet::ScEcg,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(ValueEnum, Clone, Copy)]
enum StandardizationArg {
    FoldLocal,
    Global,
}

/// Failure with the exit code it maps to.
enum CliError {
    Usage(String),
    Io(String),
    Experiment(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Experiment(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Experiment(m) => m,
        }
    }
}

/// Load-time errors are I/O-class; everything the user typed is usage.
fn data_error(e: DataError) -> CliError {
    CliError::Io(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Run(args) => cmd_run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, CliError> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let base = file.synth.unwrap_or_default();
    let cfg = SynthConfig {
        n_subjects: args.subjects.unwrap_or(base.n_subjects),
        per_class: args.per_class.unwrap_or(base.per_class),
        sample_rate_hz: args.sample_rate.unwrap_or(base.sample_rate_hz),
        effect_size: args.effect_size.unwrap_or(base.effect_size),
        subject_heterogeneity: args.heterogeneity.unwrap_or(base.subject_heterogeneity),
        noise_sd: args.noise_sd.unwrap_or(base.noise_sd),
        seed: args.seed.unwrap_or(base.seed),
    };
    if cfg.per_class == 0 {
        return Err(CliError::Usage("--per-class must be at least 1".into()));
    }
    if cfg.n_subjects == 0 {
        return Err(CliError::Usage("--subjects must be at least 1".into()));
    }

    let (ds, gt) =
        synthesize_dataset(&cfg).map_err(|e| CliError::Usage(format!("generator: {e}")))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let raw_path = args.out.join("raw.csv");
    let gt_path = args.out.join("ground_truth.csv");
    write_file(&raw_path, |w| save_raw_csv(&ds, w))?;
    write_file(&gt_path, |w| save_ground_truth_csv(&gt, w))?;

    println!(
        "wrote {} samples ({} subjects x 5 classes x {} windows) to {}",
        ds.len(),
        cfg.n_subjects,
        cfg.per_class,
        raw_path.display()
    );
    println!("ground truth: {}", gt_path.display());
    Ok(())
}

fn write_file(
    path: &Path,
    f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> Result<(), DataError>,
) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f(std::io::BufWriter::new(file)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn extraction_config(
    band_low: Option<f64>,
    band_high: Option<f64>,
    filter_order: Option<usize>,
    file: &ConfigFile,
) -> ExtractionConfig {
    let section = file.extract.unwrap_or_default();
    let default = BandpassSpec::default();
    ExtractionConfig {
        ecg_band: BandpassSpec::new(
            band_low.or(section.band_low).unwrap_or(default.low_hz),
            band_high.or(section.band_high).unwrap_or(default.high_hz),
            filter_order.or(section.filter_order).unwrap_or(default.order),
        ),
    }
}

fn cmd_extract(args: ExtractArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let cfg = extraction_config(args.band_low, args.band_high, args.filter_order, &file);

    let mut ds = load_csv_path(&args.input).map_err(data_error)?;
    let summary = ds.extract_features(&cfg).map_err(|e| match e {
        DataError::Signal(_) | DataError::Feature(_) => {
            CliError::Usage(format!("extraction: {e}"))
        }
        other => data_error(other),
    })?;

    write_file(&args.output, |w| save_feature_csv(&ds, w))?;
    println!(
        "extracted {} windows to {} ({} skipped, {} with invalid HRV)",
        summary.n_extracted,
        args.output.display(),
        summary.n_skipped,
        summary.n_invalid_hrv
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let file = load_config(&args.config)?;
    let run_section = file.run.clone().unwrap_or_default();

    if let Some(jobs) = args.jobs.or(run_section.jobs) {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    let mut opts = RunOptions::default();
    if let Some(train) = file.train {
        opts.train = train;
    }
    if let Some(v) = args.learning_rate {
        opts.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        opts.train.batch_size = v;
    }
    if let Some(v) = args.max_epochs {
        opts.train.max_epochs = v;
    }
    if let Some(v) = args.dropout {
        opts.train.dropout_rate = v;
    }
    if let Some(v) = args.max_norm {
        opts.train.max_norm = v;
    }
    if let Some(v) = args.patience {
        opts.train.patience = v;
    }
    if let Some(v) = args.val_fraction {
        opts.train.validation_fraction = v;
    }
    if let Some(v) = args.optimizer {
        opts.train.optimizer = match v {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        };
    }
    opts.l2 = args.l2.or(run_section.l2).unwrap_or(opts.l2);
    opts.svm_c = args.svm_c.or(run_section.svm_c).unwrap_or(opts.svm_c);
    opts.shared_width = args
        .shared_width
        .or(run_section.shared_width)
        .unwrap_or(opts.shared_width);
    opts.task_width = args
        .task_width
        .or(run_section.task_width)
        .unwrap_or(opts.task_width);
    opts.grid_search = args.grid_search || run_section.grid_search.unwrap_or(false);
    if let Some(s) = args.standardization {
        opts.standardization = match s {
            StandardizationArg::FoldLocal => StandardizationScope::FoldLocal,
            StandardizationArg::Global => StandardizationScope::Global,
        };
    }

    let k = args.k.or(run_section.k).unwrap_or(10);
    let seed_base = args.seed.or(run_section.seed).unwrap_or(0);

    let out_dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(RESULTS_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));

    // load data; raw windows are extracted on the fly
    let mut ds = load_csv_path(&args.data).map_err(data_error)?;
    if !ds.has_features() {
        eprintln!("raw windows detected: extracting features first");
        let cfg = extraction_config(args.band_low, args.band_high, args.filter_order, &file);
        ds.extract_features(&cfg).map_err(|e| match e {
            DataError::Signal(_) | DataError::Feature(_) => {
                CliError::Usage(format!("extraction: {e}"))
            }
            other => data_error(other),
        })?;
    }

    let specs: Vec<ExperimentSpec> = if args.sweep {
        let mut grid = Vec::new();
        for task in ClassLabel::PAIN_LEVELS {
            for classifier in Classifier::ALL {
                for feature_set in FeatureSet::ALL {
                    let idx = grid.len() as u64;
                    grid.push(ExperimentSpec {
                        classifier,
                        feature_set,
                        task,
                        k,
                        seed: seed::derive(seed_base, "experiment", idx),
                    });
                }
            }
        }
        grid
    } else {
        let classifier = args
            .classifier
            .map(Classifier::from)
            .or(run_section.classifier())
            .ok_or_else(|| CliError::Usage("--classifier is required (or use --sweep)".into()))?;
        let task = args
            .task
            .map(ClassLabel::from)
            .or(run_section.task())
            .ok_or_else(|| CliError::Usage("--task is required (or use --sweep)".into()))?;
        let feature_set = args
            .features
            .map(FeatureSet::from)
            .or(run_section.features())
            .ok_or_else(|| CliError::Usage("--features is required (or use --sweep)".into()))?;
        vec![ExperimentSpec {
            classifier,
            feature_set,
            task,
            k,
            seed: seed_base,
        }]
    };

    let mut reports: Vec<CvReport> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for spec in &specs {
        eprintln!(
            "running {} / {} / BLN vs {} (k = {})",
            spec.classifier, spec.feature_set, spec.task, spec.k
        );
        match run_experiment(spec, &ds, &opts) {
            Ok(report) => reports.push(report),
            Err(EvalError::InvalidSpec(msg)) => {
                return Err(CliError::Usage(msg));
            }
            Err(e) => failures.push(format!(
                "{} / {} / BLN vs {}: {e}",
                spec.classifier, spec.feature_set, spec.task
            )),
        }
    }

    if !reports.is_empty() {
        write_reports(&out_dir, &reports)
            .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    }
    print!("{}", report_table(&reports, TableFormat::Human));
    println!("results written to {}", out_dir.display());

    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        Err(CliError::Experiment(format!(
            "{} of {} experiments failed; partial results preserved in {}",
            failures.len(),
            specs.len(),
            out_dir.display()
        )))
    }
}
