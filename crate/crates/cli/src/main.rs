use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use stratifold::forge::{self, ForgeConfig};
use stratifold::metrics::{summarize, Summary};
use stratifold::{
    build_feature_matrix, dataset_stats, export_manifests, export_split, fold_report,
    nested_split, scan_dataset, split_stratified, split_uniform, ExportOptions, IngestOptions,
    Layout, LinePolicy, NestedConfig, RawRecordSet, SplitMethod, SplitReport,
    DEFAULT_SCALE_FACTOR,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const RECOMMENDED_MAX_CLASSES: usize = 20;

#[derive(Parser, Debug)]
#[command(name = "stratifold", version, about = "Stratified K-fold splits for YOLO datasets")]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print dataset statistics: class count, boxes and classes per image, entropy.
    Analyze(AnalyzeArgs),
    /// Split a dataset into k folds and write fold lists plus a split report.
    Split(SplitArgs),
    /// Compare stratified and uniform splits over several seeds.
    Compare(CompareArgs),
    /// Nested plan: stratified test fold, inner k-1 folds by either method.
    Nested(NestedArgs),
    /// Generate a synthetic YOLO dataset.
    Forge(ForgeArgs),
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Directory of image files.
    #[arg(long)]
    images: PathBuf,
    /// Directory of YOLO `.txt` label files.
    #[arg(long)]
    labels: PathBuf,
    /// Accepted image extensions.
    #[arg(long, value_delimiter = ',', default_value = "jpg,jpeg,png")]
    ext: Vec<String>,
    /// Skip malformed label lines with a warning instead of failing.
    #[arg(long)]
    skip_bad_lines: bool,
    /// Accept zero-width or zero-height boxes with a warning.
    #[arg(long)]
    allow_degenerate: bool,
    /// Treat a missing label directory as all-background.
    #[arg(long)]
    allow_missing_labels: bool,
}

impl DatasetArgs {
    fn scan(&self) -> stratifold::Result<RawRecordSet> {
        let options = IngestOptions {
            image_extensions: self.ext.clone(),
            line_policy: if self.skip_bad_lines {
                LinePolicy::SkipWithWarning
            } else {
                LinePolicy::Abort
            },
            allow_degenerate: self.allow_degenerate,
            allow_missing_label_dir: self.allow_missing_labels,
        };
        let records = scan_dataset(&self.images, &self.labels, &options)?;
        for w in &records.warnings {
            warn!("{}", serde_json::to_string(w).unwrap_or_default());
        }
        info!(
            "scanned {} images, {} boxes",
            records.len(),
            records.box_count()
        );
        Ok(records)
    }

    /// `--root`, or the parent of the image directory.
    fn root(&self, root: &Option<PathBuf>) -> PathBuf {
        if let Some(root) = root {
            return root.clone();
        }
        match self.images.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        }
    }
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Also write the statistics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Stratified,
    Uniform,
}

impl From<MethodArg> for SplitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Stratified => SplitMethod::Stratified,
            MethodArg::Uniform => SplitMethod::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Lists,
    Links,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Lists => Layout::Lists,
            LayoutArg::Links => Layout::Links,
        }
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Number of folds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    k: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "stratified")]
    method: MethodArg,
    /// Output directory for fold lists, summary.json and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Manifest paths are relative to this directory (default: parent of --images).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Write path lists, or a directory tree of symlinks per fold.
    #[arg(long, value_enum, default_value = "lists")]
    layout: LayoutArg,
    /// Multiplier applied to box widths and heights before stratification.
    #[arg(long, default_value_t = DEFAULT_SCALE_FACTOR)]
    scale_factor: f64,
    /// Also write the stratification label matrix as CSV.
    #[arg(long)]
    features_csv: Option<PathBuf>,
    /// Print MAE values in units of 1e-7.
    #[arg(long)]
    unit_1e7: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Number of folds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    k: u64,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Multiplier applied to box widths and heights before stratification.
    #[arg(long, default_value_t = DEFAULT_SCALE_FACTOR)]
    scale_factor: f64,
    /// Write the full comparison as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print MAE values in units of 1e-7.
    #[arg(long)]
    unit_1e7: bool,
}

#[derive(Args, Debug)]
struct NestedArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Number of outer folds; the inner split uses k-1.
    #[arg(long, value_parser = clap::value_parser!(u64).range(3..))]
    k: u64,
    /// Method for the inner folds. The outer split is always stratified.
    #[arg(long, value_enum)]
    inner_method: MethodArg,
    #[arg(long)]
    outer_seed: u64,
    #[arg(long)]
    inner_seed: u64,
    /// Outer fold used as the test set (default: last).
    #[arg(long)]
    test_fold: Option<usize>,
    /// Output directory for test.txt, inner fold lists and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Manifest paths are relative to this directory (default: parent of --images).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Write path lists, or a directory tree of symlinks per fold.
    #[arg(long, value_enum, default_value = "lists")]
    layout: LayoutArg,
    /// Multiplier applied to box widths and heights before stratification.
    #[arg(long, default_value_t = DEFAULT_SCALE_FACTOR)]
    scale_factor: f64,
}

#[derive(Args, Debug)]
struct ForgeArgs {
    /// Dataset root; images/ and labels/ are created inside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_images: usize,
    #[arg(long)]
    num_classes: usize,
    /// Comma-separated class weights (default: equal).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Fewest boxes on a non-background image.
    #[arg(long, default_value_t = 1)]
    boxes_min: usize,
    /// Most boxes on a non-background image.
    #[arg(long, default_value_t = 4)]
    boxes_max: usize,
    /// Share of images written with an empty label file.
    #[arg(long, default_value_t = 0.0)]
    background_fraction: f64,
    /// Smallest normalized box side.
    #[arg(long, default_value_t = 0.05)]
    size_min: f64,
    /// Largest normalized box side.
    #[arg(long, default_value_t = 0.5)]
    size_max: f64,
    #[arg(long)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();

    let run = run_record();
    let result = match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Split(args) => cmd_split(args, run),
        Command::Compare(args) => cmd_compare(args, run),
        Command::Nested(args) => cmd_nested(args, run),
        Command::Forge(args) => cmd_forge(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

/// The invocation as recorded in summary documents.
fn run_record() -> serde_json::Value {
    json!({
        "tool": "stratifold",
        "version": env!("CARGO_PKG_VERSION"),
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> stratifold::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> stratifold::Error {
    stratifold::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> stratifold::Result<()> {
    let records = args.dataset.scan()?;
    let stats = dataset_stats(&records)?;
    println!("{}", stratifold::DatasetStats::table_header());
    println!("{}", stats.table_row());
    println!(
        "images {} (backgrounds {}), boxes {}, entropy {:.4} nats",
        stats.num_samples, stats.num_backgrounds, stats.num_boxes, stats.entropy
    );
    if stats.num_classes > RECOMMENDED_MAX_CLASSES {
        eprintln!(
            "warning: {} classes exceeds the recommended maximum of {RECOMMENDED_MAX_CLASSES} for stratified splitting",
            stats.num_classes
        );
    }
    if let Some(path) = &args.json {
        write_json(path, &stats)?;
    }
    Ok(())
}

fn mae_unit(unit_1e7: bool) -> f64 {
    if unit_1e7 {
        1e-7
    } else {
        1.0
    }
}

fn cmd_split(args: SplitArgs, run: serde_json::Value) -> stratifold::Result<()> {
    let records = args.dataset.scan()?;
    let matrix = build_feature_matrix(&records, args.scale_factor)?;
    if let Some(path) = &args.features_csv {
        let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
        matrix.write_csv(file)?;
    }
    let k = args.k as usize;
    let assignment = match SplitMethod::from(args.method) {
        SplitMethod::Stratified => split_stratified(&matrix, k, args.seed)?,
        SplitMethod::Uniform => split_uniform(&records.file_names(), k, args.seed)?,
    };
    let report = fold_report(&matrix, &assignment)?;
    let options = ExportOptions {
        layout: args.layout.into(),
        dataset_root: args.dataset.root(&args.root),
        run: Some(run),
    };
    let summary = export_split(&records, &assignment, &args.out, &options)?;
    write_json(&args.out.join("report.json"), &report)?;
    print!("{}", report.to_table(mae_unit(args.unit_1e7)));
    println!(
        "wrote {} lists to {} (input {})",
        summary.files.len(),
        args.out.display(),
        summary.input_hash
    );
    Ok(())
}

#[derive(Serialize)]
struct MethodComparison {
    method: SplitMethod,
    /// Pooled over every fold of every seed.
    train: Summary,
    val: Summary,
    reports: Vec<SplitReport>,
}

#[derive(Serialize)]
struct Comparison {
    k: usize,
    seeds: Vec<u64>,
    entropy: f64,
    input_hash: String,
    scale_factor: f64,
    /// Seeds where stratified has both lower-or-equal median and
    /// lower-or-equal half-range of validation MAE.
    stratified_val_wins: usize,
    methods: Vec<MethodComparison>,
    run: serde_json::Value,
}

fn cmd_compare(args: CompareArgs, run: serde_json::Value) -> stratifold::Result<()> {
    let records = args.dataset.scan()?;
    let matrix = build_feature_matrix(&records, args.scale_factor)?;
    let stats = dataset_stats(&records)?;
    let names = records.file_names();
    let k = args.k as usize;

    let mut methods = Vec::new();
    for method in [SplitMethod::Uniform, SplitMethod::Stratified] {
        let mut reports = Vec::with_capacity(args.seeds.len());
        for &seed in &args.seeds {
            let assignment = match method {
                SplitMethod::Stratified => split_stratified(&matrix, k, seed)?,
                SplitMethod::Uniform => split_uniform(&names, k, seed)?,
            };
            reports.push(fold_report(&matrix, &assignment)?);
        }
        let pooled = |f: fn(&SplitReport) -> &Vec<f64>| -> Vec<f64> {
            reports.iter().flat_map(|r| f(r).iter().copied()).collect()
        };
        methods.push(MethodComparison {
            method,
            train: summarize(&pooled(|r| &r.per_fold_train_mae)),
            val: summarize(&pooled(|r| &r.per_fold_val_mae)),
            reports,
        });
    }
    let wins = methods[0]
        .reports
        .iter()
        .zip(&methods[1].reports)
        .filter(|(u, s)| {
            s.val_summary.median <= u.val_summary.median
                && s.val_summary.half_range <= u.val_summary.half_range
        })
        .count();

    let unit = mae_unit(args.unit_1e7);
    let cell = |s: &Summary| format!("{:.4} ± {:.4}", s.median / unit, s.half_range / unit);
    println!(
        "entropy {:.2}, k = {k}, {} seed(s), MAE unit {unit:e}",
        stats.entropy,
        args.seeds.len()
    );
    println!("{:<11} {:>24} {:>24}", "method", "train", "validation");
    for m in &methods {
        println!("{:<11} {:>24} {:>24}", m.method.as_str(), cell(&m.train), cell(&m.val));
    }
    println!(
        "stratified validation median and half-range no worse in {wins}/{} seeds",
        args.seeds.len()
    );

    if let Some(path) = &args.out {
        write_json(
            path,
            &Comparison {
                k,
                seeds: args.seeds.clone(),
                entropy: stats.entropy,
                input_hash: records.content_hash(),
                scale_factor: args.scale_factor,
                stratified_val_wins: wins,
                methods,
                run,
            },
        )?;
    }
    Ok(())
}

fn cmd_nested(args: NestedArgs, run: serde_json::Value) -> stratifold::Result<()> {
    let records = args.dataset.scan()?;
    let config = NestedConfig {
        k: args.k as usize,
        inner_method: args.inner_method.into(),
        outer_seed: args.outer_seed,
        inner_seed: args.inner_seed,
        test_fold: args.test_fold,
        scale_factor: args.scale_factor,
    };
    let plan = nested_split(&records, &config)?;
    let options = ExportOptions {
        layout: args.layout.into(),
        dataset_root: args.dataset.root(&args.root),
        run: Some(run),
    };
    let summary = export_manifests(&plan, &args.out, &options)?;
    println!(
        "test fold {} ({} images); {} inner folds ({}):",
        plan.test_fold,
        plan.test_images().len(),
        plan.inner.k,
        plan.inner.method
    );
    for f in &summary.folds {
        println!("  fold {:>2}: train {:>6}  val {:>6}", f.fold, f.train, f.val);
    }
    println!("wrote {} lists to {}", summary.files.len(), args.out.display());
    Ok(())
}

fn cmd_forge(args: ForgeArgs) -> stratifold::Result<()> {
    let config = ForgeConfig {
        num_images: args.num_images,
        num_classes: args.num_classes,
        class_weights: args
            .weights
            .unwrap_or_else(|| vec![1.0; args.num_classes]),
        boxes_per_image: (args.boxes_min, args.boxes_max),
        background_fraction: args.background_fraction,
        box_size_range: (args.size_min, args.size_max),
        seed: args.seed,
    };
    let records = forge::generate(&config, &args.out)?;
    println!(
        "wrote {} images ({} boxes) to {}",
        records.len(),
        records.box_count(),
        args.out.display()
    );
    Ok(())
}
