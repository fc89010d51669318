//! Command-line surface: `eval`, `curves`, `toy`, `gradcheck`, `selftest`.
//!
//! Exit codes: 0 success, 1 internal failure or failed check, 2 bad input.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{extract_valid, ChannelReducer, Field, PixelSeries, ValidityMask};
use crate::io::{self, LoadedEntry, Manifest, Task};
use crate::loss::LossKind;
use crate::metrics::{apply_depth_clip, depth_error_maps, epe_map, MetricAccumulator, MetricReport};
use crate::nn::random_grad_check;
use crate::reference;
use crate::sparsify::{
    auroc, ause_dataset_wise, ause_image_wise, reliability_labels_depth, reliability_labels_flow, sparsify,
    AuseVariant, ErrorStatistic, ReliabilityLabels, SparsificationConfig,
};
use crate::toy1d::{self, EstimatorKind, ToyConfig, ToyRun};

pub use svg::{curves_svg, toy_svg};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Largest deviation `selftest` accepts between fast and reference paths.
pub const SELFTEST_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "uqbench", version, about = "Evaluate pixel-wise regression uncertainty and run the 1D side-learner experiment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metrics, AUSE and AUROC for a manifest of prediction/uncertainty maps.
    Eval(EvalArgs),
    /// Per-entry sparsification curves as CSV (and optionally SVG).
    Curves(CurvesArgs),
    /// Run the 1D regression experiment.
    Toy(ToyArgs),
    /// Check backpropagated gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare fast evaluation paths against brute-force references.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuseMode {
    /// Mean of per-image AUSE.
    Image,
    /// One AUSE over all pooled pixels.
    Dataset,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = AuseMode::Image)]
    pub ause: AuseMode,
    /// Fraction removed per sparsification step (overrides the manifest).
    #[arg(long)]
    pub m: Option<f64>,
    /// Report unnormalised AUSE.
    #[arg(long)]
    pub no_normalize: bool,
    /// Depth inlier threshold (overrides the manifest).
    #[arg(long)]
    pub thr: Option<f64>,
    /// Flow reliability bound on EPE (overrides the manifest).
    #[arg(long)]
    pub flow_k: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Clone, Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of methods (default: all).
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
}

#[derive(Clone, Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Settings `eval` actually used, after merging flags over manifest options.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSettings {
    pub manifest: PathBuf,
    pub task: Task,
    pub ause_mode: AuseMode,
    pub sparsification: SparsificationConfig,
    pub thr: f64,
    pub flow_k: f64,
    pub depth_clip: Option<(f64, f64)>,
}

impl EvalSettings {
    pub fn resolve(args: &EvalArgs, manifest: &Manifest) -> Result<Self> {
        let o = &manifest.options;
        let settings = Self {
            manifest: args.manifest.clone(),
            task: manifest.task,
            ause_mode: args.ause,
            sparsification: SparsificationConfig::new(args.m.unwrap_or(o.m), o.normalize && !args.no_normalize)?,
            thr: args.thr.unwrap_or(o.thr),
            flow_k: args.flow_k.unwrap_or(o.flow_k),
            depth_clip: o.depth_clip,
        };
        if !(settings.thr > 1.0) {
            return Err(Error::InvalidArgument(format!("--thr must exceed 1, got {}", settings.thr)));
        }
        if !(settings.flow_k > 0.0) {
            return Err(Error::InvalidArgument(format!("--flow-k must be positive, got {}", settings.flow_k)));
        }
        Ok(settings)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuseSummary {
    pub variant: String,
    pub value: f64,
    /// Per-entry values for image-wise AUSE (`null` for empty masks).
    pub per_image: Option<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalSettings,
    pub entries: usize,
    pub metrics: MetricReport,
    pub ause: Vec<AuseSummary>,
    /// Pooled over every valid pixel; `null` when one class is empty.
    pub auroc: Option<f64>,
    pub auroc_note: Option<String>,
}

/// Error series per AUSE variant, uncertainty scores and labels of one
/// entry.
struct EntrySeries {
    errors: Vec<PixelSeries>,
    scores: PixelSeries,
    labels: ReliabilityLabels,
    metrics: MetricAccumulator,
}

fn variants(task: Task) -> &'static [AuseVariant] {
    match task {
        Task::Depth => &[AuseVariant::Rmse, AuseVariant::Absrel],
        Task::Flow => &[AuseVariant::Epe],
    }
}

fn entry_series(entry: &LoadedEntry, settings: &EvalSettings) -> Result<EntrySeries> {
    let n_variants = variants(settings.task).len();
    let (pred, mask) = match settings.task {
        Task::Depth => apply_depth_clip(&entry.prediction, &entry.ground_truth, &entry.mask, settings.depth_clip)?,
        Task::Flow => (entry.prediction.clone(), entry.mask.clone()),
    };
    let mut metrics = MetricAccumulator::default();
    if mask.count_valid() == 0 {
        let empty = PixelSeries::from_values(Vec::new())?;
        return Ok(EntrySeries {
            errors: vec![empty.clone(); n_variants],
            scores: empty,
            labels: ReliabilityLabels { labels: Vec::new() },
            metrics,
        });
    }
    let gt = &entry.ground_truth;
    let scores = extract_valid(&entry.uncertainty, &mask, ChannelReducer::Identity)?;
    let (errors, labels) = match settings.task {
        Task::Depth => {
            metrics.add_depth(&pred, gt, &mask, settings.thr)?;
            let maps = depth_error_maps(&pred, gt, &mask)?;
            (
                vec![
                    extract_valid(&maps.sq_err, &mask, ChannelReducer::Identity)?,
                    extract_valid(&maps.absrel_err, &mask, ChannelReducer::Identity)?,
                ],
                reliability_labels_depth(&pred, gt, &mask, settings.thr)?,
            )
        }
        Task::Flow => {
            metrics.add_flow(&pred, gt, &mask)?;
            let map = epe_map(&pred, gt, &mask)?;
            (
                vec![extract_valid(&map, &mask, ChannelReducer::Identity)?],
                reliability_labels_flow(&pred, gt, &mask, settings.flow_k)?,
            )
        }
    };
    Ok(EntrySeries {
        errors,
        scores,
        labels,
        metrics,
    })
}

fn load_all(manifest: &Manifest) -> Result<Vec<LoadedEntry>> {
    (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| manifest.load_entry(i))
        .collect()
}

/// Evaluates every manifest entry under `settings`.
pub fn evaluate(manifest: &Manifest, settings: &EvalSettings) -> Result<EvalReport> {
    let entries = load_all(manifest)?;
    let series = entries
        .par_iter()
        .map(|e| entry_series(e, settings))
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = MetricAccumulator::default();
    for s in &series {
        metrics.merge(&s.metrics);
    }
    let metrics = metrics.finish()?;

    let ause = variants(settings.task)
        .iter()
        .enumerate()
        .map(|(k, variant)| {
            let pairs: Vec<(PixelSeries, PixelSeries)> =
                series.iter().map(|s| (s.errors[k].clone(), s.scores.clone())).collect();
            let stat = variant.statistic();
            Ok(match settings.ause_mode {
                AuseMode::Image => {
                    let r = ause_image_wise(&pairs, &settings.sparsification, stat)?;
                    AuseSummary {
                        variant: variant.name().into(),
                        value: r.mean,
                        per_image: Some(r.per_image),
                    }
                }
                AuseMode::Dataset => AuseSummary {
                    variant: variant.name().into(),
                    value: ause_dataset_wise(&pairs, &settings.sparsification, stat)?,
                    per_image: None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pooled_scores = crate::sparsify::pool_series(&series.iter().map(|s| &s.scores).collect::<Vec<_>>());
    let labels = ReliabilityLabels::concat(&series.iter().map(|s| s.labels.clone()).collect::<Vec<_>>());
    let (auroc, auroc_note) = match auroc(&pooled_scores, &labels) {
        Ok(v) => (Some(v), None),
        Err(e @ Error::DegenerateLabels(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };

    Ok(EvalReport {
        config: settings.clone(),
        entries: entries.len(),
        metrics,
        ause,
        auroc,
        auroc_note,
    })
}

fn print_config<T: Serialize>(command: &str, config: &T) {
    let text = serde_json::to_string(config).unwrap_or_else(|e| format!("<unprintable: {e}>"));
    println!("{command} config: {text}");
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let manifest = io::load_manifest(&args.manifest)?;
    let settings = EvalSettings::resolve(args, &manifest)?;
    print_config("eval", &settings);
    let report = evaluate(&manifest, &settings)?;
    io::export_report_json(&report, &args.out)?;
    for a in &report.ause {
        println!("{}: {}", a.variant, io::format_f64(a.value));
    }
    match report.auroc {
        Some(v) => println!("AUROC: {}", io::format_f64(v)),
        None => println!("AUROC: undefined ({})", report.auroc_note.as_deref().unwrap_or("")),
    }
    println!("wrote {}", args.out.display());
    Ok(report)
}

/// Writes `entry_NNN_ause_<variant>.csv` (and `.svg`) for every entry; returns
/// the files written.
pub fn cmd_curves(args: &CurvesArgs) -> Result<Vec<PathBuf>> {
    let manifest = io::load_manifest(&args.manifest)?;
    let settings = EvalSettings::resolve(
        &EvalArgs {
            manifest: args.manifest.clone(),
            out: args.out.clone(),
            ause: AuseMode::Image,
            m: None,
            no_normalize: false,
            thr: None,
            flow_k: None,
        },
        &manifest,
    )?;
    print_config("curves", &settings);
    ensure_dir(&args.out)?;
    let entries = load_all(&manifest)?;
    let series = entries
        .par_iter()
        .map(|e| entry_series(e, &settings))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for (i, s) in series.iter().enumerate() {
        if s.scores.is_empty() {
            println!("entry {i}: empty mask, skipped");
            continue;
        }
        for (k, variant) in variants(settings.task).iter().enumerate() {
            let result = sparsify(&s.errors[k], &s.scores, &settings.sparsification, variant.statistic())?;
            let stem = format!("entry_{i:03}_ause_{}", variant.slug());
            let csv = args.out.join(format!("{stem}.csv"));
            io::export_curves_csv(&result, &csv)?;
            written.push(csv);
            if args.svg {
                let path = args.out.join(format!("{stem}.svg"));
                let title = format!("entry {i}: {} = {:.4}", variant.name(), result.ause);
                write_text(&path, &curves_svg(&result, &title))?;
                written.push(path);
            }
        }
    }
    println!("wrote {} files to {}", written.len(), args.out.display());
    Ok(written)
}

impl ToyArgs {
    pub fn config(&self) -> Result<ToyConfig> {
        let mut cfg = ToyConfig::with_seed(self.seed);
        cfg.train.epochs = self.epochs;
        cfg.train.batch_size = self.batch;
        if let Some(list) = &self.methods {
            cfg.methods = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(EstimatorKind::parse)
                .collect::<Result<Vec<_>>>()?;
            if cfg.methods.is_empty() {
                return Err(Error::InvalidArgument("--methods lists no method".into()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ToySummary<'a> {
    config: &'a ToyConfig,
    dataset: &'a toy1d::DatasetMeta,
    main_checksum_before: String,
    main_checksum_after: String,
    report: &'a toy1d::ToyReport,
}

pub fn toy_csv(run: &ToyRun, kind: EstimatorKind) -> Option<String> {
    let est = run.estimates_for(kind)?;
    let mut out = String::from("x,y_true,mean,sigma\n");
    for ((x, y), p) in run.dataset.test_x.iter().zip(&run.dataset.test_y).zip(&est.points) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            io::format_f64(*x),
            io::format_f64(*y),
            io::format_f64(p.mean),
            io::format_f64(p.sigma)
        ));
    }
    Some(out)
}

/// Runs the experiment and writes `<method>.csv`, `summary.json` and
/// `toy.svg` into `--out`.
pub fn cmd_toy(args: &ToyArgs) -> Result<ToyRun> {
    let cfg = args.config()?;
    print_config("toy", &cfg);
    ensure_dir(&args.out)?;
    let run = toy1d::run_toy(&cfg)?;
    for &kind in &cfg.methods {
        let csv = toy_csv(&run, kind).expect("every configured method was run");
        write_text(&args.out.join(format!("{}.csv", kind.name())), &csv)?;
    }
    let summary = ToySummary {
        config: &run.config,
        dataset: &run.dataset.meta,
        main_checksum_before: format!("{:016x}", run.main_checksum.0),
        main_checksum_after: format!("{:016x}", run.main_checksum.1),
        report: &run.report,
    };
    io::export_report_json(&summary, args.out.join("summary.json"))?;
    write_text(&args.out.join("toy.svg"), &toy_svg(&run))?;

    let r = &run.report;
    println!(
        "main network: test MSE {:.5} (in training range {:.5}), constant-uncertainty AUSE {:.4}",
        r.main_test_mse, r.main_test_mse_in_range, r.constant_baseline_ause
    );
    println!("{:<20} {:>8} {:>8} {:>8} {:>8} {:>8}", "method", "AUSE", "AUROC", "rho", "cov@1", "cov@2");
    for m in &r.methods {
        let auroc = m.auroc.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<20} {:>8.4} {:>8} {:>8.4} {:>8.3} {:>8.3}",
            m.method.name(),
            m.ause,
            auroc,
            m.spearman,
            m.coverage_1sigma,
            m.coverage_2sigma
        );
    }
    if run.main_checksum.0 != run.main_checksum.1 {
        return Err(Error::Misaligned("main network changed while training the sequential side learner".into()));
    }
    println!("wrote results to {}", args.out.display());
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckOutcome {
    pub loss: String,
    pub trials: usize,
    pub max_relative_error: f64,
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Vec<GradcheckOutcome>> {
    print_config("gradcheck", &serde_json::json!({ "trials": args.trials, "seed": args.seed, "tolerance": GRADIENT_TOLERANCE }));
    if args.trials == 0 {
        return Err(Error::InvalidArgument("--trials must be positive".into()));
    }
    let outcomes = LossKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut rng = ChaCha8Rng::seed_from_u64(toy1d::derive_seed(args.seed, "gradcheck", k as u64));
            let mut worst: f64 = 0.0;
            for _ in 0..args.trials {
                worst = worst.max(random_grad_check(kind, &mut rng)?);
            }
            println!("{:<14} max relative error {:.3e}", kind.name(), worst);
            Ok(GradcheckOutcome {
                loss: kind.name().into(),
                trials: args.trials,
                max_relative_error: worst,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(outcomes)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SelftestOutcome {
    pub instances: usize,
    pub ause_max_deviation: f64,
    pub auroc_max_deviation: f64,
    /// Relative deviation of the depth metrics.
    pub depth_metrics_max_deviation: f64,
}

impl SelftestOutcome {
    pub fn passed(&self) -> bool {
        self.ause_max_deviation <= SELFTEST_TOLERANCE
            && self.auroc_max_deviation <= SELFTEST_TOLERANCE
            && self.depth_metrics_max_deviation <= SELFTEST_TOLERANCE
    }
}

/// Values drawn from a small pool so that ties are common.
fn tie_heavy(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let pool: Vec<f64> = (0..rng.random_range(1..=n)).map(|_| rng.random_range(0.0..5.0)).collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                pool[rng.random_range(0..pool.len())]
            } else {
                rng.random_range(0.0..5.0)
            }
        })
        .collect()
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<SelftestOutcome> {
    print_config("selftest", &serde_json::json!({ "instances": args.instances, "seed": args.seed, "tolerance": SELFTEST_TOLERANCE }));
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = SelftestOutcome {
        instances: args.instances,
        ..Default::default()
    };
    for _ in 0..args.instances {
        let m = [0.05, 0.1, 0.2, 0.25, 0.5][rng.random_range(0..5)];
        let cfg = SparsificationConfig::new(m, rng.random_bool(0.7))?;
        let n = rng.random_range(cfg.min_pixels().max(2)..=64);
        let errors = tie_heavy(&mut rng, n);
        let scores = tie_heavy(&mut rng, n);
        let stat = if rng.random_bool(0.5) {
            ErrorStatistic::Mean
        } else {
            ErrorStatistic::RootMean
        };
        let e = PixelSeries::from_values(errors.clone())?;
        let s = PixelSeries::from_values(scores.clone())?;
        let fast = sparsify(&e, &s, &cfg, stat)?.ause;
        let slow = reference::ause_by_removal(&errors, &scores, &cfg, stat);
        out.ause_max_deviation = out.ause_max_deviation.max((fast - slow).abs());

        let reliable: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        if let Some(slow) = reference::auroc_pairwise(&scores, &reliable) {
            let fast = auroc(&s, &ReliabilityLabels { labels: reliable })?;
            out.auroc_max_deviation = out.auroc_max_deviation.max((fast - slow).abs());
        }

        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..50.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|d| d * rng.random_range(0.5..2.0)).collect();
        let fast = crate::metrics::depth_report(
            &Field::scalar(1, n, pred.clone())?,
            &Field::scalar(1, n, gt.clone())?,
            &ValidityMask::all_valid(1, n),
            &Default::default(),
        )?;
        let slow = reference::depth_metrics_direct(&pred, &gt, crate::metrics::DEFAULT_DEPTH_THRESHOLD);
        let pairs = [
            (fast.rmse, slow.rmse),
            (fast.absrel, slow.absrel),
            (fast.sqrel, slow.sqrel),
            (fast.rmse_log, slow.rmse_log),
            (fast.log10, slow.log10),
            (fast.d1, slow.d1),
            (fast.d2, slow.d2),
            (fast.d3, slow.d3),
        ];
        for (f, s) in pairs {
            let f = f.expect("depth report fills every depth metric");
            let rel = (f - s).abs() / s.abs().max(1.0);
            out.depth_metrics_max_deviation = out.depth_metrics_max_deviation.max(rel);
        }
    }
    println!("AUSE  max deviation {:.3e}", out.ause_max_deviation);
    println!("AUROC max deviation {:.3e}", out.auroc_max_deviation);
    println!("depth metrics max relative deviation {:.3e}", out.depth_metrics_max_deviation);
    Ok(out)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("UQBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("UQBENCH_THREADS must be a positive integer, got `{raw}`")))?;
    // A pool may already exist when called more than once in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    if err.is_input_error() {
        2
    } else {
        1
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    configure_threads()?;
    Ok(match &cli.command {
        Command::Eval(a) => {
            cmd_eval(a)?;
            0
        }
        Command::Curves(a) => {
            cmd_curves(a)?;
            0
        }
        Command::Toy(a) => {
            cmd_toy(a)?;
            0
        }
        Command::Gradcheck(a) => {
            let outcomes = cmd_gradcheck(a)?;
            if outcomes.iter().all(|o| o.max_relative_error < GRADIENT_TOLERANCE) {
                println!("gradient check passed");
                0
            } else {
                eprintln!("gradient check FAILED (tolerance {GRADIENT_TOLERANCE:e})");
                1
            }
        }
        Command::Selftest(a) => {
            if cmd_selftest(a)?.passed() {
                println!("selftest passed");
                0
            } else {
                eprintln!("selftest FAILED (tolerance {SELFTEST_TOLERANCE:e})");
                1
            }
        }
    })
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
