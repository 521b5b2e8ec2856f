//! Command-line front end. Every flag can also be set through a `DEDIM_*`
//! environment variable.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{feature_density_export, CorrelationMethod, ReportTable};
use crate::dedims::{dissimilarity, format_report_table, rank_candidates, Measure, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::feature_store::{
    load_features, save_features, save_labeled, FeatureMatrix, FileFormat, Standardization, SubsampleSpec,
};
use crate::mixmatch::{train, train_supervised};
use crate::rng::derive_seed;
use crate::sandbox::{build_run, gen_gaussian_noise, gen_salt_pepper, gen_synthetic_clusters, ImageShape};
use crate::study::{cell_sources, report, run_grid, CellResult, Grid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dedim", version, about = "Dataset dissimilarity measures and OOD-contaminated semi-supervised sandbox")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "DEDIM_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = "DEDIM_FORMAT", value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    SaltPepper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dissimilarity between two feature files.
    Dist(DistArgs),
    /// Rank unlabelled candidates by dissimilarity to a labelled set.
    Rank(RankArgs),
    /// Run a sandbox grid and write one JSON per cell plus report.csv.
    Sandbox(SandboxArgs),
    /// Train one run of a single-cell grid.
    Train(TrainArgs),
    /// Combined table and correlations from a sandbox output directory.
    Report(ReportArgs),
    /// Generate Gaussian or salt-and-pepper noise images as features.
    GenNoise(GenNoiseArgs),
    /// Generate labelled Gaussian blobs.
    GenSynth(GenSynthArgs),
    /// Paired histograms of one feature of two files.
    Density(DensityArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SubsampleArgs {
    /// Rows per sub-sample.
    #[arg(long, env = "DEDIM_TAU", default_value_t = SubsampleSpec::DEFAULT_TAU)]
    pub tau: usize,
    /// Number of sub-sample draws.
    #[arg(long = "c", env = "DEDIM_C", default_value_t = SubsampleSpec::DEFAULT_DRAWS)]
    #[serde(rename = "c")]
    pub draws: usize,
    /// Histogram bins for js and cos.
    #[arg(long, env = "DEDIM_BINS", default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Standardize every input with the labelled-side statistics first.
    #[arg(long, env = "DEDIM_STANDARDIZE", default_value_t = false)]
    pub standardize: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct DistArgs {
    /// Labelled-side features (.ddim or .csv).
    #[arg(long, env = "DEDIM_A")]
    pub a: PathBuf,
    /// Other features.
    #[arg(long, env = "DEDIM_B")]
    pub b: PathBuf,
    /// l1, l2, js, cos or all.
    #[arg(long, env = "DEDIM_MEASURE", default_value = "all")]
    pub measure: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub subsample: SubsampleArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[arg(long, env = "DEDIM_LABELLED")]
    pub labelled: PathBuf,
    /// Comma-separated candidate files.
    #[arg(long, env = "DEDIM_CANDIDATES", value_delimiter = ',', required = true)]
    pub candidates: Vec<PathBuf>,
    #[arg(long, env = "DEDIM_MEASURE", default_value = "cos")]
    pub measure: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub subsample: SubsampleArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SandboxArgs {
    /// Grid file of `key = v1, v2` lines.
    #[arg(long, env = "DEDIM_GRID")]
    pub grid: Option<PathBuf>,
    #[arg(long, env = "DEDIM_OUT")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, env = "DEDIM_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// `key=value` override of a grid key; repeatable.
    #[arg(long = "set", env = "DEDIM_SET", value_delimiter = ';')]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, env = "DEDIM_GRID")]
    pub grid: Option<PathBuf>,
    /// `key=value` override of a grid key; repeatable.
    #[arg(long = "set", env = "DEDIM_SET", value_delimiter = ';')]
    pub set: Vec<String>,
    /// Run index within the cell.
    #[arg(long, env = "DEDIM_RUN", default_value_t = 0)]
    pub run: usize,
    /// Train the fully supervised baseline instead.
    #[arg(long, env = "DEDIM_SUPERVISED", default_value_t = false)]
    pub supervised: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory written by `sandbox`.
    #[arg(long, env = "DEDIM_RESULTS")]
    pub results: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenNoiseArgs {
    #[arg(long, env = "DEDIM_KIND", value_enum, default_value_t = NoiseKind::Gaussian)]
    pub kind: NoiseKind,
    #[arg(long, env = "DEDIM_N", default_value_t = 1000)]
    pub n: usize,
    #[arg(long, env = "DEDIM_HEIGHT", default_value_t = 32)]
    pub height: usize,
    #[arg(long, env = "DEDIM_WIDTH", default_value_t = 32)]
    pub width: usize,
    #[arg(long, env = "DEDIM_CHANNELS", default_value_t = 3)]
    pub channels: usize,
    #[arg(long, env = "DEDIM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    #[arg(long, env = "DEDIM_CLASSES", default_value_t = 5)]
    pub classes: usize,
    #[arg(long, env = "DEDIM_PER_CLASS", default_value_t = 1200)]
    pub per_class: usize,
    #[arg(long, env = "DEDIM_DIM", default_value_t = 16)]
    pub dim: usize,
    #[arg(long, env = "DEDIM_SPREAD", default_value_t = 1.0)]
    pub spread: f64,
    /// Distance every class center moves along its own direction.
    #[arg(long, env = "DEDIM_SHIFT", default_value_t = 0.0)]
    pub shift: f64,
    /// Features file; labels go beside it with a .labels extension.
    #[arg(long, env = "DEDIM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DensityArgs {
    #[arg(long, env = "DEDIM_A")]
    pub a: PathBuf,
    #[arg(long, env = "DEDIM_B")]
    pub b: PathBuf,
    /// Zero-based feature column.
    #[arg(long, env = "DEDIM_FEATURE")]
    pub feature: usize,
    #[arg(long, env = "DEDIM_BINS", default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Also write the CSV here.
    #[arg(long, env = "DEDIM_OUT")]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let outcome = execute(&cli).and_then(|text| stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Dist(a) => dist(cli, a),
        Command::Rank(a) => rank(cli, a),
        Command::Sandbox(a) => sandbox(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Report(a) => report_cmd(cli, a),
        Command::GenNoise(a) => gen_noise(cli, a),
        Command::GenSynth(a) => gen_synth(cli, a),
        Command::Density(a) => density(cli, a),
    }
}

fn render(cli: &Cli, command: &str, config: Value, result: Value, table: impl FnOnce() -> String) -> Result<String> {
    let config = match config {
        Value::Object(mut map) => {
            map.insert("seed".into(), json!(cli.seed));
            map.insert("format".into(), json!(cli.format));
            Value::Object(map)
        }
        other => other,
    };
    match cli.format {
        OutputFormat::Json => {
            let doc = json!({ "command": command, "config": config, "result": result });
            Ok(serde_json::to_string_pretty(&doc).expect("JSON values serialize") + "\n")
        }
        OutputFormat::Table => {
            let mut out = format!("# dedim {command}\n");
            if let Value::Object(map) = &config {
                for (k, v) in map {
                    out.push_str(&format!("# {k} = {}\n", compact(v)));
                }
            }
            out.push_str(&table());
            Ok(out)
        }
    }
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn load(path: &Path) -> Result<FeatureMatrix> {
    load_features(path, FileFormat::from_path(path))
}

fn measures(spec: &str) -> Result<Vec<Measure>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Measure::ALL.to_vec());
    }
    spec.split(',').map(str::parse).collect()
}

/// Applies the labelled side's standardization to all inputs when asked.
fn prepare(
    reference: FeatureMatrix,
    others: Vec<FeatureMatrix>,
    standardize: bool,
) -> Result<(FeatureMatrix, Vec<FeatureMatrix>)> {
    if !standardize {
        return Ok((reference, others));
    }
    let stats = Standardization::fit(&reference);
    let others = others.iter().map(|m| stats.apply(m)).collect::<Result<_>>()?;
    Ok((stats.apply(&reference)?, others))
}

fn dist(cli: &Cli, args: &DistArgs) -> Result<String> {
    let (a, mut b) = prepare(load(&args.a)?, vec![load(&args.b)?], args.subsample.standardize)?;
    let b = b.remove(0);
    let spec = SubsampleSpec::new(args.subsample.tau, args.subsample.draws, cli.seed)?;
    let reports = measures(&args.measure)?
        .into_iter()
        .map(|m| dissimilarity(&a, &b, &spec, m, args.subsample.bins))
        .collect::<Result<Vec<_>>>()?;
    let label = format!("{} vs {}", a.name(), b.name());
    let result = if reports.len() == 1 { to_value(&reports[0]) } else { to_value(&reports) };
    render(cli, "dist", to_value(args), result, || {
        let rows: Vec<_> = reports.iter().map(|r| (label.clone(), r.clone())).collect();
        format_report_table(&rows)
    })
}

fn rank(cli: &Cli, args: &RankArgs) -> Result<String> {
    let measure: Measure = args.measure.parse()?;
    let candidates = args.candidates.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    let (labelled, candidates) = prepare(load(&args.labelled)?, candidates, args.subsample.standardize)?;
    let spec = SubsampleSpec::new(args.subsample.tau, args.subsample.draws, cli.seed)?;
    let ranked = rank_candidates(&labelled, &candidates, &spec, measure, args.subsample.bins)?;
    render(cli, "rank", to_value(args), to_value(&ranked), || {
        let mut out = format!("{:>4}  {:<24} {:>24} {:>10}\n", "rank", "candidate", "mean ± std", "p");
        for r in &ranked {
            let marker = if r.report.p_value > 0.05 { "*" } else { "" };
            out.push_str(&format!(
                "{:>4}  {:<24} {:>24} {:>10.3e}\n",
                r.rank,
                r.name,
                format!("{:.4} ± {:.4}{marker}", r.report.mean, r.report.std),
                r.report.p_value
            ));
        }
        out
    })
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))
        })
        .collect()
}

/// Grid from the optional file plus overrides; `--seed` fills in `seed` when
/// neither sets it.
fn resolve_grid(cli: &Cli, grid: Option<&Path>, set: &[String]) -> Result<Grid> {
    let mut overrides = parse_overrides(set)?;
    let text = match grid {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => String::new(),
    };
    let file_keys = crate::study::parse_grid_text(&text)?;
    if !file_keys.contains_key("seed") && !overrides.iter().any(|(k, _)| k == "seed") {
        overrides.insert(0, ("seed".into(), cli.seed.to_string()));
    }
    Grid::from_text(&text, &overrides)
}

fn cell_file(index: usize) -> String {
    format!("cell_{index:03}.json")
}

fn sandbox(cli: &Cli, args: &SandboxArgs) -> Result<String> {
    if args.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let grid = resolve_grid(cli, args.grid.as_deref(), &args.set)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| run_grid(&grid))?;
    let table = report(&results)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut files = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let name = cell_file(i);
        let path = args.out.join(&name);
        let text = serde_json::to_string_pretty(r).expect("cell results serialize") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(name);
    }
    let csv_path = args.out.join("report.csv");
    std::fs::write(&csv_path, table.to_csv()).map_err(|e| Error::io(&csv_path, e))?;

    let config = json!({
        "grid_file": args.grid,
        "out": args.out,
        "jobs": args.jobs,
        "settings": grid.settings,
        "cells": grid.cells,
    });
    let result = json!({ "cell_files": files, "report": "report.csv", "table": table });
    render(cli, "sandbox", config, result, || table.to_text())
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<String> {
    let grid = resolve_grid(cli, args.grid.as_deref(), &args.set)?;
    let [cell] = grid.cells.as_slice() else {
        return Err(Error::Config(format!("train needs a single-cell grid, got {} cells", grid.cells.len())));
    };
    if args.run >= cell.runs {
        return Err(Error::Config(format!("--run {} but the cell has {} runs", args.run, cell.runs)));
    }
    let sources = cell_sources(&grid.settings, cell)?;
    let data = build_run(cell, &sources, args.run)?;
    let seed = derive_seed(cell.seed, args.run as u64);
    let outcome = if args.supervised {
        train_supervised(&data, &grid.settings.mixmatch, seed)?
    } else {
        train(&data, &grid.settings.mixmatch, seed)?
    };
    let config = json!({
        "grid_file": args.grid,
        "run": args.run,
        "supervised": args.supervised,
        "mixmatch": grid.settings.mixmatch,
        "synth": grid.settings.synth,
        "data_dir": grid.settings.data_dir,
        "cell": cell,
    });
    render(cli, "train", config, to_value(&outcome), || {
        let mut out = format!("initial accuracy {:.4}\n", outcome.initial_accuracy);
        for (e, a) in outcome.epoch_accuracy.iter().enumerate() {
            out.push_str(&format!("epoch {:>3}  accuracy {a:.4}\n", e + 1));
        }
        out.push_str(&format!("best {:.4} at epoch {}\n", outcome.best_accuracy, outcome.best_epoch));
        out
    })
}

/// Cell results of a sandbox directory in file-name order.
pub fn load_results(dir: &Path) -> Result<Vec<CellResult>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("cell_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format(format!("no cell_*.json files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn correlation_text(table: &ReportTable) -> String {
    let mut out = String::from("\ncorrelation with accuracy over contaminated cells\n");
    for method in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
        for row in table.correlations(method) {
            out.push_str(&format!("{:<8} {:<12} n_l={:<5}", format!("{method:?}").to_lowercase(), row.s_l, row.n_l));
            for (m, r) in &row.r {
                match r {
                    Some(r) => out.push_str(&format!(" d_{m}={r:+.3}")),
                    None => out.push_str(&format!(" d_{m}=n/a")),
                }
            }
            out.push('\n');
        }
    }
    out
}

fn report_cmd(cli: &Cli, args: &ReportArgs) -> Result<String> {
    let results = load_results(&args.results)?;
    let table = report(&results)?;
    let correlations: Vec<_> = [CorrelationMethod::Pearson, CorrelationMethod::Spearman]
        .into_iter()
        .flat_map(|m| table.correlations(m))
        .collect();
    let result = json!({ "table": table, "correlations": correlations });
    render(cli, "report", to_value(args), result, || table.to_text() + &correlation_text(&table))
}

fn gen_noise(cli: &Cli, args: &GenNoiseArgs) -> Result<String> {
    let shape = ImageShape { height: args.height, width: args.width, channels: args.channels };
    let images = match args.kind {
        NoiseKind::Gaussian => gen_gaussian_noise(args.n, shape, cli.seed)?,
        NoiseKind::SaltPepper => gen_salt_pepper(args.n, shape, cli.seed)?,
    };
    let name = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("noise");
    let features = images.to_features(name)?;
    save_features(&features, &args.out, FileFormat::from_path(&args.out))?;
    let result = json!({ "path": args.out, "n": features.n(), "d": features.d() });
    render(cli, "gen-noise", to_value(args), result, || {
        format!("wrote {} ({} x {})\n", args.out.display(), features.n(), features.d())
    })
}

fn gen_synth(cli: &Cli, args: &GenSynthArgs) -> Result<String> {
    let set = gen_synthetic_clusters(args.classes, args.per_class, args.dim, args.spread, args.shift, cli.seed)?;
    save_labeled(&set, &args.out, FileFormat::from_path(&args.out))?;
    let labels = crate::feature_store::labels_path(&args.out);
    let result = json!({ "path": args.out, "labels": labels, "n": set.n(), "d": set.features.d() });
    render(cli, "gen-synth", to_value(args), result, || {
        format!("wrote {} and {} ({} x {})\n", args.out.display(), labels.display(), set.n(), set.features.d())
    })
}

fn density(cli: &Cli, args: &DensityArgs) -> Result<String> {
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    let export = feature_density_export(&a, &b, args.feature, args.bins)?;
    let csv = export.to_csv();
    if let Some(path) = &args.out {
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
    }
    render(cli, "density", to_value(args), to_value(&export), || csv.clone())
}
