//! `rcpda` command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including bad
//! arguments), 3 for data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rcpda::eval::read_curve_csv;
use rcpda::pipeline::{
    load_scene, run_command, simulate, with_seed, EvalSummary, Manifest, Outputs, PipelineConfig, PredictorKind,
};
use rcpda::plot::{render, PlotMetric};
use rcpda::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "rcpda", version, about = "Radar-camera pixel depth association pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render simulator truth and sensor sweeps for scenes.
    Simulate(RunArgs),
    /// Accumulate LiDAR and radar and write the filtered ground truth.
    Accumulate(RunArgs),
    /// Compute association labels and weights.
    GenLabels(RunArgs),
    /// Predict association volumes and build multi-channel enhanced radar.
    BuildMer(RunArgs),
    /// Complete depth from raw radar and from enhanced radar.
    Complete(RunArgs),
    /// Evaluate completions and write metric tables.
    Eval(RunArgs),
    /// Run every stage and write all artifacts.
    Pipeline(RunArgs),
    /// Plot a threshold curve CSV as PGM and PPM images.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Library scene name or scene JSON path (repeatable).
    #[arg(long = "scene")]
    scenes: Vec<String>,
    /// Frame index (repeatable).
    #[arg(long = "frame")]
    frames: Vec<usize>,
    /// Overrides every scene's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    predictor: Option<Predictor>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Curve CSV as written by `eval` or `pipeline`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Both)]
    metric: Metric,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    Oracle,
    NoisyOracle,
    Heuristic,
}

impl From<Predictor> for PredictorKind {
    fn from(p: Predictor) -> Self {
        match p {
            Predictor::Oracle => PredictorKind::Oracle,
            Predictor::NoisyOracle => PredictorKind::NoisyOracle,
            Predictor::Heuristic => PredictorKind::Heuristic,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Area,
    Mae,
    Both,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() { EXIT_CONFIG } else { EXIT_DATA };
        let message = e.to_string();
        Failure { code, message }
    }
}

fn config_failure(message: String) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message,
    }
}

/// Loads the configuration file (if any) and applies flag overrides.
fn resolve_config(args: &RunArgs) -> Result<(PipelineConfig, Option<String>), Failure> {
    let (mut cfg, text) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_failure(format!("cannot read config {}: {e}", path.display())))?;
            (PipelineConfig::from_json_str(&text)?, Some(text))
        }
        None => (PipelineConfig::default(), None),
    };
    if !args.scenes.is_empty() {
        cfg.scenes = args.scenes.clone();
    }
    if !args.frames.is_empty() {
        cfg.frames = args.frames.clone();
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(p) = args.predictor {
        cfg.predictor = p.into();
    }
    cfg.validate()?;
    Ok((cfg, text))
}

fn report_manifest(out: &Path, manifest: &Manifest) {
    println!(
        "{}: {} artifacts in {} (config {})",
        manifest.command,
        manifest.artifacts.len(),
        out.display(),
        &manifest.config_hash[..12]
    );
}

fn report_summary(summary: &EvalSummary) {
    println!("{:<12} {:<8} {:>9} {:>9} {:>9}", "region", "method", "pixels", "MAE", "RMSE");
    for (region, methods) in &summary.reports {
        for (method, r) in methods {
            let (mae, rmse) = match r.stats {
                Some(s) => (format!("{:.3}", s.mae), format!("{:.3}", s.rmse)),
                None => ("-".into(), "-".into()),
            };
            println!("{region:<12} {method:<8} {:>9} {mae:>9} {rmse:>9}", r.n_pixels);
        }
    }
    if let Some(d) = summary.discard_rate {
        println!("discard rate: {d:.3}");
    }
}

fn run_simulate(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, _) = resolve_config(args)?;
    // Only frames given on the command line restrict simulation; otherwise every frame is written.
    let frames = args.frames.clone();
    for name in &cfg.scenes {
        let scene = with_seed(load_scene(name)?, cfg.seed)?;
        let dir = args.out.join(scene.name());
        let manifest = simulate(&scene, &frames, &cfg, &dir, args.workers)?;
        report_manifest(&dir, &manifest);
    }
    Ok(())
}

fn run_frames(command: &str, args: &RunArgs, outputs: Option<Outputs>, with_eval: bool) -> Result<(), Failure> {
    let (cfg, text) = resolve_config(args)?;
    let outcome = run_command(command, outputs, with_eval, &cfg, text.as_deref(), &args.out, args.workers)?;
    report_manifest(&args.out, &outcome.manifest);
    if let Some(summary) = &outcome.summary {
        report_summary(summary);
    }
    Ok(())
}

fn run_plot(args: &PlotArgs) -> Result<(), Failure> {
    let bytes = rcpda::io::read_file(&args.input)?;
    let records = read_curve_csv(bytes.as_slice())?;
    let metrics: &[(PlotMetric, &str)] = match args.metric {
        Metric::Area => &[(PlotMetric::Area, "area")],
        Metric::Mae => &[(PlotMetric::Mae, "mae")],
        Metric::Both => &[(PlotMetric::Area, "area"), (PlotMetric::Mae, "mae")],
    };
    for &(metric, stem) in metrics {
        let plot = render(&records, metric)?;
        rcpda::io::write_file(&args.out.join(format!("{stem}.pgm")), &plot.to_pgm())?;
        rcpda::io::write_file(&args.out.join(format!("{stem}.ppm")), &plot.to_ppm())?;
        println!("plot: {stem}.pgm and {stem}.ppm in {}", args.out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Accumulate(a) => run_frames("accumulate", a, Some(Outputs::Accumulate), false),
        Command::GenLabels(a) => run_frames("gen-labels", a, Some(Outputs::Labels), false),
        Command::BuildMer(a) => run_frames("build-mer", a, Some(Outputs::Mer), false),
        Command::Complete(a) => run_frames("complete", a, Some(Outputs::Complete), false),
        Command::Eval(a) => run_frames("eval", a, None, true),
        Command::Pipeline(a) => run_frames("pipeline", a, Some(Outputs::Everything), true),
        Command::Plot(a) => run_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
