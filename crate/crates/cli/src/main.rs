mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use refad::bench::{self, BenchConfig};
use refad::dataset::{self, DatasetError, EvalConfig, LabelMap};
use refad::metrics::MetricsError;
use refad::pipeline::{process_frame, FrameConfig};
use refad::service::protocol::MapFormat;
use refad::service::{Server, ServiceConfig};
use refad::{peg, viz, PatchEmbeddingGrid, ReferenceModel, UpsampleMode};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

/// Reference-based anomaly detection on patch-embedding grids.
#[derive(Debug, Parser)]
#[command(name = "refad", version, args_override_self = true)]
struct Cli {
    /// File of key=value lines pre-setting flags (command-line flags win)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a test grid against a reference and write heatmap, mask and scene score
    Score(ScoreArgs),
    /// Evaluate pixel-level AP, FPR95 and AUROC over a dataset manifest
    Eval(EvalArgs),
    /// Render the PCA embedding visualization of a grid
    VizPca(VizArgs),
    /// Serve frame scoring over the length-prefixed TCP protocol
    Serve(ServeArgs),
    /// Measure pipeline throughput on synthetic frames
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Upsample {
    Nearest,
    Bilinear,
}

impl From<Upsample> for UpsampleMode {
    fn from(u: Upsample) -> Self {
        match u {
            Upsample::Nearest => UpsampleMode::Nearest,
            Upsample::Bilinear => UpsampleMode::Bilinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapEncoding {
    /// One-channel float map in the grid file format
    Float,
    /// Colorized heatmap PNG
    Png,
}

#[derive(Debug, clap::Args)]
struct ScoreArgs {
    /// Reference grid (.peg)
    reference: PathBuf,
    /// Test grid (.peg)
    test: PathBuf,
    /// Anomaly threshold in [0, 1]; patches strictly above it are anomalous
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    threshold: f32,
    /// Heatmap upsampling mode (the mask always uses nearest)
    #[arg(long, value_enum, default_value = "bilinear")]
    upsample: Upsample,
    /// Output directory for heatmap.png, mask.png and scene.txt
    #[arg(long, default_value = ".", value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    /// Manifest of `<input>\t<gt mask>` lines
    manifest: PathBuf,
    /// Reference grid (.peg) used for embedding inputs
    reference: PathBuf,
    /// Upsampling of embedding inputs to image resolution
    #[arg(long, value_enum, default_value = "nearest")]
    upsample: Upsample,
    /// Label remap table of `<mask value>=<normal|anomaly|ignore>` lines
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// File receiving the key=value metrics line
    #[arg(long, default_value = "metrics.txt", value_name = "FILE")]
    report: PathBuf,
}

#[derive(Debug, clap::Args)]
struct VizArgs {
    /// Grid to visualize (.peg)
    test: PathBuf,
    /// Output PNG, rendered at the grid's source image resolution
    #[arg(long, default_value = "pca.png", value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    /// Initial reference grid (.peg)
    reference: PathBuf,
    /// Address to listen on
    #[arg(long, default_value = "127.0.0.1:7878", value_name = "ADDR")]
    listen: String,
    /// Initial anomaly threshold in [0, 1]
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    threshold: f32,
    /// Heatmap upsampling mode
    #[arg(long, value_enum, default_value = "bilinear")]
    upsample: Upsample,
    /// Encoding of the anomaly map in frame responses
    #[arg(long, value_enum, default_value = "float")]
    map_format: MapEncoding,
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    /// Reference grid rows
    #[arg(long, default_value = "37", value_parser = positive)]
    ref_rows: usize,
    /// Reference grid columns
    #[arg(long, default_value = "60", value_parser = positive)]
    ref_cols: usize,
    /// Frame grid rows
    #[arg(long, default_value = "37", value_parser = positive)]
    rows: usize,
    /// Frame grid columns
    #[arg(long, default_value = "60", value_parser = positive)]
    cols: usize,
    /// Embedding dimension
    #[arg(long, default_value = "768", value_parser = positive)]
    dim: usize,
    /// Patch size in pixels
    #[arg(long, default_value = "16", value_parser = positive)]
    patch_size: usize,
    /// Minimum measurement time in seconds
    #[arg(long, default_value = "5")]
    seconds: f64,
    /// Minimum number of timed frames
    #[arg(long, default_value = "3", value_parser = positive)]
    min_frames: usize,
    /// Seed for the synthetic embeddings
    #[arg(long, default_value = "0")]
    seed: u64,
    /// Anomaly threshold in [0, 1]
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    threshold: f32,
}

fn unit_interval(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("{s:?} is not a positive integer")),
    }
}

/// Error with the exit code of its class.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_DATA,
        error: error.into(),
    }
}

type Outcome = Result<(), Failure>;

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(data(anyhow!("no such file: {}", path.display())))
    }
}

fn load_grid(path: &Path) -> Result<PatchEmbeddingGrid, Failure> {
    peg::read_grid_file(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)
}

fn load_reference(path: &Path) -> Result<ReferenceModel, Failure> {
    let grid = load_grid(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned());
    ReferenceModel::from_raw(&grid, label)
        .with_context(|| format!("building reference from {}", path.display()))
        .map_err(data)
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

fn score(args: ScoreArgs) -> Outcome {
    require_file(&args.reference)?;
    require_file(&args.test)?;
    let reference = load_reference(&args.reference)?;
    let test = load_grid(&args.test)?;
    let config = FrameConfig {
        threshold: args.threshold,
        heatmap_mode: args.upsample.into(),
    };
    let (out, _) = process_frame(&reference, &test, &config)
        .with_context(|| format!("scoring {}", args.test.display()))
        .map_err(data)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(data)?;
    write_file(&args.out.join("heatmap.png"), &viz::heatmap_png(&out.heatmap).map_err(data)?)?;
    write_file(&args.out.join("mask.png"), &viz::mask_png(&out.mask).map_err(data)?)?;
    let text = format!("{}\nseverity={}\n", out.scene, out.severity);
    write_file(&args.out.join("scene.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    require_file(&args.manifest)?;
    require_file(&args.reference)?;
    if let Some(labels) = &args.labels {
        require_file(labels)?;
    }
    let labels = match &args.labels {
        Some(path) => LabelMap::load(path).map_err(data)?,
        None => LabelMap::default(),
    };
    let items = dataset::load_manifest(&args.manifest).map_err(data)?;
    let reference = load_reference(&args.reference)?;
    let config = EvalConfig {
        upsample: args.upsample.into(),
        labels,
    };
    let report = match dataset::evaluate_dataset(&items, &reference, &config) {
        Ok(r) => r,
        Err(e @ DatasetError::Metrics(MetricsError::DegenerateLabels { .. })) => {
            return Err(Failure {
                code: EXIT_DEGENERATE,
                error: e.into(),
            })
        }
        Err(e) => return Err(data(e)),
    };
    for failure in &report.failures {
        eprintln!("skipped {}: {}", failure.item.input.display(), failure.reason);
    }
    let line = report.metrics.key_values();
    println!("{}", report.metrics);
    println!("{line}");
    write_file(&args.report, format!("{line}\n").as_bytes())
}

fn viz_pca(args: VizArgs) -> Outcome {
    require_file(&args.test)?;
    let grid = load_grid(&args.test)?;
    let image = viz::pca_image(&grid)
        .with_context(|| format!("PCA of {}", args.test.display()))
        .map_err(data)?;
    write_file(&args.out, &image.to_png().map_err(data)?)?;
    println!("wrote {} ({}x{})", args.out.display(), image.width, image.height);
    Ok(())
}

fn serve(args: ServeArgs) -> Outcome {
    require_file(&args.reference)?;
    let reference = load_reference(&args.reference)?;
    let label = reference.label().unwrap_or("").to_owned();
    let config = ServiceConfig {
        threshold: args.threshold,
        heatmap_mode: args.upsample.into(),
        map_format: match args.map_format {
            MapEncoding::Float => MapFormat::Float,
            MapEncoding::Png => MapFormat::Png,
        },
        ..ServiceConfig::default()
    };
    let server = Server::bind(args.listen.as_str(), reference, config)
        .with_context(|| format!("binding {}", args.listen))
        .map_err(data)?;
    let addr = server.local_addr().map_err(data)?;
    println!("listening on {addr} reference={label} threshold={}", args.threshold);
    std::io::stdout().flush().map_err(data)?;
    server.run().context("service stopped").map_err(data)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn run_bench(args: BenchArgs) -> Outcome {
    if !(args.seconds.is_finite() && args.seconds >= 0.0) {
        return Err(Failure {
            code: EXIT_USAGE,
            error: anyhow!("--seconds must be a non-negative number"),
        });
    }
    let config = BenchConfig {
        reference_rows: args.ref_rows,
        reference_cols: args.ref_cols,
        frame_rows: args.rows,
        frame_cols: args.cols,
        dim: args.dim,
        patch_size: args.patch_size,
        duration: Duration::from_secs_f64(args.seconds),
        min_frames: args.min_frames,
        seed: args.seed,
        frame: FrameConfig {
            threshold: args.threshold,
            ..FrameConfig::default()
        },
        ..BenchConfig::default()
    };
    let r = bench::run(&config).map_err(data)?;
    println!(
        "bench reference_patches={} frame_patches={} dim={} frames={} elapsed_s={:.3}",
        r.reference_patches,
        r.frame_patches,
        r.dim,
        r.frames,
        r.elapsed.as_secs_f64()
    );
    let m = r.mean;
    for (name, d) in [
        ("normalize", m.normalize),
        ("matching", m.matching),
        ("heatmap", m.heatmap),
        ("mask", m.mask),
        ("scene", m.scene),
        ("total", m.total()),
    ] {
        println!("stage {name:<9} mean_ms={:.3}", ms(d));
    }
    println!("fps={:.2}", r.fps);
    println!(
        "context: 12.5 Hz is the end-to-end rate reported with GPU backbone inference; \
         this measurement covers matching and mapping only"
    );
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::VizPca(a) => viz_pca(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => run_bench(a),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let args = match config::expand(&Cli::command(), args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
