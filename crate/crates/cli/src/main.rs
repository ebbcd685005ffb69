//! `volsal` command line: the whole pipeline, its stages in isolation, evaluation, scene
//! classification, and the synthetic test scenes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use volsal::config::{ConfigError, RunConfig, DEFAULT_CONFIG_TOML};
use volsal::pipeline::{classify_scenes, evaluate_dirs, run_stages, Stage, TestView};
use volsal::rgbd_io::write_atomic;
use volsal::scene_classify::DEFAULT_VOCABULARY;
use volsal::synthetic::{class_suite, default_intrinsics, room_scene, shadow_suite, write_suite};
use volsal::Error;

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "volsal", version, about = "Volumetric-saliency summarization of RGB-D indoor images")]
struct Cli {
    /// Worker threads for per-image parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline over a manifest: segmentation, saliency, mask, metrics.
    Run(RunArgs),
    /// Modified SLIC and region merging only; writes segments.raw and merge_log.csv.
    Segment(RunArgs),
    /// Saliency and summary masks from the segments.raw files of an earlier `segment` run.
    Saliency {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory of the `segment` run (default: the output directory).
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// Score predicted saliency maps against ground-truth masks (matched by file name).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory for metrics.csv and metrics.json.
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a bag-of-visual-words classifier on full images and classify test images.
    ClassifyScenes(ClassifyArgs),
    /// Write the deterministic synthetic scenes with manifests and ready-to-run configs.
    MakeSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Images in the shadow suite.
        #[arg(long, default_value_t = 10)]
        shadow_count: usize,
        /// Train and test images per scene class.
        #[arg(long, default_value_t = 10)]
        per_class: usize,
    },
    /// Print the default configuration as commented TOML.
    PrintConfig,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the saliency threshold tau.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    Full,
    Summaries,
    DepthOnly,
    Random,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Manifest whose rows all carry a scene label.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// What the classifier sees at test time.
    #[arg(long, value_enum, default_value = "full")]
    view: View,
    /// Output directory of a pipeline run over the test manifest (for `summaries` and `random`).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VOCABULARY)]
    vocabulary: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = volsal::rgbd_io::DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
    /// Where to write the JSON report (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Where to save the trained model.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Failure of a whole command, mapped to an exit code.
enum Failure {
    Config(String),
    Fatal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Fatal(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.tau {
        cfg.saliency.tau = t;
    }
    if cfg.manifest.is_none() {
        return Err(Failure::Config("no manifest: pass --manifest or set it in the config".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Returns the number of failed images.
fn run(args: &RunArgs, stage: impl FnOnce(&RunConfig) -> Stage) -> Result<usize, Failure> {
    let cfg = load_config(args)?;
    let stage = stage(&cfg);
    let work = cfg.output.join(".classifier");
    let classifier = cfg.classifier.build(&work)?;
    let outcome = run_stages(&cfg, classifier.as_ref(), &stage)?;
    let m = &outcome.manifest;
    info!("{} images, {} failed, output in {}", m.images.len(), m.failures(), cfg.output.display());
    if let Some(mean) = &outcome.report.mean {
        println!(
            "mean over {} images: F {:.4}  E {:.4}  S {:.4}  MAE {:.4}",
            outcome.report.images.len(),
            mean.f_measure,
            mean.e_measure,
            mean.s_measure,
            mean.mae
        );
    }
    for img in m.images.iter().filter(|i| !i.ok) {
        error!("{}: {}", img.id, img.error.as_deref().unwrap_or("failed"));
    }
    Ok(m.failures())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Fatal(format!("{}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| Failure::Fatal(format!("{}: {e}", path.display())))
}

fn evaluate(pred: &Path, gt: &Path, output: &Path) -> Result<usize, Failure> {
    for dir in [pred, gt] {
        if !dir.is_dir() {
            return Err(Failure::Config(format!("{} is not a directory", dir.display())));
        }
    }
    let (report, failed) = evaluate_dirs(pred, gt)?;
    write_file(&output.join("metrics.csv"), report.to_csv().as_bytes())?;
    write_file(&output.join("metrics.json"), report.to_json().as_bytes())?;
    for (id, reason) in &failed {
        error!("{id}: {reason}");
    }
    match &report.mean {
        Some(m) => println!(
            "mean over {} images: F {:.4}  E {:.4}  S {:.4}  MAE {:.4}",
            report.images.len(),
            m.f_measure,
            m.e_measure,
            m.s_measure,
            m.mae
        ),
        None => warn!("no images scored"),
    }
    Ok(failed.len())
}

fn classify(args: &ClassifyArgs) -> Result<usize, Failure> {
    let run_dir = || {
        args.run_dir
            .clone()
            .ok_or_else(|| Failure::Config("--run-dir is required for this view".into()))
    };
    let view = match args.view {
        View::Full => TestView::Full,
        View::Summaries => TestView::Summaries(run_dir()?),
        View::DepthOnly => TestView::DepthOnly,
        View::Random => TestView::Random(run_dir()?),
    };
    if args.vocabulary < 2 {
        return Err(Failure::Config("--vocabulary must be at least 2".into()));
    }
    let (model, report) = classify_scenes(&args.train, &args.test, &view, args.vocabulary, args.seed, args.depth_scale)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.report {
        Some(p) => write_file(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    if let Some(p) = &args.model {
        write_file(p, &model.to_bytes())?;
    }
    info!("accuracy {:.4} ({} test images, view {})", report.accuracy, report.predictions.len(), report.test_view);
    Ok(0)
}

fn synthetic_config(manifest: &str, output: &str) -> String {
    let mut cfg = RunConfig::default();
    cfg.manifest = Some(PathBuf::from(manifest));
    cfg.output = PathBuf::from(output);
    cfg.intrinsics = default_intrinsics();
    cfg.to_toml()
}

fn make_synthetic(seed: u64, output: &Path, shadow_count: usize, per_class: usize) -> Result<usize, Failure> {
    let fatal = |e: volsal::rgbd_io::IoError| Failure::Fatal(e.to_string());
    write_suite(&output.join("room"), "manifest", &[room_scene()]).map_err(fatal)?;
    write_suite(&output.join("shadow"), "manifest", &shadow_suite(seed, shadow_count)).map_err(fatal)?;
    let classes = output.join("classes");
    write_suite(&classes, "train", &class_suite(seed, per_class, "train")).map_err(fatal)?;
    write_suite(&classes, "test", &class_suite(seed + 1000, per_class, "test")).map_err(fatal)?;
    for (name, manifest) in [
        ("room", "room/manifest.txt"),
        ("shadow", "shadow/manifest.txt"),
        ("classes", "classes/test.txt"),
    ] {
        let text = synthetic_config(manifest, &format!("out/{name}"));
        write_file(&output.join(format!("{name}.toml")), text.as_bytes())?;
    }
    println!("synthetic scenes written to {}", output.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Run(args) => run(args, |_| Stage::All),
        Command::Segment(args) => run(args, |_| Stage::Segment),
        Command::Saliency { run: args, segments } => run(args, |cfg| Stage::Saliency {
            segments: segments.clone().unwrap_or_else(|| cfg.output.clone()),
        }),
        Command::Evaluate { pred, gt, output } => evaluate(pred, gt, output),
        Command::ClassifyScenes(args) => classify(args),
        Command::MakeSynthetic {
            seed,
            output,
            shadow_count,
            per_class,
        } => make_synthetic(*seed, output, *shadow_count, *per_class),
        Command::PrintConfig => {
            print!("{DEFAULT_CONFIG_TOML}");
            Ok(0)
        }
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} image(s) failed");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Fatal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
