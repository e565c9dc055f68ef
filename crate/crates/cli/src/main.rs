use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockfall::coregister::write_alignment_csv;
use blockfall::eval::format_table;
use blockfall::hog::write_annotations_csv;
use blockfall::io::{read_raster, write_png};
use blockfall::pipeline::{
    evaluate_files, prepare_pair, run_pipeline, train_models, ModelPaths, PairManifest, PipelineConfig, RunOutput,
    TrainingManifest,
};
use blockfall::synthgen::{
    generate_scene, training_annotations, write_scene, AnnotationParams, BackgroundMode, SceneSpec,
};
use blockfall::{Error, Result, SunGeometry};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Detect newly fallen blocks in co-registered before/after image pairs.
#[derive(Debug, Parser)]
#[command(name = "blockfall", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align 'before' to 'after' tile by tile and write the difference image.
    Coregister(CoregisterArgs),
    /// Train the 'after' and difference models from a training manifest.
    Train(TrainArgs),
    /// Run detection on one pair and write the final block map.
    Detect(PairArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scene with ground truth and training annotations.
    Synth(SynthArgs),
    /// Optionally train, then detect and score one pair.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct CoregisterArgs {
    /// TOML file of pipeline tunables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    tile_size: Option<usize>,
    /// Also write the resampled 'before' image.
    #[arg(long)]
    debug_artifacts: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    after_model: Option<PathBuf>,
    #[arg(long)]
    diff_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Pair manifest (TOML); the flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    before: Option<PathBuf>,
    #[arg(long)]
    after: Option<PathBuf>,
    #[arg(long)]
    after_model: Option<PathBuf>,
    #[arg(long)]
    diff_model: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Metres per pixel.
    #[arg(long)]
    pixel_scale: Option<f64>,
    /// Sun azimuth, degrees clockwise from image-up.
    #[arg(long, allow_negative_numbers = true)]
    sun_azimuth: Option<f64>,
    /// Sun incidence angle, degrees.
    #[arg(long)]
    sun_incidence: Option<f64>,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    hit_threshold: Option<f64>,
    /// Scan every window instead of only those near blob candidates.
    #[arg(long)]
    full_scan: bool,
    /// Persist intermediate maps next to the outputs.
    #[arg(long)]
    debug_artifacts: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Ground truth to score against (label PNG or CSV).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Train the models from this manifest first, writing them to the
    /// pair's model paths.
    #[arg(long)]
    train_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// TOML file of pipeline tunables (only the matching section is used).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Label PNG or CSV.
    #[arg(long)]
    truth: PathBuf,
    /// `final_labels.png` or `final_blocks.csv`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pixel_scale: f64,
    #[arg(long)]
    iou_min: Option<f64>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Background {
    Flat,
    Textured,
    Layered,
    Changing,
}

impl From<Background> for BackgroundMode {
    fn from(b: Background) -> Self {
        match b {
            Background::Flat => BackgroundMode::Flat,
            Background::Textured => BackgroundMode::Textured,
            Background::Layered => BackgroundMode::Layered,
            Background::Changing => BackgroundMode::Changing,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scene description (TOML); the flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long, value_enum)]
    background: Option<Background>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    shift_x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    shift_y: Option<f64>,
    #[arg(long)]
    n_static_blocks: Option<usize>,
}

fn missing(flag: &str) -> Error {
    Error::Validation(format!("--{flag} is required without --config"))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map(PipelineConfig::load)
        .transpose()
        .map(Option::unwrap_or_default)
}

impl PairArgs {
    fn manifest(&self) -> Result<PairManifest> {
        let mut m = match &self.config {
            Some(path) => PairManifest::load(path)?,
            None => PairManifest {
                before: self.before.clone().ok_or_else(|| missing("before"))?,
                after: self.after.clone().ok_or_else(|| missing("after"))?,
                pixel_scale: blockfall::raster::DEFAULT_PIXEL_SCALE,
                sun: SunGeometry::default(),
                models: ModelPaths {
                    after: self.after_model.clone().ok_or_else(|| missing("after-model"))?,
                    difference: self.diff_model.clone().ok_or_else(|| missing("diff-model"))?,
                },
                output_dir: self.output_dir.clone().ok_or_else(|| missing("output-dir"))?,
                truth: None,
                config: PipelineConfig::default(),
            },
        };
        if let Some(p) = &self.before {
            m.before = p.clone();
        }
        if let Some(p) = &self.after {
            m.after = p.clone();
        }
        if let Some(p) = &self.after_model {
            m.models.after = p.clone();
        }
        if let Some(p) = &self.diff_model {
            m.models.difference = p.clone();
        }
        if let Some(p) = &self.output_dir {
            m.output_dir = p.clone();
        }
        if let Some(v) = self.pixel_scale {
            m.pixel_scale = v;
        }
        if let Some(v) = self.sun_azimuth {
            m.sun.azimuth_deg = v;
        }
        if let Some(v) = self.sun_incidence {
            m.sun.incidence_deg = v;
        }
        if let Some(v) = self.tile_size {
            m.config.coregister.tile_size = v;
        }
        if let Some(v) = self.hit_threshold {
            m.config.detect.hit_threshold = v;
        }
        if self.full_scan {
            m.config.tiling.gate_detection = false;
        }
        Ok(m)
    }
}

fn report_run(out: &RunOutput, dir: &Path) {
    let c = &out.record.counts;
    println!(
        "{} blocks ({} candidates, {} tiles, {} low-confidence, {} failed) written to {}",
        c.final_blocks,
        c.blob_candidates,
        c.tiles,
        c.low_confidence_tiles,
        c.failed_tiles,
        dir.display()
    );
    if let Some(m) = &out.record.metrics {
        print!("{}", format_table(m));
    }
}

fn coregister(args: &CoregisterArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(t) = args.tile_size {
        config.coregister.tile_size = t;
    }
    config.stages.coregister = true;
    config.validate()?;
    let before = read_raster(&args.before)?;
    let after = read_raster(&args.after)?;
    let prepared = prepare_pair(&before, &after, &config)?;
    std::fs::create_dir_all(&args.output_dir)?;
    write_alignment_csv(&args.output_dir.join("alignment.csv"), &prepared.alignment)?;
    write_png(&args.output_dir.join("difference.png"), &prepared.difference)?;
    if args.debug_artifacts {
        write_png(&args.output_dir.join("aligned_before.png"), &prepared.aligned_before)?;
    }
    let low = prepared.alignment.iter().filter(|a| a.status.low_confidence()).count();
    println!("{} tiles aligned, {low} low-confidence", prepared.alignment.len());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut m = TrainingManifest::load(&args.config)?;
    if let Some(p) = &args.after_model {
        m.after_model = p.clone();
    }
    if let Some(p) = &args.diff_model {
        m.diff_model = p.clone();
    }
    let report = train_models(&m)?;
    println!(
        "trained on {} positive / {} negative windows ({} annotations excluded); models at {} and {}",
        report.after.meta.positives,
        report.after.meta.negatives,
        report.excluded,
        m.after_model.display(),
        m.diff_model.display()
    );
    Ok(())
}

fn detect(args: &PairArgs) -> Result<()> {
    let mut m = args.manifest()?;
    m.truth = None;
    let out = run_pipeline(&m, args.debug_artifacts)?;
    report_run(&out, &m.output_dir);
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let mut m = args.pair.manifest()?;
    if let Some(t) = &args.truth {
        m.truth = Some(t.clone());
    }
    if let Some(path) = &args.train_config {
        let mut t = TrainingManifest::load(path)?;
        t.after_model = m.models.after.clone();
        t.diff_model = m.models.difference.clone();
        t.config = m.config.clone();
        train_models(&t)?;
    }
    let out = run_pipeline(&m, args.pair.debug_artifacts)?;
    report_run(&out, &m.output_dir);
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(v) = args.iou_min {
        config.matching.iou_min = v;
    }
    config.validate()?;
    let report = evaluate_files(
        &args.truth,
        &args.predictions,
        args.pixel_scale,
        &config.matching,
        &args.output_dir,
    )?;
    print!("{}", format_table(&report));
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::default(),
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.width {
        spec.width = v;
    }
    if let Some(v) = args.height {
        spec.height = v;
    }
    if let Some(v) = args.n_blocks {
        spec.n_blocks = v;
    }
    if let Some(v) = args.background {
        spec.background = v.into();
    }
    if let Some(v) = args.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.shift_x {
        spec.global_shift_px.dx = v;
    }
    if let Some(v) = args.shift_y {
        spec.global_shift_px.dy = v;
    }
    if let Some(v) = args.n_static_blocks {
        spec.n_static_blocks = v;
    }
    let scene = generate_scene(&spec)?;
    write_scene(&args.output_dir, &scene)?;
    let annotations = training_annotations(&scene, &AnnotationParams::default(), spec.seed);
    write_annotations_csv(&args.output_dir.join("annotations.csv"), &annotations)?;
    println!(
        "{} blocks planted ({} not placed) in {}",
        scene.truth.len(),
        scene.unplaced,
        args.output_dir.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Coregister(a) => coregister(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
