use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lafcount_core::attribute_map::{
    apply_roi, default_palette, load_map, render_argmax, AttributeMap, RoiMask,
};
use lafcount_core::laf::{extract_laf, Grid, GridSpec};
use lafcount_core::pipeline::{
    compare_baselines, evaluate, synth_dataset, train, DatasetManifest, ModelBundle,
    PipelineConfig, PipelineError, SynthDatasetSpec,
};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Parser)]
#[command(
    name = "lafcount",
    version,
    about = "Crowd counting from semantic attribute maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of attribute maps with known counts.
    Synth(SynthArgs),
    /// Dump the local descriptors of one map.
    Extract(ExtractArgs),
    /// Fit a model on a manifest's training split.
    Train(TrainArgs),
    /// Score a model on a manifest's test split.
    Evaluate(EvaluateArgs),
    /// Train and score all four representations on one manifest.
    CompareBaselines(CompareArgs),
    /// Render a map's per-pixel argmax class as a PPM image.
    Render(RenderArgs),
    /// Write a frame's encoding under a trained model.
    Encode(EncodeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "RxC")]
    grid: Option<String>,
    #[arg(long, value_name = "RxC")]
    pyramid: Option<String>,
    #[arg(long, value_name = "K")]
    codebook_size: Option<String>,
    #[arg(long, value_name = "KAPPA")]
    knn: Option<String>,
    #[arg(long, value_name = "B|auto")]
    beta: Option<String>,
    #[arg(long, value_name = "L|auto")]
    lambda: Option<String>,
    #[arg(long, value_name = "hf|sppf|lfv|wvlad")]
    mode: Option<String>,
    #[arg(long, value_name = "intra+global|global")]
    norm: Option<String>,
    /// PCA target: retained variance fraction (0.95) or fixed dimension (8d).
    #[arg(long)]
    pca: Option<String>,
    #[arg(long, value_name = "S")]
    seed: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let flags = [
            ("grid", &self.grid),
            ("pyramid", &self.pyramid),
            ("codebook_size", &self.codebook_size),
            ("knn", &self.knn),
            ("beta", &self.beta),
            ("lambda", &self.lambda),
            ("mode", &self.mode),
            ("norm", &self.norm),
            ("pca", &self.pca),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                config.set(key, value)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Training frame count; overrides the manifest's split.
    #[arg(long, value_name = "T")]
    split: Option<usize>,
    /// Scene ROI applied to frames without their own.
    #[arg(long)]
    roi: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self) -> Result<DatasetManifest> {
        let mut manifest = DatasetManifest::load(&self.manifest)?;
        if let Some(roi) = &self.roi {
            if !roi.is_file() {
                return Err(PipelineError::Manifest(format!(
                    "missing ROI {}",
                    roi.display()
                )));
            }
            manifest.scene_roi = Some(absolute(roi)?);
        }
        if let Some(split) = self.split {
            manifest = manifest.with_split(split)?;
        }
        Ok(manifest)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    frames: usize,
    /// Inclusive count range.
    #[arg(long, default_value = "5-50")]
    counts: String,
    #[arg(long, value_name = "T", default_value_t = 200)]
    split: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inclusive range of the per-frame background person probability.
    #[arg(long)]
    clutter: Option<String>,
    #[arg(long, default_value_t = 80)]
    height: usize,
    #[arg(long, default_value_t = 80)]
    width: usize,
    #[arg(long)]
    blob_radius: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long, value_name = "RxC", default_value = "20x20")]
    grid: Grid,
    #[arg(long, value_name = "RxC", default_value = "2x2")]
    pyramid: Grid,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Bundle output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: PathBuf,
    /// Per-frame CSV destination; printed after the summary when absent.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Frames a,b,c for the similarity study.
    #[arg(long, value_name = "A,B,C")]
    frames: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    roi: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn absolute(path: &Path) -> Result<PathBuf> {
    if path.is_absolute() {
        Ok(path.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(path))
    }
}

fn parse_range<T: std::str::FromStr>(text: &str, what: &str) -> Result<(T, T)> {
    let bad = || PipelineError::Config(format!("{what} must look like LO-HI, got {text:?}"));
    let (lo, hi) = text.split_once('-').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_frames(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            PipelineError::Config(format!("frames must be three indices a,b,c, got {text:?}"))
        })?;
    parts.try_into().map_err(|_| {
        PipelineError::Config(format!("frames must be three indices a,b,c, got {text:?}"))
    })
}

fn load_with_roi(map: &Path, roi: Option<&Path>) -> Result<AttributeMap> {
    let map = load_map(map)?;
    match roi {
        Some(path) => Ok(apply_roi(&map, &RoiMask::load(path)?)?),
        None => Ok(map),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut spec = SynthDatasetSpec::desk(
                args.frames,
                parse_range(&args.counts, "counts")?,
                args.split,
                args.seed,
            );
            spec.template.height = args.height;
            spec.template.width = args.width;
            if let Some(r) = args.blob_radius {
                spec.template.blob_radius = r;
            }
            if let Some(noise) = args.noise {
                spec.template.noise = noise;
            }
            if let Some(clutter) = &args.clutter {
                spec.clutter = parse_range(clutter, "clutter")?;
            }
            let manifest = synth_dataset(&spec, &args.out)?;
            println!("wrote {} frames to {}", manifest.len(), args.out.display());
        }
        Command::Extract(args) => {
            let map = load_with_roi(&args.map, args.roi.as_deref())?;
            let set = extract_laf(&map, &GridSpec::new(args.grid, args.pyramid))?;
            let mut out = BufWriter::new(File::create(&args.out)?);
            set.write_lafd(&mut out)?;
            out.flush()?;
            println!("descriptors={} dim={}", set.len(), set.dim());
        }
        Command::Train(args) => {
            let manifest = args.data.load()?;
            let config = args.config.resolve()?;
            let bundle = train(&manifest, &config)?;
            bundle.save(&args.out)?;
            match &bundle.quantizer {
                Some(q) => eprintln!("resolved lambda={} beta={}", bundle.lambda, q.beta),
                None => eprintln!("resolved lambda={}", bundle.lambda),
            }
            println!("saved model to {}", args.out.display());
        }
        Command::Evaluate(args) => {
            let manifest = args.data.load()?;
            let bundle = ModelBundle::load(&args.model)?;
            let eval = evaluate(&manifest, &bundle)?;
            println!("{}", eval.report);
            match &args.predictions {
                Some(path) => std::fs::write(path, eval.csv())?,
                None => print!("{}", eval.csv()),
            }
        }
        Command::CompareBaselines(args) => {
            let manifest = args.data.load()?;
            let config = args.config.resolve()?;
            let frames = args.frames.as_deref().map(parse_frames).transpose()?;
            let cmp = compare_baselines(&manifest, &config, frames)?;
            print!("{cmp}");
            for row in &cmp.rows {
                match row.beta {
                    Some(beta) => eprintln!("{}: lambda={} beta={beta}", row.mode, row.lambda),
                    None => eprintln!("{}: lambda={}", row.mode, row.lambda),
                }
            }
        }
        Command::Render(args) => {
            let map = load_with_roi(&args.map, args.roi.as_deref())?;
            let ppm = render_argmax(&map, &default_palette(map.channels()))?;
            std::fs::write(&args.out, ppm)?;
        }
        Command::Encode(args) => {
            let bundle = ModelBundle::load(&args.model)?;
            let map = load_with_roi(&args.map, args.roi.as_deref())?;
            let enc = bundle.feature(&map)?;
            let mut out = BufWriter::new(File::create(&args.out)?);
            enc.write_venc(&mut out)?;
            out.flush()?;
            println!("length={}", enc.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.kind().exit_code() as u8)
        }
    }
}
