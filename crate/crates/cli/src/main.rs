use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dglseg::bench::{run_benchmark, write_reports};
use dglseg::dgl::{
    error_bound_alternate, error_bound_primary, min_superpixel_size, primary_exponent_threshold,
};
use dglseg::input::training_sets;
use dglseg::io::{
    load_image, load_label_map, write_label_map, DatasetManifest, ManifestEntry, RunConfig,
};
use dglseg::metrics::{genie_refinement_curve, pixel_accuracy};
use dglseg::synth::generate_synthetic;
use dglseg::{segment, BoundParams, ColorSpace, InputSource, Pixel, PixelSet, Regime};

#[derive(Parser)]
#[command(
    name = "dglseg",
    version,
    about = "Region segmentation with DGL hypothesis tests"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image and write its label map.
    Segment(SegmentArgs),
    /// Run every regime over a dataset manifest and write CSV reports.
    Bench(BenchArgs),
    /// Generate a synthetic dataset with exact ground truth.
    Synth(SynthArgs),
    /// Evaluate the error bounds and superpixel-size thresholds.
    Bounds(BoundsArgs),
    /// Start the local HTTP service.
    Serve(ServeArgs),
}

/// Settings shared by every command that segments. Flags override the
/// config file, which overrides the defaults.
#[derive(Args, Debug, Default)]
struct Tuning {
    /// Run config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Quantization color space: rgb, hsv, gray or lab.
    #[arg(long)]
    colorspace: Option<ColorSpace>,
    /// Channels to quantize, comma separated (default depends on the space).
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    /// Bins per channel: one value for all channels or a comma list.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
    /// Shrink the alphabet to at most one cell per pixel.
    #[arg(long)]
    reduce_to_linear: bool,
    /// Target superpixel count K.
    #[arg(long)]
    superpixels: Option<usize>,
    #[arg(long)]
    compactness: Option<f64>,
    /// Input regime (repeatable): gt:F, bb:F, pts:T[:SIDE], bbp:P[:F].
    #[arg(long = "regime")]
    regimes: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of pixels excluded from accuracy, worst regions first.
    #[arg(long)]
    exclusion: Option<f64>,
    /// Clicks charged per relabeled superpixel.
    #[arg(long)]
    click_cost: Option<usize>,
}

impl Tuning {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(space) = self.colorspace {
            cfg.colorspace = space;
            cfg.channels = match space {
                ColorSpace::Hsv => vec![0, 1],
                ColorSpace::Gray => vec![0],
                ColorSpace::Rgb | ColorSpace::Lab => vec![0, 1, 2],
            };
        }
        if let Some(ch) = &self.channels {
            cfg.channels = ch.clone();
        }
        if let Some(bins) = &self.bins {
            cfg.bins = match bins.as_slice() {
                [b] => vec![*b; cfg.channels.len()],
                many => many.to_vec(),
            };
        } else if cfg.bins.len() != cfg.channels.len() {
            cfg.bins = vec![cfg.bins[0]; cfg.channels.len()];
        }
        cfg.reduce_to_linear |= self.reduce_to_linear;
        if let Some(k) = self.superpixels {
            cfg.superpixels = k;
        }
        if let Some(c) = self.compactness {
            cfg.compactness = c;
        }
        if !self.regimes.is_empty() {
            cfg.regimes = self.regimes.clone();
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(e) = self.exclusion {
            cfg.exclusion = e;
        }
        if let Some(c) = self.click_cost {
            cfg.click_cost = c;
        }
        cfg.segment_config()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SegmentArgs {
    image: PathBuf,
    /// Output label map (indexed PNG).
    #[arg(short, long)]
    out: PathBuf,
    /// Ground-truth label map: scores the result and feeds --regime.
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    /// Explicit training pixels as JSON: [{"label": 1, "pixels": [[row, col], ...]}, ...].
    #[arg(long, conflicts_with = "groundtruth")]
    inputs: Option<PathBuf>,
    /// Write per-superpixel decisions and a summary as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct BenchArgs {
    manifest: PathBuf,
    /// Directory for runs.csv, summary.csv, curves.csv and the plot.
    #[arg(short, long)]
    out: PathBuf,
    /// Skip refinement.svg.
    #[arg(long)]
    no_plot: bool,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (images/, labels/, manifest.toml).
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 481)]
    width: usize,
    #[arg(long, default_value_t = 321)]
    height: usize,
    /// Pairwise total variation between region distributions, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    /// Seed of the first image; image i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundsArgs {
    /// Number of regions M.
    #[arg(long)]
    m: usize,
    /// Alphabet size |X|.
    #[arg(long)]
    alphabet: usize,
    /// Superpixel size n.
    #[arg(long)]
    n: usize,
    /// Training-to-test size ratio (or give --n-min).
    #[arg(long, conflicts_with = "n_min")]
    alpha: Option<f64>,
    /// Smallest training-set size.
    #[arg(long)]
    n_min: Option<usize>,
    /// Minimum pairwise total variation.
    #[arg(long)]
    v_min: f64,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Minutes before an idle session is dropped.
    #[arg(long, default_value_t = 30)]
    idle_minutes: u64,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Deserialize)]
struct ManualRegion {
    label: usize,
    pixels: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    image: String,
    regions: usize,
    superpixels: usize,
    alphabet_size: usize,
    accuracy: Option<f64>,
    ceiling: Option<f64>,
    elapsed_ms: f64,
    superpixel_labels: &'a [usize],
    decisions: &'a [dglseg::DecisionStats],
}

fn cmd_segment(args: &SegmentArgs) -> anyhow::Result<()> {
    let cfg = args.tuning.run_config()?;
    let seg = cfg.segment_config()?;
    let image = load_image(&args.image)?;
    let (w, h) = (image.width(), image.height());
    let gt = args.groundtruth.as_ref().map(load_label_map).transpose()?;
    if let Some(gt) = &gt {
        if (gt.width(), gt.height()) != (w, h) {
            bail!(
                "ground truth is {}x{}, image is {w}x{h}",
                gt.width(),
                gt.height()
            );
        }
    }
    let sets = if let Some(path) = &args.inputs {
        let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
        let regions: Vec<ManualRegion> =
            serde_json::from_str(&text).with_context(|| path.display().to_string())?;
        regions
            .into_iter()
            .map(|r| {
                let px = r.pixels.into_iter().map(|[row, col]| Pixel::new(row, col));
                PixelSet::new(r.label, px, InputSource::Manual, w, h)
            })
            .collect::<Result<Vec<_>, _>>()?
    } else if let Some(gt) = &gt {
        let regimes = cfg.parsed_regimes()?;
        let regime = match regimes.as_slice() {
            [one] => one.clone(),
            _ if args.tuning.regimes.is_empty() => Regime::GtFraction { f: 100.0 },
            _ => bail!("segment takes a single --regime"),
        };
        log::info!("simulating {regime} inputs");
        training_sets(gt, &regime, cfg.rng_seed)?
    } else {
        bail!("segment needs --inputs or --groundtruth with --regime");
    };

    let started = Instant::now();
    let result = segment(&image, &sets, &seg)?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    write_label_map(&args.out, w, h, &result.pixel_labels)?;

    let (accuracy, ceiling) = match &gt {
        Some(gt) => {
            let acc = pixel_accuracy(&result.pixel_labels, gt.labels(), cfg.exclusion)?;
            let curve = genie_refinement_curve(&result, gt.labels(), seg.click_cost)?;
            (Some(acc), curve.last().map(|p| p.accuracy))
        }
        None => (None, None),
    };
    let report = SegmentReport {
        image: args.image.display().to_string(),
        regions: result.regions,
        superpixels: result.partition.len(),
        alphabet_size: result.spec.alphabet_size(),
        accuracy,
        ceiling,
        elapsed_ms,
        superpixel_labels: &result.superpixel_labels,
        decisions: &result.stats,
    };
    println!(
        "{}: M={} K'={} |X|={} {:.0} ms",
        report.image, report.regions, report.superpixels, report.alphabet_size, elapsed_ms
    );
    if let (Some(a), Some(c)) = (accuracy, ceiling) {
        println!("accuracy {a:.4} (superpixel ceiling {c:.4})");
    }
    if let Some(path) = &args.stats {
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(path, json).with_context(|| path.display().to_string())?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let mut cfg = args.tuning.run_config()?;
    cfg.plot &= !args.no_plot;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let report = run_benchmark(&manifest, &cfg)?;
    for (what, why) in &report.failures {
        eprintln!("skipped {what}: {why}");
    }
    let written = write_reports(&report, &cfg, &args.out)?;
    println!(
        "{:<6} {:>6} {:>5} {:>8} {:>8} {:>8}",
        "regime", "param", "runs", "mean", "stdev", "clicks99"
    );
    for s in &report.summary {
        println!(
            "{:<6} {:>6} {:>5} {:>8.4} {:>8.4} {:>8.1}",
            s.regime, s.parameter, s.runs, s.mean_accuracy, s.stdev, s.mean_clicks_to_99
        );
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let images = args.out.join("images");
    let labels = args.out.join("labels");
    fs::create_dir_all(&images).with_context(|| images.display().to_string())?;
    fs::create_dir_all(&labels).with_context(|| labels.display().to_string())?;
    let mut entries = Vec::new();
    for i in 0..args.count {
        let seed = args.seed + i as u64;
        let scene =
            generate_synthetic(args.regions, args.width, args.height, seed, args.separation)?;
        let name = format!("synth_{seed:04}.png");
        let png = dglseg::io::encode_png(&scene.image)?;
        fs::write(images.join(&name), png).with_context(|| name.clone())?;
        write_label_map(
            labels.join(&name),
            args.width,
            args.height,
            scene.annotation.labels(),
        )?;
        entries.push(ManifestEntry {
            image: Path::new("images").join(&name),
            annotations: vec![Path::new("labels").join(&name)],
        });
    }
    let manifest = DatasetManifest {
        name: format!("synthetic-m{}-v{}", args.regions, args.separation),
        notes: format!(
            "{} images, {}x{}, {} regions, pairwise TV {}, seeds {}..{}",
            args.count,
            args.width,
            args.height,
            args.regions,
            args.separation,
            args.seed,
            args.seed + args.count as u64
        ),
        entries,
    };
    let path = args.out.join("manifest.toml");
    manifest.save(&path)?;
    println!("wrote {} images and {}", args.count, path.display());
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    params: BoundParams,
    primary: f64,
    primary_rate: f64,
    alternate: f64,
    alternate_rate: f64,
    min_superpixel_size: Option<usize>,
    primary_exponent_threshold: Option<usize>,
}

fn cmd_bounds(args: &BoundsArgs) -> anyhow::Result<()> {
    let p = match (args.alpha, args.n_min) {
        (Some(a), None) => BoundParams::with_alpha(args.m, args.alphabet, args.n, a, args.v_min)?,
        (None, Some(n_min)) => BoundParams::new(args.m, args.alphabet, args.n, n_min, args.v_min)?,
        _ => bail!("give exactly one of --alpha and --n-min"),
    };
    let primary = error_bound_primary(&p);
    let alternate = error_bound_alternate(&p);
    let report = BoundsReport {
        params: p,
        primary: primary.value,
        primary_rate: primary.rate,
        alternate: alternate.value,
        alternate_rate: alternate.rate,
        min_superpixel_size: min_superpixel_size(&p).ok(),
        primary_exponent_threshold: primary_exponent_threshold(&p).ok(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let vacuous = |b: f64| if b >= 1.0 { " (vacuous)" } else { "" };
    println!(
        "primary bound    {:.6e}{}",
        primary.value,
        vacuous(primary.value)
    );
    println!(
        "alternate bound  {:.6e}{}",
        alternate.value,
        vacuous(alternate.value)
    );
    match report.min_superpixel_size {
        Some(n) => println!("min superpixel size  {n}"),
        None => println!("min superpixel size  none (v_min = 0)"),
    }
    if let Some(n) = report.primary_exponent_threshold {
        println!("smallest n with a positive primary exponent  {n}");
    }
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let cfg = args.tuning.run_config()?;
    let config = dglseg_service::ServiceConfig {
        segment: cfg.segment_config()?,
        rng_seed: cfg.rng_seed,
        idle_timeout: Duration::from_secs(args.idle_minutes.max(1) * 60),
        ..Default::default()
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(dglseg_service::serve(args.addr, config))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match &cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
