use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use spatialfeat::complex_embed::{EmbedConfig, Embedder, Variant};
use spatialfeat::swap_sampler::{branch_stats, plan_epoch, DatasetMeta, PlanOptions, SamplingMode, DEFAULT_ALPHA};
use spatialfeat_cli::lock::DirLock;
use spatialfeat_cli::pipeline::{self, Fault, FeatureOptions, Jitter, TpdKind};
use spatialfeat_cli::scene::{self, SceneFile};
use spatialfeat_cli::{error_kind, verify};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "spatialfeat",
    version,
    about = "Spatial-feature simulation, extraction and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene: mixture, per-source images and RIRs.
    Sim(SimArgs),
    /// Compute IPD/TPD/SF maps and the contrast report for a rendered scene.
    Features(FeatureArgs),
    /// Run the built-in correctness checks.
    Verify(VerifyArgs),
    /// Plan homogeneous two-branch training batches.
    Plan(PlanArgs),
    /// Print a built-in scene as JSON.
    ScenePreset(PresetArgs),
    /// Write freshly initialised embedding weights.
    InitWeights(WeightArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Scene JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    scene: Option<PathBuf>,
    /// Built-in scene instead of a file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scene seed (noise), or seeds the preset's signals.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FeatureArgs {
    /// Directory written by `sim`; features go to `<out>/features`.
    #[arg(long)]
    out: PathBuf,
    /// Scene file supplying the source locations (default `<out>/scene.json`).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TpdKind::ThreeD)]
    tpd: TpdKind,
    /// Divide SF by the number of pairs.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    /// Covariance smoothing factor in [0, 1) for the complex input.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Dominance-mask floor relative to the peak power, in dB (<= 0).
    #[arg(long, default_value_t = -30.0, allow_negative_numbers = true)]
    floor_db: f64,
    /// Seed for location jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of azimuth error, degrees.
    #[arg(long, default_value_t = 0.0)]
    jitter_azimuth_deg: f64,
    /// Standard deviation of elevation error, degrees.
    #[arg(long, default_value_t = 0.0)]
    jitter_elevation_deg: f64,
    /// Standard deviation of distance error, meters.
    #[arg(long, default_value_t = 0.0)]
    jitter_distance_m: f64,
    /// Also write the covariance + steering complex input per source.
    #[arg(long)]
    complex_input: bool,
    /// Print the report to stdout.
    #[arg(long)]
    json: bool,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    json: bool,
    /// Also run the multi-seed scenario checks and 20-seed gradient checks.
    #[arg(long)]
    full: bool,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

#[derive(Args)]
struct PlanArgs {
    /// Dataset lines: `id<TAB>A|B|AB<TAB>duration_s`.
    #[arg(long)]
    meta: PathBuf,
    /// Plan file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of batches (default: items / batch size, rounded up).
    #[arg(long)]
    batches: Option<usize>,
    /// Exact `round(alpha * batches)` A batches instead of per-batch draws.
    #[arg(long)]
    quota: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PresetArgs {
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(scene::PRESETS))]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Naive,
    Separate,
    CrossProduct,
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long)]
    mics: usize,
    #[arg(long)]
    bins: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    /// Separate variant: independent real and imaginary weights.
    #[arg(long)]
    unshared: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn sim(args: SimArgs) -> Result<()> {
    let mut scene = match (&args.scene, &args.preset) {
        (Some(path), _) => SceneFile::load(path)?,
        (None, Some(name)) => scene::preset(name, args.seed.unwrap_or(0))?,
        (None, None) => unreachable!("clap requires one of --scene/--preset"),
    };
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    let _lock = DirLock::acquire(&args.out)?;
    let artifacts = pipeline::simulate_to_dir(&scene, &args.out)?;
    if args.json {
        println!("{}", serde_json::to_string(&artifacts)?);
    } else {
        println!(
            "wrote {} and {} source images to {}",
            artifacts.mixture.display(),
            artifacts.sources.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn features(args: FeatureArgs) -> Result<()> {
    let opts = FeatureOptions {
        tpd: args.tpd,
        normalize: args.normalize,
        floor_db: args.floor_db,
        lambda: args.lambda,
        jitter: Jitter {
            azimuth_deg: args.jitter_azimuth_deg,
            elevation_deg: args.jitter_elevation_deg,
            distance_m: args.jitter_distance_m,
        },
        seed: args.seed,
        complex_input: args.complex_input,
        fault: args.inject_fault,
    };
    ensure!(
        args.out.is_dir(),
        "{} is not a directory; run `sim` first",
        args.out.display()
    );
    let _lock = DirLock::acquire(&args.out)?;
    let report = pipeline::features_from_dir(&args.out, args.scene.as_deref(), &opts)?;
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        for s in &report.sources {
            let contrast = s.sf_contrast.map_or("n/a".to_string(), |c| format!("{c:.4}"));
            println!("source {}: mean SF {:.4}, contrast {contrast}", s.index, s.mean_sf);
        }
        println!("mean SF {:.4}", report.mean_sf);
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<bool> {
    let checks = verify::run_all(args.inject_fault, args.full)?;
    let passed = checks.iter().all(|c| c.passed);
    if args.json {
        println!("{}", json!({ "passed": passed, "checks": checks }));
    } else {
        for c in &checks {
            println!("{}", c.line());
        }
        println!(
            "{}",
            if passed {
                "all checks passed"
            } else {
                "some checks FAILED"
            }
        );
    }
    Ok(passed)
}

fn plan(args: PlanArgs) -> Result<()> {
    let meta = DatasetMeta::read(BufReader::new(
        fs::File::open(&args.meta).with_context(|| format!("opening {}", args.meta.display()))?,
    ))?;
    let opts = PlanOptions {
        alpha: args.alpha,
        batch_size: args.batch_size,
        seed: args.seed,
        num_batches: args.batches,
        mode: if args.quota {
            SamplingMode::Quota
        } else {
            SamplingMode::Bernoulli
        },
    };
    let plan = plan_epoch(&meta, &opts)?;
    let mut w = BufWriter::new(fs::File::create(&args.out)?);
    plan.write(&mut w)?;
    w.flush()?;
    let stats = branch_stats(&plan)?;
    if args.json {
        println!(
            "{}",
            json!({
                "proportion_a": stats.proportion_a,
                "batch_count": stats.batch_count,
                "item_coverage": stats.item_coverage,
            })
        );
    } else {
        println!(
            "{} batches, branch-A proportion {:.4}, {} distinct items",
            stats.batch_count, stats.proportion_a, stats.item_coverage
        );
    }
    Ok(())
}

fn init_weights(args: WeightArgs) -> Result<()> {
    let variant = match args.variant {
        VariantArg::Naive => Variant::Naive,
        VariantArg::Separate => Variant::Separate,
        VariantArg::CrossProduct => Variant::CrossProduct,
    };
    let mut cfg = EmbedConfig::new(variant, args.hidden).with_channels(args.channels);
    cfg.shared_weights = !args.unshared;
    let e = Embedder::<f64>::new(cfg, args.mics, args.bins, args.seed)?;
    e.save(&args.out)?;
    println!("{} parameters written to {}", e.num_params(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(a) => sim(a),
        Command::Features(a) => features(a),
        Command::Verify(a) => match run_verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_VERIFY_FAILED),
            Err(e) => Err(e),
        },
        Command::Plan(a) => plan(a),
        Command::ScenePreset(a) => scene::preset(&a.name, a.seed).map(|s| println!("{}", s.to_json())),
        Command::InitWeights(a) => init_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": error_kind(&e), "message": format!("{e:#}") }));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
