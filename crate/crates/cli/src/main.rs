use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crackfield::imaging::Frame;
use crackfield::io::PipelineConfig;

mod error;
mod manifest;
mod stages;

use error::CliError;
use stages::Ctx;

#[derive(Debug, Parser)]
#[command(
    name = "crackfield",
    version,
    about = "Strain energy and fracture analysis from tracked particles"
)]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fail with exit code 6 when the flagged fraction of a gradient field
    /// exceeds `run.strict_invalid_fraction`.
    #[arg(long, global = true)]
    strict: bool,
    /// Output directory (default: `run.out_dir`, else `crackfield-out`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Reuse outputs of stages whose inputs and parameters are unchanged.
    #[arg(long, global = true)]
    cache: bool,
    /// Suppress progress lines.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrameArg {
    Reference,
    Deformed,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Uniform particles under a homogeneous deformation.
    SynthAffine,
    /// Particles displaced by a mode-I crack-tip field, with crack faces.
    SynthLefm,
    /// Stepped-crack phantom suite with ligament regions and known truth.
    SynthStepped,
    /// Render scatter and fluorescence stacks of one frame.
    Render {
        particles: PathBuf,
        #[arg(long, value_enum, default_value = "reference")]
        frame: FrameArg,
    },
    /// Detect particles in a rendered volume.
    Detect {
        volume: PathBuf,
        /// Output table, relative to the output directory.
        #[arg(long, default_value = "detections.csv")]
        output: PathBuf,
    },
    /// Link reference and deformed detections into tracks.
    Link {
        reference: PathBuf,
        deformed: PathBuf,
        #[arg(long, default_value = "tracks.csv")]
        output: PathBuf,
    },
    /// Deformation gradient at every particle.
    Gradient {
        /// Particle table (default: `run.input_particles`).
        particles: Option<PathBuf>,
    },
    /// Strain-energy density and largest principal stretch.
    Energy { defgrad: PathBuf },
    /// Integrated energy over a region.
    RegionEnergy {
        energy: PathBuf,
        /// Region TOML (default: `[region]` of the config).
        #[arg(long)]
        region: Option<PathBuf>,
    },
    /// Crack-opening profile and energy release rate from crack faces.
    FitCtod {
        faces: PathBuf,
        #[arg(long, default_value = "")]
        label: String,
    },
    /// Fit G_c against ligament energy.
    Regress {
        /// Regression points table.
        #[arg(long, conflicts_with = "runs", required_unless_present = "runs")]
        points: Option<PathBuf>,
        /// Run directories with `region_energy.csv` and `fit.csv`, collected
        /// into `points.csv` first.
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
    /// Markdown summary of a regression.
    Report {
        regression: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
        /// Closed-form suite truth to list next to the measurements.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Stepped-crack suite from synthesis to report.
    Pipeline,
    /// Print the resolved configuration (file, environment and flags).
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("crackfield-out"));
    let mut ctx = Ctx::new(cfg, out_dir, cli.cache, cli.strict);
    ctx.quiet = cli.quiet;
    let root = ctx.out_dir.clone();
    let in_out = |p: &Path| ctx.path(p);
    match &cli.command {
        Command::SynthAffine => {
            stages::synth_affine(&ctx, &root)?;
        }
        Command::SynthLefm => {
            stages::synth_lefm(&ctx, &root)?;
        }
        Command::SynthStepped => {
            stages::synth_stepped(&ctx, &root)?;
        }
        Command::Render { particles, frame } => {
            let frame = match frame {
                FrameArg::Reference => Frame::Reference,
                FrameArg::Deformed => Frame::Deformed,
            };
            stages::render(&ctx, particles, frame, &root)?;
        }
        Command::Detect { volume, output } => stages::detect_stage(&ctx, volume, &in_out(output))?,
        Command::Link {
            reference,
            deformed,
            output,
        } => stages::link_stage(&ctx, reference, deformed, &in_out(output))?,
        Command::Gradient { particles } => {
            let p = particles
                .clone()
                .or_else(|| ctx.cfg.run.input_particles.clone())
                .ok_or_else(|| {
                    CliError::Config(
                        "no particle table: pass one or set run.input_particles".into(),
                    )
                })?;
            stages::gradient(&ctx, "", &p, &root)?;
        }
        Command::Energy { defgrad } => {
            stages::energy(&ctx, "", defgrad, &root)?;
        }
        Command::RegionEnergy { energy, region } => {
            stages::region_energy_stage(&ctx, "", energy, region.as_deref(), &root)?;
        }
        Command::FitCtod { faces, label } => {
            stages::fit_ctod_stage(&ctx, "", label, faces, &root)?;
        }
        Command::Regress { points, runs } => {
            let points = match points {
                Some(p) => p.clone(),
                None => stages::collect_points(&ctx, runs, &root.join("points.csv"))?,
            };
            stages::regress(&ctx, &points, &root)?;
        }
        Command::Report {
            regression,
            points,
            truth,
        } => {
            stages::report(
                &ctx,
                regression,
                points.as_deref(),
                truth.as_deref(),
                &root.join("report.md"),
            )?;
        }
        Command::Pipeline => {
            stages::pipeline(&ctx)?;
        }
        Command::Config => unreachable!("handled before the output directory is used"),
    }
    match ctx.strict_failure() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(error::exit::OK as u8),
        Err(e) => {
            eprintln!("crackfield: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
