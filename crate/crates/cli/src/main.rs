use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use edssr::degrade::{simulate_lr, DegradeConfig, DegradeMode, UpsampleMethod};
use edssr::fourier::Window;
use edssr::fuse::FuseConfig;
use edssr::network::{AdamConfig, Architecture, TrainConfig};
use edssr::pipeline::{
    apply_file, evaluate_files, fuse_files, make_phantom, make_training_file, run_pipeline, sampler_seed,
    train_file, train_seed, upsample_file, PhantomSpec, PipelineConfig,
};
use edssr::sampler::SamplerConfig;
use edssr::volume::{load_volume, save_volume, DEFAULT_NORMALIZE_PERCENTILE};

/// Self super-resolution of volumes with thick slices.
#[derive(Parser, Debug)]
#[command(name = "edssr", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade a volume along one axis by a slice-thickness factor.
    SimulateLr(SimulateLrArgs),
    /// Normalize a low-resolution volume and resample it to isotropic spacing.
    Upsample(UpsampleArgs),
    /// Extract paired training patches from a normalized isotropic volume.
    MakeTraining(MakeTrainingArgs),
    /// Train the network on a patch file.
    Train(TrainArgs),
    /// Super-resolve coronal and sagittal slices with trained weights.
    Apply(ApplyArgs),
    /// Fuse estimates in the Fourier domain.
    Fuse(FuseArgs),
    /// PSNR/SSIM of methods against reference volumes, with significance tests.
    Evaluate(EvaluateArgs),
    /// Write a synthetic ellipsoid phantom.
    Phantom(PhantomArgs),
    /// Run every stage from a configuration file.
    ///
    /// Any configuration key can be overridden as `--key value` or
    /// `--key=value`, e.g. `--train.steps 500`.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct SimulateLrArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Slice thickness over in-plane spacing.
    #[arg(long)]
    k: f64,
    #[arg(long, default_value_t = 2)]
    axis: usize,
    /// `decimate` (resample to fewer slices) or `bandlimit` (keep the grid).
    #[arg(long, default_value = "decimate")]
    mode: String,
    /// `rect`, `hann` or `fermi:<width>`.
    #[arg(long, default_value = "rect")]
    window: String,
}

#[derive(Args, Debug)]
struct UpsampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `zeropad` or `bspline`.
    #[arg(long, default_value = "zeropad")]
    method: String,
    #[arg(long, default_value_t = DEFAULT_NORMALIZE_PERCENTILE)]
    percentile: f64,
    /// Override the slice ratio read from the header.
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Args, Debug)]
struct MakeTrainingArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    k: f64,
    #[arg(long, default_value_t = 32)]
    patch_size: usize,
    #[arg(long, default_value_t = 32)]
    patches_per_slice: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,30,60")]
    angles: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    foreground_threshold: f64,
    /// Root seed; the sampler uses the same derived seed as `pipeline`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = edssr::network::DEFAULT_BLOCKS)]
    blocks: usize,
    #[arg(long, default_value_t = edssr::network::DEFAULT_FEATURES)]
    features: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Halve the learning rate every this many steps (0 = never).
    #[arg(long, default_value_t = 0)]
    lr_halving_every: usize,
    #[arg(long, default_value_t = 0.9)]
    adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    /// Start from these weights instead of a random initialization.
    #[arg(long)]
    fine_tune_from: Option<PathBuf>,
    /// Root seed; training uses the same derived seed as `pipeline`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-step loss here, one value per line.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    coronal_out: PathBuf,
    #[arg(long)]
    sagittal_out: PathBuf,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 11.0)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    smoothing_sigma: f64,
    /// Keep normalized intensities instead of restoring physical units.
    #[arg(long)]
    keep_normalized: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Ground truth, one per subject.
    #[arg(long = "reference", required = true)]
    references: Vec<PathBuf>,
    /// `NAME=path[,path...]`, one path per reference, in the same order.
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    spacing: Vec<f64>,
    #[arg(long, default_value_t = 14)]
    ellipsoids: usize,
    #[arg(long, default_value_t = 0.3)]
    edge_width: f64,
    #[arg(long, default_value_t = 0.2)]
    texture_amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

/// Failure classes that map onto exit codes 1 and 2.
enum Failure {
    Usage(String),
    Runtime(edssr::Error),
}

impl From<edssr::Error> for Failure {
    fn from(e: edssr::Error) -> Self {
        match e {
            edssr::Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn parse_value<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| usage(format!("bad {what} `{s}`: {e}")))
}

fn apply_overrides(cfg: &mut PipelineConfig, args: &[String]) -> Result<(), Failure> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("expected a --key override, got `{arg}`")))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        cfg.set(&key, &value)?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::SimulateLr(a) => {
            require_file(&a.input)?;
            let cfg = DegradeConfig {
                window: parse_value::<Window>("window", &a.window)?,
                ..DegradeConfig::new(a.k, a.axis, parse_value::<DegradeMode>("mode", &a.mode)?)
            };
            let hr = load_volume(&a.input)?;
            let lr = simulate_lr(&hr, &cfg)?;
            info!("{:?} -> {:?}, spacing {:?}", hr.dims(), lr.dims(), lr.spacing());
            save_volume(&lr, &a.output)?;
        }
        Command::Upsample(a) => {
            require_file(&a.input)?;
            let method = parse_value::<UpsampleMethod>("method", &a.method)?;
            let up = upsample_file(&a.input, &a.output, method, a.percentile, a.k)?;
            println!("k={} dims={:?} scale={}", up.k, up.iso_dims, up.intensity_scale);
        }
        Command::MakeTraining(a) => {
            require_file(&a.input)?;
            let cfg = SamplerConfig {
                patch_size: a.patch_size,
                patches_per_slice: a.patches_per_slice,
                angles_deg: a.angles,
                foreground_threshold: a.foreground_threshold,
                seed: sampler_seed(a.seed),
            };
            let n = make_training_file(&a.input, a.k, &cfg, &a.output)?;
            println!("{n} training pairs");
        }
        Command::Train(a) => {
            require_file(&a.patches)?;
            if let Some(p) = &a.fine_tune_from {
                require_file(p)?;
            }
            let arch = Architecture::new(a.blocks, a.features)?;
            let cfg = TrainConfig {
                steps: a.steps,
                batch_size: a.batch_size,
                lr: a.lr,
                lr_halving_every: a.lr_halving_every,
                adam: AdamConfig {
                    beta1: a.adam_beta1,
                    beta2: a.adam_beta2,
                    eps: a.adam_eps,
                },
                seed: train_seed(a.seed),
                fine_tune_from: a.fine_tune_from,
            };
            cfg.validate()?;
            let out = train_file(&a.patches, arch, &cfg, &a.output, a.loss_log.as_deref())?;
            if let Some(last) = out.losses.last() {
                println!("final L1 {last}");
            }
        }
        Command::Apply(a) => {
            require_file(&a.input)?;
            require_file(&a.weights)?;
            apply_file(&a.input, &a.weights, &a.coronal_out, &a.sagittal_out)?;
        }
        Command::Fuse(a) => {
            for p in &a.inputs {
                require_file(p)?;
            }
            let cfg = FuseConfig {
                p: a.p,
                magnitude_smoothing_sigma: a.smoothing_sigma,
            };
            cfg.validate()?;
            fuse_files(&a.inputs, &cfg, &a.output, !a.keep_normalized)?;
        }
        Command::Evaluate(a) => {
            for p in &a.references {
                require_file(p)?;
            }
            let mut methods = Vec::new();
            for m in &a.methods {
                let (name, paths) = m
                    .split_once('=')
                    .ok_or_else(|| usage(format!("method `{m}` must be NAME=path[,path...]")))?;
                let paths: Vec<PathBuf> = paths.split(',').map(PathBuf::from).collect();
                for p in &paths {
                    require_file(p)?;
                }
                methods.push((name.to_string(), paths));
            }
            let report = evaluate_files(&a.references, &methods, a.alpha, a.table.as_deref(), a.csv.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Phantom(a) => {
            if a.dims.len() != 3 || a.spacing.len() != 3 {
                return Err(usage("--dims and --spacing take three comma-separated values"));
            }
            let spec = PhantomSpec {
                dims: [a.dims[0], a.dims[1], a.dims[2]],
                spacing: [a.spacing[0], a.spacing[1], a.spacing[2]],
                ellipsoids: a.ellipsoids,
                edge_width: a.edge_width,
                texture_amplitude: a.texture_amplitude,
                seed: a.seed,
                ..PhantomSpec::default()
            };
            save_volume(&make_phantom(&spec)?, &a.output)?;
        }
        Command::Pipeline(a) => {
            let mut cfg = match &a.config {
                Some(path) => {
                    require_file(path)?;
                    PipelineConfig::from_file(path)?
                }
                None => PipelineConfig::default(),
            };
            apply_overrides(&mut cfg, &a.overrides)?;
            let out = run_pipeline(&cfg)?;
            println!("wrote {}", out.output.display());
            if let Some(report) = out.report {
                print!("{}", report.to_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
