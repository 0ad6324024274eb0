//! Command-line driver: argument parsing, config resolution and dispatch.
//!
//! Settings resolve as flags over the `--config` TOML file over built-in
//! defaults. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use rfinterp::eval::Method;
use rfinterp::hankel::LiftDirection;
use rfinterp::neural::Preset;
use rfinterp::phantom::ArrayKind;

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::PipelineConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) if m.starts_with("error:") => f.write_str(m.trim_end()),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<rfinterp::Error> for CliError {
    fn from(e: rfinterp::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rfinterp", version, about = "Sub-sampled ultrasound RF interpolation pipeline")]
pub struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Recompute even when outputs match the current fingerprint.
    #[arg(long, global = true)]
    pub force: bool,
    /// Do not print the resolved config to stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate an RF cube (RFC1) from a scene preset or scene file.
    Simulate(SimulateArgs),
    /// Draw a receiver sub-sampling mask (MSK1).
    Mask(MaskArgs),
    /// Fill missing receivers by low-rank Hankel completion.
    Complete(CompleteArgs),
    /// Train the interpolation network on synthetic scenes (NNP1).
    Train(TrainArgs),
    /// Fill missing receivers with a trained network.
    Interpolate(InterpolateArgs),
    /// Delay-and-sum beamform a cube to a B-mode PNG and IMG1 matrix.
    Beamform(BeamformArgs),
    /// Score reconstruction methods on held-out scenes.
    Evaluate(EvaluateArgs),
    /// Score a trained network on scenes of another array geometry.
    Universality(UniversalityArgs),
    /// Print perfect-reconstruction residuals and Hankel ranks for a plane.
    FrameletCheck(FrameletArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Mask(_) => "mask",
            Command::Complete(_) => "complete",
            Command::Train(_) => "train",
            Command::Interpolate(_) => "interpolate",
            Command::Beamform(_) => "beamform",
            Command::Evaluate(_) => "evaluate",
            Command::Universality(_) => "universality",
            Command::FrameletCheck(_) => "framelet-check",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SceneArgs {
    /// Array geometry preset.
    #[arg(long = "preset", alias = "geometry", value_name = "linear|convex")]
    pub geometry: Option<ArrayKind>,
    /// Scene size preset.
    #[arg(long, value_parser = ["toy", "full"])]
    pub size: Option<String>,
    /// Scene description file; replaces the preset.
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also write the resolved scene description.
    #[arg(long, value_name = "FILE")]
    pub scene_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    /// Take the plane size from this cube; with --masked-out, also zero-fill it.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long)]
    pub rx: Option<usize>,
    #[arg(long)]
    pub sc: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Write the zero-filled input cube here.
    #[arg(long, value_name = "FILE")]
    pub masked_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompleteArgs {
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, short)]
    pub mask: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Hankel window length.
    #[arg(long = "d")]
    pub window: Option<usize>,
    /// Singular values kept per iteration (0 = no cap).
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_name = "receiver|scan-line")]
    pub direction: Option<LiftDirection>,
}

#[derive(Debug, Clone, Args)]
pub struct NetworkArgs {
    /// Network preset.
    #[arg(long, value_name = "full|toy")]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Must agree with the preset.
    #[arg(long)]
    pub conv_layers: Option<usize>,
    /// Feed the mask as a second input channel.
    #[arg(long)]
    pub mask_channel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Geometry of the synthetic training scenes.
    #[arg(long, value_name = "linear|convex")]
    pub geometry: Option<ArrayKind>,
    #[arg(long, value_parser = ["toy", "full"])]
    pub size: Option<String>,
    /// Scenes in the synthetic set (split train/validation/test).
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Depth planes drawn per scene.
    #[arg(long)]
    pub per_scene: Option<usize>,
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, short)]
    pub mask: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BeamformArgs {
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// 8-bit grayscale PNG.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Raw dB matrix (IMG1).
    #[arg(long, value_name = "FILE")]
    pub raw: Option<PathBuf>,
    #[arg(long, value_name = "none|hann")]
    pub apodization: Option<rfinterp::beamform::Apodization>,
    #[arg(long)]
    pub dynamic_range: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub per_scene: Option<usize>,
    /// Report directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct UniversalityArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Geometry the model was trained on.
    #[arg(long, value_name = "linear|convex")]
    pub train_geometry: Option<ArrayKind>,
    /// Geometry of the evaluation scenes.
    #[arg(long, value_name = "linear|convex", default_value = "convex")]
    pub test_geometry: ArrayKind,
    #[arg(long, value_parser = ["toy", "full"])]
    pub size: Option<String>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub per_scene: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FrameletArgs {
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Zero-fill with this mask before checking.
    #[arg(long, short)]
    pub mask: Option<PathBuf>,
    /// Depth index of the plane; defaults to mid-depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Hankel window length.
    #[arg(long = "d")]
    pub window: Option<usize>,
    /// Relative singular-value threshold for the rank.
    #[arg(long, default_value_t = 1e-2)]
    pub rank_tol: f64,
    /// Also write the printed table here.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn size_preset(s: &str) -> config::SizePreset {
    if s == "full" {
        config::SizePreset::Full
    } else {
        config::SizePreset::Toy
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_scene(cfg: &mut PipelineConfig, a: &SceneArgs) {
    set(&mut cfg.scene.geometry, a.geometry);
    set(&mut cfg.scene.size, a.size.as_deref().map(size_preset));
    set_opt(&mut cfg.paths.scene, a.scene.clone());
}

/// Overlays command flags onto `cfg`.
pub fn apply_flags(cfg: &mut PipelineConfig, cli: &Cli) {
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    let p = &mut cfg.paths;
    match &cli.command {
        Command::Simulate(a) => {
            set_opt(&mut p.out, a.out.clone());
            apply_scene(cfg, &a.scene);
        }
        Command::Mask(a) => {
            set_opt(&mut p.input, a.input.clone());
            set_opt(&mut p.out, a.out.clone());
            set(&mut cfg.mask.ratio, a.ratio);
        }
        Command::Complete(a) => {
            set_opt(&mut p.input, a.input.clone());
            set_opt(&mut p.mask, a.mask.clone());
            set_opt(&mut p.out, a.out.clone());
            let c = &mut cfg.completion;
            set(&mut c.window, a.window);
            set(&mut c.rank, a.rank);
            set(&mut c.max_iters, a.iters);
            set(&mut c.tol, a.tol);
            set(&mut c.direction, a.direction);
        }
        Command::Train(a) => {
            set_opt(&mut p.out, a.out.clone());
            let n = &mut cfg.network;
            set(&mut n.preset, a.network.preset);
            set_opt(&mut n.width, a.network.width);
            set_opt(&mut n.conv_layers, a.network.conv_layers);
            if a.network.mask_channel {
                n.input_channels = 2;
            }
            set(&mut cfg.scene.geometry, a.geometry);
            set(&mut cfg.scene.size, a.size.as_deref().map(size_preset));
            set(&mut cfg.scene.count, a.scenes);
            set(&mut cfg.dataset.per_scene, a.per_scene);
            set(&mut cfg.mask.ratio, a.ratio);
            let t = &mut cfg.train;
            set(&mut t.epochs, a.epochs);
            set(&mut t.lr_start, a.lr_start);
            set(&mut t.lr_end, a.lr_end);
            set(&mut t.weight_decay, a.wd);
            set(&mut t.momentum, a.momentum);
            set(&mut t.batch_size, a.batch_size);
        }
        Command::Interpolate(a) => {
            set_opt(&mut p.model, a.model.clone());
            set_opt(&mut p.input, a.input.clone());
            set_opt(&mut p.mask, a.mask.clone());
            set_opt(&mut p.out, a.out.clone());
        }
        Command::Beamform(a) => {
            set_opt(&mut p.input, a.input.clone());
            set_opt(&mut p.out, a.out.clone());
            apply_scene(cfg, &a.scene);
            set(&mut cfg.beamform.apodization, a.apodization);
            set(&mut cfg.beamform.dynamic_range_db, a.dynamic_range);
        }
        Command::Evaluate(a) => {
            set_opt(&mut p.model, a.model.clone());
            set_opt(&mut p.out, a.out.clone());
            apply_scene(cfg, &a.scene);
            set(&mut cfg.scene.count, a.scenes);
            set(&mut cfg.mask.ratio, a.ratio);
            set(&mut cfg.report.methods, a.methods.clone());
            set(&mut cfg.report.frames, a.frames);
            set(&mut cfg.dataset.per_scene, a.per_scene);
        }
        Command::Universality(a) => {
            set_opt(&mut p.model, a.model.clone());
            set_opt(&mut p.out, a.out.clone());
            set(&mut cfg.scene.geometry, a.train_geometry);
            set(&mut cfg.scene.size, a.size.as_deref().map(size_preset));
            set(&mut cfg.report.universality_scenes, a.scenes);
            set(&mut cfg.mask.ratio, a.ratio);
            set(&mut cfg.report.methods, a.methods.clone());
            set(&mut cfg.report.frames, a.frames);
            set(&mut cfg.dataset.per_scene, a.per_scene);
        }
        Command::FrameletCheck(a) => {
            set_opt(&mut p.input, a.input.clone());
            set_opt(&mut p.mask, a.mask.clone());
            set_opt(&mut p.out, a.out.clone());
            set(&mut cfg.completion.window, a.window);
        }
    }
}

/// Parses `argv` and resolves the config. Help and version requests come
/// back as `Err(Ok(text))`.
pub fn parse_args<I, T>(argv: I) -> Result<(Cli, PipelineConfig), Result<String, CliError>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Ok(e.render().to_string()),
        _ => Err(CliError::Usage(e.render().to_string())),
    })?;
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(Err)?,
        None => PipelineConfig::default(),
    };
    apply_flags(&mut cfg, &cli);
    cfg.network.check().map_err(Err)?;
    Ok((cli, cfg))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let (cli, cfg) = match parse_args(argv.clone()) {
        Ok(parsed) => parsed,
        Err(Ok(text)) => {
            print!("{text}");
            return 0;
        }
        Err(Err(e)) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &cfg, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Runs one resolved command, writing artifacts, sidecars and the manifest.
pub fn run(cli: &Cli, cfg: &PipelineConfig, argv: &[String]) -> Result<(), CliError> {
    if !cli.quiet {
        eprintln!("# resolved config ({})\n{}", cli.command.name(), cfg.to_toml());
    }
    if cfg.threads > 0 {
        // a pool already exists when run twice in one process; the cap then stays
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let start = Instant::now();
    let name = cli.command.name();
    let plan = commands::plan(&cli.command, cfg)?;
    let inputs = plan
        .inputs
        .iter()
        .map(|p| manifest::FileHash::of(p))
        .collect::<Result<Vec<_>, _>>()?;
    let fingerprint = manifest::fingerprint(name, cfg, &inputs);
    let skipped = !cli.force && manifest::up_to_date(&plan.outputs, &fingerprint);
    if skipped {
        eprintln!("{name}: outputs are up to date (fingerprint {})", &fingerprint[..12]);
    } else {
        commands::execute(&cli.command, cfg, &plan)?;
        for out in &plan.outputs {
            manifest::write_sidecar(out, name, &fingerprint)?;
        }
    }
    if let Some(primary) = plan.outputs.first() {
        let m = manifest::Manifest {
            command: name.to_string(),
            argv: argv.to_vec(),
            fingerprint,
            config: cfg.clone(),
            inputs,
            outputs: plan
                .outputs
                .iter()
                .map(|p| manifest::FileHash::of(p))
                .collect::<Result<Vec<_>, _>>()?,
            duration_s: start.elapsed().as_secs_f64(),
            skipped,
        };
        manifest::write_json(&manifest::Manifest::path_for(primary), &m)?;
    }
    Ok(())
}
