//! Single-binary front end: dataset synthesis, training runs, inference,
//! scoring, and diagnostic dumps, each reproducible from its seed and flags.
//!
//! Configuration layering, lowest to highest: preset (`--preset`) or config
//! file (`--config`, mutually exclusive with the preset), then individual
//! flags. A training run directory always receives the fully resolved
//! config snapshot plus a manifest describing the inputs, so any run can be
//! re-created or resumed from its own artifacts.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::{
    dump_intermediates, infer_variant, metric_report, self_ensemble_infer, EvalError, EvalMode,
};
use crate::imaging::{
    load_dataset, predetermined_downscale, synth_degrade, BlurKind, DatasetBuilder,
    DegradationSpec, Image,
};
use crate::networks::{BundleConfig, NetworkBundle};
use crate::training::{
    checkpoint_load, run_training, TrainConfig, TrainError, TrainState, Variant,
};

/// Directory used when `--out` is omitted; each command appends its own
/// default leaf name.
pub const OUT_ROOT_ENV: &str = "PSEUDOSR_OUT_ROOT";

/// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Everything a run directory needs to identify its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// The `--config` file the run was launched with, if any.
    pub config: Option<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub version: String,
}

/// Resolved settings for one experiment: network architecture plus the
/// training schedule. Serialized into every run directory as `config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub bundle: BundleConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { bundle: BundleConfig::paper(2), train: TrainConfig::paper(2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// CPU-sized networks and schedule for smoke runs and tests.
    Desk,
    /// Full-scale architecture and 300k-iteration schedule.
    Paper,
}

impl Preset {
    fn config(self) -> RunConfig {
        match self {
            Preset::Desk => {
                RunConfig { bundle: BundleConfig::desk(2), train: TrainConfig::desk() }
            }
            Preset::Paper => RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[clap(rename_all = "snake_case")]
enum VariantArg {
    Full,
    NoDHr,
    TrainOnClean,
    TrainOnDegraded,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoDHr => Variant::NoDHr,
            VariantArg::TrainOnClean => Variant::TrainOnClean,
            VariantArg::TrainOnDegraded => Variant::TrainOnDegraded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Score the rasters as loaded.
    Continuous,
    /// Snap both rasters to the 8-bit grid before scoring.
    Quantized,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> EvalMode {
        match m {
            ModeArg::Continuous => EvalMode::Continuous,
            ModeArg::Quantized => EvalMode::Quantized,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "pseudosr",
    version,
    about = "Unpaired super-resolution: correction + degradation + SR networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build an unpaired dataset: hr/ holds the sources, lr/ holds degraded
    /// downscales with per-image degradation parameters.
    MakeDataset(MakeDatasetArgs),
    /// Train a bundle; writes checkpoints, a JSON-lines loss log, the
    /// resolved config snapshot, and a run manifest.
    Train(TrainArgs),
    /// Super-resolve images with a trained checkpoint.
    Infer(InferArgs),
    /// Score result images against references (PSNR/SSIM, JSON report).
    Eval(EvalArgs),
    /// Write every intermediate raster of both translation chains as PNGs.
    DumpIntermediates(DumpArgs),
}

#[derive(Args, Debug)]
struct MakeDatasetArgs {
    /// Directory of source HR PNGs.
    #[arg(long)]
    source: PathBuf,
    /// Output dataset directory [default: $PSEUDOSR_OUT_ROOT/dataset].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Downscale factor between hr/ and lr/.
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Degraded LR images generated per HR source.
    #[arg(long, default_value_t = 4)]
    multiplicity: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Upper bound of the per-image Gaussian blur sigma; 0 disables blur.
    #[arg(long, default_value_t = 2.0)]
    blur_sigma: f64,
    /// Upper bound of the per-image additive noise sigma; 0 disables noise.
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    /// Upper bound of the per-image sub-pixel shift magnitude per axis.
    #[arg(long, default_value_t = 0.0)]
    shift_max: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory produced by make-dataset (or the same layout).
    #[arg(long)]
    data: PathBuf,
    /// Run directory [default: $PSEUDOSR_OUT_ROOT/run].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resolved config TOML to start from instead of a preset.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Checkpoint to resume from; the config must describe its architecture.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_patch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Resolved config TOML describing the checkpoint's architecture.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory [default: $PSEUDOSR_OUT_ROOT/sr].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Average the 8 dihedral-transformed passes instead of a single pass.
    #[arg(long)]
    ensemble: bool,
    /// Input PNGs; each `name.png` produces `name_sr.png`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of images to score.
    #[arg(long)]
    results: PathBuf,
    /// Directory of ground-truth images with matching file names.
    #[arg(long)]
    references: PathBuf,
    /// Report file [default: $PSEUDOSR_OUT_ROOT/report.json].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Continuous)]
    mode: ModeArg,
    /// Pixels to trim from every border before scoring.
    #[arg(long, default_value_t = 0)]
    crop: usize,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Checkpoint to load; omitted = a freshly initialized bundle.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A real degraded LR image (x domain).
    #[arg(long)]
    x: PathBuf,
    /// A clean HR image (y domain); dims must divide by the scale.
    #[arg(long)]
    y: PathBuf,
    /// Output directory [default: $PSEUDOSR_OUT_ROOT/dump].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the degradation net's noise draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parse and execute one invocation. Library-level so tests can drive the
/// full command surface in-process; `main` only maps the error to an exit
/// code.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(usage(e.to_string())),
    };
    match cli.cmd {
        Cmd::MakeDataset(a) => cmd_make_dataset(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::DumpIntermediates(a) => cmd_dump(a),
    }
}

fn resolve_out(flag: Option<PathBuf>, leaf: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(leaf)),
        None => Err(usage(format!("--out not given and {OUT_ROOT_ENV} is unset"))),
    }
}

fn resolve_config(flag: &Option<PathBuf>, preset: Preset) -> Result<RunConfig, CliError> {
    match flag {
        None => Ok(preset.config()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
        }
    }
}

fn load_input(path: &Path) -> Result<Image, CliError> {
    Image::load_png(path).map_err(|e| usage(format!("input {}: {e}", path.display())))
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    if !dir.is_dir() {
        return Err(usage(format!("directory {} does not exist", dir.display())));
    }
    let mut names = BTreeSet::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| usage(format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn save_output(img: &Image, path: &Path) -> Result<(), CliError> {
    img.save_png(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_make_dataset(a: MakeDatasetArgs) -> Result<(), CliError> {
    if a.multiplicity == 0 {
        return Err(usage("--multiplicity must be at least 1"));
    }
    if !(a.blur_sigma >= 0.0 && a.noise_sigma >= 0.0 && a.shift_max >= 0.0) {
        return Err(usage("degradation bounds must be non-negative"));
    }
    let sources = png_names(&a.source)
        .map_err(|_| usage(format!("source directory {} does not exist", a.source.display())))?;
    if sources.is_empty() {
        return Err(usage(format!("source directory {} has no PNGs", a.source.display())));
    }
    let out = resolve_out(a.out, "dataset")?;

    let mut builder =
        DatasetBuilder::new(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut specs: Vec<(String, DegradationSpec)> = Vec::new();
    let mut n_lr = 0usize;
    for name in &sources {
        let hr = load_input(&a.source.join(name))?;
        let stem = name.trim_end_matches(".png");
        builder.add_hr(stem, &hr).map_err(|e| runtime(e.to_string()))?;
        let down = predetermined_downscale(&hr, a.scale)
            .map_err(|e| usage(format!("{name}: {e}")))?;
        for k in 0..a.multiplicity {
            // One spec per output image: parameters are constant within an
            // image and drawn fresh for the next one.
            let blur = if a.blur_sigma == 0.0 {
                BlurKind::None
            } else {
                BlurKind::Gaussian { sigma: rng.random_range(0.5..=1.0) * a.blur_sigma }
            };
            let noise_sigma = if a.noise_sigma == 0.0 {
                0.0
            } else {
                rng.random_range(0.5..=1.0) * a.noise_sigma
            };
            let shift = if a.shift_max == 0.0 {
                (0.0, 0.0)
            } else {
                (
                    rng.random_range(-a.shift_max..=a.shift_max),
                    rng.random_range(-a.shift_max..=a.shift_max),
                )
            };
            let spec = DegradationSpec { blur, noise_sigma, shift, seed: rng.random() };
            let lr = synth_degrade(&down, &spec).map_err(|e| runtime(format!("{name}: {e}")))?;
            let lr_name = format!("{stem}_d{k}");
            builder.add_lr(&lr_name, &lr).map_err(|e| runtime(e.to_string()))?;
            specs.push((format!("{lr_name}.png"), spec));
            n_lr += 1;
        }
    }
    builder.finish().map_err(|e| runtime(e.to_string()))?;
    let specs_path = out.join("degradations.json");
    let body = serde_json::to_string_pretty(&specs).expect("specs serialize");
    std::fs::write(&specs_path, body)
        .map_err(|e| runtime(format!("{}: {e}", specs_path.display())))?;
    println!("dataset: {} ({} hr, {} lr)", out.display(), sources.len(), n_lr);
    Ok(())
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) => usage(e.to_string()),
        _ => runtime(e.to_string()),
    }
}

fn set_scale(cfg: &mut RunConfig, scale: usize) {
    cfg.train.scale = scale;
    cfg.bundle.scale = scale;
    cfg.bundle.correction.scale = scale;
    cfg.bundle.sr.scale = scale;
    cfg.bundle.degradation.scale = scale;
    cfg.bundle.discriminator.scale = scale;
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&a.config, a.preset)?;
    if let Some(v) = a.iters {
        cfg.train.total_iters = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = a.lr_patch {
        cfg.train.lr_patch = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.scale {
        set_scale(&mut cfg, v);
    }
    if let Some(v) = a.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    if let Some(v) = a.variant {
        cfg.train.variant = v.into();
    }
    cfg.bundle.validate().map_err(|e| usage(e.to_string()))?;
    cfg.train.validate().map_err(train_err)?;
    if cfg.bundle.scale != cfg.train.scale {
        return Err(usage(format!(
            "bundle scale {} and train scale {} disagree",
            cfg.bundle.scale, cfg.train.scale
        )));
    }

    if !a.data.is_dir() {
        return Err(usage(format!("dataset directory {} does not exist", a.data.display())));
    }
    let ds = load_dataset(&a.data).map_err(|e| usage(e.to_string()))?;
    if ds.lr.is_empty() || ds.hr.is_empty() {
        return Err(usage(format!(
            "dataset {} needs images in both lr/ and hr/ ({} lr, {} hr)",
            a.data.display(),
            ds.lr.len(),
            ds.hr.len()
        )));
    }

    let (mut nets, mut state) = match &a.resume {
        None => (
            NetworkBundle::<f64>::build(&cfg.bundle, cfg.train.seed)
                .map_err(|e| usage(e.to_string()))?,
            TrainState::new(cfg.train.seed),
        ),
        Some(ckpt) => checkpoint_load::<f64>(ckpt, &cfg.bundle)
            .map_err(|e| usage(format!("resume {}: {e}", ckpt.display())))?,
    };

    let out = resolve_out(a.out, "run")?;
    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let snapshot = toml::to_string_pretty(&cfg).expect("config serializes");
    let snap_path = out.join("config.toml");
    std::fs::write(&snap_path, snapshot)
        .map_err(|e| runtime(format!("{}: {e}", snap_path.display())))?;
    let manifest = RunManifest {
        config: a.config.clone(),
        datasets: vec![a.data.clone()],
        out_dir: out.clone(),
        seed: cfg.train.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mani_path = out.join("manifest.json");
    std::fs::write(&mani_path, serde_json::to_string_pretty(&manifest).expect("manifest"))
        .map_err(|e| runtime(format!("{}: {e}", mani_path.display())))?;

    let artifacts = run_training(&mut nets, &cfg.train, &ds.lr, &ds.hr, &out, &mut state)
        .map_err(train_err)?;
    println!("run: {}", out.display());
    println!("final checkpoint: {}", artifacts.final_checkpoint.display());
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.config, a.preset)?;
    let (nets, _state) = checkpoint_load::<f64>(&a.checkpoint, &cfg.bundle)
        .map_err(|e| usage(format!("checkpoint {}: {e}", a.checkpoint.display())))?;
    let out = resolve_out(a.out, "sr")?;
    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    for input in &a.inputs {
        let img = load_input(input)?;
        let sr = if a.ensemble {
            self_ensemble_infer(&nets, &img)
        } else {
            infer_variant(&nets, cfg.train.variant, &img)
        }
        .map_err(|e| runtime(format!("{}: {e}", input.display())))?;
        let dest = out.join(format!("{}_sr.png", stem_of(input)));
        save_output(&sr, &dest)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let res_names = png_names(&a.results)?;
    let ref_names = png_names(&a.references)?;
    if res_names != ref_names {
        let only_res: Vec<_> = res_names.difference(&ref_names).cloned().collect();
        let only_ref: Vec<_> = ref_names.difference(&res_names).cloned().collect();
        return Err(usage(format!(
            "unmatched images — results only: {only_res:?}; references only: {only_ref:?}"
        )));
    }
    if res_names.is_empty() {
        return Err(usage(format!("{}: no PNGs to score", a.results.display())));
    }
    let mut pairs = Vec::new();
    for name in &res_names {
        let result = load_input(&a.results.join(name))?;
        let reference = load_input(&a.references.join(name))?;
        pairs.push((name.clone(), result, reference));
    }
    let report = metric_report(&pairs, a.mode.into(), a.crop).map_err(|e| match e {
        EvalError::Invalid(_) => usage(e.to_string()),
        _ => runtime(e.to_string()),
    })?;
    let out = resolve_out(a.out, "report.json")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    let body = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&out, body).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    println!("psnr {:.4} dB  ssim {:.6}  -> {}", report.psnr_db, report.ssim, out.display());
    Ok(())
}

fn cmd_dump(a: DumpArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.config, a.preset)?;
    let mut nets = match &a.checkpoint {
        Some(ckpt) => {
            checkpoint_load::<f64>(ckpt, &cfg.bundle)
                .map_err(|e| usage(format!("checkpoint {}: {e}", ckpt.display())))?
                .0
        }
        None => NetworkBundle::<f64>::build(&cfg.bundle, a.seed)
            .map_err(|e| usage(e.to_string()))?,
    };
    let x = load_input(&a.x)?;
    let y = load_input(&a.y)?;
    let out = resolve_out(a.out, "dump")?;
    let paths = dump_intermediates(&mut nets, &x, &y, &out, a.seed).map_err(|e| match e {
        EvalError::Invalid(_) => usage(e.to_string()),
        _ => runtime(e.to_string()),
    })?;
    println!("dumped {} intermediates to {}", paths.len(), out.display());
    Ok(())
}
