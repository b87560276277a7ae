//! Command-line entry point: `gen-data`, `pretrain`, `finetune`, `eval`
//! and `interp`.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage and
//! configuration errors. `STINT_SEED` overrides the training seed from the
//! config file; `--seed` overrides both.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{s, Array3, Array4, Axis};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, linear_blend_oracle, nearest_endpoint_baseline, network_predictor,
    trivial_copy_baseline, MetricsReport,
};
use crate::net::{build_network, FramePair, InterpolationNetwork, Mode};
use crate::seqdata::{
    generate_synthetic, load_sequence, save_sequence, FrameSequence, NormStats, QuadrupleSample,
    SyntheticKind, SyntheticSpec,
};
use crate::train::{
    finetune_with, load_checkpoint, pretrain_with, save_checkpoint, TrainConfig, TrainOutcome,
};

pub const SEED_ENV: &str = "STINT_SEED";
pub const CHECKPOINT_FILE: &str = "model.dckp";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Parser)]
#[command(name = "dualcycle", version, about = "Temporal interpolation of gridded fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic sequence as an FSEQ file.
    GenData(GenDataArgs),
    /// Self-supervised training on the cycle losses.
    Pretrain(TrainArgs),
    /// Supervised fine-tuning, optionally from a pretrained checkpoint.
    Finetune(FinetuneArgs),
    /// Score a model or a baseline on every quadruple of a sequence.
    Eval(EvalArgs),
    /// Triple the temporal resolution of a sequence.
    Interp(InterpArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: SyntheticKind,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    /// Frame height and width.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn parse_kind(s: &str) -> std::result::Result<SyntheticKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// FSEQ training data; overrides the config's data section.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory, created atomically.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Pretrained checkpoint. Without it training starts from random weights.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub gamma_cc1: Option<f64>,
    #[arg(long)]
    pub gamma_cc2: Option<f64>,
    /// Maximum number of quadruples drawn from the data.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Both targets copy the earlier input.
    Copy,
    /// Pixelwise linear interpolation.
    Blend,
    /// Each target copies its nearest input.
    Nearest,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("predictor").required(true).args(["model", "baseline"]))]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment config; only its eval section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write one PGM grid per quadruple: inputs | prediction | ground truth.
    #[arg(long)]
    pub save_frames: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output FSEQ file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Parse `args` (including the program name) and run the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidSpec(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Finetune(a) => cmd_finetune(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Interp(a) => cmd_interp(&a),
    }
}

fn check_target(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to replace it",
            path.display()
        )));
    }
    Ok(())
}

/// Output directory assembled under a hidden sibling name and renamed into
/// place by [`Staging::commit`]. Dropped uncommitted, it is removed.
struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(dest: &Path, force: bool) -> Result<Self> {
        check_target(dest, force)?;
        let name = dest
            .file_name()
            .ok_or_else(|| Error::Config(format!("invalid output path {}", dest.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        Ok(Staging {
            tmp,
            dest: dest.to_path_buf(),
            committed: false,
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.tmp.join(file)
    }

    fn commit(mut self) -> Result<()> {
        if self.dest.is_dir() {
            fs::remove_dir_all(&self.dest)?;
        } else if self.dest.exists() {
            fs::remove_file(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        kind: a.kind,
        n_frames: a.frames,
        height: a.size,
        width: a.size,
        channels: a.channels,
        noise_std: a.noise_std,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    spec.validate()?;
    check_target(&a.out, a.force)?;
    let seq = generate_synthetic(&spec)?;
    save_sequence(&seq, &a.out)?;
    println!(
        "wrote {} ({} frames, {}x{}, capacity {})",
        a.out.display(),
        seq.n_frames(),
        seq.height(),
        seq.width(),
        seq.capacity
    );
    Ok(())
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Config file, then `STINT_SEED`, then flags. Returns the config and the
/// directory relative data paths resolve against.
fn resolve_config(a: &TrainArgs, pick: fn(&mut ExperimentConfig) -> &mut TrainConfig) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match &a.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = seed_from_env()? {
        cfg.set_seed(seed);
    }
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let t = pick(&mut cfg);
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.lr0 = lr;
    }
    if let Some(d) = &a.data {
        cfg.data.path = Some(std::path::absolute(d)?);
        cfg.data.spec = None;
    }
    Ok((cfg, base))
}

fn print_row(columns: &[&str], row: &[f64]) {
    let cells: Vec<String> = columns
        .iter()
        .zip(row)
        .map(|(c, v)| if *c == "epoch" { format!("{c}={}", *v as u64) } else { format!("{c}={v:.6}") })
        .collect();
    println!("{}", cells.join(" "));
    let _ = std::io::stdout().flush();
}

fn write_training_outputs(staging: &Staging, cfg: &ExperimentConfig, out: &TrainOutcome) -> Result<()> {
    save_checkpoint(&out.checkpoint, staging.path(CHECKPOINT_FILE))?;
    out.log.write_csv(staging.path(LOG_FILE))?;
    fs::write(staging.path(RESOLVED_CONFIG_FILE), cfg.to_toml_string())?;
    Ok(())
}

pub fn cmd_pretrain(a: &TrainArgs) -> Result<()> {
    let (cfg, base) = resolve_config(a, |c| &mut c.pretrain)?;
    cfg.validate()?;
    check_target(&a.out, a.force)?;
    let data = cfg.data.load(&base)?;
    let mut net = build_network::<f32>(&cfg.net, cfg.pretrain.seed)?;
    let staging = Staging::new(&a.out, a.force)?;
    let columns = crate::train::PRETRAIN_COLUMNS;
    let outcome = pretrain_with(&mut net, &[data], &cfg.pretrain, |r| print_row(&columns, r))?;
    write_training_outputs(&staging, &cfg, &outcome)?;
    staging.commit()?;
    println!(
        "best epoch {} (val_combined {:.6}); wrote {}",
        outcome.best_epoch,
        outcome.best_val,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_finetune(a: &FinetuneArgs) -> Result<()> {
    let (mut cfg, base) = resolve_config(&a.train, |c| &mut c.finetune)?;
    if let Some(g) = a.gamma_cc1 {
        cfg.finetune.loss_weights.gamma_cc1 = g;
    }
    if let Some(g) = a.gamma_cc2 {
        cfg.finetune.loss_weights.gamma_cc2 = g;
    }
    if a.budget.is_some() {
        cfg.finetune.sample_budget = a.budget;
    }
    cfg.validate()?;
    check_target(&a.train.out, a.train.force)?;
    let start = match &a.from {
        Some(p) => Some(load_checkpoint(p)?),
        None => {
            eprintln!("warning: no --from checkpoint given; fine-tuning from random initialization");
            None
        }
    };
    let data = cfg.data.load(&base)?;
    let mut net = build_network::<f32>(&cfg.net, cfg.finetune.seed)?;
    if let Some(ckpt) = &start {
        ckpt.restore_into(&mut net)?;
    }
    let staging = Staging::new(&a.train.out, a.train.force)?;
    let columns = crate::train::FINETUNE_COLUMNS;
    let outcome = finetune_with(&mut net, None, &[data], &cfg.finetune, |r| print_row(&columns, r))?;
    write_training_outputs(&staging, &cfg, &outcome)?;
    staging.commit()?;
    println!(
        "best epoch {} (val_total {:.6}); wrote {}",
        outcome.best_epoch,
        outcome.best_val,
        a.train.out.display()
    );
    Ok(())
}

fn eval_model(path: &Path) -> Result<InterpolationNetwork<f32>> {
    let mut net = load_checkpoint(path)?.to_network()?;
    net.set_mode(Mode::Eval);
    Ok(net)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if a.save_frames {
        cfg.eval.save_frames = true;
    }
    cfg.data.path = Some(std::path::absolute(&a.data)?);
    cfg.data.spec = None;
    check_target(&a.out, a.force)?;
    let seq = load_sequence(&a.data)?;
    let data_range = cfg.eval.data_range.resolve(&seq);
    let capacity = seq.capacity as f64;
    let net = a.model.as_deref().map(eval_model).transpose()?;
    let mut predict: Box<dyn FnMut(&QuadrupleSample) -> Result<FramePair>> = match (&net, a.baseline) {
        (Some(net), _) => Box::new(network_predictor(net, NormStats::of(&seq.frames))),
        (None, Some(Baseline::Copy)) => Box::new(|q| Ok(trivial_copy_baseline(q))),
        (None, Some(Baseline::Nearest)) => Box::new(|q| Ok(nearest_endpoint_baseline(q))),
        (None, Some(Baseline::Blend)) => Box::new(|q| linear_blend_oracle(&q.in_a, &q.in_b)),
        (None, None) => return Err(Error::Config("pass --model or --baseline".into())),
    };
    let mut kept: Vec<(QuadrupleSample, FramePair)> = Vec::new();
    let save = cfg.eval.save_frames;
    let report = evaluate(
        |q| {
            let p = predict(q)?;
            if save {
                kept.push((q.clone(), p.clone()));
            }
            Ok(p)
        },
        &seq,
        data_range,
        capacity,
    )?;
    let model_id = match (&a.model, a.baseline) {
        (Some(p), _) => p.display().to_string(),
        (None, Some(b)) => format!("baseline:{}", b.to_possible_value().expect("named").get_name()),
        (None, None) => unreachable!(),
    };
    let report = report.named(model_id, a.data.display().to_string());

    let staging = Staging::new(&a.out, a.force)?;
    report.write_csv(staging.path(REPORT_FILE))?;
    fs::write(staging.path(RESOLVED_CONFIG_FILE), cfg.to_toml_string())?;
    if save {
        let dir = staging.path(FRAMES_DIR);
        fs::create_dir(&dir)?;
        let lo = seq.frames.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = seq.frames.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for (q, p) in &kept {
            let tiles = [&q.in_a, &q.in_b, &p.f1, &p.f2, &q.gt_1, &q.gt_2];
            fs::write(
                dir.join(format!("sample_{:04}.pgm", q.index)),
                pgm_grid(&tiles, lo, hi),
            )?;
        }
    }
    staging.commit()?;
    print_summary(&report);
    Ok(())
}

fn print_summary(r: &MetricsReport) {
    println!(
        "{} on {}: {} quadruples, PSNR {:.4} dB, SSIM {:.4}, SI {:.6}",
        r.model_id, r.dataset_id, r.n_samples, r.mean_psnr, r.mean_ssim, r.mean_scatter_index
    );
}

/// First channel of each tile side by side, separated by one black
/// column, scaled from `[lo, hi]` to 8-bit grayscale (binary PGM).
pub fn pgm_grid(tiles: &[&Array3<f32>], lo: f32, hi: f32) -> Vec<u8> {
    let (_, h, w) = tiles[0].dim();
    let width = tiles.len() * (w + 1) - 1;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{width} {h}\n255\n").into_bytes();
    for i in 0..h {
        for (k, t) in tiles.iter().enumerate() {
            if k > 0 {
                out.push(0);
            }
            for j in 0..w {
                let v = ((t[[0, i, j]] - lo) / span * 255.0).round().clamp(0.0, 255.0);
                out.push(v as u8);
            }
        }
    }
    out
}

/// Insert two predicted frames into every gap: the result has `3N - 2`
/// frames with the originals at indices `0, 3, 6, …`, bit for bit.
/// Inputs are normalized with the sequence's own statistics, as in
/// training.
pub fn interpolate_sequence(net: &InterpolationNetwork<f32>, seq: &FrameSequence) -> Result<FrameSequence> {
    let n = seq.n_frames();
    if n < 2 {
        return Err(Error::EmptyData(format!(
            "interpolation needs at least 2 frames, got {n}"
        )));
    }
    let stats = NormStats::of(&seq.frames);
    let (_, c, h, w) = seq.frames.dim();
    let mut frames = Array4::<f32>::zeros((3 * n - 2, c, h, w));
    for k in 0..n {
        frames.index_axis_mut(Axis(0), 3 * k).assign(&seq.frame(k));
    }
    for k in 0..n - 1 {
        let mut pair = FramePair {
            f1: seq.frame(k).to_owned(),
            f2: seq.frame(k + 1).to_owned(),
        };
        stats.apply(pair.f1.view_mut());
        stats.apply(pair.f2.view_mut());
        let mut out = net.interpolate(&pair)?;
        stats.invert(out.f1.view_mut());
        stats.invert(out.f2.view_mut());
        frames.slice_mut(s![3 * k + 1, .., .., ..]).assign(&out.f1);
        frames.slice_mut(s![3 * k + 2, .., .., ..]).assign(&out.f2);
    }
    let mut result = FrameSequence::new(frames, seq.capacity, format!("{}/3", seq.dt_label))?;
    result.seed = seq.seed;
    Ok(result)
}

pub fn cmd_interp(a: &InterpArgs) -> Result<()> {
    check_target(&a.out, a.force)?;
    let net = eval_model(&a.model)?;
    let seq = load_sequence(&a.data)?;
    let out = interpolate_sequence(&net, &seq)?;
    save_sequence(&out, &a.out)?;
    println!("wrote {} ({} -> {} frames)", a.out.display(), seq.n_frames(), out.n_frames());
    Ok(())
}
