//! Command-line front end: data generation, training, evaluation,
//! super-resolution, kernel fusion, plotting and model inspection.
//!
//! Failures print one line `error[<kind>]: <message>` on stderr and exit with
//! 2 (usage), 3 (data) or 4 (numeric).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wmsr::data::{read_grid, write_grid, Dataset, PairConfig, PatchPair, SynthParams, DEFAULT_PATCH};
use wmsr::network::{WmsrModel, CHANNEL_SWEEP_REFERENCE, DEPTH_SWEEP_REFERENCE};
use wmsr::numerics::{bicubic_resize, Grid, CATMULL_ROM_A};
use wmsr::objective::{psnr, ssim, MetricRow};
use wmsr::render::{heatmap_png, ERROR_STOPS, FIELD_STOPS};
use wmsr::trainer::{evaluate, Checkpoint, TrainConfig, Trainer};
use wmsr::Error;

/// Environment variable overriding the worker thread count.
const THREADS_VAR: &str = "WMSR_THREADS";

#[derive(Parser)]
#[command(name = "wmsr", version, about = "Wavelet-assisted state-space super-resolution of gridded SST fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic fields and a train/test manifest
    GenData(GenData),
    /// Train a model and write its checkpoints and metric log
    Train(Train),
    /// Score a checkpoint on a dataset split against bicubic upsampling
    Eval(Eval),
    /// Super-resolve one grid file
    Sr(Sr),
    /// Collapse the difference-convolution branches of a checkpoint
    Fuse(Fuse),
    /// Render a grid, and optionally its error against a reference, as PNG
    Plot(Plot),
    /// Report parameter count and cost estimate of a configuration
    Inspect(Inspect),
}

#[derive(Args)]
struct GenData {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Number of fields
    #[arg(long)]
    fields: usize,
    /// Field size as HxW
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Train {
    /// Configuration file of `key = value` lines
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory holding a manifest
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the metric log
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory holding a manifest
    #[arg(long)]
    data: PathBuf,
    /// High-resolution patch side
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    patch: usize,
    /// Which split to score
    #[arg(long, value_parser = ["train", "test"], default_value = "test")]
    split: String,
}

#[derive(Args)]
struct Sr {
    /// Checkpoint file
    #[arg(long)]
    ckpt: PathBuf,
    /// Low-resolution grid file
    #[arg(long = "in")]
    input: PathBuf,
    /// Upscaling factor; must match the checkpoint
    #[arg(long)]
    scale: usize,
    /// Output grid file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Fuse {
    /// Checkpoint with branch kernels
    #[arg(long)]
    ckpt: PathBuf,
    /// Output checkpoint with fused kernels
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Plot {
    /// Grid file to render
    #[arg(long = "in")]
    input: PathBuf,
    /// Reference grid of the same shape; adds an error map
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Output directory for the PNG files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Inspect {
    /// Configuration file of `key = value` lines
    #[arg(long)]
    config: PathBuf,
    /// Low-resolution input size as HxW for the cost estimate
    #[arg(long, value_parser = parse_size, default_value = "48x48")]
    size: (usize, usize),
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((h, w))
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::NonFinite { .. } => (4, "numeric"),
            Error::InvalidArgument { .. } => (2, "usage"),
            _ => (3, "data"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(Failure::usage(first_line(&e.to_string()))),
    };
    if let Err(f) = configure_threads() {
        return report(f);
    }
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sr(a) => sr(a),
        Command::Fuse(a) => fuse(a),
        Command::Plot(a) => plot(a),
        Command::Inspect(a) => inspect(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn first_line(s: &str) -> String {
    let line = s.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
    line.trim().trim_start_matches("error: ").to_string()
}

fn report(f: Failure) -> ExitCode {
    let msg = f.message.replace(['\n', '\r'], " ");
    eprintln!("error[{}]: {msg}", f.kind);
    ExitCode::from(f.code)
}

fn configure_threads() -> CmdResult {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("{THREADS_VAR}: {e}")))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into())
}

fn gen_data(a: GenData) -> CmdResult {
    let (h, w) = a.size;
    let m = wmsr::data::generate_dataset(&a.out, a.fields, h, w, a.seed, &SynthParams::default())?;
    let train = m.paths(wmsr::data::Role::Train).count();
    println!("fields={} train={} test={} dir={}", a.fields, train, a.fields - train, a.out.display());
    Ok(())
}

fn train(a: Train) -> CmdResult {
    let cfg = TrainConfig::parse(&read_text(&a.config)?)?;
    let ds = Dataset::load(&a.data)?;
    let (train, test) = ds.pairs(&pair_config(cfg.model.scale, cfg.patch, cfg.stride, cfg.data_seed))?;
    let mut trainer = Trainer::new(cfg)?;
    let rep = trainer.fit(&train, &test, Some(&a.out))?;
    println!("{}", MetricRow::HEADER);
    for row in &rep.log {
        println!("{row}");
    }
    match rep.best {
        Some((epoch, p)) => println!("best_epoch={epoch} best_psnr_db={p:.6} last_loss={:.6e}", rep.last_loss),
        None => println!("last_loss={:.6e}", rep.last_loss),
    }
    Ok(())
}

fn pair_config(scale: usize, patch: usize, stride: usize, seed: u64) -> PairConfig {
    PairConfig {
        patch,
        stride,
        ..PairConfig::new(scale, seed)
    }
}

fn load_model(path: &Path) -> Result<WmsrModel, Failure> {
    Ok(Checkpoint::load(path)?.to_model()?)
}

fn eval(a: Eval) -> CmdResult {
    let model = load_model(&a.ckpt)?;
    let r = model.config().scale;
    let ds = Dataset::load(&a.data)?;
    let (train, test) = ds.pairs(&pair_config(r, a.patch, a.patch, 0))?;
    let pairs = if a.split == "train" { train } else { test };
    if pairs.is_empty() {
        return Err(Error::Malformed {
            kind: "dataset",
            detail: format!("{} split has no {}-pixel patches", a.split, a.patch),
        }
        .into());
    }
    let (p, s) = evaluate(&model, &pairs)?;
    let (bp, bs) = bicubic_scores(&pairs, r)?;
    println!("scale,split,method,pairs,psnr_db,ssim");
    println!("{r},{},model,{},{p:.6},{s:.6}", a.split, pairs.len());
    println!("{r},{},bicubic,{},{bp:.6},{bs:.6}", a.split, pairs.len());
    Ok(())
}

fn bicubic_scores(pairs: &[PatchPair], r: usize) -> Result<(f64, f64), Failure> {
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let up = bicubic_resize(&pair.lr, r, 1, CATMULL_ROM_A)?;
        p += psnr(&up, &pair.hr, 1.0)?;
        s += ssim(&up, &pair.hr)?;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n))
}

fn sr(a: Sr) -> CmdResult {
    let model = load_model(&a.ckpt)?;
    if a.scale != model.config().scale {
        return Err(Failure::usage(format!(
            "--scale {} does not match the checkpoint scale {}",
            a.scale,
            model.config().scale
        )));
    }
    let file = read_grid(&a.input)?;
    let (lo, hi) = file.range();
    let mut out = model.predict(file.grid())?;
    out.map_inplace(|v| v.clamp(0.0, 1.0));
    write_grid(&a.out, &out, lo, hi)?;
    println!("in={}x{} out={}x{}", file.grid().height(), file.grid().width(), out.height(), out.width());
    Ok(())
}

fn fuse(a: Fuse) -> CmdResult {
    let model = load_model(&a.ckpt)?.fused()?;
    Checkpoint::from_model(&model).save(&a.out)?;
    println!("parameters={}", model.parameter_count());
    Ok(())
}

fn write_png(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn planes(g: &Grid) -> impl Iterator<Item = wmsr::Result<Grid>> + '_ {
    (0..g.channels()).map(move |c| Grid::from_vec([1, 1, g.height(), g.width()], g.plane(0, c).to_vec()))
}

fn plot(a: Plot) -> CmdResult {
    let grid = read_grid(&a.input)?.into_grid();
    fs::create_dir_all(&a.out).map_err(|e| Failure::from(Error::Io {
        path: a.out.clone(),
        source: e,
    }))?;
    for (c, plane) in planes(&grid).enumerate() {
        let name = if grid.channels() == 1 { "field.png".to_string() } else { format!("field_c{c}.png") };
        write_png(&a.out.join(name), &heatmap_png(&plane?, 0.0, 1.0, &FIELD_STOPS)?)?;
    }
    if let Some(path) = &a.reference {
        let reference = read_grid(path)?.into_grid();
        if reference.shape() != grid.shape() {
            return Err(Error::Shape {
                op: "plot",
                detail: format!("reference {:?} vs input {:?}", reference.shape(), grid.shape()),
            }
            .into());
        }
        let err = grid.zip_map(&reference, |x, y| (x - y).abs());
        let peak = err.min_max().1;
        for (c, plane) in planes(&err).enumerate() {
            let name = if grid.channels() == 1 { "error.png".to_string() } else { format!("error_c{c}.png") };
            write_png(&a.out.join(name), &heatmap_png(&plane?, 0.0, peak.max(f64::MIN_POSITIVE), &ERROR_STOPS)?)?;
        }
        println!("max_abs_error={peak:.6e}");
    }
    Ok(())
}

fn inspect(a: Inspect) -> CmdResult {
    let cfg = TrainConfig::parse(&read_text(&a.config)?)?.model;
    let model = WmsrModel::new(cfg.clone())?;
    let (h, w) = a.size;
    let macs = cfg.estimate_macs(h, w);
    println!("channels={} groups={} blocks_per_group={} scale={}", cfg.channels, cfg.groups, cfg.blocks_per_group, cfg.scale);
    println!("parameters={}", model.parameter_count());
    println!("parameters_closed_form={}", cfg.parameter_count(false));
    println!("parameters_fused={}", cfg.parameter_count(true));
    println!("macs_estimate={macs} input={h}x{w}");
    println!("flops_estimate={}", 2 * macs);
    println!("reference channel sweep (not enforced): channels,psnr_db,ssim,flops,params");
    for (c, p, s, f, n) in CHANNEL_SWEEP_REFERENCE {
        let mark = if c == cfg.channels { " <" } else { "" };
        println!("  {c},{p:.2},{s:.4},{f},{n}{mark}");
    }
    println!("reference depth sweep (not enforced): groups,blocks_per_group,psnr_db,ssim,flops,params");
    for (g, m, p, s, f, n) in DEPTH_SWEEP_REFERENCE {
        let mark = if (g, m) == (cfg.groups, cfg.blocks_per_group) && cfg.channels == 64 { " <" } else { "" };
        println!("  {g},{m},{p:.2},{s:.4},{f},{n}{mark}");
    }
    Ok(())
}
