//! `adatok` command line. Everything lives here so the commands can be
//! driven in-process by tests; the binary only forwards `std::env::args`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{grid_pool_shape, retention_error, DroppedTarget, Strategy};
use crate::cost_model::{
    bandwidth_table, compute_cost, image_bytes, reduction_factor, token_bytes, BandwidthEntry, BandwidthRow,
    DecoderConfig,
};
use crate::error::Error;
use crate::fixtures::{self, load_features_with_priors, load_masks};
use crate::mask_pipeline::{run_pipeline, GridPromptConfig, MaskSet};
use crate::object_merge::{merge, merge_fast, FeatureGrid, MergeOptions, UpsampleMode};
use crate::tensor_io::{read_sidecar, read_tensor, DType};
use crate::token_wire::{self, SendOptions, Server};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;
pub const EXIT_EMPTY: i32 = 5;

/// Caps the worker threads used by merging.
pub const THREADS_ENV: &str = "ADATOK_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "adatok",
    version,
    about = "Object-level adaptive visual-token compression toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WireDtype {
    F16,
    F32,
}

impl From<WireDtype> for DType {
    fn from(d: WireDtype) -> Self {
        match d {
            WireDtype::F16 => DType::F16,
            WireDtype::F32 => DType::F32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Upsample {
    Nearest,
    Bilinear,
}

impl From<Upsample> for UpsampleMode {
    fn from(u: Upsample) -> Self {
        match u {
            Upsample::Nearest => UpsampleMode::Nearest,
            Upsample::Bilinear => UpsampleMode::Bilinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dropped {
    Zero,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub height: u64,
    pub width: u64,
}

fn parse_dims(s: &str) -> Result<GridDims, String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("{v:?}: {e}"));
    let dims = GridDims {
        height: parse(h)?,
        width: parse(w)?,
    };
    if dims.height == 0 || dims.width == 0 {
        return Err("dims must be positive".into());
    }
    Ok(dims)
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct RunConfig {
    /// Feature grid, rank-3 ATSR (H_p, W_p, d)
    #[arg(long)]
    pub features: PathBuf,
    /// Candidate masks, rank-3 ATSR u8 (num_masks, H, W)
    #[arg(long)]
    pub masks: PathBuf,
    /// Confidence sidecar for the masks
    #[arg(long)]
    pub scores: PathBuf,
    /// Prompt grid points per side
    #[arg(short = 'p', long = "points-per-side", default_value_t = 32)]
    pub points_per_side: u32,
    /// Minimum mask confidence kept (inclusive)
    #[arg(long, default_value_t = 0.8)]
    pub sigma: f32,
    /// IoU above which a mask is dropped as a duplicate
    #[arg(long, default_value_t = 0.9)]
    pub iou: f64,
    #[arg(long, value_enum, default_value_t = Upsample::Nearest)]
    #[serde(skip)]
    pub upsample: Upsample,
    /// Emit one extra token for pixels no mask covers
    #[arg(long)]
    pub residual: bool,
    /// Output TOK file; a `.manifest.json` is written next to it
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = WireDtype::F16)]
    pub dtype: WireDtype,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter masks and merge features into one token per object
    Merge(RunConfig),
    /// Bandwidth table for raw images and f16 token streams
    Table5 {
        #[arg(long)]
        csv: bool,
    },
    /// Normalised prefill cost and compression benefit
    Cost {
        #[arg(long)]
        layers: u32,
        /// Layer at which compression takes effect
        #[arg(long)]
        at: u32,
        #[arg(long, conflicts_with_all = ["tokens", "grid"])]
        ratio: Option<f64>,
        /// Compressed token count; needs --grid
        #[arg(long, requires = "grid")]
        tokens: Option<u64>,
        /// Patch grid, e.g. 24x24
        #[arg(long, value_parser = parse_dims, requires = "tokens")]
        grid: Option<GridDims>,
        /// Pre-compression token count (defaults to the grid size, else 576)
        #[arg(long)]
        pre_tokens: Option<u64>,
        /// Also print a FLOP estimate with this cost per token pair
        #[arg(long)]
        flops_per_pair: Option<f64>,
        #[arg(long)]
        csv: bool,
    },
    /// Bytes and bandwidth for one image versus its token stream
    Bandwidth {
        #[arg(long, value_parser = parse_dims, default_value = "640x480")]
        image: GridDims,
        #[arg(long, default_value_t = 59)]
        tokens: u64,
        #[arg(long, default_value_t = 1024)]
        dim: u64,
        #[arg(long, value_enum, default_value_t = WireDtype::F16)]
        dtype: WireDtype,
        #[arg(long)]
        csv: bool,
    },
    /// Retention error of object merging versus patch-level baselines
    Compare {
        /// Directory of fixture subdirectories
        #[arg(long)]
        fixtures: PathBuf,
        /// Comma-separated token budgets for the baselines
        #[arg(long, value_delimiter = ',', default_value = "3,5,12")]
        budgets: Vec<usize>,
        #[arg(short = 'p', long = "points-per-side", default_value_t = 32)]
        points_per_side: u32,
        #[arg(long, default_value_t = 0.8)]
        sigma: f32,
        #[arg(long, default_value_t = 0.9)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = Dropped::Zero)]
        dropped: Dropped,
    },
    /// Send a TOK file to a server
    Send {
        #[arg(long)]
        host: String,
        #[arg(long)]
        port: u16,
        file: PathBuf,
        /// Pace the upload (1 KB = 1024 bytes)
        #[arg(long)]
        throttle_kbps: Option<u64>,
        #[arg(long, default_value_t = 10)]
        timeout_secs: u64,
    },
    /// Receive TOK frames and store them by content hash
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "0.0.0.0")]
        bind: String,
    },
    /// Write the synthetic fixture set
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format(_)
        | Error::Truncation { .. }
        | Error::UnsupportedDtype(_)
        | Error::Io(_)
        | Error::Frame { .. }
        | Error::Encoding(_) => EXIT_FORMAT,
        Error::Transport(_) | Error::AckTimeout(_) | Error::Startup(_) => EXIT_TRANSPORT,
        Error::NoMasksSurvived => EXIT_EMPTY,
        Error::InvalidArgument(_)
        | Error::Shape(_)
        | Error::EmptyMask { .. }
        | Error::UnsupportedMode(_)
        | Error::MissingPrior(_) => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.kind_name());
            exit_code(&e)
        }
    }
}

fn threads_from_env() -> Option<NonZeroUsize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok()
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    match cmd {
        Command::Merge(cfg) => cmd_merge(&cfg, out, err),
        Command::Table5 { csv } => {
            out.write_all(cmd_table5(csv).as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Cost {
            layers,
            at,
            ratio,
            tokens,
            grid,
            pre_tokens,
            flops_per_pair,
            csv,
        } => {
            let (r, default_pre) = match (ratio, tokens, grid) {
                (Some(r), _, _) => (r, 576),
                (None, Some(n), Some(g)) => {
                    let patches = g.height * g.width;
                    (n as f64 / patches as f64, patches)
                }
                _ => return Err(Error::InvalidArgument("give --ratio, or --tokens with --grid".into())),
            };
            let cfg = DecoderConfig::new(layers, at, pre_tokens.unwrap_or(default_pre))?;
            out.write_all(cmd_cost(&cfg, r, flops_per_pair, csv)?.as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Bandwidth {
            image,
            tokens,
            dim,
            dtype,
            csv,
        } => {
            if tokens == 0 || dim == 0 {
                return Err(Error::InvalidArgument("tokens and dim must be positive".into()));
            }
            out.write_all(cmd_bandwidth(image, tokens, dim, dtype.into(), csv).as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Compare {
            fixtures,
            budgets,
            points_per_side,
            sigma,
            iou,
            dropped,
        } => {
            let cfg = GridPromptConfig {
                points_per_side,
                sigma,
                iou_dedup_threshold: iou,
            };
            cfg.validate()?;
            let dropped = match dropped {
                Dropped::Zero => DroppedTarget::Zero,
                Dropped::Mean => DroppedTarget::GlobalMean,
            };
            let csv = cmd_compare(&fixtures, &budgets, &cfg, dropped, err)?;
            out.write_all(csv.as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Send {
            host,
            port,
            file,
            throttle_kbps,
            timeout_secs,
        } => {
            let frame = fs::read(&file)?;
            let (cts, dtype) = token_wire::unpack_with_dtype(&frame)?;
            let opts = SendOptions {
                throttle_bytes_per_sec: throttle_kbps.map(|k| k * 1024),
                ack_timeout: Duration::from_secs(timeout_secs),
                ..SendOptions::default()
            };
            let report = token_wire::send((host.as_str(), port), &frame, &opts)?;
            let payload = cts.tokens.len() * dtype.size();
            writeln!(out, "sent={} payload={payload} ack=ok", report.bytes_sent)?;
            // timing varies run to run, so it stays off stdout
            writeln!(
                err,
                "elapsed={:.3}s throughput={:.2} KB/s",
                report.elapsed.as_secs_f64(),
                report.throughput_bytes_per_sec() / 1024.0
            )?;
            Ok(EXIT_OK)
        }
        Command::Serve { port, out: dir, bind } => {
            let server = Server::bind((bind.as_str(), port), &dir)?;
            writeln!(err, "listening on {} -> {}", server.local_addr(), dir.display())?;
            server.run()?;
            Ok(EXIT_OK)
        }
        Command::Fixtures { out: dir } => {
            for fx in fixtures::fixture_set() {
                let sub = dir.join(&fx.name);
                fixtures::write_fixture(&fx, &sub)?;
                writeln!(
                    out,
                    "{} objects={} grid={}x{}x{}",
                    fx.name,
                    fx.object_count(),
                    fx.features.grid_height(),
                    fx.features.grid_width(),
                    fx.features.dim()
                )?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn file_sha256(path: &Path) -> Result<String, Error> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    tool_version: &'static str,
    #[serde(flatten)]
    config: &'a RunConfig,
    upsample: String,
    inputs_sha256: [String; 3],
    tokens: usize,
    output_sha256: String,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_merge(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    let prompt = GridPromptConfig {
        points_per_side: cfg.points_per_side,
        sigma: cfg.sigma,
        iou_dedup_threshold: cfg.iou,
    };
    prompt.validate()?;
    let fg = FeatureGrid::from_tensor(&read_tensor(&cfg.features)?)?;
    let candidates = MaskSet::from_tensor(&read_tensor(&cfg.masks)?, &read_sidecar(&cfg.scores)?)?;
    let ms = run_pipeline(&candidates, &prompt)?;

    if ms.is_empty() {
        writeln!(out, "k=0 r={:.6} bytes=0", 0.0)?;
        let e = Error::NoMasksSurvived;
        writeln!(err, "warning[{}]: {e} ({} candidates)", e.kind_name(), candidates.len())?;
        return Ok(EXIT_EMPTY);
    }

    let opts = MergeOptions {
        mode: cfg.upsample.into(),
        residual_token: cfg.residual,
        threads: threads_from_env(),
    };
    let cts = match opts.mode {
        UpsampleMode::Nearest => merge_fast(&fg, &ms, &opts)?,
        UpsampleMode::Bilinear => merge(&fg, &ms, &opts)?,
    };
    let dtype = DType::from(cfg.dtype);
    let frame = token_wire::pack(&cts, dtype)?;
    fs::write(&cfg.out, &frame)?;

    let manifest = Manifest {
        command: "merge",
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        upsample: UpsampleMode::from(cfg.upsample).to_string(),
        inputs_sha256: [
            file_sha256(&cfg.features)?,
            file_sha256(&cfg.masks)?,
            file_sha256(&cfg.scores)?,
        ],
        tokens: cts.len(),
        output_sha256: hex::encode(Sha256::digest(&frame)),
    };
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Encoding(e.to_string()))?;
    json.push('\n');
    fs::write(manifest_path(&cfg.out), json)?;

    let payload = cts.tokens.len() * dtype.size();
    writeln!(out, "k={} r={:.6} bytes={payload}", cts.len(), cts.compression_ratio())?;
    Ok(EXIT_OK)
}

pub fn cmd_table5(csv: bool) -> String {
    let rows = bandwidth_table();
    let (images, tokens) = rows.split_at(rows.len() / 2);
    let mut s = String::new();
    if csv {
        s.push_str("row,payload_bytes,bandwidth,unit\n");
        for (row, e) in &rows {
            let _ = writeln!(s, "{row},{},{},{}", e.payload_bytes, e.display_number(), e.display_unit);
        }
        return s;
    }
    let _ = writeln!(
        s,
        "{:<10} {:>9} {:<4} | {:>6} {:>9} {:<4}",
        "Resolution", "Bandwidth", "Unit", "Tokens", "Bandwidth", "Unit"
    );
    for ((img, ie), (tok, te)) in images.iter().zip(tokens) {
        let count = match tok {
            BandwidthRow::Tokens(n) => *n,
            BandwidthRow::Resolution(_) => unreachable!("second half holds token rows"),
        };
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:<4} | {:>6} {:>9} {:<4}",
            img.to_string(),
            ie.display_number(),
            ie.display_unit.to_string(),
            count,
            te.display_number(),
            te.display_unit.to_string()
        );
    }
    s
}

pub fn cmd_cost(cfg: &DecoderConfig, r: f64, flops_per_pair: Option<f64>, csv: bool) -> Result<String, Error> {
    let rep = compute_cost(cfg, r)?;
    let mut s = String::new();
    if csv {
        s.push_str("layers,at,pre_tokens,ratio,cost_uncompressed,cost_compressed,benefit\n");
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            cfg.num_layers,
            cfg.compress_at_layer,
            cfg.pre_tokens,
            r,
            rep.cost_uncompressed,
            rep.cost_compressed,
            rep.benefit
        );
        return Ok(s);
    }
    let _ = writeln!(
        s,
        "layers={} at={} pre_tokens={} ratio={:.6}",
        cfg.num_layers, cfg.compress_at_layer, cfg.pre_tokens, r
    );
    let _ = writeln!(s, "units: |X1|^2");
    let _ = writeln!(s, "{:<18} {:>12.6}", "cost_uncompressed", rep.cost_uncompressed);
    let _ = writeln!(s, "{:<18} {:>12.6}", "cost_compressed", rep.cost_compressed);
    let _ = writeln!(s, "{:<18} {:>12.6}", "benefit", rep.benefit);
    if let Some(c) = flops_per_pair {
        let (u, k, b) = rep.flop_estimate(c);
        let _ = writeln!(s, "estimate at {c} FLOP per token pair:");
        let _ = writeln!(s, "{:<18} {:>12.4e}", "flops_uncompressed", u);
        let _ = writeln!(s, "{:<18} {:>12.4e}", "flops_compressed", k);
        let _ = writeln!(s, "{:<18} {:>12.4e}", "flops_saved", b);
    }
    Ok(s)
}

pub fn cmd_bandwidth(image: GridDims, tokens: u64, dim: u64, dtype: DType, csv: bool) -> String {
    let ib = image_bytes(image.height, image.width);
    let tb = token_bytes(tokens, dim, dtype);
    let factor = reduction_factor(image.height, image.width, tokens, dim, dtype);
    let (ie, te) = (BandwidthEntry::from_bytes(ib), BandwidthEntry::from_bytes(tb));
    let dname = match dtype {
        DType::F16 => "f16",
        DType::F32 => "f32",
        DType::U8 => "u8",
    };
    let mut s = String::new();
    if csv {
        s.push_str("item,bytes,bandwidth,unit\n");
        let _ = writeln!(
            s,
            "image {}x{},{ib},{},{}",
            image.height,
            image.width,
            ie.display_number(),
            ie.display_unit
        );
        let _ = writeln!(
            s,
            "tokens {tokens}x{dim} {dname},{tb},{},{}",
            te.display_number(),
            te.display_unit
        );
        let _ = writeln!(s, "reduction,,{factor:.2},x");
        return s;
    }
    let _ = writeln!(s, "{:<24} {:>10} {:>12}", "item", "bytes", "bandwidth");
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>12}",
        format!("image {}x{}", image.height, image.width),
        ib,
        ie.to_string()
    );
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>12}",
        format!("tokens {tokens}x{dim} {dname}"),
        tb,
        te.to_string()
    );
    let _ = writeln!(s, "reduction factor {factor:.2}x");
    s
}

#[allow(clippy::too_many_arguments)]
fn emit_row(
    s: &mut String,
    err: &mut dyn Write,
    fixture: &str,
    fg: &FeatureGrid,
    strategy: Strategy,
    budget: Option<usize>,
    masks: Option<&MaskSet>,
    dropped: DroppedTarget,
) -> Result<(), Error> {
    match strategy.apply(fg, masks) {
        Ok(c) => {
            let e = retention_error(fg, &c.tokens, &c.assignment, dropped)?;
            let budget = budget.map_or_else(|| "-".to_string(), |b| b.to_string());
            let _ = writeln!(
                s,
                "{fixture},{},{budget},{},{e},{:.6}",
                strategy.name(),
                c.tokens.len(),
                c.tokens.compression_ratio()
            );
            Ok(())
        }
        Err(e @ Error::MissingPrior(_)) => {
            let _ = writeln!(err, "warning: {fixture}: skipping {}: {e}", strategy.name());
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// One CSV row per (fixture, strategy, budget).
pub fn cmd_compare(
    dir: &Path,
    budgets: &[usize],
    cfg: &GridPromptConfig,
    dropped: DroppedTarget,
    err: &mut dyn Write,
) -> Result<String, Error> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(fixtures::FEATURES_FILE).exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::InvalidArgument(format!("no fixtures under {}", dir.display())));
    }

    let mut s = String::from("fixture,strategy,budget,tokens,retention_error,ratio\n");
    for sub in subdirs {
        let name = sub.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let fg = load_features_with_priors(&sub)?;
        let patches = fg.patch_count();
        let masks = match load_masks(&sub) {
            Ok(m) => Some(run_pipeline(&m, cfg)?),
            Err(Error::Io(_)) => None,
            Err(e) => return Err(e),
        };
        match masks {
            Some(ms) if !ms.is_empty() => emit_row(
                &mut s,
                err,
                &name,
                &fg,
                Strategy::ObjectMerge(MergeOptions::default()),
                None,
                Some(&ms),
                dropped,
            )?,
            Some(_) => {
                let _ = writeln!(err, "warning: {name}: no masks survived, skipping object_merge");
            }
            None => {
                let _ = writeln!(err, "warning: {name}: skipping object_merge: no masks");
            }
        }
        for &requested in budgets {
            let budget = requested.clamp(1, patches);
            if budget != requested {
                let _ = writeln!(err, "warning: {name}: budget {requested} clamped to {budget}");
            }
            emit_row(
                &mut s,
                err,
                &name,
                &fg,
                Strategy::TopkDrop { budget },
                Some(budget),
                None,
                dropped,
            )?;
            if let Some((out_h, out_w)) = grid_pool_shape(fg.grid_height(), fg.grid_width(), budget) {
                emit_row(
                    &mut s,
                    err,
                    &name,
                    &fg,
                    Strategy::GridPool { out_h, out_w },
                    Some(budget),
                    None,
                    dropped,
                )?;
            }
            emit_row(
                &mut s,
                err,
                &name,
                &fg,
                Strategy::ClsMerge { budget },
                Some(budget),
                None,
                dropped,
            )?;
        }
    }
    Ok(s)
}
