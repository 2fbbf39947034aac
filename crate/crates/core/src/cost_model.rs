//! Prefill cost, compression benefit and transmission bandwidth.
//!
//! Decoder cost is modelled as proportional to the squared sequence length
//! per layer: layers `1..k` see the full `|X₁|` tokens, layers `k..L` see
//! `r·|X₁|`. Reports are in units of `|X₁|²`; multiply by a per-token-pair
//! constant for a rough FLOP estimate.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor_io::DType;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub num_layers: u32,
    pub compress_at_layer: u32,
    pub pre_tokens: u64,
}

impl DecoderConfig {
    pub fn new(num_layers: u32, compress_at_layer: u32, pre_tokens: u64) -> Result<Self> {
        let cfg = DecoderConfig {
            num_layers,
            compress_at_layer,
            pre_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.pre_tokens == 0 {
            return Err(Error::InvalidArgument("layers and pre_tokens must be positive".into()));
        }
        if !(1..=self.num_layers).contains(&self.compress_at_layer) {
            return Err(Error::InvalidArgument(format!(
                "compression layer {} outside [1, {}]",
                self.compress_at_layer, self.num_layers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub cost_uncompressed: f64,
    pub cost_compressed: f64,
    pub benefit: f64,
    pub ratio: f64,
    pub pre_tokens: u64,
}

impl CostReport {
    /// Scales the normalised figures by `|X₁|² · flops_per_pair`. The result
    /// is an estimate, not a measured count.
    pub fn flop_estimate(&self, flops_per_pair: f64) -> (f64, f64, f64) {
        let s = (self.pre_tokens as f64).powi(2) * flops_per_pair;
        (self.cost_uncompressed * s, self.cost_compressed * s, self.benefit * s)
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {r} outside (0, 1]")));
    }
    Ok(())
}

/// Unnormalised cost, `(k−1)|X₁|² + (L−k)(r|X₁|)²`.
fn raw_cost(cfg: &DecoderConfig, r: f64) -> f64 {
    let x1 = cfg.pre_tokens as f64;
    let xk = r * x1;
    f64::from(cfg.compress_at_layer - 1) * x1 * x1 + f64::from(cfg.num_layers - cfg.compress_at_layer) * xk * xk
}

pub fn compute_cost(cfg: &DecoderConfig, r: f64) -> Result<CostReport> {
    cfg.validate()?;
    check_ratio(r)?;
    let l = f64::from(cfg.num_layers);
    let k = f64::from(cfg.compress_at_layer);
    let cost_uncompressed = l - 1.0;
    let cost_compressed = (k - 1.0) + (l - k) * r * r;
    Ok(CostReport {
        cost_uncompressed,
        cost_compressed,
        benefit: (l - k) * (1.0 - r * r),
        ratio: r,
        pre_tokens: cfg.pre_tokens,
    })
}

/// Checks the closed-form benefit `(L−k)(1−r²)` against the difference of
/// two direct cost evaluations, to 1e-9 relative.
pub fn verify_benefit_identity(cfg: &DecoderConfig, r: f64) -> bool {
    if cfg.validate().is_err() || check_ratio(r).is_err() {
        return false;
    }
    let x1 = cfg.pre_tokens as f64;
    let two_sided = (raw_cost(cfg, 1.0) - raw_cost(cfg, r)) / (x1 * x1);
    let closed = f64::from(cfg.num_layers - cfg.compress_at_layer) * (1.0 - r * r);
    let scale = two_sided.abs().max(closed.abs());
    (two_sided - closed).abs() <= 1e-9 * scale
}

/// Raw RGB image, one byte per channel.
pub fn image_bytes(height: u64, width: u64) -> u64 {
    height * width * 3
}

pub fn token_bytes(count: u64, dim: u64, dtype: DType) -> u64 {
    count * dim * dtype.size() as u64
}

pub fn reduction_factor(image_h: u64, image_w: u64, count: u64, dim: u64, dtype: DType) -> f64 {
    image_bytes(image_h, image_w) as f64 / token_bytes(count, dim, dtype) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthUnit {
    KbPerSec,
    MbPerSec,
}

impl fmt::Display for BandwidthUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandwidthUnit::KbPerSec => "KB/s",
            BandwidthUnit::MbPerSec => "MB/s",
        })
    }
}

/// Bytes per second for one frame per second, displayed with KB = 1024 B
/// and MB = 1024 KB. Below 1 MB the value is shown in KB with up to two
/// decimals (trailing zeros dropped); from 1 MB on, in MB with exactly two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthEntry {
    pub payload_bytes: u64,
    pub display_value: f64,
    pub display_unit: BandwidthUnit,
    hundredths: u64,
}

impl BandwidthEntry {
    pub fn from_bytes(payload_bytes: u64) -> Self {
        let (unit, divisor) = if payload_bytes >= MIB {
            (BandwidthUnit::MbPerSec, MIB)
        } else {
            (BandwidthUnit::KbPerSec, KIB)
        };
        // round half up, in integers
        let hundredths = (payload_bytes * 100 + divisor / 2) / divisor;
        BandwidthEntry {
            payload_bytes,
            display_value: hundredths as f64 / 100.0,
            display_unit: unit,
            hundredths,
        }
    }

    pub fn display_number(&self) -> String {
        let (int, frac) = (self.hundredths / 100, self.hundredths % 100);
        match self.display_unit {
            BandwidthUnit::MbPerSec => format!("{int}.{frac:02}"),
            BandwidthUnit::KbPerSec if frac == 0 => format!("{int}"),
            BandwidthUnit::KbPerSec if frac % 10 == 0 => format!("{int}.{}", frac / 10),
            BandwidthUnit::KbPerSec => format!("{int}.{frac:02}"),
        }
    }
}

impl fmt::Display for BandwidthEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.display_number(), self.display_unit)
    }
}

pub const TABLE_RESOLUTIONS: [u64; 7] = [224, 336, 480, 512, 640, 768, 1024];
pub const TABLE_TOKEN_COUNTS: [u64; 7] = [8, 12, 16, 32, 64, 128, 192];
pub const TABLE_TOKEN_DIM: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthRow {
    Resolution(u64),
    Tokens(u64),
}

impl fmt::Display for BandwidthRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRow::Resolution(side) => write!(f, "{side}²"),
            BandwidthRow::Tokens(n) => write!(f, "tokens {n}"),
        }
    }
}

/// The fourteen reference rows: square RGB images first, then f16 token
/// streams of width 1024.
pub fn bandwidth_table() -> Vec<(BandwidthRow, BandwidthEntry)> {
    let images = TABLE_RESOLUTIONS.iter().map(|&s| {
        (
            BandwidthRow::Resolution(s),
            BandwidthEntry::from_bytes(image_bytes(s, s)),
        )
    });
    let tokens = TABLE_TOKEN_COUNTS.iter().map(|&n| {
        (
            BandwidthRow::Tokens(n),
            BandwidthEntry::from_bytes(token_bytes(n, TABLE_TOKEN_DIM, DType::F16)),
        )
    });
    images.chain(tokens).collect()
}
