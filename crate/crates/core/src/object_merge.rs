//! Masked average merging: one token per object mask.
//!
//! The patch grid is upsampled to image resolution and every mask is reduced
//! to the mean feature over its pixels. Under nearest upsampling each pixel
//! copies one patch, so the same token is a weighted patch average where the
//! weight is the number of mask pixels landing on the patch; `merge_fast`
//! uses that form and never builds the pixel field.

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_pipeline::{Bitmap, MaskSet};
use crate::tensor_io::{DType, TensorData, TensorFile};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    grid_height: usize,
    grid_width: usize,
    dim: usize,
    values: Vec<f32>,
    cls_vector: Option<Vec<f32>>,
    attention_scores: Option<Vec<f32>>,
}

impl FeatureGrid {
    pub fn new(grid_height: usize, grid_width: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if grid_height == 0 || grid_width == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "feature grid dims must be positive, got {grid_height}x{grid_width}x{dim}"
            )));
        }
        if values.len() != grid_height * grid_width * dim {
            return Err(Error::Shape(format!(
                "{grid_height}x{grid_width}x{dim} grid needs {} values, got {}",
                grid_height * grid_width * dim,
                values.len()
            )));
        }
        Ok(FeatureGrid {
            grid_height,
            grid_width,
            dim,
            values,
            cls_vector: None,
            attention_scores: None,
        })
    }

    pub fn with_cls_vector(mut self, cls: Vec<f32>) -> Result<Self> {
        if cls.len() != self.dim {
            return Err(Error::Shape(format!(
                "cls vector has {} channels, grid has {}",
                cls.len(),
                self.dim
            )));
        }
        self.cls_vector = Some(cls);
        Ok(self)
    }

    pub fn with_attention_scores(mut self, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != self.patch_count() {
            return Err(Error::Shape(format!(
                "{} attention scores for {} patches",
                scores.len(),
                self.patch_count()
            )));
        }
        self.attention_scores = Some(scores);
        Ok(self)
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pre-compression token count, `H_p · W_p`.
    pub fn patch_count(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn patch_at(&self, row: usize, col: usize) -> &[f32] {
        self.patch(row * self.grid_width + col)
    }

    pub fn cls_vector(&self) -> Option<&[f32]> {
        self.cls_vector.as_deref()
    }

    pub fn attention_scores(&self) -> Option<&[f32]> {
        self.attention_scores.as_deref()
    }

    /// Reads a rank-3 `(H_p, W_p, d)` tensor.
    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let [h, w, d] = t.dims[..] else {
            return Err(Error::Format(format!(
                "feature tensor must be rank 3 (H_p, W_p, d), got dims {:?}",
                t.dims
            )));
        };
        if t.dtype() == DType::U8 {
            return Err(Error::Format("feature tensor must be f16 or f32".into()));
        }
        FeatureGrid::new(h as usize, w as usize, d as usize, t.values_f32())
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<TensorFile> {
        let dims = vec![self.grid_height as u32, self.grid_width as u32, self.dim as u32];
        TensorFile::new(dims, float_data(&self.values, dtype)?)
    }
}

pub(crate) fn float_data(values: &[f32], dtype: DType) -> Result<TensorData> {
    match dtype {
        DType::F16 => Ok(TensorData::F16(
            values.iter().map(|&v| half::f16::from_f32(v)).collect(),
        )),
        DType::F32 => Ok(TensorData::F32(values.to_vec())),
        DType::U8 => Err(Error::InvalidArgument("feature values need a float dtype".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

impl std::fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

/// Pixel-resolution feature field, `h × w × d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureField {
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.dim;
        &self.values[i..i + self.dim]
    }
}

/// Source row of pixel `dst` when stretching `src_len` cells over `dst_len`.
fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    dst * src_len / dst_len
}

/// Half-pixel-centre sampling (`align_corners = false`): returns the two
/// source indices and the weight of the second.
fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, src - i0 as f64)
}

pub fn upsample_features(fg: &FeatureGrid, h: usize, w: usize, mode: UpsampleMode) -> Result<FeatureField> {
    check_target(fg, h, w)?;
    let d = fg.dim;
    let mut values = Vec::with_capacity(h * w * d);
    match mode {
        UpsampleMode::Nearest => {
            for y in 0..h {
                let r = nearest_index(y, fg.grid_height, h);
                for x in 0..w {
                    let c = nearest_index(x, fg.grid_width, w);
                    values.extend_from_slice(fg.patch_at(r, c));
                }
            }
        }
        UpsampleMode::Bilinear => {
            let cols: Vec<_> = (0..w).map(|x| bilinear_taps(x, fg.grid_width, w)).collect();
            for y in 0..h {
                let (r0, r1, ly) = bilinear_taps(y, fg.grid_height, h);
                for &(c0, c1, lx) in &cols {
                    let (p00, p01) = (fg.patch_at(r0, c0), fg.patch_at(r0, c1));
                    let (p10, p11) = (fg.patch_at(r1, c0), fg.patch_at(r1, c1));
                    for ch in 0..d {
                        let top = f64::from(p00[ch]) * (1.0 - lx) + f64::from(p01[ch]) * lx;
                        let bottom = f64::from(p10[ch]) * (1.0 - lx) + f64::from(p11[ch]) * lx;
                        values.push((top * (1.0 - ly) + bottom * ly) as f32);
                    }
                }
            }
        }
    }
    Ok(FeatureField {
        height: h,
        width: w,
        dim: d,
        values,
    })
}

fn check_target(fg: &FeatureGrid, h: usize, w: usize) -> Result<()> {
    if h < fg.grid_height || w < fg.grid_width {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample a {}x{} grid to {h}x{w}",
            fg.grid_height, fg.grid_width
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MergeOptions {
    pub mode: UpsampleMode,
    /// Emit one extra token averaging the pixels no mask covers.
    pub residual_token: bool,
    /// Worker threads for per-mask reduction; `None` runs on the caller.
    pub threads: Option<NonZeroUsize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub image_height: u32,
    pub image_width: u32,
    pub grid_height: u32,
    pub grid_width: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    /// Source mask (or patch / block / cluster seed for the baselines);
    /// `None` for the residual token.
    pub source: Option<u32>,
    /// Pixels (or patches) reduced into this token.
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTokenSet {
    pub dim: usize,
    /// `len() × dim`, row-major.
    pub tokens: Vec<f32>,
    pub meta: Vec<TokenMeta>,
    pub origin: Origin,
    pub residual_included: bool,
}

impl CompressedTokenSet {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.tokens.chunks_exact(self.dim.max(1))
    }

    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(self)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.meta.len() * self.dim {
            return Err(Error::Shape(format!(
                "{} token values for {} tokens of dim {}",
                self.tokens.len(),
                self.meta.len(),
                self.dim
            )));
        }
        let residuals = self.meta.iter().filter(|m| m.source.is_none()).count();
        let expected = usize::from(self.residual_included);
        if residuals != expected || (self.residual_included && self.meta.last().and_then(|m| m.source).is_some()) {
            return Err(Error::Shape(
                "residual token must appear exactly once, last, iff residual_included".into(),
            ));
        }
        Ok(())
    }
}

/// `r = k / (H_p · W_p)`.
pub fn compression_ratio(cts: &CompressedTokenSet) -> f64 {
    let patches = cts.origin.grid_height as u64 * cts.origin.grid_width as u64;
    if patches == 0 {
        return 0.0;
    }
    cts.len() as f64 / patches as f64
}

fn origin(fg: &FeatureGrid, ms: &MaskSet) -> Origin {
    Origin {
        image_height: ms.image_height() as u32,
        image_width: ms.image_width() as u32,
        grid_height: fg.grid_height as u32,
        grid_width: fg.grid_width as u32,
    }
}

fn check_masks(fg: &FeatureGrid, ms: &MaskSet) -> Result<()> {
    check_target(fg, ms.image_height(), ms.image_width())?;
    for m in ms.masks() {
        if m.bitmap.height() != ms.image_height() || m.bitmap.width() != ms.image_width() {
            return Err(Error::Shape(format!(
                "mask {} does not match image dims",
                m.source_index
            )));
        }
        if m.area() == 0 {
            return Err(Error::EmptyMask {
                source_index: m.source_index,
            });
        }
    }
    Ok(())
}

/// Bitmap of pixels covered by no mask, or `None` if coverage is complete.
fn uncovered(ms: &MaskSet) -> Option<Bitmap> {
    let (h, w) = (ms.image_height(), ms.image_width());
    let mut free = Bitmap::from_fn(h, w, |_, _| true);
    for m in ms.masks() {
        for (i, &b) in m.bitmap.bits().iter().enumerate() {
            if b {
                free.set(i / w, i % w, false);
            }
        }
    }
    (free.area() > 0).then_some(free)
}

/// Runs `reduce` over every bitmap, possibly on worker threads, keeping
/// output order equal to input order.
fn reduce_all<F>(bitmaps: &[&Bitmap], threads: Option<NonZeroUsize>, reduce: F) -> Vec<Vec<f32>>
where
    F: Fn(&Bitmap) -> Vec<f32> + Sync,
{
    let workers = threads.map_or(1, NonZeroUsize::get).min(bitmaps.len().max(1));
    if workers <= 1 {
        return bitmaps.iter().map(|b| reduce(b)).collect();
    }
    let chunk = bitmaps.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = bitmaps
            .chunks(chunk)
            .map(|part| {
                let reduce = &reduce;
                s.spawn(move || part.iter().map(|b| reduce(b)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("merge worker panicked"))
            .collect()
    })
}

fn assemble(
    fg: &FeatureGrid,
    ms: &MaskSet,
    residual: Option<Bitmap>,
    opts: &MergeOptions,
    reduce: impl Fn(&Bitmap) -> Vec<f32> + Sync,
) -> CompressedTokenSet {
    let mut bitmaps: Vec<&Bitmap> = ms.masks().iter().map(|m| &m.bitmap).collect();
    if let Some(r) = residual.as_ref() {
        bitmaps.push(r);
    }
    let tokens = reduce_all(&bitmaps, opts.threads, reduce).concat();
    let mut meta: Vec<TokenMeta> = ms
        .masks()
        .iter()
        .map(|m| TokenMeta {
            source: Some(m.source_index),
            area: m.area(),
        })
        .collect();
    if let Some(r) = residual.as_ref() {
        meta.push(TokenMeta {
            source: None,
            area: r.area(),
        });
    }
    CompressedTokenSet {
        dim: fg.dim,
        tokens,
        meta,
        origin: origin(fg, ms),
        residual_included: residual.is_some(),
    }
}

/// Reference merge: materialises the upsampled field, then averages it
/// under each mask.
pub fn merge(fg: &FeatureGrid, ms: &MaskSet, opts: &MergeOptions) -> Result<CompressedTokenSet> {
    check_masks(fg, ms)?;
    let field = upsample_features(fg, ms.image_height(), ms.image_width(), opts.mode)?;
    let residual = if opts.residual_token { uncovered(ms) } else { None };
    let d = fg.dim;
    let reduce = |bitmap: &Bitmap| {
        let mut acc = vec![0.0f64; d];
        let mut n = 0u64;
        for (i, _) in bitmap.bits().iter().enumerate().filter(|(_, &b)| b) {
            for (a, &v) in acc.iter_mut().zip(&field.values[i * d..(i + 1) * d]) {
                *a += f64::from(v);
            }
            n += 1;
        }
        acc.into_iter().map(|a| (a / n as f64) as f32).collect()
    };
    Ok(assemble(fg, ms, residual, opts, reduce))
}

/// Nearest-mode merge as a weighted average over patches. Memory is
/// `O(H_p · W_p)` per mask on top of the grid itself.
pub fn merge_fast(fg: &FeatureGrid, ms: &MaskSet, opts: &MergeOptions) -> Result<CompressedTokenSet> {
    if opts.mode != UpsampleMode::Nearest {
        return Err(Error::UnsupportedMode(format!(
            "merge_fast supports nearest only, got {}",
            opts.mode
        )));
    }
    check_masks(fg, ms)?;
    let (h, w) = (ms.image_height(), ms.image_width());
    let rows: Vec<usize> = (0..h).map(|y| nearest_index(y, fg.grid_height, h)).collect();
    let cols: Vec<usize> = (0..w).map(|x| nearest_index(x, fg.grid_width, w)).collect();
    let residual = if opts.residual_token { uncovered(ms) } else { None };
    let d = fg.dim;
    let reduce = |bitmap: &Bitmap| {
        let mut weights = vec![0u64; fg.patch_count()];
        for (y, row) in bitmap.bits().chunks_exact(w).enumerate() {
            let base = rows[y] * fg.grid_width;
            for (x, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                weights[base + cols[x]] += 1;
            }
        }
        let total: u64 = weights.iter().sum();
        let mut acc = vec![0.0f64; d];
        for (p, &wt) in weights.iter().enumerate().filter(|(_, &wt)| wt > 0) {
            let wt = wt as f64;
            for (a, &v) in acc.iter_mut().zip(fg.patch(p)) {
                *a += wt * f64::from(v);
            }
        }
        acc.into_iter().map(|a| (a / total as f64) as f32).collect()
    };
    Ok(assemble(fg, ms, residual, opts, reduce))
}
