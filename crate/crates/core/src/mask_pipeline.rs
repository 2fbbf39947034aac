//! Candidate mask filtering: grid-prompt selection, confidence threshold and
//! overlap suppression. The surviving mask count is what fixes the token
//! count downstream; nothing here knows about a target budget.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor_io::{ScoreSidecar, TensorData, TensorFile};

/// Binary H×W grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "bitmap {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Bitmap { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Bitmap {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Bitmap { height, width, bits }
    }

    /// Axis-aligned rectangle `[y0, y1) × [x0, x1)`, clipped to the image.
    pub fn rect(height: usize, width: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> Self {
        Self::from_fn(height, width, |y, x| y >= y0 && y < y1 && x >= x0 && x < x1)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Number of set pixels, ‖m‖₁.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn intersection(&self, other: &Bitmap) -> u64 {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count() as u64
    }

    pub fn iou(&self, other: &Bitmap) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub bitmap: Bitmap,
    pub confidence: f32,
    pub source_index: u32,
}

impl ObjectMask {
    pub fn new(bitmap: Bitmap, confidence: f32, source_index: u32) -> Self {
        ObjectMask {
            bitmap,
            confidence,
            source_index,
        }
    }

    pub fn area(&self) -> u64 {
        self.bitmap.area()
    }
}

/// Descending area, then ascending source index.
fn canonical_order(a: &(u64, &ObjectMask), b: &(u64, &ObjectMask)) -> Ordering {
    b.0.cmp(&a.0).then(a.1.source_index.cmp(&b.1.source_index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    image_height: usize,
    image_width: usize,
    masks: Vec<ObjectMask>,
}

impl MaskSet {
    /// Builds a set in canonical order (descending area, ties by ascending
    /// source index).
    pub fn new(image_height: usize, image_width: usize, masks: Vec<ObjectMask>) -> Result<Self> {
        let mut set = Self::with_order(image_height, image_width, masks)?;
        set.canonicalize();
        Ok(set)
    }

    /// Builds a set that keeps the caller's mask order.
    pub fn with_order(image_height: usize, image_width: usize, masks: Vec<ObjectMask>) -> Result<Self> {
        for m in &masks {
            check_dims(m, image_height, image_width)?;
        }
        Ok(MaskSet {
            image_height,
            image_width,
            masks,
        })
    }

    pub fn empty(image_height: usize, image_width: usize) -> Self {
        MaskSet {
            image_height,
            image_width,
            masks: Vec::new(),
        }
    }

    fn canonicalize(&mut self) {
        let masks = std::mem::take(&mut self.masks);
        let mut keyed: Vec<(u64, ObjectMask)> = masks.into_iter().map(|m| (m.area(), m)).collect();
        keyed.sort_by(|a, b| canonical_order(&(a.0, &a.1), &(b.0, &b.1)));
        self.masks = keyed.into_iter().map(|(_, m)| m).collect();
    }

    pub fn image_height(&self) -> usize {
        self.image_height
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn masks(&self) -> &[ObjectMask] {
        &self.masks
    }

    pub fn into_masks(self) -> Vec<ObjectMask> {
        self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    fn retain(&self, mut keep: impl FnMut(&ObjectMask) -> bool) -> MaskSet {
        let mut out = MaskSet {
            image_height: self.image_height,
            image_width: self.image_width,
            masks: self.masks.iter().filter(|m| keep(m)).cloned().collect(),
        };
        out.canonicalize();
        out
    }

    /// Loads candidates from a `(num_masks, H, W)` u8 tensor and its
    /// confidence sidecar. Slice `i` gets source index `i`.
    pub fn from_tensor(tensor: &TensorFile, scores: &ScoreSidecar) -> Result<Self> {
        let [n, h, w] = tensor.dims[..] else {
            return Err(Error::Format(format!(
                "mask tensor must be rank 3 (num_masks, H, W), got dims {:?}",
                tensor.dims
            )));
        };
        let TensorData::U8(data) = &tensor.data else {
            return Err(Error::Format(format!(
                "mask tensor must be u8, got {:?}",
                tensor.dtype()
            )));
        };
        let (n, h, w) = (n as usize, h as usize, w as usize);
        let confidences = scores.confidences_for(n)?;
        let plane = h * w;
        let mut masks = Vec::with_capacity(n);
        for (i, conf) in confidences.into_iter().enumerate() {
            let slice = &data[i * plane..(i + 1) * plane];
            if let Some(bad) = slice.iter().find(|&&v| v > 1) {
                return Err(Error::Format(format!("mask {i} holds non-binary value {bad}")));
            }
            let bits = slice.iter().map(|&v| v == 1).collect();
            masks.push(ObjectMask::new(Bitmap::new(h, w, bits)?, conf, i as u32));
        }
        MaskSet::new(h, w, masks)
    }

    /// Encodes as a `(num_masks, H, W)` u8 tensor plus sidecar. Slices are
    /// written in the set's current order and renumbered from zero.
    pub fn to_tensor(&self) -> Result<(TensorFile, ScoreSidecar)> {
        let mut data = Vec::with_capacity(self.masks.len() * self.image_height * self.image_width);
        for m in &self.masks {
            data.extend(m.bitmap.bits().iter().map(|&b| b as u8));
        }
        let tensor = TensorFile::new(
            vec![
                self.masks.len() as u32,
                self.image_height as u32,
                self.image_width as u32,
            ],
            TensorData::U8(data),
        )?;
        let confidences: Vec<f32> = self.masks.iter().map(|m| m.confidence).collect();
        Ok((tensor, ScoreSidecar::from_confidences(&confidences)))
    }
}

fn check_dims(m: &ObjectMask, h: usize, w: usize) -> Result<()> {
    if m.bitmap.height() != h || m.bitmap.width() != w {
        return Err(Error::Shape(format!(
            "mask {} is {}x{}, image is {h}x{w}",
            m.source_index,
            m.bitmap.height(),
            m.bitmap.width()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPromptConfig {
    pub points_per_side: u32,
    pub sigma: f32,
    pub iou_dedup_threshold: f64,
}

impl Default for GridPromptConfig {
    fn default() -> Self {
        GridPromptConfig {
            points_per_side: 32,
            sigma: 0.8,
            iou_dedup_threshold: 0.9,
        }
    }
}

impl GridPromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_side == 0 {
            return Err(Error::InvalidArgument("points_per_side must be >= 1".into()));
        }
        check_unit("sigma", f64::from(self.sigma))?;
        check_unit("iou_dedup_threshold", self.iou_dedup_threshold)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// `p × p` prompt points as `(x, y)`, row by row. Point `(i, j)` sits at
/// `x = floor((j + 0.5)·w/p)`, `y = floor((i + 0.5)·h/p)`.
pub fn grid_points(p: u32, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
    if p == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid_points needs p, h, w >= 1 (got p={p}, h={h}, w={w})"
        )));
    }
    let p = p as usize;
    // (k + 0.5)·n/p == (2k + 1)·n / 2p, floored, done in integers
    let coord = |k: usize, n: usize| ((2 * k + 1) * n) / (2 * p);
    let mut pts = Vec::with_capacity(p * p);
    for i in 0..p {
        let y = coord(i, h);
        for j in 0..p {
            pts.push((coord(j, w), y));
        }
    }
    Ok(pts)
}

/// Keeps every candidate that contains at least one grid point.
pub fn select_by_grid(candidates: &MaskSet, cfg: &GridPromptConfig) -> Result<MaskSet> {
    cfg.validate()?;
    for m in candidates.masks() {
        check_dims(m, candidates.image_height, candidates.image_width)?;
    }
    if candidates.is_empty() {
        return Ok(MaskSet::empty(candidates.image_height, candidates.image_width));
    }
    let pts = grid_points(cfg.points_per_side, candidates.image_height, candidates.image_width)?;
    Ok(candidates.retain(|m| pts.iter().any(|&(x, y)| m.bitmap.get(y, x))))
}

/// Keeps masks with `confidence >= sigma`.
pub fn filter_confidence(ms: &MaskSet, sigma: f32) -> Result<MaskSet> {
    check_unit("sigma", f64::from(sigma))?;
    Ok(ms.retain(|m| m.confidence >= sigma))
}

/// Greedy suppression in canonical order: a mask is dropped when its IoU
/// with any already-kept mask exceeds `threshold`.
pub fn dedup_by_iou(ms: &MaskSet, threshold: f64) -> Result<MaskSet> {
    check_unit("iou threshold", threshold)?;
    let mut ordered = ms.clone();
    ordered.canonicalize();
    let mut kept: Vec<ObjectMask> = Vec::with_capacity(ordered.len());
    for m in ordered.masks {
        if kept.iter().all(|k| k.bitmap.iou(&m.bitmap) <= threshold) {
            kept.push(m);
        }
    }
    Ok(MaskSet {
        image_height: ms.image_height,
        image_width: ms.image_width,
        masks: kept,
    })
}

/// Grid selection, then confidence filtering, then deduplication.
pub fn run_pipeline(candidates: &MaskSet, cfg: &GridPromptConfig) -> Result<MaskSet> {
    let selected = select_by_grid(candidates, cfg)?;
    let confident = filter_confidence(&selected, cfg.sigma)?;
    dedup_by_iou(&confident, cfg.iou_dedup_threshold)
}
