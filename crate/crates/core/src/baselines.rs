//! Patch-level comparison strategies behind one interface, plus a
//! reconstruction-error proxy for how much of the grid a token set keeps.
//!
//! All baselines act once, on the encoder output; none of them has a
//! layer-wise schedule.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mask_pipeline::{Bitmap, MaskSet};
use crate::object_merge::{
    merge, merge_fast, CompressedTokenSet, FeatureGrid, MergeOptions, Origin, TokenMeta, UpsampleMode,
};

/// Token index per patch; `None` means the patch was dropped.
pub type PatchAssignment = Vec<Option<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub tokens: CompressedTokenSet,
    pub assignment: PatchAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    ObjectMerge(MergeOptions),
    TopkDrop { budget: usize },
    GridPool { out_h: usize, out_w: usize },
    ClsMerge { budget: usize },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ObjectMerge(_) => "object_merge",
            Strategy::TopkDrop { .. } => "topk_drop",
            Strategy::GridPool { .. } => "grid_pool",
            Strategy::ClsMerge { .. } => "cls_merge",
        }
    }

    /// Applies the strategy. `masks` is only consulted by `ObjectMerge`.
    pub fn apply(&self, fg: &FeatureGrid, masks: Option<&MaskSet>) -> Result<Compressed> {
        match *self {
            Strategy::ObjectMerge(opts) => {
                let ms = masks.ok_or(Error::MissingPrior("object masks"))?;
                object_merge(fg, ms, &opts)
            }
            Strategy::TopkDrop { budget } => topk_drop(fg, budget),
            Strategy::GridPool { out_h, out_w } => grid_pool(fg, out_h, out_w),
            Strategy::ClsMerge { budget } => cls_merge(fg, budget),
        }
    }
}

fn grid_origin(fg: &FeatureGrid) -> Origin {
    Origin {
        image_height: fg.grid_height() as u32,
        image_width: fg.grid_width() as u32,
        grid_height: fg.grid_height() as u32,
        grid_width: fg.grid_width() as u32,
    }
}

fn check_budget(fg: &FeatureGrid, budget: usize) -> Result<()> {
    if budget == 0 || budget > fg.patch_count() {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} outside [1, {}]",
            fg.patch_count()
        )));
    }
    Ok(())
}

/// Object merge with a patch assignment: each patch goes to the token whose
/// mask covers most of its pixels (earlier token on ties), or is dropped if
/// no token covers it.
pub fn object_merge(fg: &FeatureGrid, ms: &MaskSet, opts: &MergeOptions) -> Result<Compressed> {
    let tokens = match opts.mode {
        UpsampleMode::Nearest => merge_fast(fg, ms, opts)?,
        UpsampleMode::Bilinear => merge(fg, ms, opts)?,
    };
    let (h, w) = (ms.image_height(), ms.image_width());
    let mut bitmaps: Vec<Bitmap> = ms.masks().iter().map(|m| m.bitmap.clone()).collect();
    if tokens.residual_included {
        bitmaps.push(Bitmap::from_fn(h, w, |y, x| {
            ms.masks().iter().all(|m| !m.bitmap.get(y, x))
        }));
    }
    let mut best: Vec<(u64, Option<usize>)> = vec![(0, None); fg.patch_count()];
    for (t, b) in bitmaps.iter().enumerate() {
        let mut counts = vec![0u64; fg.patch_count()];
        for y in 0..h {
            let r = y * fg.grid_height() / h;
            for x in (0..w).filter(|&x| b.get(y, x)) {
                counts[r * fg.grid_width() + x * fg.grid_width() / w] += 1;
            }
        }
        for (slot, c) in best.iter_mut().zip(counts) {
            if c > slot.0 {
                *slot = (c, Some(t));
            }
        }
    }
    Ok(Compressed {
        tokens,
        assignment: best.into_iter().map(|(_, t)| t).collect(),
    })
}

/// Keeps the `budget` patches with the highest attention score, unchanged,
/// in ascending patch order.
pub fn topk_drop(fg: &FeatureGrid, budget: usize) -> Result<Compressed> {
    let scores = fg.attention_scores().ok_or(Error::MissingPrior("attention scores"))?;
    check_budget(fg, budget)?;
    let mut order: Vec<usize> = (0..fg.patch_count()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..budget].to_vec();
    kept.sort_unstable();

    let mut assignment = vec![None; fg.patch_count()];
    let mut tokens = Vec::with_capacity(budget * fg.dim());
    let mut meta = Vec::with_capacity(budget);
    for (t, &p) in kept.iter().enumerate() {
        assignment[p] = Some(t);
        tokens.extend_from_slice(fg.patch(p));
        meta.push(TokenMeta {
            source: Some(p as u32),
            area: 1,
        });
    }
    Ok(Compressed {
        tokens: CompressedTokenSet {
            dim: fg.dim(),
            tokens,
            meta,
            origin: grid_origin(fg),
            residual_included: false,
        },
        assignment,
    })
}

/// Non-overlapping block means; always `out_h · out_w` tokens.
pub fn grid_pool(fg: &FeatureGrid, out_h: usize, out_w: usize) -> Result<Compressed> {
    let (gh, gw) = (fg.grid_height(), fg.grid_width());
    if out_h == 0 || out_w == 0 || gh % out_h != 0 || gw % out_w != 0 {
        return Err(Error::InvalidArgument(format!(
            "{out_h}x{out_w} does not evenly divide a {gh}x{gw} grid"
        )));
    }
    let (bh, bw) = (gh / out_h, gw / out_w);
    let d = fg.dim();
    let mut assignment = vec![None; fg.patch_count()];
    let mut tokens = Vec::with_capacity(out_h * out_w * d);
    let mut meta = Vec::with_capacity(out_h * out_w);
    for by in 0..out_h {
        for bx in 0..out_w {
            let t = by * out_w + bx;
            let mut acc = vec![0.0f64; d];
            for r in by * bh..(by + 1) * bh {
                for c in bx * bw..(bx + 1) * bw {
                    assignment[r * gw + c] = Some(t);
                    for (a, &v) in acc.iter_mut().zip(fg.patch_at(r, c)) {
                        *a += f64::from(v);
                    }
                }
            }
            let n = (bh * bw) as f64;
            tokens.extend(acc.into_iter().map(|a| (a / n) as f32));
            meta.push(TokenMeta {
                source: Some(t as u32),
                area: (bh * bw) as u64,
            });
        }
    }
    Ok(Compressed {
        tokens: CompressedTokenSet {
            dim: d,
            tokens,
            meta,
            origin: grid_origin(fg),
            residual_included: false,
        },
        assignment,
    })
}

/// Largest `out_h × out_w` pool shape with `out_h | H_p`, `out_w | W_p` and
/// at most `budget` tokens; ties go to the squarer shape, then the shorter.
pub fn grid_pool_shape(grid_h: usize, grid_w: usize, budget: usize) -> Option<(usize, usize)> {
    let divisors = |n: usize| (1..=n).filter(move |&d| n.is_multiple_of(d));
    divisors(grid_h)
        .flat_map(|a| divisors(grid_w).map(move |b| (a, b)))
        .filter(|&(a, b)| a * b <= budget)
        .max_by(|&(a1, b1), &(a2, b2)| {
            (a1 * b1)
                .cmp(&(a2 * b2))
                .then(a2.abs_diff(b2).cmp(&a1.abs_diff(b1)))
                .then(a2.cmp(&a1))
        })
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum()
}

/// CLS-guided clustering: the `budget` patches most cosine-similar to the
/// CLS vector become centres, every patch joins its nearest centre, and
/// each cluster is averaged. Tokens follow ascending seed patch index.
pub fn cls_merge(fg: &FeatureGrid, budget: usize) -> Result<Compressed> {
    let cls = fg.cls_vector().ok_or(Error::MissingPrior("cls vector"))?;
    check_budget(fg, budget)?;
    let n = fg.patch_count();
    let sims: Vec<f64> = (0..n).map(|p| cosine(fg.patch(p), cls)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut seeds = order[..budget].to_vec();
    seeds.sort_unstable();

    let mut assignment = vec![None; n];
    for (p, slot) in assignment.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (t, &s) in seeds.iter().enumerate() {
            let dist = sq_dist(fg.patch(p), fg.patch(s));
            if dist < best.0 {
                best = (dist, t);
            }
        }
        *slot = Some(best.1);
    }

    let d = fg.dim();
    let mut sums = vec![vec![0.0f64; d]; budget];
    let mut counts = vec![0u64; budget];
    for (p, t) in assignment.iter().enumerate() {
        let t = t.expect("every patch is assigned");
        counts[t] += 1;
        for (a, &v) in sums[t].iter_mut().zip(fg.patch(p)) {
            *a += f64::from(v);
        }
    }
    let mut tokens = Vec::with_capacity(budget * d);
    let mut meta = Vec::with_capacity(budget);
    for (t, &s) in seeds.iter().enumerate() {
        if counts[t] == 0 {
            tokens.extend_from_slice(fg.patch(s));
        } else {
            tokens.extend(sums[t].iter().map(|&a| (a / counts[t] as f64) as f32));
        }
        meta.push(TokenMeta {
            source: Some(s as u32),
            area: counts[t],
        });
    }
    Ok(Compressed {
        tokens: CompressedTokenSet {
            dim: d,
            tokens,
            meta,
            origin: grid_origin(fg),
            residual_included: false,
        },
        assignment,
    })
}

/// What a dropped patch is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DroppedTarget {
    #[default]
    Zero,
    GlobalMean,
}

/// Mean squared error over all patch channels between each patch and the
/// token it was assigned to.
pub fn retention_error(
    fg: &FeatureGrid,
    cts: &CompressedTokenSet,
    assignment: &[Option<usize>],
    dropped: DroppedTarget,
) -> Result<f64> {
    if assignment.len() != fg.patch_count() {
        return Err(Error::Shape(format!(
            "assignment covers {} patches, grid has {}",
            assignment.len(),
            fg.patch_count()
        )));
    }
    if cts.dim != fg.dim() {
        return Err(Error::Shape(format!("token dim {} vs grid dim {}", cts.dim, fg.dim())));
    }
    let d = fg.dim();
    let sink: Vec<f32> = match dropped {
        DroppedTarget::Zero => vec![0.0; d],
        DroppedTarget::GlobalMean => {
            let mut acc = vec![0.0f64; d];
            for p in 0..fg.patch_count() {
                for (a, &v) in acc.iter_mut().zip(fg.patch(p)) {
                    *a += f64::from(v);
                }
            }
            acc.into_iter().map(|a| (a / fg.patch_count() as f64) as f32).collect()
        }
    };
    let mut total = 0.0f64;
    for (p, t) in assignment.iter().enumerate() {
        let target = match *t {
            Some(t) if t < cts.len() => cts.token(t),
            Some(t) => {
                return Err(Error::Shape(format!("patch {p} assigned to missing token {t}")));
            }
            None => &sink,
        };
        total += sq_dist(fg.patch(p), target);
    }
    Ok(total / (fg.patch_count() * d) as f64)
}
