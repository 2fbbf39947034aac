#![allow(dead_code)]

use adatok::mask_pipeline::{Bitmap, MaskSet, ObjectMask};
use adatok::object_merge::FeatureGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub grid: FeatureGrid,
    pub masks: MaskSet,
}

/// Random merge instance: grid up to 8×8, image up to 64×64, d up to 16,
/// 1 to 10 non-empty masks built from unions of random rectangles and
/// scattered pixels.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let gh = rng.gen_range(1..=8);
    let gw = rng.gen_range(1..=8);
    let h = rng.gen_range(gh..=64);
    let w = rng.gen_range(gw..=64);
    let d = rng.gen_range(1..=16);
    let values: Vec<f32> = (0..gh * gw * d).map(|_| rng.gen_range(-10.0f32..10.0)).collect();
    let grid = FeatureGrid::new(gh, gw, d, values).unwrap();

    let n = rng.gen_range(1..=10);
    let masks = (0..n)
        .map(|i| {
            let mut b = Bitmap::empty(h, w);
            if rng.gen_bool(0.7) {
                let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
                let (y1, x1) = (rng.gen_range(y0 + 1..=h), rng.gen_range(x0 + 1..=w));
                for y in y0..y1 {
                    for x in x0..x1 {
                        b.set(y, x, true);
                    }
                }
            }
            let scatter = rng.gen_range(0..h * w / 4 + 1);
            for _ in 0..scatter {
                b.set(rng.gen_range(0..h), rng.gen_range(0..w), true);
            }
            if b.area() == 0 {
                b.set(rng.gen_range(0..h), rng.gen_range(0..w), true);
            }
            ObjectMask::new(b, rng.gen_range(0.0..=1.0), i as u32)
        })
        .collect();
    Instance {
        grid,
        masks: MaskSet::new(h, w, masks).unwrap(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean of the nearest-upsampled field under each mask, by explicit pixel
/// loops. Pixel (y, x) reads patch (y·H_p/h, x·W_p/w).
pub fn brute_force_nearest(grid: &FeatureGrid, masks: &MaskSet) -> Vec<Vec<f64>> {
    let (h, w) = (masks.image_height(), masks.image_width());
    let (gh, gw, d) = (grid.grid_height(), grid.grid_width(), grid.dim());
    let mut field = vec![vec![vec![0.0f64; d]; w]; h];
    for (y, row) in field.iter_mut().enumerate() {
        for (x, px) in row.iter_mut().enumerate() {
            let patch = grid.patch_at(y * gh / h, x * gw / w);
            for c in 0..d {
                px[c] = f64::from(patch[c]);
            }
        }
    }
    average_under_masks(&field, masks)
}

/// Same, over a bilinear field sampled at half-pixel centres with edge
/// clamping.
pub fn brute_force_bilinear(grid: &FeatureGrid, masks: &MaskSet) -> Vec<Vec<f64>> {
    let (h, w) = (masks.image_height(), masks.image_width());
    let (gh, gw, d) = (grid.grid_height(), grid.grid_width(), grid.dim());
    let src = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = if lo + 1 < n_in { lo + 1 } else { lo };
        (lo, hi, s - lo as f64)
    };
    let mut field = vec![vec![vec![0.0f64; d]; w]; h];
    for (y, row) in field.iter_mut().enumerate() {
        let (y0, y1, fy) = src(y, h, gh);
        for (x, px) in row.iter_mut().enumerate() {
            let (x0, x1, fx) = src(x, w, gw);
            for (c, out) in px.iter_mut().enumerate() {
                let v = |r: usize, q: usize| f64::from(grid.patch_at(r, q)[c]);
                *out = v(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + v(y0, x1) * (1.0 - fy) * fx
                    + v(y1, x0) * fy * (1.0 - fx)
                    + v(y1, x1) * fy * fx;
            }
        }
    }
    average_under_masks(&field, masks)
}

fn average_under_masks(field: &[Vec<Vec<f64>>], masks: &MaskSet) -> Vec<Vec<f64>> {
    masks
        .masks()
        .iter()
        .map(|m| {
            let d = field[0][0].len();
            let mut acc = vec![0.0f64; d];
            let mut n = 0.0;
            for (y, row) in field.iter().enumerate() {
                for (x, px) in row.iter().enumerate() {
                    if m.bitmap.get(y, x) {
                        for c in 0..d {
                            acc[c] += px[c];
                        }
                        n += 1.0;
                    }
                }
            }
            acc.into_iter().map(|a| a / n).collect()
        })
        .collect()
}

/// `max |a − b| / max |b|` over all channels of all tokens.
pub fn relative_max_error(actual: &[f32], expected: &[Vec<f64>]) -> f64 {
    let flat: Vec<f64> = expected.iter().flatten().copied().collect();
    assert_eq!(actual.len(), flat.len(), "token count mismatch");
    let scale = flat.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    actual
        .iter()
        .zip(&flat)
        .map(|(&a, &b)| (f64::from(a) - b).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn relative_max_diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE) as f64;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .fold(0.0, f64::max)
        / scale
}
