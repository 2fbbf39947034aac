//! Deterministic synthetic inputs: piecewise-constant feature grids whose
//! pieces coincide exactly with a set of object masks.
//!
//! A fixture directory holds
//!
//! ```text
//! features.atsr    (H_p, W_p, d) f32
//! masks.atsr       (num_masks, H, W) u8
//! scores.txt       confidence sidecar
//! cls.atsr         (1, d) f32
//! attention.atsr   (H_p, W_p) f32
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask_pipeline::{Bitmap, MaskSet, ObjectMask};
use crate::object_merge::FeatureGrid;
use crate::tensor_io::{read_sidecar, read_tensor, write_sidecar, write_tensor, DType, TensorData, TensorFile};

pub const GRID_SIDE: usize = 24;
pub const PATCH_PIXELS: usize = 14;
pub const IMAGE_SIDE: usize = GRID_SIDE * PATCH_PIXELS;
pub const FIXTURE_CONFIDENCE: f32 = 0.9;
pub const DEMO_DIM: usize = 8;
pub const DEMO_OBJECTS: usize = 5;
/// Object counts of the standard fixture set.
pub const SET_OBJECT_COUNTS: [usize; 4] = [1, 3, 5, 12];

pub const FEATURES_FILE: &str = "features.atsr";
pub const MASKS_FILE: &str = "masks.atsr";
pub const SCORES_FILE: &str = "scores.txt";
pub const CLS_FILE: &str = "cls.atsr";
pub const ATTENTION_FILE: &str = "attention.atsr";

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub features: FeatureGrid,
    pub candidates: MaskSet,
    /// Region label per patch, row-major.
    pub labels: Vec<usize>,
}

impl Fixture {
    pub fn object_count(&self) -> usize {
        self.candidates.len()
    }
}

/// `objects` regions on a 24×24 patch grid (nearest of `objects` distinct
/// seed patches), one constant random vector per region, and one mask per
/// region at 14 pixels per patch. Every mask has confidence 0.9.
pub fn piecewise_fixture(objects: usize, dim: usize, seed: u64) -> Result<Fixture> {
    let patches = GRID_SIDE * GRID_SIDE;
    if objects == 0 || objects > patches || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "fixture needs 1..={patches} objects and dim >= 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds: Vec<usize> = Vec::with_capacity(objects);
    while seeds.len() < objects {
        let p = rng.gen_range(0..patches);
        if !seeds.contains(&p) {
            seeds.push(p);
        }
    }
    let labels: Vec<usize> = (0..patches)
        .map(|p| {
            let (r, c) = ((p / GRID_SIDE) as i64, (p % GRID_SIDE) as i64);
            (0..objects)
                .min_by_key(|&i| {
                    let (sr, sc) = ((seeds[i] / GRID_SIDE) as i64, (seeds[i] % GRID_SIDE) as i64);
                    ((r - sr).pow(2) + (c - sc).pow(2), i)
                })
                .expect("at least one object")
        })
        .collect();

    // offset keeps every region vector well away from zero
    let region_vectors: Vec<Vec<f32>> = (0..objects)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let v: f32 = rng.gen_range(0.25..1.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect()
        })
        .collect();
    let values: Vec<f32> = labels.iter().flat_map(|&l| region_vectors[l].iter().copied()).collect();
    let attention: Vec<f32> = (0..patches).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut cls = vec![0.0f64; dim];
    for chunk in values.chunks_exact(dim) {
        for (a, &v) in cls.iter_mut().zip(chunk) {
            *a += f64::from(v);
        }
    }
    let cls: Vec<f32> = cls.into_iter().map(|a| (a / patches as f64) as f32).collect();

    let features = FeatureGrid::new(GRID_SIDE, GRID_SIDE, dim, values)?
        .with_cls_vector(cls)?
        .with_attention_scores(attention)?;

    let masks = (0..objects)
        .map(|region| {
            let bitmap = Bitmap::from_fn(IMAGE_SIDE, IMAGE_SIDE, |y, x| {
                labels[(y / PATCH_PIXELS) * GRID_SIDE + x / PATCH_PIXELS] == region
            });
            ObjectMask::new(bitmap, FIXTURE_CONFIDENCE, region as u32)
        })
        .collect();
    Ok(Fixture {
        name: format!("objects_{objects:02}"),
        features,
        candidates: MaskSet::new(IMAGE_SIDE, IMAGE_SIDE, masks)?,
        labels,
    })
}

fn fixture_seed(objects: usize) -> u64 {
    0x5eed_0000 + objects as u64
}

/// The bundled demo: 24×24×8 grid, five masks that partition the image.
pub fn demo_fixture() -> Fixture {
    piecewise_fixture(DEMO_OBJECTS, DEMO_DIM, fixture_seed(DEMO_OBJECTS)).expect("valid demo parameters")
}

/// Fixtures with 1, 3, 5 and 12 objects.
pub fn fixture_set() -> Vec<Fixture> {
    SET_OBJECT_COUNTS
        .iter()
        .map(|&n| piecewise_fixture(n, DEMO_DIM, fixture_seed(n)).expect("valid fixture parameters"))
        .collect()
}

pub fn write_fixture(fx: &Fixture, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let fg = &fx.features;
    write_tensor(&fg.to_tensor(DType::F32)?, dir.join(FEATURES_FILE))?;
    let (masks, scores) = fx.candidates.to_tensor()?;
    write_tensor(&masks, dir.join(MASKS_FILE))?;
    write_sidecar(&scores, dir.join(SCORES_FILE))?;
    if let Some(cls) = fg.cls_vector() {
        let t = TensorFile::new(vec![1, fg.dim() as u32], TensorData::F32(cls.to_vec()))?;
        write_tensor(&t, dir.join(CLS_FILE))?;
    }
    if let Some(att) = fg.attention_scores() {
        let t = TensorFile::new(
            vec![fg.grid_height() as u32, fg.grid_width() as u32],
            TensorData::F32(att.to_vec()),
        )?;
        write_tensor(&t, dir.join(ATTENTION_FILE))?;
    }
    Ok(())
}

/// Loads features plus whichever priors are present next to them.
pub fn load_features_with_priors(dir: impl AsRef<Path>) -> Result<FeatureGrid> {
    let dir = dir.as_ref();
    let mut fg = FeatureGrid::from_tensor(&read_tensor(dir.join(FEATURES_FILE))?)?;
    let cls_path = dir.join(CLS_FILE);
    if cls_path.exists() {
        fg = fg.with_cls_vector(read_tensor(cls_path)?.values_f32())?;
    }
    let att_path = dir.join(ATTENTION_FILE);
    if att_path.exists() {
        fg = fg.with_attention_scores(read_tensor(att_path)?.values_f32())?;
    }
    Ok(fg)
}

pub fn load_masks(dir: impl AsRef<Path>) -> Result<MaskSet> {
    let dir = dir.as_ref();
    MaskSet::from_tensor(
        &read_tensor(dir.join(MASKS_FILE))?,
        &read_sidecar(dir.join(SCORES_FILE))?,
    )
}
