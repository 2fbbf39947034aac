//! Runs grid selection, confidence filtering and IoU deduplication over a
//! handful of candidate masks.

use adatok::mask_pipeline::{
    dedup_by_iou, filter_confidence, grid_points, select_by_grid, Bitmap, GridPromptConfig, MaskSet, ObjectMask,
};

fn main() -> adatok::Result<()> {
    let (h, w) = (64, 64);
    let candidates = MaskSet::new(
        h,
        w,
        vec![
            ObjectMask::new(Bitmap::rect(h, w, 0, 0, 32, 64), 0.95, 0),
            ObjectMask::new(Bitmap::rect(h, w, 0, 0, 32, 63), 0.90, 1), // near-duplicate of 0
            ObjectMask::new(Bitmap::rect(h, w, 32, 0, 64, 32), 0.85, 2),
            ObjectMask::new(Bitmap::rect(h, w, 32, 32, 64, 64), 0.40, 3), // low confidence
            ObjectMask::new(Bitmap::rect(h, w, 0, 0, 1, 1), 0.99, 4),     // misses every point
        ],
    )?;
    let cfg = GridPromptConfig {
        points_per_side: 8,
        ..Default::default()
    };
    println!("first grid points: {:?}", &grid_points(cfg.points_per_side, h, w)?[..4]);

    let selected = select_by_grid(&candidates, &cfg)?;
    let confident = filter_confidence(&selected, cfg.sigma)?;
    let kept = dedup_by_iou(&confident, cfg.iou_dedup_threshold)?;
    for (stage, set) in [
        ("candidates", &candidates),
        ("selected", &selected),
        ("confident", &confident),
        ("kept", &kept),
    ] {
        let ids: Vec<u32> = set.masks().iter().map(|m| m.source_index).collect();
        println!("{stage:>10}: {ids:?}");
    }
    Ok(())
}
