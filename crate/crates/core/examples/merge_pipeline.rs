//! End to end on the bundled demo: pipeline, masked average merging, and
//! the adaptive compression ratio.

use adatok::fixtures::demo_fixture;
use adatok::mask_pipeline::{run_pipeline, GridPromptConfig};
use adatok::object_merge::{merge, merge_fast, MergeOptions, UpsampleMode};

fn main() -> adatok::Result<()> {
    let fx = demo_fixture();
    let masks = run_pipeline(&fx.candidates, &GridPromptConfig::default())?;
    let cts = merge_fast(&fx.features, &masks, &MergeOptions::default())?;
    println!(
        "{} masks -> {} tokens, r = {:.6}",
        fx.candidates.len(),
        cts.len(),
        cts.compression_ratio()
    );
    for (t, meta) in cts.iter_tokens().zip(&cts.meta) {
        println!("  mask {:?} area {:>6}: {:+.3?}", meta.source, meta.area, &t[..3]);
    }

    let bilinear = MergeOptions {
        mode: UpsampleMode::Bilinear,
        residual_token: true,
        ..Default::default()
    };
    let smooth = merge(&fx.features, &masks, &bilinear)?;
    println!(
        "bilinear with residual: {} tokens, residual included = {}",
        smooth.len(),
        smooth.residual_included
    );
    Ok(())
}
