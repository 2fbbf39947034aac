//! Packs merged tokens into a frame at f32 and f16 and measures what the
//! half-precision wire costs in accuracy.

use adatok::fixtures::demo_fixture;
use adatok::mask_pipeline::{run_pipeline, GridPromptConfig};
use adatok::object_merge::{merge_fast, MergeOptions};
use adatok::tensor_io::DType;
use adatok::token_wire::{pack, unpack, FRAME_OVERHEAD};

fn main() -> adatok::Result<()> {
    let fx = demo_fixture();
    let masks = run_pipeline(&fx.candidates, &GridPromptConfig::default())?;
    let cts = merge_fast(&fx.features, &masks, &MergeOptions::default())?;
    for dtype in [DType::F32, DType::F16] {
        let frame = pack(&cts, dtype)?;
        let back = unpack(&frame)?;
        let worst = back
            .tokens
            .iter()
            .zip(&cts.tokens)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        println!(
            "{dtype:?}: frame {} bytes (payload {}, overhead {FRAME_OVERHEAD} + metadata), max abs error {worst:e}",
            frame.len(),
            cts.tokens.len() * dtype.size()
        );
    }
    Ok(())
}
