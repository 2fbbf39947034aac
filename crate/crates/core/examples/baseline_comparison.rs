//! Retention error of object merging against patch-level baselines at the
//! same token count.

use adatok::baselines::{grid_pool_shape, retention_error, DroppedTarget, Strategy};
use adatok::fixtures::fixture_set;
use adatok::mask_pipeline::{run_pipeline, GridPromptConfig};
use adatok::object_merge::MergeOptions;

fn main() -> adatok::Result<()> {
    println!("{:<11} {:<13} {:>6} {:>10}", "fixture", "strategy", "tokens", "error");
    for fx in fixture_set() {
        let k = fx.object_count();
        let masks = run_pipeline(&fx.candidates, &GridPromptConfig::default())?;
        let (oh, ow) = grid_pool_shape(24, 24, k).expect("budget >= 1");
        let strategies = [
            Strategy::ObjectMerge(MergeOptions::default()),
            Strategy::TopkDrop { budget: k },
            Strategy::GridPool { out_h: oh, out_w: ow },
            Strategy::ClsMerge { budget: k },
        ];
        for s in strategies {
            let c = s.apply(&fx.features, Some(&masks))?;
            let e = retention_error(&fx.features, &c.tokens, &c.assignment, DroppedTarget::Zero)?;
            println!("{:<11} {:<13} {:>6} {:>10.5}", fx.name, s.name(), c.tokens.len(), e);
        }
    }
    Ok(())
}
