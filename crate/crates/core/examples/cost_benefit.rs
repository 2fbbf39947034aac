//! Decoder cost with and without compression, across insertion layers.

use adatok::cost_model::{compute_cost, verify_benefit_identity, DecoderConfig};

fn main() -> adatok::Result<()> {
    let r = 15.0 / 576.0;
    println!(
        "{:>3} {:>12} {:>12} {:>10}",
        "k", "uncompressed", "compressed", "benefit"
    );
    for k in [1, 2, 4, 8, 16, 32] {
        let cfg = DecoderConfig::new(32, k, 576)?;
        let c = compute_cost(&cfg, r)?;
        assert!(verify_benefit_identity(&cfg, r));
        println!(
            "{k:>3} {:>12.4} {:>12.4} {:>10.4}",
            c.cost_uncompressed, c.cost_compressed, c.benefit
        );
    }
    let c = compute_cost(&DecoderConfig::new(32, 1, 576)?, r)?;
    let (before, after, saved) = c.flop_estimate(4096.0);
    println!("estimated at 4096 FLOPs per token pair: {before:.3e} -> {after:.3e}, saving {saved:.3e}");
    Ok(())
}
