//! Raw image vs token stream bandwidth at one frame per second.

use adatok::cost_model::{bandwidth_table, image_bytes, reduction_factor, token_bytes, BandwidthEntry};
use adatok::tensor_io::DType;

fn main() {
    for (row, entry) in bandwidth_table() {
        println!("{:>12} {entry}", row.to_string());
    }
    let img = image_bytes(640, 480);
    let tok = token_bytes(59, 1024, DType::F16);
    println!(
        "640x480 frame {} vs 59 tokens {}: {:.2}x less",
        BandwidthEntry::from_bytes(img),
        BandwidthEntry::from_bytes(tok),
        reduction_factor(640, 480, 59, 1024, DType::F16)
    );
}
