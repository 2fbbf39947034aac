//! Starts a receiver on an ephemeral port and sends a 59-token f16 frame to
//! it, throttled to 120 KB/s.

use adatok::object_merge::{CompressedTokenSet, Origin, TokenMeta};
use adatok::tensor_io::DType;
use adatok::token_wire::{pack, send, SendOptions, Server};

fn main() -> adatok::Result<()> {
    let sink = std::env::temp_dir().join("adatok-loopback");
    let server = Server::bind("127.0.0.1:0", &sink)?.spawn();

    let cts = CompressedTokenSet {
        dim: 1024,
        tokens: (0..59 * 1024).map(|i| ((i % 255) as f32 - 127.0) / 64.0).collect(),
        meta: (0..59)
            .map(|i| TokenMeta {
                source: Some(i),
                area: 1,
            })
            .collect(),
        origin: Origin {
            image_height: 480,
            image_width: 640,
            grid_height: 24,
            grid_width: 24,
        },
        residual_included: false,
    };
    let frame = pack(&cts, DType::F16)?;
    let opts = SendOptions {
        throttle_bytes_per_sec: Some(120 * 1024),
        ..Default::default()
    };
    let report = send(server.addr, &frame, &opts)?;
    println!(
        "sent {} bytes in {:.2?} ({:.1} KB/s), stored under {}",
        report.bytes_sent,
        report.elapsed,
        report.throughput_bytes_per_sec() / 1024.0,
        sink.display()
    );
    server.shutdown()
}
