//! Runs the selective scan sequentially and in chunks on one random
//! instance, then prints agreement, flop counts and wall time.
//!
//! cargo run --release --example scan_benchmark -- [len]

use std::time::Instant;

use mcst::ssm::ScanInstance;

fn main() -> mcst::Result<()> {
    let len = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let inst = ScanInstance::random(len, 32, 16, 1)?;

    let t = Instant::now();
    let (reference, stats) = inst.sequential()?;
    println!("sequential      {:>10} flops  {:>8.2} ms", stats.flops, t.elapsed().as_secs_f64() * 1e3);

    for chunk in [1, 8, 64, 512, len] {
        let t = Instant::now();
        let (y, stats) = inst.parallel(chunk)?;
        println!(
            "chunk {chunk:>6}    {:>10} flops  {:>8.2} ms  max diff {:.1e}",
            stats.flops,
            t.elapsed().as_secs_f64() * 1e3,
            y.max_abs_diff(&reference)
        );
    }

    let (_, half) = ScanInstance::random(len / 2, 32, 16, 1)?.sequential()?;
    println!("flops(len) / flops(len/2) = {:.4}", stats.flops as f64 / half.flops as f64);
    Ok(())
}
