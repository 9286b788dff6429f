//! Selective-scan wall time over doubling sequence lengths.
//!
//! `cargo run --release --example bench_scan -- [max_length]`

use mimtrack::harness::{bench_csv, bench_scan, BenchConfig};

fn main() -> mimtrack::Result<()> {
    let max: usize = std::env::args().nth(1).map_or(32768, |s| s.parse().expect("length"));
    let lengths: Vec<usize> = std::iter::successors(Some(4096), |m| Some(m * 2)).take_while(|&m| m <= max).collect();
    let rows = bench_scan(&lengths, &BenchConfig::default())?;
    print!("{}", bench_csv(&rows));
    for r in &rows {
        println!("{:>6}: spread {:.1}% of median", r.length, 100.0 * r.spread);
    }
    Ok(())
}
