//! Scan throughput versus sequence length.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MimError, Result};
use crate::numerics::nn::normal_tensor;
use crate::numerics::ParamStore;
use crate::ssm::{selective_scan_plain, Direction, SelectiveParams};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub length: usize,
    pub median_ns: f64,
    /// Relative spread `(max − min) / median` over the runs.
    pub spread: f64,
    /// `t(2m) / t(m)` when `2m` was also measured.
    pub ratio: Option<f64>,
}

pub struct BenchConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            d_state: 4,
            runs: 7,
            seed: 0,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times the selective scan at each length (ascending), one warm-up run
/// plus `runs` timed runs each.
pub fn bench_scan(lengths: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if lengths.windows(2).any(|w| w[0] >= w[1]) || lengths.contains(&0) {
        return Err(MimError::Invalid("bench lengths must be positive and ascending".into()));
    }
    if cfg.runs < 5 {
        return Err(MimError::Invalid("bench needs at least 5 runs per length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let params = SelectiveParams::new(&mut store, "bench", cfg.d_model, cfg.d_state, &mut rng)?;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(lengths.len());
    for &m in lengths {
        let x = normal_tensor(&mut rng, &[m, cfg.d_model], 1.0);
        std::hint::black_box(selective_scan_plain(&store, &params, &x, Direction::Forward)?);
        let mut times = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let t = Instant::now();
            std::hint::black_box(selective_scan_plain(&store, &params, &x, Direction::Forward)?);
            times.push(t.elapsed().as_nanos() as f64);
        }
        let med = median(&mut times);
        let spread = (times[times.len() - 1] - times[0]) / med;
        rows.push(BenchRow {
            length: m,
            median_ns: med,
            spread,
            ratio: None,
        });
    }
    for i in 0..rows.len() {
        let m = rows[i].length;
        if let Some(j) = rows.iter().position(|r| r.length == 2 * m) {
            rows[i].ratio = Some(rows[j].median_ns / rows[i].median_ns);
        }
    }
    Ok(rows)
}

/// `length,median_ns,ratio` rows; the ratio is empty without a `2m` row.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("length,median_ns,ratio\n");
    for r in rows {
        let ratio = r.ratio.map(|v| format!("{v:.4}")).unwrap_or_default();
        s.push_str(&format!("{},{:.0},{ratio}\n", r.length, r.median_ns));
    }
    s
}
