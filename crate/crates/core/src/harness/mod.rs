//! Synthetic data, dataset IO, metrics, training, tracking and benchmarks.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod synth;
pub mod track;
pub mod train;
pub mod verify;

pub use bench::{bench_csv, bench_scan, BenchConfig, BenchRow};
pub use config::{DataConfig, RunConfig, TrainConfig};
pub use dataset::SequenceDataset;
pub use metrics::{evaluate, iou, MetricReport};
pub use synth::{generate, random_scene, scene_pool, SceneParams, SyntheticScene};
pub use track::{track_sequence, TrackOutput};
pub use train::{train, TrainOutcome};
pub use verify::{verify, VerifyReport};

/// Thread pool sized by `MIM_THREADS`, else by the available cores.
pub fn worker_pool() -> rayon::ThreadPool {
    let threads = std::env::var("MIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}
