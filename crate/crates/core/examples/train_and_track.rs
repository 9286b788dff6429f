//! Trains on the synthetic pool and tracks the held-out scenes.
//!
//! `cargo run --release --example train_and_track -- [steps] [seed] [full|no-temporal|no-retrieval|no-both]`

use std::time::Instant;

use mimtrack::harness::{scene_pool, track_sequence, train, RunConfig};

fn main() -> mimtrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    if let Some(steps) = args.next() {
        cfg.train.steps = steps.parse().expect("steps");
    }
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse().expect("seed");
    }
    cfg = match args.next().as_deref().unwrap_or("full") {
        "full" => cfg,
        "no-temporal" => cfg.ablated(false, true),
        "no-retrieval" => cfg.ablated(true, false),
        "no-both" => cfg.ablated(false, false),
        other => panic!("unknown variant {other}"),
    };
    let d = &cfg.data;
    let pool = scene_pool(d.pool_seed, d.train_sequences, cfg.model.canvas, &d.scene)?;
    let held_out = scene_pool(d.eval_seed, d.eval_sequences, cfg.model.canvas, &d.scene)?;

    let start = Instant::now();
    let out = train(&cfg, &pool)?;
    for (i, chunk) in out.losses.chunks(250).enumerate() {
        println!("steps {:>5}..: mean loss {:.4}", i * 250, chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    println!("trained {} steps in {:.1}s", out.losses.len(), start.elapsed().as_secs_f64());

    let mut total = 0.0;
    for (i, seq) in held_out.iter().enumerate() {
        let t = track_sequence(&out.model, &out.store, seq, None)?;
        println!(
            "scene {i}: mean IoU {:.3}, P@20 {:.3}, success AUC {:.3}",
            t.mean_iou(),
            t.report.precision_at_20,
            t.report.success_auc
        );
        total += t.mean_iou();
    }
    println!("held-out mean IoU {:.3}", total / held_out.len() as f64);
    Ok(())
}
