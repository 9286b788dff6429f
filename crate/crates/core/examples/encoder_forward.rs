//! One forward pass of the untrained tracker on a synthetic window, with
//! the template-invariance and ablation behaviour made visible.
//!
//! `cargo run --release --example encoder_forward`

use mimtrack::harness::{generate, random_scene, SceneParams};
use mimtrack::head::predict;
use mimtrack::model::{ModelConfig, TrackerModel};
use mimtrack::numerics::Graph;

fn main() -> mimtrack::Result<()> {
    let cfg = ModelConfig::default();
    let (_, store) = TrackerModel::init(&cfg, 0)?;
    println!("{} parameters in {} arrays", store.numel(), store.len());

    let data = generate(&random_scene(4, cfg.canvas, &SceneParams::default())?)?;
    let k = 6;
    let frames: Vec<_> = cfg.window_indices(k).into_iter().map(|i| data.frames[i].clone()).collect();
    println!("window for frame {k}: {:?}", cfg.window_indices(k));
    let fused = vec![0.1; cfg.embed_dim];

    for (name, run) in [("full", cfg.clone()), ("w/o both", ModelConfig { temporal: false, retrieval: false, ..cfg.clone() })] {
        let m = TrackerModel::bind(&run, &store)?;
        let mut g = Graph::new();
        let out = m.forward(&mut g, &store, &data.frames[0], &data.gt[0], &frames, Some(&fused))?;
        let tokens = g.value(out.grid.tokens);
        let (bbox, score) = predict(g.value(out.head), &run.geometry())?;
        println!(
            "{name:>8}: grid {:?}, {} attention map(s), prediction {bbox} (score {score:.3}), gt {}",
            tokens.shape(),
            out.attention.len(),
            data.gt[k]
        );
        if let Some(&w) = out.attention.first() {
            let w = g.value(w);
            println!("          block 0 attention rows sum to {:.6}", w.row_slice(0).iter().sum::<f64>());
        }
    }
    Ok(())
}
