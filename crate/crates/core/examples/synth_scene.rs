//! Renders a synthetic sequence and writes it as PPM frames plus
//! `groundtruth.txt`.
//!
//! `cargo run --release --example synth_scene -- [seed] [out_dir]`

use mimtrack::harness::{generate, random_scene, SceneParams, SequenceDataset};

fn main() -> mimtrack::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let out = args.next().unwrap_or_else(|| "scene_out".into());
    let params = SceneParams {
        occlusion_prob: 1.0,
        ..SceneParams::default()
    };
    let scene = random_scene(seed, 48, &params)?;
    println!("target {:?} moving {:?}", scene.target.bbox, scene.target.velocity);
    println!("{} distractor(s), {} occluder(s)", scene.distractors.len(), scene.occluders.len());
    let data = generate(&scene)?;
    data.save(&out)?;
    for (t, b) in data.gt.iter().enumerate().step_by(6) {
        println!("frame {t:>2}: {b}");
    }
    let back = SequenceDataset::load(&out)?;
    println!("reloaded {} frames, identical: {}", back.len(), back == data);
    Ok(())
}
