//! Patch extraction and the per-block spatial scan orders.
//!
//! `cargo run --release --example tokenize`

use mimtrack::tokenizer::{extract_patches, patch_count, unpatchify, Frame, ScanOrder};

fn main() -> mimtrack::Result<()> {
    let (h, w, k) = (12, 9, 3);
    let data = (0..3 * h * w).map(|i| (i % 251) as f64 / 250.0).collect();
    let frame = Frame::new(h, w, data)?;
    let patches = extract_patches(&frame, k)?;
    println!("{h}x{w} frame, patch {k}: {} tokens of width {}", patch_count(h, w, k)?, patches.cols());
    let back = unpatchify(&patches, h, w, k)?;
    println!("lossless round trip: {}", back.data() == frame.data());

    let (rows, cols) = (h / k, w / k);
    for layer in 0..4 {
        let order = ScanOrder::for_layer(layer, rows, cols);
        println!("block {layer}: visit order {:?}", order.order());
    }
    Ok(())
}
