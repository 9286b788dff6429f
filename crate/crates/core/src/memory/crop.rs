//! Target crops for the retrieval encoder.

use crate::error::{MimError, Result};
use crate::head::BBox;
use crate::tokenizer::{Frame, CHANNELS};

pub const CROP_SIZE: usize = 64;

/// Enlarges `bbox` by `factor` about its center, clamps it to the frame,
/// resizes so the longer side is [`CROP_SIZE`] and zero-pads the rest
/// (content at the top-left).
pub fn crop_and_resize(frame: &Frame, bbox: &BBox, factor: f64) -> Result<Frame> {
    bbox.validate()?;
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(MimError::Invalid(format!("crop factor {factor} must be at least 1")));
    }
    let b = bbox.scaled(factor);
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = (b.x + b.w).min(frame.width as f64);
    let y1 = (b.y + b.h).min(frame.height as f64);
    if x1 <= x0 || y1 <= y0 {
        return Err(MimError::DegenerateBox(format!("{bbox} lies outside the {}×{} frame", frame.width, frame.height)));
    }
    let (rw, rh) = (x1 - x0, y1 - y0);
    let long = rw.max(rh);
    let out_w = ((CROP_SIZE as f64 * rw / long).round() as usize).clamp(1, CROP_SIZE);
    let out_h = ((CROP_SIZE as f64 * rh / long).round() as usize).clamp(1, CROP_SIZE);
    let sx = rw / out_w as f64;
    let sy = rh / out_h as f64;
    let mut out = Frame::filled(CROP_SIZE, CROP_SIZE, [0.0; 3]);
    for oy in 0..out_h {
        let fy = y0 + (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let fx = x0 + (ox as f64 + 0.5) * sx - 0.5;
            for c in 0..CHANNELS {
                out.set(c, oy, ox, bilinear(frame, c, fy, fx));
            }
        }
    }
    Ok(out)
}

/// Bilinear sample at pixel-center coordinates, clamped at the edges.
pub fn bilinear(frame: &Frame, c: usize, y: f64, x: f64) -> f64 {
    let ymax = (frame.height - 1) as f64;
    let xmax = (frame.width - 1) as f64;
    let y = y.clamp(0.0, ymax);
    let x = x.clamp(0.0, xmax);
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    let y1 = (y0 + 1).min(frame.height - 1);
    let x1 = (x0 + 1).min(frame.width - 1);
    let top = frame.get(c, y0, x0) * (1.0 - tx) + frame.get(c, y0, x1) * tx;
    let bottom = frame.get(c, y1, x0) * (1.0 - tx) + frame.get(c, y1, x1) * tx;
    top * (1.0 - ty) + bottom * ty
}
