//! Sequences on disk: one binary PPM per frame plus `groundtruth.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{MimError, Result};
use crate::head::{format_boxes, parse_boxes, BBox};
use crate::tokenizer::{Frame, CHANNELS};

/// Frames with one ground-truth box each; frame 0 is the template.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub frames: Vec<Frame>,
    pub gt: Vec<BBox>,
}

impl SequenceDataset {
    pub fn new(frames: Vec<Frame>, gt: Vec<BBox>) -> Result<Self> {
        if frames.len() != gt.len() {
            return Err(MimError::Invalid(format!("{} frames but {} boxes", frames.len(), gt.len())));
        }
        if frames.is_empty() {
            return Err(MimError::Invalid("empty sequence".into()));
        }
        Ok(Self { frames, gt })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            fs::write(frame_path(dir, i), encode_ppm(f))?;
        }
        fs::write(dir.join("groundtruth.txt"), format_boxes(&self.gt))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let gt = parse_boxes(&fs::read_to_string(dir.join("groundtruth.txt"))?)?;
        let frames = (0..gt.len())
            .map(|i| {
                let p = frame_path(dir, i);
                let bytes = fs::read(&p).map_err(|e| MimError::Format(format!("{}: {e}", p.display())))?;
                decode_ppm(&bytes)
            })
            .collect::<Result<_>>()?;
        Self::new(frames, gt)
    }
}

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("{:05}.ppm", i + 1))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary P6 with maxval 255.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    for y in 0..frame.height {
        for x in 0..frame.width {
            for c in 0..CHANNELS {
                out.push(quantize(frame.get(c, y, x)));
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let bad = |m: &str| MimError::Format(format!("PPM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let pixels = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
    if pixels.len() != width * height * CHANNELS {
        return Err(bad("pixel data length does not match the header"));
    }
    let mut frame = Frame::filled(height, width, [0.0; 3]);
    for (i, px) in pixels.chunks(CHANNELS).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            frame.set(c, i / width, i % width, v as f64 / 255.0);
        }
    }
    Ok(frame)
}
