//! Seeded synthetic tracking scenes with exact ground truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{quantize, SequenceDataset};
use crate::error::{MimError, Result};
use crate::head::BBox;
use crate::tokenizer::{Frame, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Ellipse,
}

/// An object moving linearly, its box at frame `t` being
/// `(x + vx·t, y + vy·t, w·(1 + growth·t), h·(1 + growth·t))` about the
/// moving center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [f64; 3],
    pub bbox: BBox,
    pub velocity: (f64, f64),
    #[serde(default)]
    pub growth: f64,
}

impl ObjectSpec {
    pub fn bbox_at(&self, t: usize) -> BBox {
        let t = t as f64;
        let s = 1.0 + self.growth * t;
        let (cx, cy) = self.bbox.center();
        if self.growth == 0.0 {
            return BBox::new(self.bbox.x + self.velocity.0 * t, self.bbox.y + self.velocity.1 * t, self.bbox.w, self.bbox.h);
        }
        BBox::from_center(cx + self.velocity.0 * t, cy + self.velocity.1 * t, self.bbox.w * s, self.bbox.h * s)
    }
}

/// Opaque rectangle covering the scene during frames `start..end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub start: usize,
    pub end: usize,
    pub bbox: BBox,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: [f64; 3],
    pub target: ObjectSpec,
    #[serde(default)]
    pub distractors: Vec<ObjectSpec>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    /// Std of per-pixel Gaussian noise.
    #[serde(default)]
    pub noise: f64,
}

const SUPERSAMPLE: usize = 4;

fn coverage(shape: Shape, b: &BBox, x: usize, y: usize) -> f64 {
    let n = SUPERSAMPLE;
    let mut hit = 0;
    for sy in 0..n {
        let py = y as f64 + (sy as f64 + 0.5) / n as f64;
        for sx in 0..n {
            let px = x as f64 + (sx as f64 + 0.5) / n as f64;
            let inside = match shape {
                Shape::Rect => px >= b.x && px < b.x + b.w && py >= b.y && py < b.y + b.h,
                Shape::Ellipse => {
                    let (cx, cy) = b.center();
                    let dx = (px - cx) / (b.w / 2.0);
                    let dy = (py - cy) / (b.h / 2.0);
                    dx * dx + dy * dy <= 1.0
                }
            };
            hit += inside as usize;
        }
    }
    hit as f64 / (n * n) as f64
}

fn paint(frame: &mut Frame, shape: Shape, b: &BBox, color: [f64; 3]) {
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = ((b.x + b.w).ceil().max(0.0) as usize).min(frame.width);
    let y1 = ((b.y + b.h).ceil().max(0.0) as usize).min(frame.height);
    for y in y0..y1 {
        for x in x0..x1 {
            let a = coverage(shape, b, x, y);
            if a > 0.0 {
                for (c, &col) in color.iter().enumerate() {
                    let v = frame.get(c, y, x);
                    frame.set(c, y, x, v * (1.0 - a) + col * a);
                }
            }
        }
    }
}

/// Renders the scene. Pixel values are quantized to 8 bits so frames
/// survive a PPM round trip unchanged.
pub fn generate(scene: &SyntheticScene) -> Result<SequenceDataset> {
    if scene.frames == 0 || scene.height == 0 || scene.width == 0 {
        return Err(MimError::Invalid("scene needs frames and a canvas".into()));
    }
    scene.target.bbox.validate()?;
    let canvas = BBox::new(0.0, 0.0, scene.width as f64, scene.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let noise = if scene.noise > 0.0 {
        Some(Normal::new(0.0, scene.noise).map_err(|e| MimError::Invalid(e.to_string()))?)
    } else {
        None
    };
    let mut frames = Vec::with_capacity(scene.frames);
    let mut gt = Vec::with_capacity(scene.frames);
    for t in 0..scene.frames {
        let target = scene.target.bbox_at(t);
        if !target.is_valid() || target.iou(&canvas) == 0.0 {
            return Err(MimError::Invalid(format!("target leaves the canvas at frame {t}")));
        }
        let mut f = Frame::filled(scene.height, scene.width, scene.background);
        for d in &scene.distractors {
            paint(&mut f, d.shape, &d.bbox_at(t), d.color);
        }
        paint(&mut f, scene.target.shape, &target, scene.target.color);
        for o in scene.occluders.iter().filter(|o| (o.start..o.end).contains(&t)) {
            paint(&mut f, Shape::Rect, &o.bbox, o.color);
        }
        for v in f.data_mut() {
            let n = noise.map_or(0.0, |d| d.sample(&mut rng));
            *v = quantize(*v + n) as f64 / 255.0;
        }
        debug_assert_eq!(f.data().len(), CHANNELS * scene.height * scene.width);
        frames.push(f);
        gt.push(target);
    }
    SequenceDataset::new(frames, gt)
}

/// Ranges for randomly drawn scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub frames: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Minimum and maximum speed in pixels per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    pub distractors: usize,
    /// Max per-channel color offset of distractors from the target.
    pub distractor_color_jitter: f64,
    /// Probability that a scene gets one occluder.
    pub occlusion_prob: f64,
    pub noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            frames: 24,
            min_size: 8.0,
            max_size: 14.0,
            min_speed: 0.75,
            max_speed: 1.5,
            distractors: 1,
            distractor_color_jitter: 0.04,
            occlusion_prob: 0.0,
            noise: 0.02,
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Draws a square-canvas scene with a linearly moving target that stays
/// fully inside the canvas, plus static look-alike distractors placed off
/// the target's path.
pub fn random_scene(seed: u64, canvas: usize, p: &SceneParams) -> Result<SyntheticScene> {
    if p.frames < 2 || !(p.min_size > 0.0 && p.min_size <= p.max_size) || p.max_size >= canvas as f64 {
        return Err(MimError::Config("scene parameters do not fit the canvas".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = canvas as f64;
    let span = (p.frames - 1) as f64;
    for _ in 0..1000 {
        let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
        let w = rng.gen_range(p.min_size..=p.max_size).round();
        let h = rng.gen_range(p.min_size..=p.max_size).round();
        let speed = rng.gen_range(p.min_speed..=p.max_speed);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
        let (dx, dy) = (vx * span, vy * span);
        let (xlo, xhi) = ((-dx).max(0.0), side - w - dx.max(0.0));
        let (ylo, yhi) = ((-dy).max(0.0), side - h - dy.max(0.0));
        if xlo > xhi || ylo > yhi {
            continue;
        }
        let background = random_color(&mut rng);
        let color = random_color(&mut rng);
        if color_distance(color, background) < 0.35 {
            continue;
        }
        let target = ObjectSpec {
            shape,
            color,
            bbox: BBox::new(rng.gen_range(xlo..=xhi), rng.gen_range(ylo..=yhi), w, h),
            velocity: (vx, vy),
            growth: 0.0,
        };
        let path: Vec<BBox> = (0..p.frames).map(|t| target.bbox_at(t).scaled(1.2)).collect();
        let mut distractors: Vec<ObjectSpec> = Vec::new();
        for _ in 0..200 {
            if distractors.len() == p.distractors {
                break;
            }
            let dw = rng.gen_range(p.min_size..=p.max_size).round();
            let dh = rng.gen_range(p.min_size..=p.max_size).round();
            let b = BBox::new(rng.gen_range(0.0..=side - dw), rng.gen_range(0.0..=side - dh), dw, dh);
            let clear = path.iter().all(|t| t.iou(&b) == 0.0) && distractors.iter().all(|d| d.bbox.iou(&b) == 0.0);
            if !clear {
                continue;
            }
            let j = p.distractor_color_jitter;
            let mut c = color;
            for v in &mut c {
                *v = (*v + rng.gen_range(-j..=j)).clamp(0.0, 1.0);
            }
            distractors.push(ObjectSpec {
                shape,
                color: c,
                bbox: b,
                velocity: (0.0, 0.0),
                growth: 0.0,
            });
        }
        if distractors.len() < p.distractors {
            continue;
        }
        let mut occluders = Vec::new();
        if rng.gen_bool(p.occlusion_prob.clamp(0.0, 1.0)) {
            let start = rng.gen_range(1..p.frames);
            let len = rng.gen_range(1..=3.min(p.frames - start));
            let mid = target.bbox_at(start + len / 2);
            occluders.push(Occluder {
                start,
                end: start + len,
                bbox: BBox::new(mid.x + mid.w * 0.25, 0.0, mid.w * 0.5, side),
                color: random_color(&mut rng),
            });
        }
        return Ok(SyntheticScene {
            seed: rng.gen(),
            height: canvas,
            width: canvas,
            frames: p.frames,
            background,
            target,
            distractors,
            occluders,
            noise: p.noise,
        });
    }
    Err(MimError::Config("could not place a scene with these parameters".into()))
}

/// `count` scenes with seeds derived from `seed`.
pub fn scene_pool(seed: u64, count: usize, canvas: usize, p: &SceneParams) -> Result<Vec<SequenceDataset>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate(&random_scene(rng.gen(), canvas, p)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(velocity: (f64, f64)) -> SyntheticScene {
        SyntheticScene {
            seed: 7,
            height: 32,
            width: 48,
            frames: 10,
            background: [0.1, 0.1, 0.1],
            target: ObjectSpec {
                shape: Shape::Rect,
                color: [0.9, 0.2, 0.2],
                bbox: BBox::new(4.0, 6.0, 8.0, 6.0),
                velocity,
                growth: 0.0,
            },
            distractors: vec![],
            occluders: vec![],
            noise: 0.05,
        }
    }

    #[test]
    fn static_and_linear_ground_truth() {
        let d = generate(&scene((0.0, 0.0))).unwrap();
        assert!(d.gt.iter().all(|b| *b == d.gt[0]));
        let d = generate(&scene((2.0, 0.0))).unwrap();
        for t in 1..10 {
            assert_eq!(d.gt[t].x - d.gt[t - 1].x, 2.0);
            assert_eq!(d.gt[t].y, d.gt[0].y);
        }
    }

    #[test]
    fn deterministic_frames() {
        let a = generate(&scene((1.0, 0.5))).unwrap();
        let b = generate(&scene((1.0, 0.5))).unwrap();
        assert_eq!(a, b);
        let mut other = scene((1.0, 0.5));
        other.seed = 8;
        assert_ne!(generate(&other).unwrap().frames, a.frames);
    }

    #[test]
    fn target_leaving_canvas_is_an_error() {
        assert!(generate(&scene((10.0, 0.0))).is_err());
    }

    #[test]
    fn pixel_coverage_matches_box() {
        let mut s = scene((0.0, 0.0));
        s.noise = 0.0;
        let d = generate(&s).unwrap();
        let f = &d.frames[0];
        assert_eq!(f.get(0, 8, 8), quantize(0.9) as f64 / 255.0);
        assert_eq!(f.get(0, 20, 30), quantize(0.1) as f64 / 255.0);
    }

    #[test]
    fn random_scenes_stay_inside_and_are_reproducible() {
        let p = SceneParams::default();
        for seed in 0..20 {
            let s = random_scene(seed, 48, &p).unwrap();
            assert_eq!(s, random_scene(seed, 48, &p).unwrap());
            assert_eq!(s.distractors.len(), 1);
            for t in 0..p.frames {
                let b = s.target.bbox_at(t);
                assert!(b.x >= -1e-9 && b.y >= -1e-9 && b.x + b.w <= 48.0 + 1e-9 && b.y + b.h <= 48.0 + 1e-9);
            }
        }
    }
}
