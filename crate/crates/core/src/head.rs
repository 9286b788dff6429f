//! Box prediction head, its training loss and per-sequence track state.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MimError, Result};
use crate::numerics::{sigmoid, Graph, LayerNorm, Mlp, ParamStore, Tensor, Var};

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(MimError::DegenerateBox(self.to_string()))
        }
    }

    /// Intersection over union; 0 when either box is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// Euclidean distance between centers.
    pub fn center_error(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }

    /// Scales width and height by `factor` about the center.
    pub fn scaled(&self, factor: f64) -> BBox {
        let (cx, cy) = self.center();
        BBox::from_center(cx, cy, self.w * factor, self.h * factor)
    }

    /// Parses an `x,y,w,h` line (commas, tabs or spaces).
    pub fn parse(line: &str) -> Result<BBox> {
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| MimError::Format(format!("box value {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        match vals[..] {
            [x, y, w, h] => Ok(BBox::new(x, y, w, h)),
            _ => Err(MimError::Format(format!("expected 4 box values, got {line:?}"))),
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// One box per line as `x,y,w,h`.
pub fn format_boxes(boxes: &[BBox]) -> String {
    boxes.iter().map(|b| format!("{b}\n")).collect()
}

pub fn parse_boxes(text: &str) -> Result<Vec<BBox>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(BBox::parse).collect()
}

pub fn write_trajectory(path: &Path, boxes: &[BBox]) -> Result<()> {
    Ok(std::fs::write(path, format_boxes(boxes))?)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<BBox>> {
    parse_boxes(&std::fs::read_to_string(path)?)
}

/// Token-grid layout of a frame: `rows × cols` cells of `patch` pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadGeometry {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
}

impl HeadGeometry {
    pub fn width(&self) -> f64 {
        (self.cols * self.patch) as f64
    }

    pub fn height(&self) -> f64 {
        (self.rows * self.patch) as f64
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }

    /// `(row, col)` of row-major token `i`.
    pub fn cell(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    /// Token whose cell contains the point, clamped to the grid.
    pub fn token_at(&self, x: f64, y: f64) -> usize {
        let k = self.patch as f64;
        let col = ((x / k).floor().max(0.0) as usize).min(self.cols - 1);
        let row = ((y / k).floor().max(0.0) as usize).min(self.rows - 1);
        row * self.cols + col
    }

    /// Pixel box from one token's raw `(r0, r1, r2, r3)` regressions.
    pub fn decode(&self, cell: (usize, usize), reg: &[f64]) -> BBox {
        let k = self.patch as f64;
        let cx = (cell.1 as f64 + sigmoid(reg[0])) * k;
        let cy = (cell.0 as f64 + sigmoid(reg[1])) * k;
        BBox::from_center(cx, cy, sigmoid(reg[2]) * self.width(), sigmoid(reg[3]) * self.height())
    }
}

/// Per-token MLP emitting `[objectness logit, r0, r1, r2, r3]`.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub norm: LayerNorm,
    pub mlp: Mlp,
}

pub const HEAD_OUTPUTS: usize = 5;

impl HeadParams {
    pub fn new(store: &mut ParamStore, d_model: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, "head.norm", d_model)?,
            mlp: Mlp::new(store, "head.mlp", &[d_model, hidden, HEAD_OUTPUTS], rng)?,
        })
    }

    /// `L × D` tokens to `L × 5` head outputs.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<Var> {
        let x = self.norm.forward(g, store, tokens)?;
        self.mlp.forward(g, store, x)
    }
}

/// Picks the highest-logit token (lowest index on ties) and decodes its box.
/// Returns the box and `σ(logit)`.
pub fn predict(out: &Tensor, geom: &HeadGeometry) -> Result<(BBox, f64)> {
    let cells: Vec<_> = (0..geom.tokens()).map(|i| geom.cell(i)).collect();
    predict_with_cells(out, &cells, geom)
}

/// [`predict`] with an explicit token-to-cell map.
pub fn predict_with_cells(out: &Tensor, cells: &[(usize, usize)], geom: &HeadGeometry) -> Result<(BBox, f64)> {
    if out.rank() != 2 || out.cols() != HEAD_OUTPUTS || out.rows() != cells.len() || cells.is_empty() {
        return shape_err(format!("head output {:?} for {} cells", out.shape(), cells.len()));
    }
    let mut best = 0;
    for i in 1..out.rows() {
        if out.at(i, 0) > out.at(best, 0) {
            best = i;
        }
    }
    let row = out.row_slice(best);
    Ok((geom.decode(cells[best], &row[1..]), sigmoid(row[0])))
}

pub const L1_WEIGHT: f64 = 5.0;
pub const IOU_WEIGHT: f64 = 2.0;

/// Scalar loss nodes, kept separate for logging and tests.
pub struct LossTerms {
    pub total: Var,
    pub l1: Var,
    pub iou: Var,
    pub bce: Var,
}

/// `5·L1 + 2·(1 − IoU) + BCE` on an `L × 5` head output.
///
/// The box terms use the token containing the gt center, in coordinates
/// normalized by the frame size. The objectness target is one-hot on that
/// token.
pub fn head_loss(g: &mut Graph, out: Var, gt: &BBox, geom: &HeadGeometry) -> Result<LossTerms> {
    gt.validate()?;
    let v = g.value(out);
    if v.rank() != 2 || v.cols() != HEAD_OUTPUTS || v.rows() != geom.tokens() {
        return shape_err(format!("head output {:?} for {} tokens", v.shape(), geom.tokens()));
    }
    let (w, h) = (geom.width(), geom.height());
    let (gcx, gcy) = gt.center();
    let pos = geom.token_at(gcx, gcy);
    let (row, col) = geom.cell(pos);

    let logits = g.slice_cols(out, 0, 1)?;
    let mut target = Tensor::zeros(&[geom.tokens(), 1]);
    target.data_mut()[pos] = 1.0;
    let bce = g.bce_with_logits(logits, target)?;
    let bce = g.scale(bce, geom.tokens() as f64);

    let picked = g.gather_rows(out, vec![pos])?;
    let reg = g.slice_cols(picked, 1, HEAD_OUTPUTS)?;
    let unit = g.sigmoid(reg);
    let k = geom.patch as f64;
    let offset = g.leaf(Tensor::row(vec![col as f64, row as f64, 0.0, 0.0]));
    let scale = g.leaf(Tensor::row(vec![k / w, k / h, 1.0, 1.0]));
    let shifted = g.add_row(unit, offset)?;
    let pred = g.mul_row(shifted, scale)?;

    let gt_norm = [gcx / w, gcy / h, gt.w / w, gt.h / h];
    let gt_row = g.leaf(Tensor::row(gt_norm.to_vec()));
    let diff = g.sub(pred, gt_row)?;
    let abs = g.abs(diff);
    let l1 = g.sum(abs);

    let iou = box_iou(g, pred, gt_norm)?;
    let miss = g.neg(iou);
    let miss = g.add_const(miss, 1.0);

    let a = g.scale(l1, L1_WEIGHT);
    let b = g.scale(miss, IOU_WEIGHT);
    let ab = g.add(a, b)?;
    let total = g.add(ab, bce)?;
    Ok(LossTerms { total, l1, iou, bce })
}

/// Differentiable IoU of a `1 × 4` `(cx, cy, w, h)` node against a constant box.
fn box_iou(g: &mut Graph, pred: Var, gt: [f64; 4]) -> Result<Var> {
    let cx = g.slice_cols(pred, 0, 1)?;
    let cy = g.slice_cols(pred, 1, 2)?;
    let pw = g.slice_cols(pred, 2, 3)?;
    let ph = g.slice_cols(pred, 3, 4)?;
    let half_w = g.scale(pw, 0.5);
    let half_h = g.scale(ph, 0.5);
    let x1 = g.sub(cx, half_w)?;
    let x2 = g.add(cx, half_w)?;
    let y1 = g.sub(cy, half_h)?;
    let y2 = g.add(cy, half_h)?;
    let c = |g: &mut Graph, v: f64| g.leaf(Tensor::new(vec![1, 1], vec![v]).expect("1x1"));
    let gx1 = c(g, gt[0] - gt[2] / 2.0);
    let gx2 = c(g, gt[0] + gt[2] / 2.0);
    let gy1 = c(g, gt[1] - gt[3] / 2.0);
    let gy2 = c(g, gt[1] + gt[3] / 2.0);
    let right = g.min(x2, gx2)?;
    let left = g.max(x1, gx1)?;
    let bottom = g.min(y2, gy2)?;
    let top = g.max(y1, gy1)?;
    let iw = g.sub(right, left)?;
    let iw = g.relu(iw);
    let ih = g.sub(bottom, top)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;
    let area = g.mul(pw, ph)?;
    let area = g.add_const(area, gt[2] * gt[3]);
    let union = g.sub(area, inter)?;
    let iou = g.div(inter, union)?;
    Ok(g.sum(iou))
}

/// Boxes and scores recorded so far; no gating on low scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackState {
    pub current: Option<BBox>,
    pub trajectory: Vec<BBox>,
    pub scores: Vec<f64>,
}

impl TrackState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(mut self, bbox: BBox, score: f64) -> Self {
        self.record(bbox, score);
        self
    }

    pub fn record(&mut self, bbox: BBox, score: f64) {
        self.current = Some(bbox);
        self.trajectory.push(bbox);
        self.scores.push(score);
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }
}
