//! Frames, patch tokens, position embeddings and per-layer scan orders.

use rand::Rng;

use crate::error::{shape_err, MimError, Result};
use crate::numerics::nn::normal_tensor;
use crate::numerics::{Graph, Linear, ParamId, ParamStore, Tensor, Var};

pub const CHANNELS: usize = 3;

/// Channel-major RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return shape_err(format!("{} values for a 3×{height}×{width} frame", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in rgb {
            data.extend(std::iter::repeat(c).take(height * width));
        }
        Self { height, width, data }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let w = self.width;
        let h = self.height;
        self.data[(c * h + y) * w + x] = v;
    }
}

/// Number of patches per frame, failing unless both sides divide by `patch`.
pub fn patch_count(height: usize, width: usize, patch: usize) -> Result<usize> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(MimError::Invalid(format!(
            "{height}×{width} frame is not divisible by patch size {patch}"
        )));
    }
    Ok((height / patch) * (width / patch))
}

/// Raw non-overlapping patches, one row per patch in row-major patch order,
/// each flattened as `(channel, row, col)`: shape `L × 3K²`.
pub fn extract_patches(frame: &Frame, patch: usize) -> Result<Tensor> {
    let l = patch_count(frame.height, frame.width, patch)?;
    let cols = frame.width / patch;
    let dim = CHANNELS * patch * patch;
    let mut out = Vec::with_capacity(l * dim);
    for p in 0..l {
        let (py, px) = (p / cols, p % cols);
        for c in 0..CHANNELS {
            for ky in 0..patch {
                for kx in 0..patch {
                    out.push(frame.get(c, py * patch + ky, px * patch + kx));
                }
            }
        }
    }
    Tensor::new(vec![l, dim], out)
}

/// Inverse of [`extract_patches`].
pub fn unpatchify(patches: &Tensor, height: usize, width: usize, patch: usize) -> Result<Frame> {
    let l = patch_count(height, width, patch)?;
    if patches.rows() != l || patches.cols() != CHANNELS * patch * patch {
        return shape_err("patch tensor does not match frame geometry");
    }
    let cols = width / patch;
    let mut f = Frame::filled(height, width, [0.0; 3]);
    for p in 0..l {
        let row = patches.row_slice(p);
        let (py, px) = (p / cols, p % cols);
        let mut k = 0;
        for c in 0..CHANNELS {
            for ky in 0..patch {
                for kx in 0..patch {
                    f.set(c, py * patch + ky, px * patch + kx, row[k]);
                    k += 1;
                }
            }
        }
    }
    Ok(f)
}

/// Linear patch embedding (the `K×K` stride-`K` patchify convolution).
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, name: &str, patch: usize, d_model: usize, rng: &mut impl Rng) -> Result<Self> {
        let proj = Linear::new(store, name, CHANNELS * patch * patch, d_model, true, rng)?;
        Ok(Self { proj, patch })
    }

    /// `L × D` tokens of one frame.
    pub fn patchify(&self, g: &mut Graph, store: &ParamStore, frame: &Frame) -> Result<Var> {
        let raw = extract_patches(frame, self.patch)?;
        let x = g.leaf(raw);
        self.proj.forward(g, store, x)
    }
}

/// Learned spatial (`L × D`) and temporal (`(T+1) × D`) tables.
#[derive(Clone, Debug)]
pub struct PositionEmbeddings {
    pub spatial: ParamId,
    pub temporal: ParamId,
}

impl PositionEmbeddings {
    pub fn new(store: &mut ParamStore, name: &str, l: usize, t_plus_one: usize, d_model: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            spatial: store.add(format!("{name}.spatial"), normal_tensor(rng, &[l, d_model], 0.02))?,
            temporal: store.add(format!("{name}.temporal"), normal_tensor(rng, &[t_plus_one, d_model], 0.02))?,
        })
    }
}

/// The `(T+1)·L × D` token grid (row `t·L + p`), slice `t = 0` is the template.
#[derive(Clone, Copy, Debug)]
pub struct TokenGrid {
    pub tokens: Var,
    /// Number of search frames `T`.
    pub frames: usize,
    /// Tokens per frame `L`.
    pub per_frame: usize,
}

impl TokenGrid {
    pub fn row(&self, t: usize, p: usize) -> usize {
        t * self.per_frame + p
    }

    /// Row indices of frame slice `t`.
    pub fn slice_rows(&self, t: usize) -> Vec<usize> {
        (t * self.per_frame..(t + 1) * self.per_frame).collect()
    }

    /// Row indices of all search frames `t = 1..=T`.
    pub fn search_rows(&self) -> Vec<usize> {
        (self.per_frame..(self.frames + 1) * self.per_frame).collect()
    }

    pub fn token_count(&self) -> usize {
        (self.frames + 1) * self.per_frame
    }
}

/// Projects the template and `T` frames to patches and adds both embeddings.
pub fn build_grid(
    g: &mut Graph,
    store: &ParamStore,
    embed: &PatchEmbed,
    pos: &PositionEmbeddings,
    template: &Frame,
    frames: &[Frame],
) -> Result<TokenGrid> {
    let (h, w) = (template.height, template.width);
    if frames.iter().any(|f| f.height != h || f.width != w) {
        return Err(MimError::Invalid("template and search frames differ in size".into()));
    }
    let l = patch_count(h, w, embed.patch)?;
    let t_total = frames.len() + 1;
    let temporal = store.get(pos.temporal);
    if temporal.rows() != t_total || store.get(pos.spatial).rows() != l {
        return shape_err(format!(
            "embeddings sized for {}×{} tokens, grid has {t_total}×{l}",
            temporal.rows(),
            store.get(pos.spatial).rows()
        ));
    }
    let mut raw = Vec::with_capacity(t_total * l * CHANNELS * embed.patch * embed.patch);
    for f in std::iter::once(template).chain(frames) {
        raw.extend_from_slice(extract_patches(f, embed.patch)?.data());
    }
    let raw = g.leaf(Tensor::new(vec![t_total * l, CHANNELS * embed.patch * embed.patch], raw)?);
    let tokens = embed.proj.forward(g, store, raw)?;
    let spatial = g.param(store, pos.spatial);
    let temporal = g.param(store, pos.temporal);
    let spatial_rows: Vec<usize> = (0..t_total * l).map(|r| r % l).collect();
    let temporal_rows: Vec<usize> = (0..t_total * l).map(|r| r / l).collect();
    let es = g.gather_rows(spatial, spatial_rows)?;
    let et = g.gather_rows(temporal, temporal_rows)?;
    let tokens = g.add(tokens, es)?;
    let tokens = g.add(tokens, et)?;
    Ok(TokenGrid {
        tokens,
        frames: frames.len(),
        per_frame: l,
    })
}

/// Spatial scan order of one layer: `order[k]` is the row-major patch index
/// visited at step `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    order: Vec<usize>,
    inverse: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanPattern {
    RowMajor,
    ColumnMajor,
    ReversedRowMajor,
    ReversedColumnMajor,
}

impl ScanPattern {
    /// Patterns cycle with period four over layers.
    pub fn for_layer(layer: usize) -> Self {
        match layer % 4 {
            0 => Self::RowMajor,
            1 => Self::ColumnMajor,
            2 => Self::ReversedRowMajor,
            _ => Self::ReversedColumnMajor,
        }
    }
}

impl ScanOrder {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut inverse = vec![usize::MAX; n];
        for (k, &p) in order.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(MimError::Invalid(format!("scan order is not a permutation: {order:?}")));
            }
            inverse[p] = k;
        }
        Ok(Self { order, inverse })
    }

    pub fn pattern(pattern: ScanPattern, rows: usize, cols: usize) -> Self {
        let row_major: Vec<usize> = (0..rows * cols).collect();
        let col_major: Vec<usize> = (0..cols).flat_map(|c| (0..rows).map(move |r| r * cols + c)).collect();
        let order = match pattern {
            ScanPattern::RowMajor => row_major,
            ScanPattern::ColumnMajor => col_major,
            ScanPattern::ReversedRowMajor => row_major.into_iter().rev().collect(),
            ScanPattern::ReversedColumnMajor => col_major.into_iter().rev().collect(),
        };
        Self::new(order).expect("patterns are permutations")
    }

    pub fn for_layer(layer: usize, rows: usize, cols: usize) -> Self {
        Self::pattern(ScanPattern::for_layer(layer), rows, cols)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverted(&self) -> Self {
        Self {
            order: self.inverse.clone(),
            inverse: self.order.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Row indices that reorder `blocks` consecutive frames of `L` tokens.
    pub fn rows_for_blocks(&self, blocks: usize) -> Vec<usize> {
        let l = self.order.len();
        (0..blocks).flat_map(|b| self.order.iter().map(move |&p| b * l + p)).collect()
    }
}

/// Reorders `L × D` tokens: output row `k` is input row `order[k]`.
pub fn apply_schedule(tokens: &Tensor, order: &ScanOrder) -> Result<Tensor> {
    if tokens.rows() != order.len() {
        return shape_err(format!("{} tokens for a schedule over {}", tokens.rows(), order.len()));
    }
    let rows: Vec<Vec<f64>> = order.order().iter().map(|&p| tokens.row_slice(p).to_vec()).collect();
    Tensor::from_rows(&rows)
}
