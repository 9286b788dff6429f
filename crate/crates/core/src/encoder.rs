//! Nested selective-scan blocks: spatial scans inside each frame, a temporal scan across frames.
//!
//! Each block runs, with pre-norm residual connections:
//!
//! 1. a bidirectional spatial scan of the template under the layer's scan
//!    order, then a softmax-weighted template summary token;
//! 2. a bidirectional spatial scan of every search frame after adding the
//!    summary token to each of its tokens;
//! 3. tracking attention from the retrieval query onto the search tokens;
//! 4. a time-serialization scan over patch residuals at each location.
//!
//! Stages 3 and 4 never touch the template slice.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MimError, Result};
use crate::numerics::nn::normal_tensor;
use crate::numerics::{Graph, LayerNorm, Linear, ParamId, ParamStore, Var};
use crate::ssm::{bidirectional_scan, selective_scan, Direction, SelectiveParams};
use crate::tokenizer::{ScanOrder, TokenGrid};

/// How the retrieval feature enters the search tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Single query from the feature attends over all search tokens.
    #[default]
    QueryAttention,
    /// Tokens query the feature as key/value, gated against an empty slot.
    KvAttention,
    /// Projected feature added to every token.
    Additive,
    /// Linear map of `[token, feature]` added to every token.
    Concatenate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub depth: usize,
    /// Patch grid rows and columns of one frame.
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub temporal: bool,
    pub retrieval: bool,
    pub injection: Injection,
    /// Frame time difference scaling the temporal residuals.
    pub delta_t: f64,
}

impl EncoderConfig {
    pub fn tokens_per_frame(&self) -> usize {
        self.grid_rows * self.grid_cols
    }
}

#[derive(Clone, Debug)]
pub struct TrackingAttention {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub concat: Linear,
}

#[derive(Clone, Debug)]
pub struct MimBlock {
    pub index: usize,
    pub order: ScanOrder,
    pub spatial: SelectiveParams,
    pub spatial_out: Linear,
    pub temporal: SelectiveParams,
    pub temporal_out: Linear,
    /// `D × 1` scoring vector for the template summary.
    pub score: ParamId,
    pub attention: TrackingAttention,
    pub norm_spatial: LayerNorm,
    pub norm_temporal: LayerNorm,
    pub delta_t: f64,
    pub injection: Injection,
}

/// Outputs of one block's template pass.
pub struct TemplatePass {
    /// Scanned template tokens `L × D` (before the residual add).
    pub tokens: Var,
    /// `1 × D` summary `Σ_j s_j · tokens_j`.
    pub summary: Var,
    /// `1 × L` summary weights.
    pub weights: Var,
}

/// `Σ_j softmax(scores)_j · tokens_j` for `L × D` tokens and `L × 1` scores.
pub fn template_summary(g: &mut Graph, tokens: Var, scores: Var) -> Result<(Var, Var)> {
    let row = g.transpose(scores);
    let weights = g.softmax_rows(row)?;
    let summary = g.matmul(weights, tokens)?;
    Ok((summary, weights))
}

impl MimBlock {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, index: usize, rng: &mut impl Rng) -> Result<Self> {
        let name = format!("block{index}");
        let d = cfg.d_model;
        let n = cfg.d_state;
        let out_std = 0.5 / (d as f64).sqrt();
        Ok(Self {
            index,
            order: ScanOrder::for_layer(index, cfg.grid_rows, cfg.grid_cols),
            spatial: SelectiveParams::new(store, &format!("{name}.spatial"), d, n, rng)?,
            spatial_out: Linear::with_std(store, &format!("{name}.spatial_out"), d, d, false, out_std, rng)?,
            temporal: SelectiveParams::new(store, &format!("{name}.temporal"), d, n, rng)?,
            temporal_out: Linear::with_std(store, &format!("{name}.temporal_out"), d, d, false, out_std, rng)?,
            score: store.add(format!("{name}.score"), normal_tensor(rng, &[d, 1], 0.02))?,
            attention: TrackingAttention {
                w_q: Linear::new(store, &format!("{name}.attn.w_q"), d, d, false, rng)?,
                w_k: Linear::new(store, &format!("{name}.attn.w_k"), d, d, false, rng)?,
                w_v: Linear::with_std(store, &format!("{name}.attn.w_v"), d, d, false, out_std, rng)?,
                concat: Linear::with_std(store, &format!("{name}.attn.concat"), 2 * d, d, false, out_std, rng)?,
            },
            norm_spatial: LayerNorm::new(store, &format!("{name}.norm_spatial"), d)?,
            norm_temporal: LayerNorm::new(store, &format!("{name}.norm_temporal"), d)?,
            delta_t: cfg.delta_t,
            injection: cfg.injection,
        })
    }

    fn spatial_scan(&self, g: &mut Graph, store: &ParamStore, x: Var, frames: usize) -> Result<Var> {
        let l = self.order.len();
        let fwd = self.order.rows_for_blocks(frames);
        let back = self.order.inverted().rows_for_blocks(frames);
        let ordered = g.gather_rows(x, fwd)?;
        let scanned = bidirectional_scan(g, store, &self.spatial, ordered, l)?;
        let restored = g.gather_rows(scanned, back)?;
        self.spatial_out.forward(g, store, restored)
    }

    /// Scans `L × D` template tokens under this layer's order and summarizes them.
    pub fn template_spatial_scan(&self, g: &mut Graph, store: &ParamStore, template: Var) -> Result<TemplatePass> {
        if g.value(template).rows() != self.order.len() {
            return shape_err("template slice does not match the scan order");
        }
        let tokens = self.spatial_scan(g, store, template, 1)?;
        let w = g.param(store, self.score);
        let scores = g.matmul(tokens, w)?;
        let (summary, weights) = template_summary(g, tokens, scores)?;
        Ok(TemplatePass {
            tokens,
            summary,
            weights,
        })
    }

    /// Scans `T·L × D` search tokens after adding the `1 × D` summary to each.
    pub fn frame_spatial_scan(&self, g: &mut Graph, store: &ParamStore, frames: Var, summary: Var) -> Result<Var> {
        let l = self.order.len();
        let rows = g.value(frames).rows();
        if rows % l != 0 {
            return shape_err("search tokens are not whole frames");
        }
        let conditioned = g.add_row(frames, summary)?;
        self.spatial_scan(g, store, conditioned, rows / l)
    }

    /// Injects the retrieval feature `query` (`1 × D`) into the `n × D`
    /// search tokens. Returns the updated tokens and, for query attention,
    /// the `1 × n` attention weights.
    pub fn tracking_attention(&self, g: &mut Graph, store: &ParamStore, search: Var, query: Var) -> Result<(Var, Option<Var>)> {
        let d = g.value(search).cols();
        if g.value(query).shape() != [1, d] {
            return shape_err(format!("query {:?} for width {d}", g.value(query).shape()));
        }
        let att = &self.attention;
        match self.injection {
            Injection::QueryAttention => {
                let q = att.w_q.forward(g, store, query)?;
                let k = att.w_k.forward(g, store, search)?;
                let v = att.w_v.forward(g, store, search)?;
                let kt = g.transpose(k);
                let logits = g.matmul(q, kt)?;
                let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
                let weights = g.softmax_rows(logits)?;
                let attended = g.matmul(weights, v)?;
                let col = g.transpose(weights);
                let update = g.matmul(col, attended)?;
                Ok((g.add(search, update)?, Some(weights)))
            }
            Injection::KvAttention => {
                let q = att.w_q.forward(g, store, search)?;
                let k = att.w_k.forward(g, store, query)?;
                let v = att.w_v.forward(g, store, query)?;
                let kt = g.transpose(k);
                let logits = g.matmul(q, kt)?;
                let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
                // softmax over {feature, empty slot with logit 0}
                let gate = g.sigmoid(logits);
                let update = g.matmul(gate, v)?;
                Ok((g.add(search, update)?, None))
            }
            Injection::Additive => {
                let v = att.w_v.forward(g, store, query)?;
                Ok((g.add_row(search, v)?, None))
            }
            Injection::Concatenate => {
                let n = g.value(search).rows();
                let tiled = g.gather_rows(query, vec![0; n])?;
                let joined = g.concat_cols(search, tiled)?;
                let update = att.concat.forward(g, store, joined)?;
                Ok((g.add(search, update)?, None))
            }
        }
    }

    /// Increment added to the search rows by the temporal scan: at every
    /// location, the residuals `x^t − x^{t−1}` (t = 1..T, template as the
    /// t = 0 anchor) scaled by `Δt` and scanned forward in time.
    pub fn temporal_increment(&self, g: &mut Graph, store: &ParamStore, grid: &TokenGrid, x: Var) -> Result<Var> {
        let (t_len, l) = (grid.frames, grid.per_frame);
        if t_len == 0 {
            return Err(MimError::Invalid("time serialization scan needs at least one search frame".into()));
        }
        // location-major rows: p·T + (t−1)
        let cur: Vec<usize> = (0..l).flat_map(|p| (1..=t_len).map(move |t| t * l + p)).collect();
        let prev: Vec<usize> = cur.iter().map(|r| r - l).collect();
        let cur_v = g.gather_rows(x, cur)?;
        let prev_v = g.gather_rows(x, prev)?;
        let residual = g.sub(cur_v, prev_v)?;
        let residual = g.scale(residual, self.delta_t);
        let scanned = selective_scan(g, store, &self.temporal, residual, t_len, Direction::Forward)?;
        let projected = self.temporal_out.forward(g, store, scanned)?;
        // back to frame-major search rows: (t−1)·L + p
        let back: Vec<usize> = (0..t_len).flat_map(|t| (0..l).map(move |p| p * t_len + t)).collect();
        g.gather_rows(projected, back)
    }

    /// `P^t ← P^t + scan(Δt · dP)^t` for t = 1..T; the template slice is untouched.
    pub fn time_serialization_scan(&self, g: &mut Graph, store: &ParamStore, grid: TokenGrid) -> Result<TokenGrid> {
        let inc = self.temporal_increment(g, store, &grid, grid.tokens)?;
        let tokens = g.scatter_add_rows(grid.tokens, inc, grid.search_rows())?;
        Ok(TokenGrid { tokens, ..grid })
    }

    /// One full block over the grid.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        grid: TokenGrid,
        stages: &Stages,
        query: Option<Var>,
    ) -> Result<BlockOutput> {
        let template_rows = grid.slice_rows(0);
        let search_rows = grid.search_rows();
        let x = self.norm_spatial.forward(g, store, grid.tokens)?;
        let x_template = g.gather_rows(x, template_rows.clone())?;
        let pass = self.template_spatial_scan(g, store, x_template)?;
        let x_search = g.gather_rows(x, search_rows.clone())?;
        let spatial = self.frame_spatial_scan(g, store, x_search, pass.summary)?;
        let mut tokens = g.scatter_add_rows(grid.tokens, pass.tokens, template_rows)?;
        tokens = g.scatter_add_rows(tokens, spatial, search_rows.clone())?;
        let mut weights = None;
        if stages.retrieval {
            let query = query.ok_or_else(|| MimError::Invalid("retrieval is enabled but no query was supplied".into()))?;
            let search = g.gather_rows(tokens, search_rows.clone())?;
            let (updated, w) = self.tracking_attention(g, store, search, query)?;
            let delta = g.sub(updated, search)?;
            tokens = g.scatter_add_rows(tokens, delta, search_rows)?;
            weights = w;
        }
        let mut grid = TokenGrid { tokens, ..grid };
        if stages.temporal {
            let x = self.norm_temporal.forward(g, store, grid.tokens)?;
            let inc = self.temporal_increment(g, store, &grid, x)?;
            grid.tokens = g.scatter_add_rows(grid.tokens, inc, grid.search_rows())?;
        }
        Ok(BlockOutput {
            grid,
            summary_weights: pass.weights,
            attention: weights,
        })
    }
}

/// Which optional stages run (the ablation switches).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub temporal: bool,
    pub retrieval: bool,
}

pub struct BlockOutput {
    pub grid: TokenGrid,
    pub summary_weights: Var,
    pub attention: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub blocks: Vec<MimBlock>,
}

pub struct EncoderOutput {
    pub grid: TokenGrid,
    /// Per-block attention weights when query attention ran.
    pub attention: Vec<Var>,
}

impl EncoderStack {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.depth == 0 {
            return Err(MimError::Invalid("encoder depth must be at least 1".into()));
        }
        let blocks = (0..config.depth)
            .map(|i| MimBlock::new(store, &config, i, rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, blocks })
    }

    pub fn stages(&self) -> Stages {
        Stages {
            temporal: self.config.temporal,
            retrieval: self.config.retrieval,
        }
    }

    /// Runs every block in order. `query` is the shared retrieval feature,
    /// ignored when retrieval is disabled.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, grid: TokenGrid, query: Option<Var>) -> Result<EncoderOutput> {
        if grid.per_frame != self.config.tokens_per_frame() {
            return shape_err(format!(
                "grid has {} tokens per frame, encoder expects {}",
                grid.per_frame,
                self.config.tokens_per_frame()
            ));
        }
        let stages = self.stages();
        let query = if stages.retrieval { query } else { None };
        let mut grid = grid;
        let mut attention = Vec::new();
        for block in &self.blocks {
            let out = block.forward(g, store, grid, &stages, query)?;
            grid = out.grid;
            attention.extend(out.attention);
        }
        Ok(EncoderOutput { grid, attention })
    }
}
