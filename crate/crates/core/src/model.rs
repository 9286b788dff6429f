//! The assembled tracker: tokenizer, encoder stack, retrieval projector,
//! box head and the frozen crop encoder, all in one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderStack, Injection};
use crate::error::{MimError, Result};
use crate::head::{BBox, HeadGeometry, HeadParams};
use crate::memory::{FusionMode, LightEncoder, QueryProjector};
use crate::numerics::nn::normal_tensor;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::{build_grid, patch_count, Frame, PatchEmbed, PositionEmbeddings, TokenGrid};

/// Prefix of the crop-encoder parameters, which are never trained.
pub const FROZEN_PREFIX: &str = "light.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square frame side in pixels.
    pub canvas: usize,
    pub patch: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub depth: usize,
    /// Search frames per window (`T`).
    pub window: usize,
    /// Frame gap between window members.
    pub stride: usize,
    pub temporal: bool,
    pub retrieval: bool,
    pub injection: Injection,
    pub fusion: FusionMode,
    pub head_hidden: usize,
    /// Crop-encoder embedding width.
    pub embed_dim: usize,
    pub light_state: usize,
    pub tau: f64,
    pub top_k: usize,
    pub capacity: usize,
    pub crop_factor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            canvas: 48,
            patch: 8,
            d_model: 32,
            d_state: 4,
            depth: 2,
            window: 2,
            stride: 2,
            temporal: true,
            retrieval: true,
            injection: Injection::QueryAttention,
            fusion: FusionMode::KMean,
            head_hidden: 32,
            embed_dim: 128,
            light_state: 4,
            tau: 0.8,
            top_k: 7,
            capacity: 256,
            crop_factor: 1.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MimError::Config(m));
        if patch_count(self.canvas, self.canvas, self.patch).is_err() || self.canvas == 0 {
            return bad(format!("canvas {} is not a positive multiple of patch {}", self.canvas, self.patch));
        }
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_state", self.d_state),
            ("depth", self.depth),
            ("window", self.window),
            ("stride", self.stride),
            ("head_hidden", self.head_hidden),
            ("embed_dim", self.embed_dim),
            ("light_state", self.light_state),
            ("top_k", self.top_k),
            ("capacity", self.capacity),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.tau > -1.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (-1, 1]", self.tau));
        }
        if !(self.crop_factor >= 1.0 && self.crop_factor.is_finite()) {
            return bad(format!("crop_factor {} must be at least 1", self.crop_factor));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.canvas / self.patch
    }

    pub fn geometry(&self) -> HeadGeometry {
        HeadGeometry {
            rows: self.grid_side(),
            cols: self.grid_side(),
            patch: self.patch,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            depth: self.depth,
            grid_rows: self.grid_side(),
            grid_cols: self.grid_side(),
            temporal: self.temporal,
            retrieval: self.retrieval,
            injection: self.injection,
            delta_t: 1.0,
        }
    }

    /// Frame indices of the window ending at `k`, oldest first, clamped at 0.
    pub fn window_indices(&self, k: usize) -> Vec<usize> {
        (0..self.window)
            .map(|j| k.saturating_sub(self.stride * (self.window - 1 - j)))
            .collect()
    }
}

/// `L × 1` fraction of each grid cell covered by `b`.
pub fn box_coverage(geom: &HeadGeometry, b: &BBox) -> Tensor {
    let k = geom.patch as f64;
    let data = (0..geom.tokens())
        .map(|i| {
            let (r, c) = geom.cell(i);
            let cell = BBox::new(c as f64 * k, r as f64 * k, k, k);
            let iw = (cell.x + k).min(b.x + b.w) - cell.x.max(b.x);
            let ih = (cell.y + k).min(b.y + b.h) - cell.y.max(b.y);
            iw.max(0.0) * ih.max(0.0) / (k * k)
        })
        .collect();
    Tensor::new(vec![geom.tokens(), 1], data).expect("coverage shape")
}

#[derive(Clone, Debug)]
pub struct TrackerModel {
    pub config: ModelConfig,
    pub embed: PatchEmbed,
    pub pos: PositionEmbeddings,
    /// `1 × D` embedding added to template tokens in proportion to their
    /// coverage by the template box.
    pub box_embed: ParamId,
    pub encoder: EncoderStack,
    pub projector: QueryProjector,
    pub head: HeadParams,
    pub light: LightEncoder,
}

pub struct ModelOutput {
    pub grid: TokenGrid,
    /// `L × 5` head output for the newest frame.
    pub head: Var,
    pub attention: Vec<Var>,
}

impl TrackerModel {
    /// Fresh parameters from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let l = config.grid_side().pow(2);
        let model = Self {
            config: config.clone(),
            embed: PatchEmbed::new(&mut store, "embed", config.patch, config.d_model, &mut rng)?,
            pos: PositionEmbeddings::new(&mut store, "pos", l, config.window + 1, config.d_model, &mut rng)?,
            box_embed: store.add("template_box", normal_tensor(&mut rng, &[1, config.d_model], 1.0))?,
            encoder: EncoderStack::new(&mut store, config.encoder(), &mut rng)?,
            projector: QueryProjector::new(&mut store, config.embed_dim, config.d_model, &mut rng)?,
            head: HeadParams::new(&mut store, config.d_model, config.head_hidden, &mut rng)?,
            light: LightEncoder::new(&mut store, config.embed_dim, config.light_state, &mut rng)?,
        };
        Ok((model, store))
    }

    /// Rebuilds the layout for `config` and checks `store` matches it by
    /// name and shape.
    pub fn bind(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let (model, fresh) = Self::init(config, 0)?;
        if fresh.len() != store.len() {
            return Err(MimError::Format(format!(
                "checkpoint has {} tensors, config expects {}",
                store.len(),
                fresh.len()
            )));
        }
        for (id, (name, value)) in fresh.ids().zip(fresh.iter()) {
            let other = store.id(name).ok_or_else(|| MimError::Format(format!("checkpoint lacks {name}")))?;
            if other != id || store.get(other).shape() != value.shape() {
                return Err(MimError::Format(format!("checkpoint tensor {name} does not match the config")));
            }
        }
        Ok(model)
    }

    pub fn trainable(store: &ParamStore) -> Vec<bool> {
        store.iter().map(|(name, _)| !name.starts_with(FROZEN_PREFIX)).collect()
    }

    /// Runs the encoder on the template frame with its box and `T` search
    /// frames; `fused` is the retrieval vector (ignored when retrieval is off).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        template: &Frame,
        template_box: &BBox,
        frames: &[Frame],
        fused: Option<&[f64]>,
    ) -> Result<ModelOutput> {
        if frames.len() != self.config.window {
            return Err(MimError::Invalid(format!("{} search frames for window {}", frames.len(), self.config.window)));
        }
        template_box.validate()?;
        let mut grid = build_grid(g, store, &self.embed, &self.pos, template, frames)?;
        let mask = g.leaf(box_coverage(&self.config.geometry(), template_box));
        let row = g.param(store, self.box_embed);
        let marked = g.matmul(mask, row)?;
        grid.tokens = g.scatter_add_rows(grid.tokens, marked, grid.slice_rows(0))?;
        let query = match (self.config.retrieval, fused) {
            (true, Some(f)) => Some(self.projector.project(g, store, f)?),
            (true, None) => return Err(MimError::Invalid("retrieval is enabled but no fused feature was given".into())),
            (false, _) => None,
        };
        let out = self.encoder.forward(g, store, grid, query)?;
        let last = out.grid.slice_rows(out.grid.frames);
        let tokens = g.gather_rows(out.grid.tokens, last)?;
        let head = self.head.forward(g, store, tokens)?;
        Ok(ModelOutput {
            grid: out.grid,
            head,
            attention: out.attention,
        })
    }
}
