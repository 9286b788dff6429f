//! Small selective-scan encoder turning a crop into one embedding.

use rand::Rng;

use super::crop::CROP_SIZE;
use crate::error::{shape_err, Result};
use crate::numerics::nn::normal_tensor;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor};
use crate::ssm::{bidirectional_scan, SelectiveParams};
use crate::tokenizer::{extract_patches, Frame, PatchEmbed};

pub const LIGHT_PATCH: usize = 16;

#[derive(Clone, Debug)]
pub struct LightEncoder {
    pub embed: PatchEmbed,
    pub pos: ParamId,
    pub scan: SelectiveParams,
    pub dim: usize,
}

impl LightEncoder {
    pub fn new(store: &mut ParamStore, dim: usize, d_state: usize, rng: &mut impl Rng) -> Result<Self> {
        let tokens = (CROP_SIZE / LIGHT_PATCH).pow(2);
        Ok(Self {
            embed: PatchEmbed::new(store, "light.embed", LIGHT_PATCH, dim, rng)?,
            pos: store.add("light.pos", normal_tensor(rng, &[tokens, dim], 0.02))?,
            scan: SelectiveParams::new(store, "light.scan", dim, d_state, rng)?,
            dim,
        })
    }

    /// Mean-pooled embedding of a `64 × 64` crop, as a `1 × dim` tensor.
    /// Pixels are centered at 0.5 before the patch projection.
    pub fn encode(&self, store: &ParamStore, crop: &Frame) -> Result<Tensor> {
        if crop.height != CROP_SIZE || crop.width != CROP_SIZE {
            return shape_err(format!("crop must be {CROP_SIZE}×{CROP_SIZE}, got {}×{}", crop.height, crop.width));
        }
        let mut g = Graph::new();
        let raw = extract_patches(crop, LIGHT_PATCH)?.map(|v| v - 0.5);
        let l = raw.rows();
        let x = g.leaf(raw);
        let x = self.embed.proj.forward(&mut g, store, x)?;
        let pos = g.param(store, self.pos);
        let x = g.add(x, pos)?;
        let y = bidirectional_scan(&mut g, store, &self.scan, x, l)?;
        let y = g.add(x, y)?;
        let pooled = g.mean_rows(y);
        g.value(pooled).clone().ensure_finite("light encoder")
    }
}
