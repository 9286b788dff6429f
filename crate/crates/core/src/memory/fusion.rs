//! Aggregating retrieved embeddings into the query fed to the encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{cosine, MemoryCorpus};
use crate::error::{MimError, Result};
use crate::numerics::{Graph, Mlp, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Mean of the top-K entries.
    #[default]
    KMean,
    /// Mean of the whole corpus.
    SimpleMean,
    /// Whole corpus weighted by `max(cos, 0)` to the query.
    CosineDecay,
    /// Top-K entries weighted by `max(cos, 0)` to the query.
    KDecay,
}

/// Weighted mean `Σ w_i v_i / Σ w_i`; plain mean when all weights are zero.
pub fn weighted_mean(vectors: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let total: f64 = weights.iter().sum();
    let uniform = total <= 0.0;
    let mut out = vec![0.0; dim];
    for (v, &w) in vectors.iter().zip(weights) {
        let w = if uniform { 1.0 / vectors.len() as f64 } else { w / total };
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    out
}

pub fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    weighted_mean(vectors, &vec![1.0; vectors.len()])
}

/// Fused retrieval vector for query `e_q`. An empty selection yields
/// `fallback` (the template-crop embedding).
pub fn fuse(corpus: &MemoryCorpus, e_q: &[f64], k: usize, mode: FusionMode, fallback: &[f64]) -> Result<Vec<f64>> {
    let picked: Vec<usize> = match mode {
        FusionMode::KMean | FusionMode::KDecay => corpus.retrieve_top_k(e_q, k)?,
        FusionMode::SimpleMean | FusionMode::CosineDecay => (0..corpus.len()).collect(),
    };
    if picked.is_empty() {
        return Ok(fallback.to_vec());
    }
    let vectors: Vec<&[f64]> = picked.iter().map(|&i| corpus.get(i)).collect();
    match mode {
        FusionMode::KMean | FusionMode::SimpleMean => Ok(mean(&vectors)),
        FusionMode::CosineDecay | FusionMode::KDecay => {
            let weights = vectors.iter().map(|v| cosine(e_q, v).map(|c| c.max(0.0))).collect::<Result<Vec<_>>>()?;
            Ok(weighted_mean(&vectors, &weights))
        }
    }
}

/// `D_e → 2D → D` MLP producing the augmented query.
#[derive(Clone, Debug)]
pub struct QueryProjector {
    pub mlp: Mlp,
    pub input: usize,
}

impl QueryProjector {
    pub fn new(store: &mut ParamStore, embed_dim: usize, d_model: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, "retrieval.mlp", &[embed_dim, 2 * d_model, d_model], rng)?,
            input: embed_dim,
        })
    }

    /// `1 × D` augmented feature for a fused vector.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, fused: &[f64]) -> Result<Var> {
        if fused.len() != self.input {
            return Err(MimError::Shape(format!("fused vector of length {} for width {}", fused.len(), self.input)));
        }
        let x = g.leaf(Tensor::row(fused.to_vec()));
        self.mlp.forward(g, store, x)
    }
}
