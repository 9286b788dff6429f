//! Parameterized building blocks: linear maps, GELU MLPs and layer norms.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{MimError, Result};

/// `rows × cols` tensor with N(0, std²) entries.
pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weight `input × output` drawn with std `1/sqrt(input)`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = 1.0 / (input as f64).sqrt();
        Self::with_std(store, name, input, output, bias, std, rng)
    }

    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), normal_tensor(rng, &[input, output], std))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[1, output]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn param_count(input: usize, output: usize, bias: bool) -> usize {
        input * output + if bias { output } else { 0 }
    }
}

/// Fully connected network with GELU between layers (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(MimError::Invalid("an MLP needs at least input and output dims".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        Ok(h)
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| Linear::param_count(w[0], w[1], true)).sum()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], 1.0))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_param_count_matches_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let dims = [5, 7, 3];
        let mlp = Mlp::new(&mut store, "m", &dims, &mut rng).unwrap();
        assert_eq!(store.numel(), Mlp::param_count(&dims));
        assert_eq!(mlp.layers[0].output, mlp.layers[1].input);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 5]));
        let y = mlp.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3]);
    }

    #[test]
    fn mlp_needs_two_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Mlp::new(&mut ParamStore::new(), "m", &[4], &mut rng).is_err());
    }
}
