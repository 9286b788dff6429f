//! Central finite-difference checks for graph gradients.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub probes: usize,
    /// Largest `|analytic − numeric| / max(1, |numeric|)` over all probes.
    pub max_rel_err: f64,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).data()[0]
}

/// Checks d loss / d inputs at `probes` randomly chosen coordinates.
pub fn check_inputs<F>(inputs: &[Tensor], probes: usize, rng: &mut impl Rng, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(scalar(&g, loss))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut report = GradCheckReport::default();
    let candidates: Vec<usize> = (0..inputs.len()).filter(|&i| !inputs[i].is_empty()).collect();
    for _ in 0..probes {
        let which = candidates[rng.gen_range(0..candidates.len())];
        let k = rng.gen_range(0..inputs[which].len());
        let analytic = grads.wrt(vars[which]).map_or(0.0, |t| t.data()[k]);
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[k] += FD_STEP;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[k] -= FD_STEP;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic, numeric));
        report.probes += 1;
    }
    Ok(report)
}

/// Checks d loss / d parameters at `probes` randomly chosen parameter entries.
pub fn check_params<F>(store: &ParamStore, probes: usize, rng: &mut impl Rng, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?.params(store);
    let ids: Vec<_> = store.ids().filter(|&id| !store.get(id).is_empty()).collect();
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for _ in 0..probes {
        let id = ids[rng.gen_range(0..ids.len())];
        let k = rng.gen_range(0..store.get(id).len());
        let orig = store.get(id).data()[k];
        let mut at = |v: f64| -> Result<f64> {
            work.get_mut(id).data_mut()[k] = v;
            let mut g = Graph::new();
            let loss = f(&mut g, &work)?;
            Ok(scalar(&g, loss))
        };
        let numeric = (at(orig + FD_STEP)? - at(orig - FD_STEP)?) / (2.0 * FD_STEP);
        work.get_mut(id).data_mut()[k] = orig;
        let analytic = grads[store.ids().position(|x| x == id).unwrap()].data()[k];
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic, numeric));
        report.probes += 1;
    }
    Ok(report)
}
