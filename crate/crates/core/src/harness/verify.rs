//! Self-check: every numerical kernel against a slow reference.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::evaluate;
use crate::encoder::{EncoderConfig, Injection, MimBlock};
use crate::error::Result;
use crate::head::{head_loss, BBox, HeadGeometry};
use crate::memory::{cosine, MemoryCorpus};
use crate::model::{ModelConfig, TrackerModel};
use crate::numerics::nn::normal_tensor;
use crate::numerics::{gradcheck, Graph, LayerNorm, ParamStore, Tensor};
use crate::oracle;
use crate::ssm::{
    conv_scan, discretize, recurrent_scan, selective_scan, ContinuousSsm, ConvKernel, Direction, SelectiveParams,
};
use crate::tokenizer::{Frame, TokenGrid};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub cases: usize,
    /// Worst error seen; 0 for exact-match suites.
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    /// One JSON object per suite, then a summary line.
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.suites {
            s.push_str(&serde_json::to_string(r).expect("plain data"));
            s.push('\n');
        }
        let failed = self.suites.iter().filter(|r| !r.passed).count();
        s.push_str(&format!(
            "{{\"summary\":\"{}\",\"suites\":{},\"failed\":{failed}}}\n",
            if failed == 0 { "pass" } else { "fail" },
            self.suites.len()
        ));
        s
    }
}

fn run(suite: &'static str, tol: f64, f: impl FnOnce() -> Result<(usize, f64)>) -> SuiteResult {
    let start = Instant::now();
    let (cases, max_err, passed, error) = match f() {
        Ok((cases, err)) => (cases, err, err <= tol && err.is_finite(), None),
        Err(e) => (0, f64::INFINITY, false, Some(e.to_string())),
    };
    SuiteResult {
        suite,
        cases,
        max_err,
        tol,
        passed,
        seconds: start.elapsed().as_secs_f64(),
        error,
    }
}

/// Random stable-ish system with `‖ΔA‖_F ≤ 2`.
pub fn random_system(rng: &mut impl Rng, n: usize, l: usize) -> Result<ContinuousSsm> {
    let a = normal_tensor(rng, &[n, n], 1.0);
    let delta = rng.gen_range(0.01..1.0);
    let norm = a.norm() * delta;
    let a = if norm > 2.0 { a.scale(2.0 / norm) } else { a };
    ContinuousSsm::new(
        a,
        normal_tensor(rng, &[n, l], 1.0),
        normal_tensor(rng, &[l, n], 1.0),
        normal_tensor(rng, &[l, l], 1.0),
        delta,
    )
}

fn discretization(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let l = rng.gen_range(1..=3);
        let ssm = random_system(rng, n, l)?;
        let d = discretize(&ssm)?;
        let (a, b) = oracle::taylor_discretize(&ssm, 50);
        worst = worst.max(d.a_bar.max_abs_diff(&a)).max(d.b_bar.max_abs_diff(&b));
    }
    Ok((200, worst))
}

fn scan_forms(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let l = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=256);
        let mut ssm = random_system(rng, n, l)?;
        // keep the spectrum inside the unit disk so long kernels stay bounded
        ssm.a = ssm.a.scale(0.5).sub(&Tensor::eye(n))?;
        let d = discretize(&ssm)?;
        let x = normal_tensor(rng, &[m, l], 1.0);
        let rec = recurrent_scan(&d, &x, &vec![0.0; n])?;
        let conv = conv_scan(&ConvKernel::new(&d, m)?, &d, &x)?;
        let scale = rec.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        worst = worst.max(rec.max_abs_diff(&conv) / scale);
    }
    Ok((100, worst))
}

/// Selective scan whose projections ignore the input, against one LTI
/// system per channel.
pub fn frozen_selective_case(rng: &mut impl Rng, d_model: usize, d_state: usize, len: usize) -> Result<f64> {
    let mut store = ParamStore::new();
    let p = SelectiveParams::new(&mut store, "s", d_model, d_state, rng)?;
    *store.get_mut(p.proj.weight) = Tensor::zeros(&[d_model, d_model + 2 * d_state]);
    let bias = normal_tensor(rng, &[1, d_model + 2 * d_state], 1.0);
    *store.get_mut(p.proj.bias.expect("bias")) = bias.clone();
    *store.get_mut(p.a_log) = normal_tensor(rng, &[d_model, d_state], 0.7);
    *store.get_mut(p.skip) = normal_tensor(rng, &[1, d_model], 1.0);
    let x = normal_tensor(rng, &[len, d_model], 1.0);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = selective_scan(&mut g, &store, &p, xv, len, Direction::Forward)?;
    let y = g.value(y);
    let a = p.state_diag(&store);
    let bb = &bias.data()[d_model..d_model + d_state];
    let cc = &bias.data()[d_model + d_state..];
    let mut worst: f64 = 0.0;
    for ch in 0..d_model {
        let mut am = Tensor::zeros(&[d_state, d_state]);
        for n in 0..d_state {
            am.set(n, n, a.at(ch, n));
        }
        let ssm = ContinuousSsm::new(
            am,
            Tensor::new(vec![d_state, 1], bb.to_vec())?,
            Tensor::row(cc.to_vec()),
            Tensor::new(vec![1, 1], vec![store.get(p.skip).data()[ch]])?,
            crate::numerics::softplus(bias.data()[ch]),
        )?;
        let col = Tensor::new(vec![len, 1], (0..len).map(|k| x.at(k, ch)).collect())?;
        let lti = recurrent_scan(&discretize(&ssm)?, &col, &vec![0.0; d_state])?;
        for k in 0..len {
            worst = worst.max((lti.at(k, 0) - y.at(k, ch)).abs());
        }
    }
    Ok(worst)
}

fn selective_reduction(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (d, n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=64));
        worst = worst.max(frozen_selective_case(rng, d, n, m)?);
    }
    Ok((50, worst))
}

/// Non-zero vector on a small integer lattice, so exact ties are common.
pub fn lattice_vector(rng: &mut impl Rng, dim: usize, span: i32) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-span..=span) as f64).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn retrieval(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let dim = rng.gen_range(2..=4);
        let size = rng.gen_range(1..=30);
        let mut corpus = MemoryCorpus::new(dim, 1.0 + 1e-9, 64)?;
        let mut entries = Vec::new();
        for _ in 0..size {
            let e = lattice_vector(rng, dim, 2);
            corpus.maybe_insert(&e)?;
            entries.push(e);
        }
        let q = lattice_vector(rng, dim, 2);
        let k = rng.gen_range(1..=size + 3);
        if corpus.retrieve_top_k(&q, k)? != oracle::brute_force_top_k(&entries, &q, k)? {
            mismatches += 1;
        }
    }
    Ok((1000, mismatches as f64))
}

fn threshold_rule(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut violations = 0usize;
    for _ in 0..1000 {
        let dim = rng.gen_range(2..=3);
        let cap = rng.gen_range(1..=12);
        let mut corpus = MemoryCorpus::new(dim, 0.8, cap)?;
        let mut mirror: VecDeque<Vec<f64>> = VecDeque::new();
        for _ in 0..rng.gen_range(1..=40) {
            let e = lattice_vector(rng, dim, 4);
            let best = mirror
                .iter()
                .map(|m| cosine(m, &e))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            let expect = best < 0.8;
            if corpus.maybe_insert(&e)? != expect {
                violations += 1;
            }
            if expect {
                if mirror.len() == cap {
                    mirror.pop_front();
                }
                mirror.push_back(e);
            }
        }
        if !corpus.entries().eq(mirror.iter().map(|v| v.as_slice())) {
            violations += 1;
        }
    }
    Ok((1000, violations as f64))
}

fn tiny_block(rng: &mut impl Rng, injection: Injection) -> Result<(ParamStore, MimBlock)> {
    let cfg = EncoderConfig {
        d_model: 8,
        d_state: 4,
        depth: 1,
        grid_rows: 2,
        grid_cols: 2,
        temporal: true,
        retrieval: true,
        injection,
        delta_t: 1.0,
    };
    let mut store = ParamStore::new();
    let block = MimBlock::new(&mut store, &cfg, 0, rng)?;
    Ok((store, block))
}

/// Configuration of the end-to-end gradient check: `D = 8`, `N = 4`,
/// `T = 2`, `L = 4`, two blocks.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        canvas: 8,
        patch: 4,
        d_model: 8,
        d_state: 4,
        depth: 2,
        window: 2,
        stride: 1,
        head_hidden: 8,
        embed_dim: 8,
        ..ModelConfig::default()
    }
}

fn random_frame(rng: &mut impl Rng, side: usize) -> Frame {
    let data = (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect();
    Frame::new(side, side, data).expect("sized")
}

fn gradients(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut record = |r: gradcheck::GradCheckReport| {
        worst = worst.max(r.max_rel_err);
        probes += r.probes;
    };

    let mut store = ParamStore::new();
    let p = SelectiveParams::new(&mut store, "s", 4, 3, rng)?;
    let x = normal_tensor(rng, &[12, 4], 1.0);
    let w = normal_tensor(rng, &[12, 4], 1.0);
    for dir in [Direction::Forward, Direction::Reverse] {
        record(gradcheck::check_inputs(&[x.clone(), w.clone()], 20, rng, |g, v| {
            let y = selective_scan(g, &store, &p, v[0], 6, dir)?;
            let y = g.mul(y, v[1])?;
            Ok(g.sum(y))
        })?);
        record(gradcheck::check_params(&store, 20, rng, |g, s| {
            let xv = g.leaf(x.clone());
            let y = selective_scan(g, s, &p, xv, 6, dir)?;
            let wv = g.leaf(w.clone());
            let y = g.mul(y, wv)?;
            Ok(g.sum(y))
        })?);
    }

    for injection in [Injection::QueryAttention, Injection::KvAttention, Injection::Additive, Injection::Concatenate] {
        let (store, block) = tiny_block(rng, injection)?;
        let search = normal_tensor(rng, &[8, 8], 1.0);
        let query = normal_tensor(rng, &[1, 8], 1.0);
        let w = normal_tensor(rng, &[8, 8], 1.0);
        record(gradcheck::check_inputs(&[search, query, w], 20, rng, |g, v| {
            let (out, _) = block.tracking_attention(g, &store, v[0], v[1])?;
            let y = g.mul(out, v[2])?;
            Ok(g.sum(y))
        })?);
    }

    let mut store = ParamStore::new();
    let norm = LayerNorm::new(&mut store, "n", 6)?;
    *store.get_mut(norm.gain) = normal_tensor(rng, &[1, 6], 1.0);
    let x = normal_tensor(rng, &[5, 6], 1.0);
    let w = normal_tensor(rng, &[5, 6], 1.0);
    record(gradcheck::check_inputs(&[x, w], 30, rng, |g, v| {
        let y = norm.forward(g, &store, v[0])?;
        let y = g.mul(y, v[1])?;
        Ok(g.sum(y))
    })?);

    let geom = HeadGeometry { rows: 3, cols: 3, patch: 4 };
    let gt = BBox::new(3.0, 2.5, 6.0, 5.0);
    let out = normal_tensor(rng, &[9, 5], 0.7);
    record(gradcheck::check_inputs(&[out], 30, rng, |g, v| Ok(head_loss(g, v[0], &gt, &geom)?.total))?);

    let cfg = tiny_model_config();
    let (model, store) = TrackerModel::init(&cfg, rng.gen())?;
    let template = random_frame(rng, cfg.canvas);
    let frames = vec![random_frame(rng, cfg.canvas), random_frame(rng, cfg.canvas)];
    let fused: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tbox = BBox::new(1.0, 2.0, 4.0, 3.0);
    let target = BBox::new(2.0, 1.5, 4.5, 3.5);
    record(gradcheck::check_params(&store, 60, rng, |g, s| {
        let out = model.forward(g, s, &template, &tbox, &frames, Some(&fused))?;
        Ok(head_loss(g, out.head, &target, &cfg.geometry())?.total)
    })?);
    Ok((probes, worst))
}

fn fixed_point(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut changed = 0usize;
    for case in 0..20 {
        let (store, block) = tiny_block(rng, Injection::QueryAttention)?;
        let frames = 1 + case % 4;
        let template = normal_tensor(rng, &[4, 8], 1.0);
        let repeated: Vec<f64> = (0..=frames).flat_map(|_| template.data().to_vec()).collect();
        let mut g = Graph::new();
        let tokens = g.leaf(Tensor::new(vec![4 * (frames + 1), 8], repeated.clone())?);
        let grid = TokenGrid { tokens, frames, per_frame: 4 };
        let out = block.time_serialization_scan(&mut g, &store, grid)?;
        if g.value(out.tokens).data() != repeated.as_slice() {
            changed += 1;
        }
        let search = g.leaf(normal_tensor(rng, &[4 * frames, 8], 1.0));
        let query = g.leaf(normal_tensor(rng, &[1, 8], 1.0));
        let full = g.concat_rows(&[tokens, search])?;
        let mut template_after = Vec::new();
        for on in [false, true] {
            let grid = TokenGrid { tokens: full, frames: frames + 1, per_frame: 4 };
            let stages = crate::encoder::Stages { temporal: on, retrieval: on };
            let out = block.forward(&mut g, &store, grid, &stages, Some(query))?;
            template_after.push(g.value(out.grid.tokens).data()[..32].to_vec());
        }
        if template_after[0] != template_after[1] {
            changed += 1;
        }
    }
    Ok((20, changed as f64))
}

fn metric_table(_: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let (pred, gt) = oracle::toy_trajectory();
    let (prec, succ, auc) = oracle::toy_table();
    let r = evaluate(&pred, &gt)?;
    let frac = |c: &usize| *c as f64 / 5.0;
    let mut wrong = 0usize;
    wrong += r.precision.iter().zip(prec.iter().map(frac)).filter(|(a, b)| **a != *b).count();
    wrong += r.success.iter().zip(succ.iter().map(frac)).filter(|(a, b)| **a != *b).count();
    wrong += usize::from(r.success_auc != auc) + usize::from(r.precision.len() != 51) + usize::from(r.success.len() != 101);
    Ok((153, wrong as f64))
}

fn round_trips(rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut bad = 0usize;
    let (_, store) = TrackerModel::init(&tiny_model_config(), rng.gen())?;
    let mut bytes = Vec::new();
    store.write_checkpoint(&mut bytes)?;
    let back = ParamStore::read_checkpoint(bytes.as_slice())?;
    let mut again = Vec::new();
    back.write_checkpoint(&mut again)?;
    bad += usize::from(bytes != again || back.checksum() != store.checksum());
    let mut corpus = MemoryCorpus::new(6, 0.8, 32)?;
    for _ in 0..40 {
        let e: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        corpus.maybe_insert(&e)?;
    }
    let mut bytes = Vec::new();
    corpus.write_to(&mut bytes)?;
    let back = MemoryCorpus::read_from(&bytes, 32)?;
    let same = back.len() == corpus.len()
        && back.entries().zip(corpus.entries()).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    bad += usize::from(!same);
    Ok((2, bad as f64))
}

/// Runs every suite; `seed` drives all random cases.
pub fn verify(seed: u64) -> VerifyReport {
    type Suite = fn(&mut ChaCha8Rng) -> Result<(usize, f64)>;
    let suites: [(&'static str, f64, Suite); 9] = [
        ("discretization", 1e-10, discretization),
        ("scan_forms", 1e-9, scan_forms),
        ("selective_reduction", 1e-8, selective_reduction),
        ("retrieval", 0.0, retrieval),
        ("threshold_rule", 0.0, threshold_rule),
        ("gradients", 1e-4, gradients),
        ("fixed_point", 0.0, fixed_point),
        ("metric_table", 0.0, metric_table),
        ("round_trip", 0.0, round_trips),
    ];
    let suites = suites
        .into_iter()
        .enumerate()
        .map(|(i, (name, tol, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            run(name, tol, || f(&mut rng))
        })
        .collect();
    VerifyReport { suites }
}
