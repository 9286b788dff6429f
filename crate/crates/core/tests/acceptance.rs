//! Acceptance suite: every criterion runs in order inside one test so the
//! timing criteria see an otherwise idle machine. Each prints one line.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mimtrack::encoder::{EncoderConfig, EncoderStack, Injection, MimBlock, Stages};
use mimtrack::harness::{bench_scan, evaluate, scene_pool, track_sequence, train, verify, BenchConfig, RunConfig};
use mimtrack::head::{head_loss, BBox, HeadGeometry};
use mimtrack::memory::MemoryCorpus;
use mimtrack::model::{ModelConfig, TrackerModel};
use mimtrack::numerics::nn::normal_tensor;
use mimtrack::numerics::{Graph, LayerNorm, ParamStore, Tensor, Var};
use mimtrack::ssm::{conv_scan, discretize, recurrent_scan, selective_scan, ContinuousSsm, ConvKernel, Direction, SelectiveParams};
use mimtrack::tokenizer::{Frame, TokenGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

// ---------- small dense helpers, independent of the library ----------

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn taylor_exp(m: &Mat, terms: usize) -> Mat {
    let n = m.len();
    let eye: Mat = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut sum = eye.clone();
    let mut term = eye;
    for k in 1..terms {
        term = mat_mul(&term, m);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                sum[i][j] += term[i][j];
            }
        }
    }
    sum
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn lattice(rng: &mut impl Rng, dim: usize, span: i32) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| f64::from(rng.gen_range(-span..=span))).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn random_ssm(rng: &mut impl Rng, n: usize, l: usize, max_norm: f64) -> ContinuousSsm {
    let a = normal_tensor(rng, &[n, n], 1.0);
    let delta: f64 = rng.gen_range(0.05..1.0);
    let scale = (max_norm / (a.norm() * delta)).min(1.0) * rng.gen_range(0.2..1.0);
    ContinuousSsm::new(
        a.scale(scale),
        normal_tensor(rng, &[n, l], 1.0),
        normal_tensor(rng, &[l, n], 1.0),
        normal_tensor(rng, &[l, l], 1.0),
        delta,
    )
    .unwrap()
}

const FD_H: f64 = 1e-5;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / n.abs().max(a.abs()).max(1.0)
}

fn value(g: &Graph, v: Var) -> f64 {
    g.value(v).data()[0]
}

/// Central differences against backward() on random input coordinates.
fn fd_inputs(inputs: &[Tensor], probes: usize, rng: &mut impl Rng, f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        value(&g, out)
    };
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.gen_range(0..inputs.len());
        let k = rng.gen_range(0..inputs[i].len());
        let analytic = grads.wrt(vars[i]).map_or(0.0, |t| t.data()[k]);
        let mut up = inputs.to_vec();
        up[i].data_mut()[k] += FD_H;
        let mut down = inputs.to_vec();
        down[i].data_mut()[k] -= FD_H;
        worst = worst.max(rel(analytic, (eval(&up) - eval(&down)) / (2.0 * FD_H)));
    }
    worst
}

/// Central differences against backward() on random parameter entries.
fn fd_params(store: &ParamStore, probes: usize, rng: &mut impl Rng, f: impl Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    let grads = g.backward(loss).unwrap().params(store);
    let ids: Vec<_> = store.ids().collect();
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let slot = rng.gen_range(0..ids.len());
        let id = ids[slot];
        let k = rng.gen_range(0..store.get(id).len());
        let orig = store.get(id).data()[k];
        let mut at = |v: f64| {
            work.get_mut(id).data_mut()[k] = v;
            let mut g = Graph::new();
            let out = f(&mut g, &work);
            value(&g, out)
        };
        let numeric = (at(orig + FD_H) - at(orig - FD_H)) / (2.0 * FD_H);
        work.get_mut(id).data_mut()[k] = orig;
        worst = worst.max(rel(grads[slot].data()[k], numeric));
    }
    worst
}

fn tiny_encoder(injection: Injection) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        d_state: 4,
        depth: 2,
        grid_rows: 2,
        grid_cols: 2,
        temporal: true,
        retrieval: true,
        injection,
        delta_t: 1.0,
    }
}

fn random_frame(rng: &mut impl Rng, side: usize) -> Frame {
    Frame::new(side, side, (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

// ---------- criteria ----------

fn c1_discretization() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (n, l) = (rng.gen_range(1..=8), rng.gen_range(1..=3));
        let ssm = random_ssm(&mut rng, n, l, 2.0);
        assert!(ssm.a.norm() * ssm.delta <= 2.0 + 1e-12);
        let d = discretize(&ssm).unwrap();
        // exp of [[ΔA, ΔB], [0, 0]] holds Ā top-left and B̄ top-right
        let mut aug = vec![vec![0.0; n + l]; n + l];
        for i in 0..n {
            for j in 0..n {
                aug[i][j] = ssm.delta * ssm.a.at(i, j);
            }
            for j in 0..l {
                aug[i][n + j] = ssm.delta * ssm.b.at(i, j);
            }
        }
        let e = taylor_exp(&aug, 50);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((e[i][j] - d.a_bar.at(i, j)).abs());
            }
            for j in 0..l {
                worst = worst.max((e[i][n + j] - d.b_bar.at(i, j)).abs());
            }
        }
    }
    let t = start.elapsed();
    verdict(worst < 1e-10 && t < Duration::from_secs(5), format!("200 systems, max err {worst:.2e}, {t:.2?}"))
}

fn c2_scan_forms() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (n, l) = (rng.gen_range(1..=6), rng.gen_range(1..=3));
        let m = if case < 10 { 256 } else { rng.gen_range(1..=256) };
        let mut ssm = random_ssm(&mut rng, n, l, 2.0);
        // ‖A‖_F ≤ 0.9 puts every eigenvalue of A − I at real part ≤ −0.1
        let shrink = 0.9 / ssm.a.norm().max(0.9);
        ssm.a = ssm.a.scale(shrink).sub(&Tensor::eye(n)).unwrap();
        let d = discretize(&ssm).unwrap();
        let x = normal_tensor(&mut rng, &[m, l], 1.0);
        let rec = recurrent_scan(&d, &x, &vec![0.0; n]).unwrap();
        let conv = conv_scan(&ConvKernel::new(&d, m).unwrap(), &d, &x).unwrap();
        worst = worst.max(rec.max_abs_diff(&conv));
        // and both against a direct state update written here
        let (ab, bb, c, dd) = (mat(&d.a_bar), mat(&d.b_bar), mat(&d.c), mat(&d.d));
        let mut h = vec![vec![0.0]; n];
        for k in 0..m {
            let xk: Mat = x.row_slice(k).iter().map(|&v| vec![v]).collect();
            let ah = mat_mul(&ab, &h);
            let bx = mat_mul(&bb, &xk);
            h = ah.iter().zip(&bx).map(|(p, q)| vec![p[0] + q[0]]).collect();
            let ch = mat_mul(&c, &h);
            let dx = mat_mul(&dd, &xk);
            for o in 0..l {
                worst = worst.max((ch[o][0] + dx[o][0] - rec.at(k, o)).abs());
            }
        }
    }
    let t = start.elapsed();
    verdict(worst < 1e-9 && t < Duration::from_secs(10), format!("100 systems, m <= 256, max err {worst:.2e}, {t:.2?}"))
}

fn c3_selective_reduction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (dm, ns, len) = (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=64));
        let mut store = ParamStore::new();
        let p = SelectiveParams::new(&mut store, "s", dm, ns, &mut rng).unwrap();
        // input-independent projections: Δ, B, C come from the bias alone
        *store.get_mut(p.proj.weight) = Tensor::zeros(&[dm, dm + 2 * ns]);
        let bias = normal_tensor(&mut rng, &[1, dm + 2 * ns], 1.0);
        *store.get_mut(p.proj.bias.unwrap()) = bias.clone();
        *store.get_mut(p.a_log) = normal_tensor(&mut rng, &[dm, ns], 0.7);
        let skip = normal_tensor(&mut rng, &[1, dm], 1.0);
        *store.get_mut(p.skip) = skip.clone();
        let x = normal_tensor(&mut rng, &[len, dm], 1.0);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = selective_scan(&mut g, &store, &p, xv, len, Direction::Forward).unwrap();
        let y = g.value(y).clone();
        let bv = &bias.data()[dm..dm + ns];
        let cv = &bias.data()[dm + ns..];
        for ch in 0..dm {
            let raw = bias.data()[ch];
            let delta = if raw > 0.0 { raw + (-raw).exp().ln_1p() } else { raw.exp().ln_1p() };
            let a: Vec<f64> = (0..ns).map(|n| -store.get(p.a_log).at(ch, n).exp()).collect();
            let mut h = vec![0.0; ns];
            for k in 0..len {
                let mut out = skip.data()[ch] * x.at(k, ch);
                for n in 0..ns {
                    let a_bar = (delta * a[n]).exp();
                    let b_bar = (a_bar - 1.0) / a[n] * bv[n];
                    h[n] = a_bar * h[n] + b_bar * x.at(k, ch);
                    out += cv[n] * h[n];
                }
                worst = worst.max((out - y.at(k, ch)).abs());
            }
        }
    }
    verdict(worst < 1e-8, format!("50 cases, max err {worst:.2e}"))
}

fn c4_linear_complexity() -> Verdict {
    let start = Instant::now();
    let rows = bench_scan(&[4096, 8192, 16384, 32768], &BenchConfig { runs: 7, ..BenchConfig::default() }).unwrap();
    let ratios: Vec<f64> = rows[..3].iter().map(|r| r.ratio.unwrap()).collect();
    let ok = ratios.iter().all(|r| (1.5..=2.7).contains(r));
    let t = start.elapsed();
    verdict(
        ok && t < Duration::from_secs(120),
        format!("t(2m)/t(m) at m = 4096, 8192, 16384: {ratios:.3?}, {t:.2?}"),
    )
}

fn c5_retrieval() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut bad, mut over_k, mut ties) = (0, 0, 0);
    for _ in 0..1000 {
        let dim = rng.gen_range(2..=4);
        let size = rng.gen_range(1..=40);
        // τ above 1 keeps every entry, duplicates included
        let mut corpus = MemoryCorpus::new(dim, 2.0, 64).unwrap();
        let entries: Vec<Vec<f64>> = (0..size).map(|_| lattice(&mut rng, dim, 2)).collect();
        for e in &entries {
            assert!(corpus.maybe_insert(e).unwrap());
        }
        let q = lattice(&mut rng, dim, 2);
        let k = rng.gen_range(1..=size + 5);
        let mut order: Vec<(f64, usize)> = entries.iter().enumerate().map(|(i, e)| (cos(&q, e), i)).collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<usize> = order.iter().take(k).map(|p| p.1).collect();
        over_k += usize::from(k > size);
        ties += usize::from(order.windows(2).any(|w| w[0].0 == w[1].0));
        if corpus.retrieve_top_k(&q, k).unwrap() != expect {
            bad += 1;
        }
    }
    let t = start.elapsed();
    verdict(
        bad == 0 && over_k > 0 && ties > 0 && t < Duration::from_secs(5),
        format!("1000 corpora ({over_k} with K > |C|, {ties} with ties), {bad} mismatches, {t:.2?}"),
    )
}

fn c6_threshold() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut wrong, mut boundary) = (0, 0);
    for _ in 0..1000 {
        let dim = rng.gen_range(2..=3);
        let cap = rng.gen_range(1..=16);
        let mut corpus = MemoryCorpus::new(dim, 0.8, cap).unwrap();
        let mut state: Vec<Vec<f64>> = Vec::new();
        for _ in 0..rng.gen_range(1..=50) {
            let e = lattice(&mut rng, dim, 4);
            let best = state.iter().map(|s| cos(s, &e)).fold(f64::NEG_INFINITY, f64::max);
            boundary += usize::from(best == 0.8);
            let admitted = corpus.maybe_insert(&e).unwrap();
            if admitted != (best < 0.8) {
                wrong += 1;
            }
            if admitted {
                if state.len() == cap {
                    state.remove(0);
                }
                state.push(e);
            }
        }
        if !corpus.entries().eq(state.iter().map(|v| v.as_slice())) {
            wrong += 1;
        }
    }
    let mut c = MemoryCorpus::new(2, 0.8, 8).unwrap();
    c.maybe_insert(&[0.8, 0.6]).unwrap();
    let literal = !c.maybe_insert(&[1.0, 0.0]).unwrap();
    verdict(
        wrong == 0 && boundary > 0 && literal,
        format!("1000 streams, {boundary} exact cos = 0.8 cases, {wrong} violations"),
    )
}

fn c7_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut parts = Vec::new();

    let mut store = ParamStore::new();
    let p = SelectiveParams::new(&mut store, "s", 4, 3, &mut rng).unwrap();
    let x = normal_tensor(&mut rng, &[10, 4], 1.0);
    let w = normal_tensor(&mut rng, &[10, 4], 1.0);
    let mut scan: f64 = 0.0;
    for dir in [Direction::Forward, Direction::Reverse] {
        scan = scan.max(fd_inputs(&[x.clone(), w.clone()], 30, &mut rng, |g, v| {
            let y = selective_scan(g, &store, &p, v[0], 5, dir).unwrap();
            let y = g.mul(y, v[1]).unwrap();
            g.sum(y)
        }));
        scan = scan.max(fd_params(&store, 30, &mut rng, |g, s| {
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let y = selective_scan(g, s, &p, xv, 5, dir).unwrap();
            let y = g.mul(y, wv).unwrap();
            g.sum(y)
        }));
    }
    parts.push(("scan", scan));

    let mut attention: f64 = 0.0;
    for injection in [Injection::QueryAttention, Injection::KvAttention, Injection::Additive, Injection::Concatenate] {
        let mut store = ParamStore::new();
        let block = MimBlock::new(&mut store, &tiny_encoder(injection), 0, &mut rng).unwrap();
        let ins = [normal_tensor(&mut rng, &[8, 8], 1.0), normal_tensor(&mut rng, &[1, 8], 1.0), normal_tensor(&mut rng, &[8, 8], 1.0)];
        attention = attention.max(fd_inputs(&ins, 25, &mut rng, |g, v| {
            let (out, _) = block.tracking_attention(g, &store, v[0], v[1]).unwrap();
            let y = g.mul(out, v[2]).unwrap();
            g.sum(y)
        }));
        attention = attention.max(fd_params(&store, 25, &mut rng, |g, s| {
            let a = g.leaf(ins[0].clone());
            let q = g.leaf(ins[1].clone());
            let wv = g.leaf(ins[2].clone());
            let (out, _) = block.tracking_attention(g, s, a, q).unwrap();
            let y = g.mul(out, wv).unwrap();
            g.sum(y)
        }));
    }
    parts.push(("attention", attention));

    let mut store = ParamStore::new();
    let norm = LayerNorm::new(&mut store, "n", 6).unwrap();
    *store.get_mut(norm.gain) = normal_tensor(&mut rng, &[1, 6], 1.0);
    *store.get_mut(norm.bias) = normal_tensor(&mut rng, &[1, 6], 1.0);
    let ins = [normal_tensor(&mut rng, &[5, 6], 1.0), normal_tensor(&mut rng, &[5, 6], 1.0)];
    let mut ln = fd_inputs(&ins, 40, &mut rng, |g, v| {
        let y = norm.forward(g, &store, v[0]).unwrap();
        let y = g.mul(y, v[1]).unwrap();
        g.sum(y)
    });
    ln = ln.max(fd_params(&store, 20, &mut rng, |g, s| {
        let xv = g.leaf(ins[0].clone());
        let wv = g.leaf(ins[1].clone());
        let y = norm.forward(g, s, xv).unwrap();
        let y = g.mul(y, wv).unwrap();
        g.sum(y)
    }));
    parts.push(("norm", ln));

    let geom = HeadGeometry { rows: 3, cols: 3, patch: 4 };
    let mut head: f64 = 0.0;
    for gt in [BBox::new(3.0, 2.5, 6.0, 5.0), BBox::new(0.5, 6.0, 4.0, 5.5)] {
        let out = normal_tensor(&mut rng, &[9, 5], 0.8);
        head = head.max(fd_inputs(&[out], 40, &mut rng, |g, v| head_loss(g, v[0], &gt, &geom).unwrap().total));
    }
    parts.push(("head loss", head));

    let cfg = ModelConfig {
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
    };
    assert_eq!(cfg.geometry().tokens(), 4);
    let (model, store) = TrackerModel::init(&cfg, 77).unwrap();
    let template = random_frame(&mut rng, 8);
    let frames = vec![random_frame(&mut rng, 8), random_frame(&mut rng, 8)];
    let fused: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (tbox, target) = (BBox::new(1.0, 2.0, 4.0, 3.0), BBox::new(2.0, 1.5, 4.5, 3.5));
    let e2e = fd_params(&store, 80, &mut rng, |g, s| {
        let out = model.forward(g, s, &template, &tbox, &frames, Some(&fused)).unwrap();
        head_loss(g, out.head, &target, &cfg.geometry()).unwrap().total
    });
    parts.push(("tiny model", e2e));

    let t = start.elapsed();
    let ok = parts.iter().all(|(_, e)| *e < 1e-4) && t < Duration::from_secs(120);
    let detail: Vec<String> = parts.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(ok, format!("max rel err: {}, {t:.2?}", detail.join(", ")))
}

fn c8_fixed_point() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut moved, mut touched) = (0, 0);
    for case in 0..20 {
        let cfg = tiny_encoder(Injection::QueryAttention);
        let mut store = ParamStore::new();
        let stack = EncoderStack::new(&mut store, cfg.clone(), &mut rng).unwrap();
        let frames = 1 + case % 4;
        let slice = normal_tensor(&mut rng, &[4, 8], 1.0);
        let constant: Vec<f64> = (0..=frames).flat_map(|_| slice.data().to_vec()).collect();
        for block in &stack.blocks {
            let mut g = Graph::new();
            let tokens = g.leaf(Tensor::new(vec![4 * (frames + 1), 8], constant.clone()).unwrap());
            let out = block.time_serialization_scan(&mut g, &store, TokenGrid { tokens, frames, per_frame: 4 }).unwrap();
            moved += usize::from(g.value(out.tokens).data() != constant.as_slice());
        }
        // template rows with attention and temporal scan on vs off
        let init = normal_tensor(&mut rng, &[4 * (frames + 1), 8], 1.0);
        let query = normal_tensor(&mut rng, &[1, 8], 1.0);
        let mut slices = Vec::new();
        for on in [false, true] {
            let mut g = Graph::new();
            let tokens = g.leaf(init.clone());
            let q = g.leaf(query.clone());
            let grid = TokenGrid { tokens, frames, per_frame: 4 };
            let out = stack.blocks[0].forward(&mut g, &store, grid, &Stages { temporal: on, retrieval: on }, Some(q)).unwrap();
            slices.push(g.value(out.grid.tokens).data()[..32].to_vec());
            let tokens = g.leaf(init.clone());
            let st = EncoderStack { config: EncoderConfig { temporal: on, retrieval: on, ..cfg.clone() }, blocks: stack.blocks.clone() };
            let out = st.forward(&mut g, &store, TokenGrid { tokens, frames, per_frame: 4 }, Some(q)).unwrap();
            slices.push(g.value(out.grid.tokens).data()[..32].to_vec());
        }
        touched += usize::from(slices[0] != slices[2]) + usize::from(slices[1] != slices[3]);
    }
    verdict(
        moved == 0 && touched == 0,
        format!("20 grids x 2 blocks: {moved} constant grids moved, {touched} template slices changed"),
    )
}

fn c9_metrics() -> Verdict {
    let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 5];
    let pred = [
        BBox::new(0.0, 0.0, 10.0, 10.0),
        BBox::new(0.0, 0.0, 8.0, 10.0),
        BBox::new(0.0, 0.0, 5.0, 10.0),
        BBox::new(0.0, 0.0, 2.0, 10.0),
        BBox::new(30.0, 30.0, 10.0, 10.0),
    ];
    let ious: Vec<f64> = pred.iter().zip(&gt).map(|(p, g)| p.iou(g)).collect();
    // hand table: IoUs 1, .8, .5, .2, 0; center errors 0, 1, 2.5, 4, 42.43
    let success: Vec<f64> = (0..=100)
        .map(|i| match i {
            0..=19 => 0.8,
            20..=49 => 0.6,
            50..=79 => 0.4,
            80..=99 => 0.2,
            _ => 0.0,
        })
        .collect();
    let precision: Vec<f64> = (0..=50)
        .map(|px| match px {
            0 => 0.2,
            1 | 2 => 0.4,
            3 => 0.6,
            4..=42 => 0.8,
            _ => 1.0,
        })
        .collect();
    // trapezoid: (Σ counts − (c_0 + c_100)/2) / (5 · 100) = (250 − 2) / 500
    let auc = 0.496;
    let r = evaluate(&pred, &gt).unwrap();
    let ok = ious == [1.0, 0.8, 0.5, 0.2, 0.0]
        && r.success == success
        && r.precision == precision
        && r.success_auc == auc
        && r.precision_at_20 == 0.8
        && r.mean_iou == 0.5;
    verdict(ok, format!("success AUC {} (hand 0.496), P@20 {}", r.success_auc, r.precision_at_20))
}

struct TrackingRun {
    seed: u64,
    full: f64,
    ablated: f64,
}

fn held_out_iou(cfg: &RunConfig) -> f64 {
    let d = &cfg.data;
    let pool = scene_pool(d.pool_seed, d.train_sequences, cfg.model.canvas, &d.scene).unwrap();
    let held = scene_pool(d.eval_seed, d.eval_sequences, cfg.model.canvas, &d.scene).unwrap();
    let out = train(cfg, &pool).unwrap();
    let total: f64 = held.iter().map(|s| track_sequence(&out.model, &out.store, s, None).unwrap().mean_iou()).sum();
    total / held.len() as f64
}

fn c10_tracking() -> Verdict {
    let start = Instant::now();
    let base = RunConfig::default();
    assert_eq!(base.train.steps, 2000);
    assert_eq!(base.data.scene.distractors, 1);
    // the default seed is the seed-fixed run; it also opens the ordering sweep
    let runs: Vec<TrackingRun> = (base.seed..base.seed + 4)
        .map(|seed| {
            let cfg = RunConfig { seed, ..base.clone() };
            let full = held_out_iou(&cfg);
            let ablated = held_out_iou(&cfg.ablated(false, false));
            TrackingRun { seed, full, ablated }
        })
        .collect();
    let wins = runs.iter().filter(|r| r.full > r.ablated).count();
    let t = start.elapsed();
    let ok = runs[0].full >= 0.5 && wins >= 3 && t < Duration::from_secs(1800);
    let per: Vec<String> = runs.iter().map(|r| format!("seed {} {:.3}/{:.3}", r.seed, r.full, r.ablated)).collect();
    verdict(
        ok,
        format!(
            "held-out IoU full/w-o-both: {}; seed-fixed run {:.3}, full wins {wins}/4, {t:.0?}",
            per.join(", "),
            runs[0].full
        ),
    )
}

fn c11_round_trip() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = TrackerModel::init(&ModelConfig::default(), 11).unwrap();
    let ck = dir.path().join("model.ckpt");
    store.save(&ck).unwrap();
    let back = ParamStore::load(&ck).unwrap();
    let params_exact = back.len() == store.len()
        && back.iter().zip(store.iter()).all(|((na, a), (nb, b))| {
            na == nb && a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut corpus = MemoryCorpus::new(16, 0.8, 64).unwrap();
    for _ in 0..100 {
        let e: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        corpus.maybe_insert(&e).unwrap();
    }
    let mem = dir.path().join("memory.bin");
    corpus.save(&mem).unwrap();
    let reloaded = MemoryCorpus::load(&mem, 64).unwrap();
    let corpus_exact = reloaded.tau().to_bits() == corpus.tau().to_bits()
        && reloaded.len() == corpus.len()
        && reloaded.entries().zip(corpus.entries()).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let report = verify(0);
    let cli = std::process::Command::new(env!("CARGO_BIN_EXE_mimtrack"))
        .args(["verify", "--out"])
        .arg(dir.path().join("verify"))
        .output()
        .unwrap();
    let ok = params_exact && corpus_exact && report.passed() && cli.status.success();
    verdict(
        ok,
        format!(
            "checkpoint exact {params_exact}, corpus exact {corpus_exact} ({} entries), verify {}/{} suites, cli exit {}",
            corpus.len(),
            report.suites.iter().filter(|s| s.passed).count(),
            report.suites.len(),
            cli.status
        ),
    )
}

#[test]
fn acceptance_criteria() {
    type Criterion = fn() -> Verdict;
    let criteria: [(&str, Criterion); 11] = [
        ("discretization oracle", c1_discretization),
        ("scan-form equivalence", c2_scan_forms),
        ("selective to LTI reduction", c3_selective_reduction),
        ("linear complexity", c4_linear_complexity),
        ("retrieval oracle", c5_retrieval),
        ("corpus threshold rule", c6_threshold),
        ("gradient suite", c7_gradients),
        ("fixed-point invariant", c8_fixed_point),
        ("metric oracle", c9_metrics),
        ("desk-scale tracking", c10_tracking),
        ("round trip and verify", c11_round_trip),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|v| v.trim().parse().expect("criterion number")).collect());
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let status = if v.passed { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {id:>2} {status} {name}: {}", v.detail).unwrap();
        out.flush().unwrap();
        if !v.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
