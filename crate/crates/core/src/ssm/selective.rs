//! Selective (input-dependent) scans over a diagonal state matrix.
//!
//! Every token `x_k ∈ R^D` is projected to a step `Δ_k ∈ R^D` (through
//! softplus), an input vector `B_k ∈ R^N` and a readout `C_k ∈ R^N`. Each
//! channel `d` then runs its own N-state system with `A_d = diag(a_{d,·})`,
//! discretized per step with the exact zero-order hold:
//!
//! ```text
//! h_k[d,n] = exp(Δ_k[d] a[d,n]) h_{k-1}[d,n] + (exp(Δ_k[d] a[d,n]) - 1)/a[d,n] · B_k[n] x_k[d]
//! y_k[d]   = Σ_n C_k[n] h_k[d,n] + skip[d] x_k[d]
//! ```
//!
//! The sequence tensor holds `seqs` independent sequences of `len` tokens
//! stacked row-wise, sequence-major. Initial state is zero.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::tensor::softplus_inverse;
use crate::numerics::{CustomOp, Graph, Linear, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Projection weights producing per-token `Δ`, `B`, `C`, plus the diagonal
/// state matrix (stored as `log(−a)`) and the skip vector.
#[derive(Clone, Debug)]
pub struct SelectiveParams {
    pub proj: Linear,
    pub a_log: ParamId,
    pub skip: ParamId,
    pub d_model: usize,
    pub d_state: usize,
}

impl SelectiveParams {
    /// `a[d,n] = −(n+1)`; `Δ` bias set so the initial steps are log-spaced
    /// over `[0.01, 0.1]` across channels; unit skip.
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, d_state: usize, rng: &mut impl Rng) -> Result<Self> {
        let width = d_model + 2 * d_state;
        let std = 0.5 / (d_model as f64).sqrt();
        let proj = Linear::with_std(store, &format!("{name}.proj"), d_model, width, true, std, rng)?;
        {
            let bias = store.get_mut(proj.bias.expect("bias"));
            for d in 0..d_model {
                let frac = if d_model > 1 { d as f64 / (d_model - 1) as f64 } else { 0.5 };
                let dt = (0.01f64.ln() + frac * (0.1f64.ln() - 0.01f64.ln())).exp();
                bias.data_mut()[d] = softplus_inverse(dt);
            }
        }
        let a_log = (0..d_model * d_state).map(|k| ((k % d_state) as f64 + 1.0).ln()).collect();
        let a_log = store.add(format!("{name}.a_log"), Tensor::new(vec![d_model, d_state], a_log)?)?;
        let skip = store.add(format!("{name}.skip"), Tensor::full(&[1, d_model], 1.0))?;
        Ok(Self {
            proj,
            a_log,
            skip,
            d_model,
            d_state,
        })
    }

    /// State matrix diagonal `a = −exp(a_log)`, `D × N`.
    pub fn state_diag(&self, store: &ParamStore) -> Tensor {
        store.get(self.a_log).map(|v| -v.exp())
    }

    /// Per-token `(Δ, B, C)` as graph values.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var, Var)> {
        let (d, n) = (self.d_model, self.d_state);
        let p = self.proj.forward(g, store, x)?;
        let dt_raw = g.slice_cols(p, 0, d)?;
        let dt = g.softplus(dt_raw);
        let b = g.slice_cols(p, d, d + n)?;
        let c = g.slice_cols(p, d + n, d + 2 * n)?;
        Ok((dt, b, c))
    }
}

/// Borrowed operands of one scan call.
pub struct ScanOperands<'a> {
    pub x: &'a [f64],
    pub delta: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
    /// `D × N` state diagonal (negative entries).
    pub a: &'a [f64],
    pub skip: &'a [f64],
    pub seqs: usize,
    pub len: usize,
    pub d_model: usize,
    pub d_state: usize,
}

/// `(e^z − 1)/z`, exact at `z = 0`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..14 {
            term *= z / (k + 1) as f64;
            sum += term;
        }
        sum
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`phi1`].
pub fn phi1_prime(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // Σ_{k≥1} k z^{k−1} / (k+1)!
        let mut fact = 2.0;
        let mut zp = 1.0;
        let mut sum = 0.0;
        for k in 1..15 {
            sum += k as f64 * zp / fact;
            zp *= z;
            fact *= (k + 2) as f64;
        }
        sum
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

fn order(len: usize, dir: Direction) -> Box<dyn Iterator<Item = usize>> {
    match dir {
        Direction::Forward => Box::new(0..len),
        Direction::Reverse => Box::new((0..len).rev()),
    }
}

/// Runs the scan; when `states` is given it receives every `h_k` (`D × N`
/// per token, in token order) for the adjoint pass.
pub fn scan_forward(ops: &ScanOperands<'_>, dir: Direction, mut states: Option<&mut Vec<f64>>) -> Vec<f64> {
    let (dm, ns) = (ops.d_model, ops.d_state);
    let mut y = vec![0.0; ops.seqs * ops.len * dm];
    if let Some(s) = states.as_deref_mut() {
        s.clear();
        s.resize(ops.seqs * ops.len * dm * ns, 0.0);
    }
    let mut h = vec![0.0; dm * ns];
    for s in 0..ops.seqs {
        h.iter_mut().for_each(|v| *v = 0.0);
        for k in order(ops.len, dir) {
            let row = s * ops.len + k;
            let xk = &ops.x[row * dm..(row + 1) * dm];
            let dk = &ops.delta[row * dm..(row + 1) * dm];
            let bk = &ops.b[row * ns..(row + 1) * ns];
            let ck = &ops.c[row * ns..(row + 1) * ns];
            let yk = &mut y[row * dm..(row + 1) * dm];
            for d in 0..dm {
                let dt = dk[d];
                assert!(dt > 0.0, "selective scan step must be positive, got {dt}");
                let hd = &mut h[d * ns..(d + 1) * ns];
                let ad = &ops.a[d * ns..(d + 1) * ns];
                let mut acc = ops.skip[d] * xk[d];
                for n in 0..ns {
                    let z = dt * ad[n];
                    let bbar = dt * phi1(z);
                    hd[n] = z.exp() * hd[n] + bbar * bk[n] * xk[d];
                    acc += ck[n] * hd[n];
                }
                yk[d] = acc;
            }
            if let Some(st) = states.as_deref_mut() {
                st[row * dm * ns..(row + 1) * dm * ns].copy_from_slice(&h);
            }
        }
    }
    y
}

/// Adjoint of [`scan_forward`]: gradients for `(x, Δ, B, C, a, skip)`.
pub fn scan_backward(
    ops: &ScanOperands<'_>,
    dir: Direction,
    states: &[f64],
    gy: &[f64],
) -> [Vec<f64>; 6] {
    let (dm, ns) = (ops.d_model, ops.d_state);
    let rows = ops.seqs * ops.len;
    let mut gx = vec![0.0; rows * dm];
    let mut gdelta = vec![0.0; rows * dm];
    let mut gb = vec![0.0; rows * ns];
    let mut gc = vec![0.0; rows * ns];
    let mut ga = vec![0.0; dm * ns];
    let mut gskip = vec![0.0; dm];
    let mut gh = vec![0.0; dm * ns];
    let zero = vec![0.0; dm * ns];
    for s in 0..ops.seqs {
        gh.iter_mut().for_each(|v| *v = 0.0);
        let fwd: Vec<usize> = order(ops.len, dir).collect();
        for (pos, &k) in fwd.iter().enumerate().rev() {
            let row = s * ops.len + k;
            let h_now = &states[row * dm * ns..(row + 1) * dm * ns];
            let h_prev = if pos == 0 {
                &zero[..]
            } else {
                let pr = s * ops.len + fwd[pos - 1];
                &states[pr * dm * ns..(pr + 1) * dm * ns]
            };
            for d in 0..dm {
                let g = gy[row * dm + d];
                let xv = ops.x[row * dm + d];
                let dt = ops.delta[row * dm + d];
                gx[row * dm + d] += ops.skip[d] * g;
                gskip[d] += g * xv;
                for n in 0..ns {
                    let idx = d * ns + n;
                    let a = ops.a[idx];
                    let cv = ops.c[row * ns + n];
                    let bv = ops.b[row * ns + n];
                    let mut ghv = gh[idx] + cv * g;
                    gc[row * ns + n] += g * h_now[idx];
                    let z = dt * a;
                    let ea = z.exp();
                    let bbar = dt * phi1(z);
                    let g_ea = ghv * h_prev[idx];
                    let g_bbar = ghv * bv * xv;
                    gb[row * ns + n] += ghv * bbar * xv;
                    gx[row * dm + d] += ghv * bbar * bv;
                    gdelta[row * dm + d] += g_ea * a * ea + g_bbar * ea;
                    ga[idx] += g_ea * dt * ea + g_bbar * dt * dt * phi1_prime(z);
                    ghv *= ea;
                    gh[idx] = ghv;
                }
            }
        }
    }
    [gx, gdelta, gb, gc, ga, gskip]
}

struct ScanOp {
    dir: Direction,
    seqs: usize,
    len: usize,
    states: Vec<f64>,
}

impl ScanOp {
    fn operands<'a>(&self, ins: &[&'a Tensor]) -> ScanOperands<'a> {
        ScanOperands {
            x: ins[0].data(),
            delta: ins[1].data(),
            b: ins[2].data(),
            c: ins[3].data(),
            a: ins[4].data(),
            skip: ins[5].data(),
            seqs: self.seqs,
            len: self.len,
            d_model: ins[0].cols(),
            d_state: ins[2].cols(),
        }
    }
}

impl CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let ops = self.operands(inputs);
        let grads = scan_backward(&ops, self.dir, &self.states, grad.data());
        grads
            .into_iter()
            .zip(inputs)
            .map(|(g, t)| Tensor::new(t.shape().to_vec(), g).expect("adjoint shape"))
            .collect()
    }
}

/// Records one scan on precomputed `Δ`, `B`, `C`, `a` and skip values.
#[allow(clippy::too_many_arguments)]
pub fn scan_op(
    g: &mut Graph,
    x: Var,
    delta: Var,
    b: Var,
    c: Var,
    a: Var,
    skip: Var,
    seq_len: usize,
    dir: Direction,
) -> Result<Var> {
    let (xv, dv, bv, cv, av, sv) = (g.value(x), g.value(delta), g.value(b), g.value(c), g.value(a), g.value(skip));
    let (rows, dm, ns) = (xv.rows(), xv.cols(), bv.cols());
    if seq_len == 0 || rows % seq_len != 0 {
        return shape_err(format!("{rows} rows do not split into sequences of {seq_len}"));
    }
    if dv.shape() != xv.shape()
        || bv.rows() != rows
        || cv.shape() != bv.shape()
        || av.rows() != dm
        || av.cols() != ns
        || sv.len() != dm
    {
        return shape_err("selective scan operand shapes");
    }
    let mut op = ScanOp {
        dir,
        seqs: rows / seq_len,
        len: seq_len,
        states: Vec::new(),
    };
    let mut states = Vec::new();
    let y = {
        let ins = [xv, dv, bv, cv, av, sv];
        scan_forward(&op.operands(&ins), dir, Some(&mut states))
    };
    op.states = states;
    let out = Tensor::new(vec![rows, dm], y)?;
    Ok(g.custom(vec![x, delta, b, c, a, skip], out, Box::new(op)))
}

fn scan_parts(g: &mut Graph, store: &ParamStore, p: &SelectiveParams, x: Var) -> Result<[Var; 5]> {
    if g.value(x).cols() != p.d_model {
        return shape_err(format!("tokens of width {} for a scan of width {}", g.value(x).cols(), p.d_model));
    }
    let (dt, b, c) = p.project(g, store, x)?;
    let a_log = g.param(store, p.a_log);
    let a_pos = g.exp(a_log);
    let a = g.neg(a_pos);
    let skip = g.param(store, p.skip);
    Ok([dt, b, c, a, skip])
}

/// Selective scan of `x` (`seqs·seq_len × D`) in one direction.
pub fn selective_scan(
    g: &mut Graph,
    store: &ParamStore,
    p: &SelectiveParams,
    x: Var,
    seq_len: usize,
    dir: Direction,
) -> Result<Var> {
    let [dt, b, c, a, skip] = scan_parts(g, store, p, x)?;
    scan_op(g, x, dt, b, c, a, skip, seq_len, dir)
}

/// Sum of the forward and reverse selective scans with shared parameters.
pub fn bidirectional_scan(g: &mut Graph, store: &ParamStore, p: &SelectiveParams, x: Var, seq_len: usize) -> Result<Var> {
    let [dt, b, c, a, skip] = scan_parts(g, store, p, x)?;
    let fwd = scan_op(g, x, dt, b, c, a, skip, seq_len, Direction::Forward)?;
    let rev = scan_op(g, x, dt, b, c, a, skip, seq_len, Direction::Reverse)?;
    g.add(fwd, rev)
}

/// Graph-free forward pass for a single sequence, used by benchmarks.
pub fn selective_scan_plain(store: &ParamStore, p: &SelectiveParams, x: &Tensor, dir: Direction) -> Result<Tensor> {
    let (dm, ns) = (p.d_model, p.d_state);
    let mut proj = x.matmul(store.get(p.proj.weight))?;
    let bias = store.get(p.proj.bias.expect("bias")).data().to_vec();
    let width = dm + 2 * ns;
    let rows = x.rows();
    let mut delta = Vec::with_capacity(rows * dm);
    let mut b = Vec::with_capacity(rows * ns);
    let mut c = Vec::with_capacity(rows * ns);
    for r in 0..rows {
        let row = proj.row_slice_mut(r);
        for (v, bv) in row.iter_mut().zip(&bias) {
            *v += bv;
        }
        delta.extend(row[..dm].iter().map(|&v| crate::numerics::softplus(v)));
        b.extend_from_slice(&row[dm..dm + ns]);
        c.extend_from_slice(&row[dm + ns..width]);
    }
    let a = p.state_diag(store);
    let ops = ScanOperands {
        x: x.data(),
        delta: &delta,
        b: &b,
        c: &c,
        a: a.data(),
        skip: store.get(p.skip).data(),
        seqs: 1,
        len: rows,
        d_model: dm,
        d_state: ns,
    };
    Tensor::new(vec![rows, dm], scan_forward(&ops, dir, None))
}
