//! Linear time-invariant state-space systems: zero-order-hold discretization
//! and the recurrent and convolutional scan forms.

use crate::error::{shape_err, MimError, Result};
use crate::numerics::Tensor;

/// `h'(t) = A h(t) + B x(t)`, `y(t) = C h(t) + D x(t)` sampled with step `delta`.
#[derive(Clone, Debug)]
pub struct ContinuousSsm {
    /// `N × N` state matrix.
    pub a: Tensor,
    /// `N × L` input matrix.
    pub b: Tensor,
    /// `L × N` output matrix.
    pub c: Tensor,
    /// `L × L` feed-through matrix.
    pub d: Tensor,
    pub delta: f64,
}

impl ContinuousSsm {
    pub fn new(a: Tensor, b: Tensor, c: Tensor, d: Tensor, delta: f64) -> Result<Self> {
        let n = a.rows();
        let l = b.cols();
        let ok = a.rank() == 2
            && a.cols() == n
            && b.rows() == n
            && c.rows() == l
            && c.cols() == n
            && d.rows() == l
            && d.cols() == l;
        if !ok {
            return shape_err(format!(
                "ssm A{:?} B{:?} C{:?} D{:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            ));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MimError::Invalid(format!("step size must be positive, got {delta}")));
        }
        if ![&a, &b, &c, &d].iter().all(|t| t.is_finite()) {
            return Err(MimError::NonFinite("ContinuousSsm::new"));
        }
        Ok(Self { a, b, c, d, delta })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn io_dim(&self) -> usize {
        self.b.cols()
    }
}

/// ZOH-discretized system; `c` and `d` carry over unchanged.
#[derive(Clone, Debug)]
pub struct DiscreteSsm {
    pub a_bar: Tensor,
    pub b_bar: Tensor,
    pub c: Tensor,
    pub d: Tensor,
}

impl DiscreteSsm {
    pub fn state_dim(&self) -> usize {
        self.a_bar.rows()
    }

    pub fn io_dim(&self) -> usize {
        self.b_bar.cols()
    }
}

/// Matrix exponential by scaling and squaring around a Taylor polynomial.
pub fn expm(m: &Tensor) -> Tensor {
    let n = m.rows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| m.at(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.scale(0.5f64.powi(squarings));
    let mut result = Tensor::eye(n);
    let mut term = Tensor::eye(n);
    for k in 1..=24 {
        term = term.matmul(&scaled).expect("square").scale(1.0 / k as f64);
        result.add_assign(&term);
    }
    for _ in 0..squarings {
        result = result.matmul(&result).expect("square");
    }
    result
}

/// Zero-order hold: `Ā = exp(ΔA)`, `B̄ = Σₖ (ΔA)ᵏ/(k+1)! · ΔB`.
///
/// Both come out of one exponential of the block matrix `[[ΔA, ΔB], [0, 0]]`,
/// whose upper-right block is exactly that series, so `A → 0` gives `B̄ = ΔB`
/// with no division.
pub fn discretize(ssm: &ContinuousSsm) -> Result<DiscreteSsm> {
    let n = ssm.state_dim();
    let l = ssm.io_dim();
    let size = n + l;
    let mut block = Tensor::zeros(&[size, size]);
    for i in 0..n {
        for j in 0..n {
            block.set(i, j, ssm.delta * ssm.a.at(i, j));
        }
        for j in 0..l {
            block.set(i, n + j, ssm.delta * ssm.b.at(i, j));
        }
    }
    let e = expm(&block);
    let mut a_bar = Tensor::zeros(&[n, n]);
    let mut b_bar = Tensor::zeros(&[n, l]);
    for i in 0..n {
        for j in 0..n {
            a_bar.set(i, j, e.at(i, j));
        }
        for j in 0..l {
            b_bar.set(i, j, e.at(i, n + j));
        }
    }
    Ok(DiscreteSsm {
        a_bar: a_bar.ensure_finite("discretize")?,
        b_bar: b_bar.ensure_finite("discretize")?,
        c: ssm.c.clone(),
        d: ssm.d.clone(),
    })
}

/// Output-projection taps `C B̄, C Ā B̄, …, C Āᵐ⁻¹ B̄`, each `L × L`.
#[derive(Clone, Debug)]
pub struct ConvKernel {
    pub taps: Vec<Tensor>,
}

impl ConvKernel {
    pub fn new(d: &DiscreteSsm, m: usize) -> Result<Self> {
        let mut taps = Vec::with_capacity(m);
        let mut power_b = d.b_bar.clone();
        for _ in 0..m {
            taps.push(d.c.matmul(&power_b)?);
            power_b = d.a_bar.matmul(&power_b)?;
        }
        Ok(Self { taps })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

fn check_input(d: &DiscreteSsm, x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.cols() != d.io_dim() {
        return shape_err(format!("input {:?} for io width {}", x.shape(), d.io_dim()));
    }
    Ok(())
}

/// `h_k = Ā h_{k−1} + B̄ x_k`, `y_k = C h_k + D x_k` for each row `x_k` of `x`.
pub fn recurrent_scan(d: &DiscreteSsm, x: &Tensor, h0: &[f64]) -> Result<Tensor> {
    check_input(d, x)?;
    let n = d.state_dim();
    let l = d.io_dim();
    if h0.len() != n {
        return shape_err(format!("initial state of length {} for N = {n}", h0.len()));
    }
    let mut h = h0.to_vec();
    let mut next = vec![0.0; n];
    let mut y = Tensor::zeros(&[x.rows(), l]);
    for k in 0..x.rows() {
        let xk = x.row_slice(k);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += d.a_bar.at(i, j) * h[j];
            }
            for j in 0..l {
                acc += d.b_bar.at(i, j) * xk[j];
            }
            next[i] = acc;
        }
        std::mem::swap(&mut h, &mut next);
        for o in 0..l {
            let mut acc = 0.0;
            for j in 0..n {
                acc += d.c.at(o, j) * h[j];
            }
            for j in 0..l {
                acc += d.d.at(o, j) * xk[j];
            }
            y.set(k, o, acc);
        }
    }
    Ok(y)
}

/// Causal convolution `y_k = Σ_{j≤k} K̄_j x_{k−j} + D x_k` (zero initial state).
pub fn conv_scan(kernel: &ConvKernel, d: &DiscreteSsm, x: &Tensor) -> Result<Tensor> {
    check_input(d, x)?;
    let m = x.rows();
    if kernel.len() != m {
        return shape_err(format!("kernel of length {} for sequence of length {m}", kernel.len()));
    }
    let l = d.io_dim();
    let mut y = Tensor::zeros(&[m, l]);
    for k in 0..m {
        let mut out = vec![0.0; l];
        for j in 0..=k {
            let tap = &kernel.taps[j];
            let xs = x.row_slice(k - j);
            for (o, acc) in out.iter_mut().enumerate() {
                for (i, xv) in xs.iter().enumerate() {
                    *acc += tap.at(o, i) * xv;
                }
            }
        }
        let xk = x.row_slice(k);
        for (o, acc) in out.iter_mut().enumerate() {
            for (i, xv) in xk.iter().enumerate() {
                *acc += d.d.at(o, i) * xv;
            }
        }
        y.row_slice_mut(k).copy_from_slice(&out);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(a: f64, b: f64, delta: f64) -> ContinuousSsm {
        ContinuousSsm::new(
            Tensor::from_rows(&[vec![a]]).unwrap(),
            Tensor::from_rows(&[vec![b]]).unwrap(),
            Tensor::from_rows(&[vec![1.0]]).unwrap(),
            Tensor::from_rows(&[vec![0.0]]).unwrap(),
            delta,
        )
        .unwrap()
    }

    fn scalar_discrete(a_bar: f64, b_bar: f64) -> DiscreteSsm {
        DiscreteSsm {
            a_bar: Tensor::from_rows(&[vec![a_bar]]).unwrap(),
            b_bar: Tensor::from_rows(&[vec![b_bar]]).unwrap(),
            c: Tensor::from_rows(&[vec![1.0]]).unwrap(),
            d: Tensor::from_rows(&[vec![0.0]]).unwrap(),
        }
    }

    #[test]
    fn zero_state_matrix_gives_delta_b() {
        let d = discretize(&scalar_system(0.0, 3.0, 0.25)).unwrap();
        assert_eq!(d.a_bar.data(), &[1.0]);
        assert!((d.b_bar.data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let d = discretize(&scalar_system(-1.0, 1.0, 2f64.ln())).unwrap();
        assert!((d.a_bar.data()[0] - 0.5).abs() < 1e-14);
        assert!((d.b_bar.data()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_step_and_shapes() {
        let one = || Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(ContinuousSsm::new(one(), one(), one(), one(), 0.0).is_err());
        assert!(ContinuousSsm::new(one(), one(), one(), one(), -1.0).is_err());
        assert!(ContinuousSsm::new(Tensor::zeros(&[2, 2]), one(), one(), one(), 1.0).is_err());
    }

    #[test]
    fn recurrent_hand_example() {
        let d = scalar_discrete(0.5, 1.0);
        let x = Tensor::new(vec![3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let y = recurrent_scan(&d, &x, &[0.0]).unwrap();
        assert_eq!(y.data(), &[1.0, 0.5, 0.25]);
        let k = ConvKernel::new(&d, 3).unwrap();
        assert_eq!(conv_scan(&k, &d, &x).unwrap().data(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn frozen_state_and_feedthrough() {
        // Ā = I, B̄ = 0: state stays at h0.
        let d = DiscreteSsm {
            a_bar: Tensor::eye(2),
            b_bar: Tensor::zeros(&[2, 1]),
            c: Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap(),
            d: Tensor::from_rows(&[vec![3.0]]).unwrap(),
        };
        let x = Tensor::new(vec![3, 1], vec![1.0, -1.0, 2.0]).unwrap();
        let y = recurrent_scan(&d, &x, &[0.5, 0.25]).unwrap();
        for k in 0..3 {
            assert_eq!(y.data()[k], 1.0 + 3.0 * x.data()[k]);
        }
        // C = 0, D = I
        let d = DiscreteSsm {
            a_bar: Tensor::eye(2),
            b_bar: Tensor::full(&[2, 2], 1.0),
            c: Tensor::zeros(&[2, 2]),
            d: Tensor::eye(2),
        };
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(recurrent_scan(&d, &x, &[0.0, 0.0]).unwrap(), x);
    }

    #[test]
    fn conv_scan_errors_and_zero_input() {
        let d = scalar_discrete(0.9, 1.0);
        let k = ConvKernel::new(&d, 4).unwrap();
        let x = Tensor::zeros(&[4, 1]);
        assert!(conv_scan(&k, &d, &x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(conv_scan(&k, &d, &Tensor::zeros(&[3, 1])).is_err());
        assert!(recurrent_scan(&d, &Tensor::zeros(&[3, 2]), &[0.0]).is_err());
    }
}
