use std::fmt;

use crate::error::{shape_err, MimError, Result};

/// Epsilon added to the variance in [`Tensor::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Dense row-major `f64` tensor.
///
/// Most model code works on rank-2 tensors (`rows × cols`); a rank-1 tensor
/// of length `n` is treated as a single `1 × n` row by the 2-D helpers.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `1 × n` row.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading dimension when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(MimError::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return shape_err(format!(
                "matmul inner dims {:?} x {:?}",
                self.shape, other.shape
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self {
            shape: vec![n, m],
            data: out,
        }
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(MimError::Invalid(format!(
                "axis {axis} out of range for {:?}",
                self.shape
            )));
        }
        let len = self.shape[axis];
        if len == 0 {
            return Err(MimError::EmptyAxis("softmax"));
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (out[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Normalizes each row (last axis) to zero mean and unit variance, then
    /// applies `gain` and `bias` (both of length `cols`).
    pub fn layer_norm(&self, gain: &[f64], bias: &[f64]) -> Result<Self> {
        let d = self.cols();
        if gain.len() != d || bias.len() != d {
            return shape_err(format!("layer_norm affine params for width {d}"));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(d.max(1)) {
            let (mean, inv) = row_stats(row);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gain[j] + bias[j];
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }
}

/// Mean and inverse standard deviation of one feature vector.
pub(crate) fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// `out[m×n] = a[m×k] · b[k×n]`, accumulating over an i-k-j loop.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    x.softmax(axis)
}

pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64]) -> Result<Tensor> {
    x.layer_norm(gain, bias)
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_inner(x).tanh())
}

pub(crate) fn gelu_inner(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    C * (x + 0.044_715 * x * x * x)
}

pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = gelu_inner(x).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&m).unwrap(), m);
        let ones = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(m.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
        let z = Tensor::zeros(&[3, 2]).matmul(&m).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(m.matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::row(vec![0.0; 3]).softmax(1).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Tensor::row(vec![0.0, 3f64.ln()]).softmax(1).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        assert_eq!(Tensor::row(vec![-4.2]).softmax(1).unwrap().data(), &[1.0]);
        assert!(Tensor::new(vec![2, 0], vec![]).unwrap().softmax(1).is_err());
        assert!(Tensor::row(vec![1.0]).softmax(2).is_err());
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = x.softmax(0).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn layer_norm_examples() {
        let c = Tensor::row(vec![2.5; 4]).layer_norm(&[1.0; 4], &[0.0; 4]).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let x = Tensor::row(vec![1.0, -1.0]).layer_norm(&[1.0; 2], &[0.0; 2]).unwrap();
        // var = 1, eps shifts the result by ~5e-7
        assert!((x.data()[0] - 1.0).abs() < 1e-6);
        assert!((x.data()[1] + 1.0).abs() < 1e-6);
        let b = Tensor::row(vec![3.0, 7.0]).layer_norm(&[0.0; 2], &[0.5, -0.5]).unwrap();
        assert_eq!(b.data(), &[0.5, -0.5]);
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [0.01, 0.05, 0.1, 1.0, 5.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12);
        }
    }
}
