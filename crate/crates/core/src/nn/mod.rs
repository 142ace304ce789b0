//! Small dense networks with hand-written gradients.
//!
//! Training runs in f64; [`GruF32`] is the f32 inference copy of a trained
//! predictor.

mod adam;
mod checkpoint;
mod gru;
mod mlp;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Dtype, StoredTensor};
pub use gru::{Gru, GruCache, GruF32};
pub use mlp::{weighted_sum, Mlp, MlpCache};

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Tensor2::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out = W x + b` for a single vector.
pub(crate) fn affine(w: &Tensor2, b: &[f64], x: &[f64], out: &mut [f64]) {
    for (o, slot) in out.iter_mut().enumerate() {
        *slot = b[o] + dot(w.row(o), x);
    }
}

/// Named parameter tensors. Gradients live in a second store of identical
/// layout built with [`ParamStore::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor2>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor2) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor2::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, v: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = v);
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(&mut a.data, s, &b.data);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales the store down so its global norm is at most `max`.
    pub fn clip_norm(&mut self, max: f64) -> f64 {
        let n = self.norm();
        if max > 0.0 && n > max {
            self.scale(max / n);
        }
        n
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::shape("ParamStore::set_flat", self.len(), v.len()));
        }
        let mut i = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&v[i..i + n]);
            i += n;
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform ±1/√fan_in initialization.
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor2 {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor2 {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect(),
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Elu,
    Relu,
    Linear,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Self::Tanh),
            "elu" => Some(Self::Elu),
            "relu" => Some(Self::Relu),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Elu => "elu",
            Self::Relu => "relu",
            Self::Linear => "linear",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Self::Relu => x.max(0.0),
            Self::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn grad(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-softmax of a 2-vector, stable for large logits.
#[inline]
pub fn log_softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    [l[0] - lse, l[1] - lse]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_is_finite_for_large_logits() {
        let l = log_softmax2([50.0, -50.0]);
        assert!(l[0].is_finite() && l[1].is_finite());
        assert!(l[0].abs() < 1e-12);
        assert!((l[1] + 100.0).abs() < 1e-9);
    }

    #[test]
    fn flat_round_trip() {
        let mut p = ParamStore::new();
        p.push("a", Tensor2::zeros(2, 3));
        p.push("b", Tensor2::zeros(1, 4));
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        p.set_flat(&v).unwrap();
        assert_eq!(p.flat(), v);
        assert_eq!(p.tensors[1].data[0], 6.0);
    }
}
