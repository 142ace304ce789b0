use rand::Rng;

use super::{affine, axpy, dot, init_uniform, Activation, ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Fully connected network. Hidden layers use `act`; the output layer is
/// linear. Parameters are named `l{i}.w` (out × in) and `l{i}.b` (out × 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub act: Activation,
    pub params: ParamStore,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Tensor2,
    pre: Vec<Tensor2>,
    post: Vec<Tensor2>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], act: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = ParamStore::new();
        for (i, w) in sizes.windows(2).enumerate() {
            params.push(format!("l{i}.w"), init_uniform(w[1], w[0], w[0], rng));
            params.push(format!("l{i}.b"), init_uniform(w[1], 1, w[0], rng));
        }
        Self {
            sizes: sizes.to_vec(),
            act,
            params,
        }
    }

    pub fn from_params(sizes: &[usize], act: Activation, params: ParamStore) -> Result<Self> {
        if params.tensors.len() != 2 * (sizes.len() - 1) {
            return Err(Error::shape("Mlp layers", 2 * (sizes.len() - 1), params.tensors.len()));
        }
        for (i, w) in sizes.windows(2).enumerate() {
            let wt = &params.tensors[2 * i];
            let bt = &params.tensors[2 * i + 1];
            if wt.rows != w[1] || wt.cols != w[0] || bt.rows != w[1] || bt.cols != 1 {
                return Err(Error::shape("Mlp layer shape", w[0] * w[1], wt.data.len()));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            act,
            params,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    fn layer(&self, i: usize) -> (&Tensor2, &[f64]) {
        (&self.params.tensors[2 * i], &self.params.tensors[2 * i + 1].data)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("Mlp input", self.input_dim(), x.len()));
        }
        let mut h = x.to_vec();
        let last = self.n_layers() - 1;
        for i in 0..self.n_layers() {
            let (w, b) = self.layer(i);
            let mut out = vec![0.0; w.rows];
            affine(w, b, &h, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = self.act.apply(*v));
            }
            h = out;
        }
        Ok(h)
    }

    pub fn forward_batch(&self, x: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        if x.cols != self.input_dim() {
            return Err(Error::shape("Mlp batch input", self.input_dim(), x.cols));
        }
        let last = self.n_layers() - 1;
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut post = Vec::with_capacity(self.n_layers());
        let mut h = x.clone();
        for i in 0..self.n_layers() {
            let (w, b) = self.layer(i);
            let mut z = Tensor2::zeros(x.rows, w.rows);
            for r in 0..x.rows {
                affine(w, b, h.row(r), z.row_mut(r));
            }
            let a = if i < last {
                let mut a = z.clone();
                a.data.iter_mut().for_each(|v| *v = self.act.apply(*v));
                a
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a.clone());
            h = a;
        }
        Ok((
            h,
            MlpCache {
                input: x.clone(),
                pre,
                post,
            },
        ))
    }

    /// Accumulates parameter gradients of `Σ dout ⊙ output` into `grads` and
    /// returns the gradient with respect to the input batch.
    pub fn backward(&self, cache: &MlpCache, dout: &Tensor2, grads: &mut ParamStore) -> Result<Tensor2> {
        let last = self.n_layers() - 1;
        if dout.cols != self.output_dim() || dout.rows != cache.input.rows {
            return Err(Error::shape("Mlp backward", self.output_dim(), dout.cols));
        }
        let mut delta = dout.clone();
        for i in (0..self.n_layers()).rev() {
            if i < last {
                for (d, (z, a)) in delta
                    .data
                    .iter_mut()
                    .zip(cache.pre[i].data.iter().zip(&cache.post[i].data))
                {
                    *d *= self.act.grad(*z, *a);
                }
            }
            let input = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let w = &self.params.tensors[2 * i];
            let mut next = Tensor2::zeros(delta.rows, w.cols);
            {
                let (gw_part, gb_part) = grads.tensors.split_at_mut(2 * i + 1);
                let gw = &mut gw_part[2 * i];
                let gb = &mut gb_part[0];
                for r in 0..delta.rows {
                    let d = delta.row(r);
                    let x = input.row(r);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        gb.data[o] += dv;
                        axpy(gw.row_mut(o), dv, x);
                        axpy(next.row_mut(r), dv, w.row(o));
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}

/// Scalar sum of `weights ⊙ outputs`, handy for gradient checks.
pub fn weighted_sum(out: &Tensor2, weights: &Tensor2) -> f64 {
    dot(&out.data, &weights.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_network_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut m = Mlp::new(&[3, 3, 3, 3], Activation::Linear, &mut rng);
        for i in 0..3 {
            let w = &mut m.params.tensors[2 * i];
            w.data.iter_mut().for_each(|v| *v = 0.0);
            for d in 0..3 {
                w.data[d * 3 + d] = 1.0;
            }
            m.params.tensors[2 * i + 1].data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = [0.3, -1.2, 4.0];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[4, 5, 5, 2], Activation::Tanh, &mut rng);
        let x = Tensor2::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (y, _) = m.forward_batch(&x).unwrap();
        assert_eq!(y.rows, 3);
        for r in 0..3 {
            assert_eq!(y.row(r), m.forward(x.row(r)).unwrap().as_slice());
        }
        assert!(m.forward(&[0.0; 3]).is_err());
    }
}
