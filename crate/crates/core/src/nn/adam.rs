use super::ParamStore;
use crate::error::{Error, Result};

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Applies one update. Non-finite gradients abort the step before any
    /// parameter changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if grads.tensors.len() != params.tensors.len() {
            return Err(Error::shape("Adam grads", params.tensors.len(), grads.tensors.len()));
        }
        for (name, g) in grads.names.iter().zip(&grads.tensors) {
            if !g.is_finite() {
                return Err(Error::GradientBlewUp(name.clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (k, p) in params.tensors.iter_mut().enumerate() {
            let g = &grads.tensors[k].data;
            let m = &mut self.m.tensors[k].data;
            let v = &mut self.v.tensors[k].data;
            for i in 0..p.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] = p.data[i] * decay - self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2;

    fn store(v: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        let n = v.len();
        p.push("w", Tensor2::from_vec(n, 1, v).unwrap());
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = store(vec![0.3, -1.0]);
        let g = p.zeros_like();
        let mut a = Adam::new(&p, 1e-3, 0.0);
        a.step(&mut p, &g).unwrap();
        assert_eq!(p.flat(), vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = store(vec![1.0, 1.0]);
        let g = store(vec![0.5, -2e-3]);
        let mut a = Adam::new(&p, 1e-3, 0.0);
        a.step(&mut p, &g).unwrap();
        // m̂ = g and v̂ = g², so the step is −lr·g/(|g| + eps).
        for (x, gi) in p.flat().iter().zip([0.5f64, -2e-3]) {
            let expect = 1.0 - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let mut p = store(vec![2.0]);
        let g = p.zeros_like();
        let mut a = Adam::new(&p, 1e-3, 1e-4);
        for _ in 0..3 {
            a.step(&mut p, &g).unwrap();
        }
        assert!((p.flat()[0] - 2.0 * (1.0 - 1e-7f64).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut p = store(vec![1.0]);
        let g = store(vec![f64::NAN]);
        let mut a = Adam::new(&p, 1e-3, 0.0);
        match a.step(&mut p, &g) {
            Err(Error::GradientBlewUp(n)) => assert_eq!(n, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.flat(), vec![1.0]);
    }
}
