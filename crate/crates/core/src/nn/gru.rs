use rand::Rng;

use super::{affine, axpy, dot, init_uniform, log_softmax2, sigmoid, ParamStore, Tensor2};
use crate::error::{Error, Result};

// Parameter order inside the store.
const WZ: usize = 0;
const WR: usize = 1;
const WH: usize = 2;
const UZ: usize = 3;
const UR: usize = 4;
const UH: usize = 5;
const BZ: usize = 6;
const BR: usize = 7;
const BH: usize = 8;
const OW: usize = 9;
const OB: usize = 10;

const NAMES: [&str; 11] = [
    "gru.w_z", "gru.w_r", "gru.w_h", "gru.u_z", "gru.u_r", "gru.u_h", "gru.b_z", "gru.b_r", "gru.b_h", "out.w", "out.b",
];

/// Single-layer GRU with a linear two-class head.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// logits = W_o h' + b_o
/// ```
///
/// The reset gate multiplies the previous state before `U_h`, and each gate
/// has one bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: ParamStore,
}

/// Per-step intermediates of a forward pass, used by backpropagation.
#[derive(Debug, Clone)]
pub struct GruCache {
    h_prev: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    cand: Vec<Vec<f64>>,
    pub logits: Vec<[f64; 2]>,
    pub hidden: Vec<Vec<f64>>,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        for name in &NAMES[WZ..=WH] {
            p.push(*name, init_uniform(hidden, input_dim, input_dim, rng));
        }
        for name in &NAMES[UZ..=UH] {
            p.push(*name, init_uniform(hidden, hidden, hidden, rng));
        }
        for name in &NAMES[BZ..=BH] {
            p.push(*name, init_uniform(hidden, 1, hidden, rng));
        }
        p.push(NAMES[OW], init_uniform(2, hidden, hidden, rng));
        p.push(NAMES[OB], init_uniform(2, 1, hidden, rng));
        Self {
            input_dim,
            hidden,
            params: p,
        }
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        if params.tensors.len() != NAMES.len() {
            return Err(Error::shape("Gru tensors", NAMES.len(), params.tensors.len()));
        }
        let hidden = params.tensors[UZ].rows;
        let input_dim = params.tensors[WZ].cols;
        let expect = |i: usize| match i {
            WZ | WR | WH => (hidden, input_dim),
            UZ | UR | UH => (hidden, hidden),
            BZ | BR | BH => (hidden, 1),
            OW => (2, hidden),
            _ => (2, 1),
        };
        for (i, t) in params.tensors.iter().enumerate() {
            if params.names[i] != NAMES[i] || (t.rows, t.cols) != expect(i) {
                return Err(Error::Data(format!("unexpected GRU tensor `{}`", params.names[i])));
            }
        }
        Ok(Self {
            input_dim,
            hidden,
            params,
        })
    }

    fn t(&self, i: usize) -> &Tensor2 {
        &self.params.tensors[i]
    }

    fn b(&self, i: usize) -> &[f64] {
        &self.params.tensors[i].data
    }

    /// One recurrence step. Returns `(logits, z, r, candidate, h')`.
    #[allow(clippy::type_complexity)]
    fn step_full(&self, x: &[f64], h: &[f64]) -> ([f64; 2], Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let mut z = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut c = vec![0.0; n];
        affine(self.t(WZ), self.b(BZ), x, &mut z);
        affine(self.t(WR), self.b(BR), x, &mut r);
        affine(self.t(WH), self.b(BH), x, &mut c);
        let uz = self.t(UZ);
        let ur = self.t(UR);
        for i in 0..n {
            z[i] = sigmoid(z[i] + dot(uz.row(i), h));
            r[i] = sigmoid(r[i] + dot(ur.row(i), h));
        }
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let uh = self.t(UH);
        for i in 0..n {
            c[i] = (c[i] + dot(uh.row(i), &rh)).tanh();
        }
        let hn: Vec<f64> = (0..n).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect();
        let ow = self.t(OW);
        let ob = self.b(OB);
        let logits = [ob[0] + dot(ow.row(0), &hn), ob[1] + dot(ow.row(1), &hn)];
        (logits, z, r, c, hn)
    }

    /// One step from hidden state `h`; returns the logits and the new state.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<([f64; 2], Vec<f64>)> {
        if x.len() != self.input_dim {
            return Err(Error::shape("Gru input", self.input_dim, x.len()));
        }
        if h.len() != self.hidden {
            return Err(Error::shape("Gru hidden", self.hidden, h.len()));
        }
        let (l, _, _, _, hn) = self.step_full(x, h);
        Ok((l, hn))
    }

    /// Runs a whole sequence (one row per step) from `h0`.
    pub fn forward(&self, xs: &Tensor2, h0: &[f64]) -> Result<GruCache> {
        if xs.cols != self.input_dim {
            return Err(Error::shape("Gru sequence input", self.input_dim, xs.cols));
        }
        if h0.len() != self.hidden {
            return Err(Error::shape("Gru hidden", self.hidden, h0.len()));
        }
        let t = xs.rows;
        let mut cache = GruCache {
            h_prev: Vec::with_capacity(t),
            z: Vec::with_capacity(t),
            r: Vec::with_capacity(t),
            cand: Vec::with_capacity(t),
            logits: Vec::with_capacity(t),
            hidden: Vec::with_capacity(t),
        };
        let mut h = h0.to_vec();
        for s in 0..t {
            let (l, z, r, c, hn) = self.step_full(xs.row(s), &h);
            cache.h_prev.push(std::mem::replace(&mut h, hn.clone()));
            cache.z.push(z);
            cache.r.push(r);
            cache.cand.push(c);
            cache.logits.push(l);
            cache.hidden.push(hn);
        }
        Ok(cache)
    }

    /// Mean negative log-likelihood over unmasked steps (`mask[t] = true`
    /// means the step counts).
    pub fn loss(&self, cache: &GruCache, labels: &[u8], mask: &[bool]) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0;
        for (t, l) in cache.logits.iter().enumerate() {
            if mask[t] {
                sum -= log_softmax2(*l)[labels[t] as usize];
                n += 1;
            }
        }
        (if n == 0 { 0.0 } else { sum / n as f64 }, n)
    }

    /// Forward pass, loss, and backpropagation through time. Adds
    /// `scale · ∂loss/∂θ` into `grads` and returns `(loss, active steps)`.
    /// A fully masked sequence yields zero loss and leaves `grads` untouched.
    pub fn loss_and_grad(
        &self,
        xs: &Tensor2,
        labels: &[u8],
        mask: &[bool],
        scale: f64,
        grads: &mut ParamStore,
    ) -> Result<(f64, usize)> {
        if labels.len() != xs.rows || mask.len() != xs.rows {
            return Err(Error::shape("Gru labels/mask", xs.rows, labels.len().min(mask.len())));
        }
        let h0 = vec![0.0; self.hidden];
        let cache = self.forward(xs, &h0)?;
        let (loss, n_active) = self.loss(&cache, labels, mask);
        if n_active == 0 {
            return Ok((0.0, 0));
        }
        let k = scale / n_active as f64;
        let n = self.hidden;
        let mut dh_next = vec![0.0; n];
        let mut da_z = vec![0.0; n];
        let mut da_r = vec![0.0; n];
        let mut da_h = vec![0.0; n];
        let mut drh = vec![0.0; n];
        for t in (0..xs.rows).rev() {
            let x = xs.row(t);
            let hp = &cache.h_prev[t];
            let z = &cache.z[t];
            let r = &cache.r[t];
            let c = &cache.cand[t];
            let mut dh = std::mem::take(&mut dh_next);
            if mask[t] {
                let ls = log_softmax2(cache.logits[t]);
                let mut dl = [ls[0].exp(), ls[1].exp()];
                dl[labels[t] as usize] -= 1.0;
                dl[0] *= k;
                dl[1] *= k;
                let hn = &cache.hidden[t];
                let ow = &self.params.tensors[OW];
                for o in 0..2 {
                    axpy(grads.tensors[OW].row_mut(o), dl[o], hn);
                    grads.tensors[OB].data[o] += dl[o];
                    axpy(&mut dh, dl[o], ow.row(o));
                }
            }
            let mut dhp: Vec<f64> = (0..n).map(|i| dh[i] * (1.0 - z[i])).collect();
            for i in 0..n {
                let dz = dh[i] * (c[i] - hp[i]);
                let dc = dh[i] * z[i];
                da_z[i] = dz * z[i] * (1.0 - z[i]);
                da_h[i] = dc * (1.0 - c[i] * c[i]);
            }
            let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
            drh.iter_mut().for_each(|v| *v = 0.0);
            let uh = &self.params.tensors[UH];
            for i in 0..n {
                if da_h[i] != 0.0 {
                    axpy(&mut drh, da_h[i], uh.row(i));
                }
            }
            for i in 0..n {
                da_r[i] = drh[i] * hp[i] * r[i] * (1.0 - r[i]);
                dhp[i] += drh[i] * r[i];
            }
            let uz = &self.params.tensors[UZ];
            let ur = &self.params.tensors[UR];
            for i in 0..n {
                axpy(&mut dhp, da_z[i], uz.row(i));
                axpy(&mut dhp, da_r[i], ur.row(i));
            }
            for i in 0..n {
                axpy(grads.tensors[WZ].row_mut(i), da_z[i], x);
                axpy(grads.tensors[WR].row_mut(i), da_r[i], x);
                axpy(grads.tensors[WH].row_mut(i), da_h[i], x);
                axpy(grads.tensors[UZ].row_mut(i), da_z[i], hp);
                axpy(grads.tensors[UR].row_mut(i), da_r[i], hp);
                axpy(grads.tensors[UH].row_mut(i), da_h[i], &rh);
                grads.tensors[BZ].data[i] += da_z[i];
                grads.tensors[BR].data[i] += da_r[i];
                grads.tensors[BH].data[i] += da_h[i];
            }
            dh_next = dhp;
        }
        Ok((loss, n_active))
    }

    pub fn to_f32(&self) -> GruF32 {
        let f = |i: usize| self.params.tensors[i].data.iter().map(|v| *v as f32).collect::<Vec<f32>>();
        GruF32 {
            input_dim: self.input_dim,
            hidden: self.hidden,
            w: [f(WZ), f(WR), f(WH)],
            u: [f(UZ), f(UR), f(UH)],
            b: [f(BZ), f(BR), f(BH)],
            ow: f(OW),
            ob: f(OB),
            scratch: vec![0.0; 4 * self.hidden],
        }
    }
}

/// f32 inference copy of a [`Gru`], stepping without allocation.
#[derive(Debug, Clone)]
pub struct GruF32 {
    pub input_dim: usize,
    pub hidden: usize,
    w: [Vec<f32>; 3],
    u: [Vec<f32>; 3],
    b: [Vec<f32>; 3],
    ow: Vec<f32>,
    ob: Vec<f32>,
    scratch: Vec<f32>,
}

#[inline]
fn dot32(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GruF32 {
    /// Advances `h` in place and returns the logits.
    pub fn step(&mut self, x: &[f32], h: &mut [f32]) -> [f32; 2] {
        let n = self.hidden;
        let d = self.input_dim;
        let (z, rest) = self.scratch.split_at_mut(n);
        let (r, rest) = rest.split_at_mut(n);
        let (c, rh) = rest.split_at_mut(n);
        for i in 0..n {
            let zi = self.b[0][i] + dot32(&self.w[0][i * d..(i + 1) * d], x) + dot32(&self.u[0][i * n..(i + 1) * n], h);
            let ri = self.b[1][i] + dot32(&self.w[1][i * d..(i + 1) * d], x) + dot32(&self.u[1][i * n..(i + 1) * n], h);
            z[i] = 1.0 / (1.0 + (-zi).exp());
            r[i] = 1.0 / (1.0 + (-ri).exp());
            rh[i] = r[i] * h[i];
        }
        for i in 0..n {
            c[i] = (self.b[2][i] + dot32(&self.w[2][i * d..(i + 1) * d], x) + dot32(&self.u[2][i * n..(i + 1) * n], rh)).tanh();
        }
        for i in 0..n {
            h[i] = (1.0 - z[i]) * h[i] + z[i] * c[i];
        }
        [
            self.ob[0] + dot32(&self.ow[..n], h),
            self.ob[1] + dot32(&self.ow[n..], h),
        ]
    }
}
