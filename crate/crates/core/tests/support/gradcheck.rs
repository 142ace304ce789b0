//! Central finite-difference checks of the hand-written backward passes.

use fallguard::nn::{weighted_sum, Activation, Gru, Mlp, ParamStore, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

/// Relative error with a floor on the denominator so that gradients near
/// zero are judged on absolute error instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Max relative error over every parameter of `params`, comparing
/// `grads` against central differences of `f`.
fn check_params(params: &mut ParamStore, grads: &ParamStore, mut f: impl FnMut(&ParamStore) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..params.tensors.len() {
        for i in 0..params.tensors[t].data.len() {
            let orig = params.tensors[t].data[i];
            params.tensors[t].data[i] = orig + H;
            let up = f(params);
            params.tensors[t].data[i] = orig - H;
            let down = f(params);
            params.tensors[t].data[i] = orig;
            worst = worst.max(rel_err(grads.tensors[t].data[i], (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// One random GRU: returns the worst relative error of BPTT.
pub fn gru_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=6);
    let h = rng.random_range(1..=8);
    let steps = rng.random_range(1..=10);
    let mut gru = Gru::new(d, h, &mut rng);
    // Larger weights than the default init push gates off their linear range.
    for t in &mut gru.params.tensors {
        t.data.iter_mut().for_each(|v| *v *= 1.5);
    }
    let xs = randn(&mut rng, steps, d);
    let labels: Vec<u8> = (0..steps).map(|_| rng.random_range(0..2)).collect();
    let mut mask: Vec<bool> = (0..steps).map(|_| rng.random_bool(0.7)).collect();
    mask[steps - 1] = true;
    let mut grads = gru.params.zeros_like();
    gru.loss_and_grad(&xs, &labels, &mask, 1.0, &mut grads).unwrap();
    let (input_dim, hidden) = (gru.input_dim, gru.hidden);
    let mut params = gru.params.clone();
    check_params(&mut params, &grads, |p| {
        let g = Gru {
            input_dim,
            hidden,
            params: p.clone(),
        };
        let cache = g.forward(&xs, &vec![0.0; hidden]).unwrap();
        g.loss(&cache, &labels, &mask).0
    })
}

/// One random MLP: worst relative error over parameters and inputs.
pub fn mlp_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=4);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=7)).collect();
    let act = [Activation::Tanh, Activation::Elu, Activation::Linear][rng.random_range(0..3)];
    let mlp = Mlp::new(&sizes, act, &mut rng);
    let batch = rng.random_range(1..=4);
    let x = randn(&mut rng, batch, sizes[0]);
    let w = randn(&mut rng, batch, sizes[depth]);
    let (_, cache) = mlp.forward_batch(&x).unwrap();
    let mut grads = mlp.params.zeros_like();
    let dx = mlp.backward(&cache, &w, &mut grads).unwrap();
    let mut params = mlp.params.clone();
    let mut worst = check_params(&mut params, &grads, |p| {
        let m = Mlp::from_params(&sizes, act, p.clone()).unwrap();
        weighted_sum(&m.forward_batch(&x).unwrap().0, &w)
    });
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        xp.data[i] = x.data[i] + H;
        let up = weighted_sum(&mlp.forward_batch(&xp).unwrap().0, &w);
        xp.data[i] = x.data[i] - H;
        let down = weighted_sum(&mlp.forward_batch(&xp).unwrap().0, &w);
        xp.data[i] = x.data[i];
        worst = worst.max(rel_err(dx.data[i], (up - down) / (2.0 * H)));
    }
    worst
}
