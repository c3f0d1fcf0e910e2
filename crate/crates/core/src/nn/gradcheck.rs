//! Central-difference gradient checks in f64.
//!
//! Both checks report `‖fd − analytic‖ / ‖(fd, analytic)‖` over every
//! perturbed entry, so a value below 1e-4 means agreement to about four
//! digits across the whole gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterStore, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

fn relative(num: f64, den: f64) -> f64 {
    num.sqrt() / den.sqrt().max(1e-12)
}

/// Checks `∂/∂inputs Σ w ⊙ f(inputs)` for a fixed random `w`, so every
/// output entry contributes with a different weight.
pub fn op_gradient_error(
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let build = |inputs: &[Tensor<f64>], w: Option<&Tensor<f64>>| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        let (r, c) = g.shape(out);
        let w = match w {
            Some(w) => w.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                Tensor::matrix(
                    r,
                    c,
                    (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .expect("shape")
            }
        };
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv).expect("same shape");
        let loss = g.sum(prod);
        (g, vars, loss, w)
    };
    let (mut g, vars, loss, w) = build(inputs, None);
    g.backward(loss).expect("finite");
    let value = |inputs: &[Tensor<f64>]| {
        let (g, _, loss, _) = build(inputs, Some(&w));
        g.value(loss).data()[0]
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let fd = (value(&plus) - value(&minus)) / (2.0 * STEP);
            num += (fd - a).powi(2);
            den += fd.powi(2) + a.powi(2);
        }
    }
    relative(num, den)
}

/// Checks the gradient of a scalar loss with respect to every parameter
/// of `store`. `loss` builds the forward pass and returns the loss node.
pub fn parameter_gradient_error(
    store: &ParameterStore<f64>,
    loss: impl Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Var,
) -> f64 {
    let eval = |store: &ParameterStore<f64>| {
        let mut g = Graph::new();
        let l = loss(&mut g, store);
        (g, l)
    };
    let (mut g, l) = eval(store);
    g.backward(l).expect("finite");
    let grads = g.param_grads();
    let value = |s: &ParameterStore<f64>| {
        let (g, l) = eval(s);
        g.value(l).data()[0]
    };
    let (mut num, mut den) = (0.0, 0.0);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.get(&name).expect("listed").len();
        let analytic = grads
            .get(&name)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = store.clone();
            plus.get_mut(&name).expect("listed").data_mut()[i] += STEP;
            let mut minus = store.clone();
            minus.get_mut(&name).expect("listed").data_mut()[i] -= STEP;
            let fd = (value(&plus) - value(&minus)) / (2.0 * STEP);
            num += (fd - a).powi(2);
            den += fd.powi(2) + a.powi(2);
        }
    }
    relative(num, den)
}
