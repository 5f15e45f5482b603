//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ensemble_search::autograd::{Graph, Tensor, Var};
use ensemble_search::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor so that two near-zero gradients compare as equal.
pub const FD_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-scale..scale));
    t
}

/// Like [`random_tensor`] but every entry is at least `gap` away from 0,
/// so ReLU kinks stay outside the finite-difference stencil.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64, gap: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| {
        let m: f64 = rng.random_range(gap..scale);
        *v = if rng.random_bool(0.5) { m } else { -m };
    });
    t
}

/// Scalar loss `sum(out * r)` for a fixed random `r`, so that every output
/// element carries a distinct cotangent.
pub fn project(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let prod = g.mul(out, rv)?;
    g.sum(prod)
}

/// Largest relative error between backprop and central differences over
/// every element of every input.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.take_or_zeros(*v, inputs[k].shape());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Every differentiable operation paired with a builder for random
/// instances of it. Each builder returns the inputs and the scalar loss
/// closure for [`grad_check`].
pub type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

pub fn gradient_case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    use ensemble_search::losses::{classification_loss, soft_cross_entropy};
    let mut dim = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let (n, a, b, c) = (dim(1, 4), dim(1, 5), dim(1, 5), dim(1, 3));
    match op {
        "affine" => {
            let r = random_tensor(rng, &[n, b], 1.0);
            let xs = vec![
                random_tensor(rng, &[n, a], 1.0),
                random_tensor(rng, &[a, b], 1.0),
                random_tensor(rng, &[b], 1.0),
            ];
            (
                xs,
                Box::new(move |g, v| {
                    let y = g.affine(v[0], v[1], v[2])?;
                    project(g, y, &r)
                }),
            )
        }
        "conv2d" => {
            let k = if rng.random_bool(0.5) { 1 } else { 3 };
            let (h, w, cout) = (
                rng.random_range(1..=4),
                rng.random_range(1..=4),
                rng.random_range(1..=3),
            );
            let r = random_tensor(rng, &[n.min(2), h, w, cout], 1.0);
            let xs = vec![
                random_tensor(rng, &[n.min(2), h, w, c], 1.0),
                random_tensor(rng, &[k, k, c, cout], 1.0),
                random_tensor(rng, &[cout], 1.0),
            ];
            (
                xs,
                Box::new(move |g, v| {
                    let y = g.conv2d(v[0], v[1], v[2])?;
                    project(g, y, &r)
                }),
            )
        }
        "relu" => {
            let r = random_tensor(rng, &[n, a], 1.0);
            (
                vec![random_away_from_zero(rng, &[n, a], 1.0, 1e-2)],
                Box::new(move |g, v| {
                    let y = g.relu(v[0])?;
                    project(g, y, &r)
                }),
            )
        }
        "global_average_pool" | "flatten" => {
            let shape = [n, a, b, c];
            let flat = op == "flatten";
            let rshape = if flat { vec![n, a * b * c] } else { vec![n, c] };
            let r = random_tensor(rng, &rshape, 1.0);
            (
                vec![random_tensor(rng, &shape, 1.0)],
                Box::new(move |g, v| {
                    let y = if flat {
                        g.flatten(v[0])?
                    } else {
                        g.global_average_pool(v[0])?
                    };
                    project(g, y, &r)
                }),
            )
        }
        "add" | "mul" => {
            let r = random_tensor(rng, &[n, a], 1.0);
            let is_add = op == "add";
            let xs = vec![random_tensor(rng, &[n, a], 1.0), random_tensor(rng, &[n, a], 1.0)];
            (
                xs,
                Box::new(move |g, v| {
                    let y = if is_add { g.add(v[0], v[1])? } else { g.mul(v[0], v[1])? };
                    project(g, y, &r)
                }),
            )
        }
        "scalar_scale" => {
            let r = random_tensor(rng, &[n, a], 1.0);
            let s = rng.random_range(-3.0..3.0);
            (
                vec![random_tensor(rng, &[n, a], 1.0)],
                Box::new(move |g, v| {
                    let y = g.scalar_scale(v[0], s)?;
                    project(g, y, &r)
                }),
            )
        }
        "scale_by" => {
            let r = random_tensor(rng, &[n, a], 1.0);
            let xs = vec![random_tensor(rng, &[n, a], 1.0), random_tensor(rng, &[1], 2.0)];
            (
                xs,
                Box::new(move |g, v| {
                    let y = g.scale_by(v[0], v[1])?;
                    project(g, y, &r)
                }),
            )
        }
        "softmax" | "log_softmax" => {
            let r = random_tensor(rng, &[n, a], 1.0);
            let log = op == "log_softmax";
            (
                vec![random_tensor(rng, &[n, a], 3.0)],
                Box::new(move |g, v| {
                    let y = if log { g.log_softmax(v[0])? } else { g.softmax(v[0])? };
                    project(g, y, &r)
                }),
            )
        }
        "sum" | "mean" => {
            let is_sum = op == "sum";
            let w = random_tensor(rng, &[n, a], 1.0);
            (
                vec![random_tensor(rng, &[n, a], 1.0)],
                Box::new(move |g, v| {
                    let wv = g.constant(w.clone());
                    let y = g.mul(v[0], wv)?;
                    if is_sum {
                        g.sum(y)
                    } else {
                        g.mean(y)
                    }
                }),
            )
        }
        "pick" => {
            let r = random_tensor(rng, &[n], 1.0);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..b)).collect();
            (
                vec![random_tensor(rng, &[n, b], 1.0)],
                Box::new(move |g, v| {
                    let y = g.pick(v[0], &idx)?;
                    project(g, y, &r)
                }),
            )
        }
        "classification_loss" => {
            let classes = b.max(2);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            (
                vec![random_tensor(rng, &[n, classes], 3.0)],
                Box::new(move |g, v| classification_loss(g, v[0], &labels)),
            )
        }
        "soft_cross_entropy" => {
            let classes = b.max(2);
            let teacher = random_tensor(rng, &[n, classes], 3.0);
            let t = rng.random_range(0.5..4.0);
            (
                vec![random_tensor(rng, &[n, classes], 3.0)],
                Box::new(move |g, v| soft_cross_entropy(g, &teacher, v[0], t)),
            )
        }
        "mlp_chain" => {
            let classes = c.max(2);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let xs = vec![
                random_tensor(rng, &[n, a], 1.0),
                random_tensor(rng, &[a, b], 1.0),
                random_tensor(rng, &[b], 1.0),
                random_tensor(rng, &[b, classes], 1.0),
                random_tensor(rng, &[classes], 1.0),
            ];
            (
                xs,
                Box::new(move |g, v| {
                    let h = g.affine(v[0], v[1], v[2])?;
                    let h = g.relu(h)?;
                    let y = g.affine(h, v[3], v[4])?;
                    classification_loss(g, y, &labels)
                }),
            )
        }
        "conv_chain" => {
            let labels: Vec<usize> = (0..n.min(2)).map(|_| rng.random_range(0..2)).collect();
            let xs = vec![
                random_tensor(rng, &[n.min(2), 3, 3, c], 1.0),
                random_tensor(rng, &[3, 3, c, 2], 1.0),
                random_tensor(rng, &[2], 1.0),
                random_tensor(rng, &[2, 2], 1.0),
                random_tensor(rng, &[2], 1.0),
            ];
            (
                xs,
                Box::new(move |g, v| {
                    let h = g.conv2d(v[0], v[1], v[2])?;
                    let h = g.relu(h)?;
                    let h = g.global_average_pool(h)?;
                    let y = g.affine(h, v[3], v[4])?;
                    classification_loss(g, y, &labels)
                }),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

pub const GRADIENT_OPS: [&str; 18] = [
    "affine",
    "conv2d",
    "relu",
    "global_average_pool",
    "flatten",
    "add",
    "mul",
    "scalar_scale",
    "scale_by",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "pick",
    "classification_loss",
    "soft_cross_entropy",
    "mlp_chain",
    "conv_chain",
];

/// Runs `per_op` random instances of every op. Returns `(op, worst
/// relative error)` per instance.
pub fn gradient_oracle(seed: u64, per_op: usize) -> Vec<(&'static str, f64)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for op in GRADIENT_OPS {
        for _ in 0..per_op {
            let (inputs, f) = gradient_case(op, &mut rng);
            let err = grad_check(&inputs, f).unwrap_or_else(|e| panic!("{op}: {e}"));
            out.push((op, err));
        }
    }
    out
}
