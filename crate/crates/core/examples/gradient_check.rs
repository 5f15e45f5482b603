//! Reverse-mode gradients of a two-layer classifier, compared entry by
//! entry against central finite differences.
//!
//! `cargo run --example gradient_check`

use ensemble_search::autograd::{Graph, Tensor};
use ensemble_search::losses::classification_loss;
use ensemble_search::rng::SeedStream;
use rand::Rng;

const H: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Loss of the network for the given parameters; returns the tape
/// gradients too when `grad` is set.
fn loss(params: &[Tensor], x: &Tensor, labels: &[usize], grad: bool) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let xs = g.constant(x.clone());
    let p: Vec<_> = params.iter().map(|t| g.param(t.clone())).collect();
    let h = g.affine(xs, p[0], p[1]).unwrap();
    let h = g.relu(h).unwrap();
    let logits = g.affine(h, p[2], p[3]).unwrap();
    let l = classification_loss(&mut g, logits, labels).unwrap();
    let value = g.value(l).item();
    if !grad {
        return (value, Vec::new());
    }
    let mut grads = g.backward(l).unwrap();
    (
        value,
        p.iter()
            .zip(params)
            .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
            .collect(),
    )
}

fn main() {
    let mut rng = SeedStream::new(1).rng();
    let x = random(&[6, 3], &mut rng);
    let labels = [0, 1, 2, 1, 0, 2];
    let params = vec![
        random(&[3, 5], &mut rng),
        random(&[5], &mut rng),
        random(&[5, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    let (value, grads) = loss(&params, &x, &labels, true);
    println!("loss {value:.6}");
    let names = ["hidden weights", "hidden bias", "output weights", "output bias"];
    for (k, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..params[k].len() {
            let mut shifted = params.clone();
            shifted[k].data_mut()[i] += H;
            let up = loss(&shifted, &x, &labels, false).0;
            shifted[k].data_mut()[i] -= 2.0 * H;
            let down = loss(&shifted, &x, &labels, false).0;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads[k].data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!(
            "{name:>15}: {} entries, worst relative error {worst:.2e}",
            params[k].len()
        );
    }
}
