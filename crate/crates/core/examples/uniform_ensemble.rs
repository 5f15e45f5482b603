//! With a constant generator, no distillation and uniform weights, each
//! iteration trains one network independently of the others, so the
//! ensemble is the plain average of separately trained networks.
//!
//! `cargo run --release --example uniform_ensemble`

use ensemble_search::data::{eval_inputs, SyntheticKind, SyntheticSpec};
use ensemble_search::generator::GeneratorSpec;
use ensemble_search::losses::evaluate_logits;
use ensemble_search::model::ArchSpec;
use ensemble_search::search::{self, NullSink, RunConfig};

fn main() -> ensemble_search::Result<()> {
    let data = SyntheticSpec::new(SyntheticKind::Spirals, 600, 300, 3, 0.1, 7).generate()?;
    let arch = ArchSpec::new(2, 8)?;
    let config = RunConfig {
        iterations: 3,
        steps_per_iteration: 500,
        generator: GeneratorSpec::constant(arch, u64::MAX),
        seed: 1,
        ..RunConfig::default()
    };
    let out = search::run(&config, &data, None, &mut NullSink)?;
    let x = eval_inputs(&data.test, data.task.input, None)?;
    let ensemble = out.ensemble.logits(&x)?;

    let mut mean = vec![0.0; ensemble.len()];
    for i in 1..=config.iterations {
        let net = search::train_standalone(&config, &data, None, arch, i, 0)?;
        let logits = net.logits(&x)?;
        let (_, err) = evaluate_logits(&logits, data.test.labels())?;
        println!("standalone network {i}: test error {:.2}%", 100.0 * err);
        for (m, v) in mean.iter_mut().zip(logits.data()) {
            *m += v / config.iterations as f64;
        }
    }
    let gap = ensemble
        .data()
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (_, err) = evaluate_logits(&ensemble, data.test.labels())?;
    println!("ensemble weights {:?}", out.ensemble.weights());
    println!("ensemble test error {:.2}%", 100.0 * err);
    println!("largest |ensemble logit - mean standalone logit| = {gap:.2e}");
    Ok(())
}
