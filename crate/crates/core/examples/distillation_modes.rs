//! The three distillation modes crossed with both mixture-weight modes on
//! one spiral task.
//!
//! `cargo run --release --example distillation_modes -- [steps]`

use ensemble_search::data::{eval_inputs, SyntheticKind, SyntheticSpec};
use ensemble_search::ensemble::WeightMode;
use ensemble_search::generator::GeneratorSpec;
use ensemble_search::losses::{evaluate_logits, KdConfig, KdMode};
use ensemble_search::model::ArchSpec;
use ensemble_search::search::{self, NullSink, RunConfig};

fn main() -> ensemble_search::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(600, |s| s.parse().expect("steps"));
    let data = SyntheticSpec::new(SyntheticKind::Spirals, 900, 600, 3, 0.2, 3).generate()?;
    let x = eval_inputs(&data.test, data.task.input, None)?;
    println!("| kd | weights | test error % | final weights |");
    println!("|---|---|---|---|");
    for mode in [KdMode::Nokd, KdMode::Ban, KdMode::Akd] {
        for weights in [WeightMode::Uniform, WeightMode::Learned] {
            let config = RunConfig {
                iterations: 4,
                steps_per_iteration: steps,
                kd: KdConfig {
                    temperature: 2.0,
                    ..KdConfig::new(mode)
                },
                weight_mode: weights,
                generator: GeneratorSpec::constant(ArchSpec::new(1, 6)?, u64::MAX),
                seed: 4,
                ..RunConfig::default()
            };
            let out = search::run(&config, &data, None, &mut NullSink)?;
            let (_, err) = evaluate_logits(&out.ensemble.logits(&x)?, data.test.labels())?;
            let w: Vec<String> = out.ensemble.weights().iter().map(|w| format!("{w:.3}")).collect();
            println!("| {mode:?} | {weights:?} | {:.2} | {} |", 100.0 * err, w.join(", "));
        }
    }
    Ok(())
}
