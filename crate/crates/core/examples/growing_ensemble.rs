//! A dynamic generator grows the architecture one step deeper or wider
//! per iteration until the parameter budget is spent. Metric records are
//! streamed as JSON lines to stderr.
//!
//! `cargo run --release --example growing_ensemble -- [budget] 2>metrics.jsonl`

use ensemble_search::data::{eval_inputs, SyntheticKind, SyntheticSpec};
use ensemble_search::ensemble::WeightMode;
use ensemble_search::generator::GeneratorSpec;
use ensemble_search::losses::{evaluate_logits, KdConfig, KdMode};
use ensemble_search::model::ArchSpec;
use ensemble_search::search::{self, JsonlSink, RunConfig};

fn main() -> ensemble_search::Result<()> {
    let budget: u64 = std::env::args().nth(1).map_or(2500, |s| s.parse().expect("budget"));
    let data = SyntheticSpec::new(SyntheticKind::Spirals, 900, 300, 3, 0.15, 11).generate()?;
    let config = RunConfig {
        iterations: 10,
        steps_per_iteration: 400,
        kd: KdConfig::new(KdMode::Akd),
        weight_mode: WeightMode::Learned,
        generator: GeneratorSpec::dynamic(ArchSpec::new(1, 4)?, 1, 4, budget).reconsidering(),
        log_every: 100,
        seed: 2,
        ..RunConfig::default()
    };
    let mut sink = JsonlSink::new(std::io::stderr().lock());
    let out = search::run(&config, &data, None, &mut sink)?;
    for rep in &out.reports {
        let tried: Vec<String> = rep.candidates.iter().map(|c| c.arch.to_string()).collect();
        println!(
            "iteration {}: tried [{}], kept {} -> {} params, train loss {:.4}",
            rep.iteration,
            tried.join(", "),
            rep.selected_arch,
            rep.cumulative_params,
            rep.ensemble_loss
        );
    }
    if let Some(i) = out.stopped_early {
        println!("budget of {budget} parameters exhausted at iteration {i}");
    }
    let x = eval_inputs(&data.test, data.task.input, None)?;
    let (_, err) = evaluate_logits(&out.ensemble.logits(&x)?, data.test.labels())?;
    println!("{} members, test error {:.2}%", out.ensemble.len(), 100.0 * err);
    Ok(())
}
