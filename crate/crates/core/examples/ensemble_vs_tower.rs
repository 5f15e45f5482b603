//! An ensemble of small subnetworks against one wider network with the
//! same parameter count and the same total number of SGD steps.
//!
//! `cargo run --release --example ensemble_vs_tower -- [seeds] [steps]`

use std::time::Instant;

use ensemble_search::data::{eval_inputs, SyntheticKind, SyntheticSpec};
use ensemble_search::generator::GeneratorSpec;
use ensemble_search::losses::evaluate_logits;
use ensemble_search::model::{param_count, ArchSpec};
use ensemble_search::search::{self, NullSink, RunConfig};

fn main() -> ensemble_search::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seeds"));
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let member = ArchSpec::new(2, 8)?;
    let members = 5;
    let (mut ens_errs, mut tower_errs) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let data = SyntheticSpec::new(SyntheticKind::Spirals, 3000, 1000, 3, 0.15, 100 + seed).generate()?;
        let config = RunConfig {
            iterations: members,
            steps_per_iteration: steps,
            generator: GeneratorSpec::constant(member, u64::MAX),
            seed,
            ..RunConfig::default()
        };
        let t = Instant::now();
        let out = search::run(&config, &data, None, &mut NullSink)?;
        let x = eval_inputs(&data.test, data.task.input, None)?;
        let (_, ens_err) = evaluate_logits(&out.ensemble.logits(&x)?, data.test.labels())?;
        let total = out.ensemble.param_count();
        let width = (1..)
            .take_while(|&w| param_count(ArchSpec { depth: 2, width: w }, data.task) <= total)
            .last()
            .expect("width 1 fits");
        let tower_arch = ArchSpec::new(2, width)?;
        let tower_cfg = RunConfig {
            steps_per_iteration: steps * members,
            ..config.clone()
        };
        let tower = search::train_standalone(&tower_cfg, &data, None, tower_arch, 1, 0)?;
        let (_, tower_err) = evaluate_logits(&tower.logits(&x)?, data.test.labels())?;
        println!(
            "seed {seed}: ensemble {} x {member} ({total} params) error {:.2}%, tower {tower_arch} ({} params) error {:.2}%  [{:.1}s]",
            members,
            100.0 * ens_err,
            param_count(tower_arch, data.task),
            100.0 * tower_err,
            t.elapsed().as_secs_f64()
        );
        ens_errs.push(ens_err);
        tower_errs.push(tower_err);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean test error: ensemble {:.2}%, tower {:.2}%",
        100.0 * mean(&ens_errs),
        100.0 * mean(&tower_errs)
    );
    Ok(())
}
