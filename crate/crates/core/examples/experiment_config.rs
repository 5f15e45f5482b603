//! Drives the harness the way the `ensemble-search` binary does: run every seed of
//! a TOML config, re-evaluate one saved ensemble, then build the report.
//!
//! `cargo run --release --example experiment_config -- [config] [out]`

use std::path::PathBuf;

use ensemble_search::harness::{self, ExperimentConfig};

fn main() -> ensemble_search::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/spirals.toml"),
        PathBuf::from,
    );
    let out = args.next().map_or_else(
        || std::env::temp_dir().join("ensemble-search-example-runs"),
        PathBuf::from,
    );
    let cfg = ExperimentConfig::load(&config)?;
    println!("config hash {}", cfg.config_hash());
    for s in harness::cmd_run(&cfg, Some(&out))? {
        let archs: Vec<String> = s.members.iter().map(|m| m.arch.to_string()).collect();
        println!(
            "seed {}: [{}] {} params, test error {:.2}%",
            s.seed,
            archs.join(", "),
            s.total_params,
            100.0 * s.test_error.unwrap_or(f64::NAN)
        );
    }
    let manifest = harness::run_dir(&out, &cfg.name, cfg.seed).join(harness::MANIFEST);
    let eval = harness::cmd_evaluate(&manifest, None)?;
    println!(
        "re-evaluated seed {}: test error {:.2}%",
        cfg.seed,
        100.0 * eval.test_error
    );
    let rows = harness::cmd_report(std::slice::from_ref(&out), &out.join("report"))?;
    print!("{}", harness::render_table(&rows));
    println!("report written to {}", out.join("report").display());
    Ok(())
}
