//! `run` and `evaluate`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::autograd::Checksum;
use crate::data::{eval_inputs, load_dataset, AugmentConfig, Dataset};
use crate::ensemble::{load_ensemble, save_ensemble, Ensemble, EnsembleManifest, WeightMode};
use crate::error::{Error, Result};
use crate::generator::GeneratorKind;
use crate::losses::{evaluate_logits, KdMode};
use crate::model::ArchSpec;
use crate::search::{self, JsonlSink};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
pub const TIMING: &str = "timing.json";
pub const METRICS: &str = "metrics.jsonl";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub arch: ArchSpec,
    pub weight: f64,
    pub param_count: u64,
    pub checksum: Checksum,
}

/// Deterministic per-seed results. Wall-clock data lives in `timing.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub kd_mode: KdMode,
    pub weight_mode: WeightMode,
    pub generator: GeneratorKind,
    pub iterations_completed: usize,
    pub stopped_early: Option<usize>,
    pub train_loss: f64,
    pub train_error: f64,
    /// `None` when the test split is empty.
    pub test_loss: Option<f64>,
    pub test_error: Option<f64>,
    pub total_params: u64,
    pub members: Vec<MemberSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_secs: u64,
    pub wall_time_secs: f64,
    pub iteration_secs: Vec<f64>,
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub name: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seeds: Vec<u64>,
    pub test_errors: Vec<f64>,
    pub mean_test_error: Option<f64>,
    /// Omitted for a single seed.
    pub std_test_error: Option<f64>,
    pub mean_total_params: f64,
}

/// Mean and, for two or more values, the sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Test metrics of a saved or fresh ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_loss: f64,
    pub test_error: f64,
    pub member_errors: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Scores `ens` on the test split through the evaluation pipeline.
pub fn evaluate_ensemble(ens: &Ensemble, data: &Dataset, aug: Option<&AugmentConfig>) -> Result<Evaluation> {
    if data.test.is_empty() {
        return Err(Error::Invalid("test split is empty".into()));
    }
    let x = eval_inputs(&data.test, data.task.input, aug)?;
    let labels = data.test.labels();
    let member_logits = ens.member_logits(&x)?;
    let member_errors = member_logits
        .iter()
        .map(|l| evaluate_logits(l, labels).map(|(_, e)| e))
        .collect::<Result<_>>()?;
    let (test_loss, test_error) = evaluate_logits(&ens.logits(&x)?, labels)?;
    Ok(Evaluation {
        test_loss,
        test_error,
        member_errors,
        weights: ens.weights().to_vec(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Directory of one seeded run.
pub fn run_dir(out: &Path, name: &str, seed: u64) -> PathBuf {
    out.join(name).join(format!("seed-{seed}"))
}

/// Runs every seed of `cfg` under `out` (defaulting to `cfg.output_dir`)
/// and returns the per-seed summaries.
///
/// Each seed writes `config.toml`, `metrics.jsonl`, `checkpoints/`,
/// `manifest.json`, `summary.json` and `timing.json` into
/// `<out>/<name>/seed-<seed>/`; the experiment directory gets an aggregate
/// `summary.json`. The metrics log is flushed record by record, so a
/// failed run keeps its iteration trail.
pub fn cmd_run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let out = out.unwrap_or(&cfg.output_dir);
    let data = load_dataset(&cfg.dataset)?;
    cfg.check_against(data.task.input)?;
    let dataset_hash = data.content_hash();
    let config_hash = cfg.config_hash();
    let mut summaries = Vec::new();
    for seed in cfg.seeds() {
        let dir = run_dir(out, &cfg.name, seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let run_cfg = cfg.run_config(seed)?;
        let copy = ExperimentConfig {
            seed,
            repeat: 1,
            ..cfg.clone()
        };
        fs::write(dir.join(CONFIG_COPY), copy.to_toml()?).map_err(|e| Error::io(dir.join(CONFIG_COPY), e))?;
        let metrics_path = dir.join(METRICS);
        let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let mut sink = JsonlSink::new(BufWriter::new(file));
        let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let clock = Instant::now();
        log::info!("{}: seed {seed} -> {}", cfg.name, dir.display());
        let outcome = search::run(&run_cfg, &data, cfg.augment.as_ref(), &mut sink)?;
        let manifest = save_ensemble(&outcome.ensemble, &dir)?;
        write_json(&dir.join(MANIFEST), &manifest)?;
        let last = outcome.reports.last().ok_or(Error::EmptyEnsemble)?;
        let eval = if data.test.is_empty() {
            None
        } else {
            Some(evaluate_ensemble(&outcome.ensemble, &data, cfg.augment.as_ref())?)
        };
        let summary = RunSummary {
            name: cfg.name.clone(),
            seed,
            config_hash: config_hash.clone(),
            dataset_hash: dataset_hash.clone(),
            kd_mode: run_cfg.kd.mode,
            weight_mode: run_cfg.weight_mode,
            generator: run_cfg.generator.kind,
            iterations_completed: outcome.reports.len(),
            stopped_early: outcome.stopped_early,
            train_loss: last.ensemble_loss,
            train_error: last.ensemble_error,
            test_loss: eval.as_ref().map(|e| e.test_loss),
            test_error: eval.as_ref().map(|e| e.test_error),
            total_params: outcome.ensemble.param_count(),
            members: manifest
                .members
                .iter()
                .zip(&manifest.weights)
                .map(|(m, &weight)| MemberSummary {
                    arch: m.arch,
                    weight,
                    param_count: m.param_count,
                    checksum: m.checksum,
                })
                .collect(),
        };
        sink.write_value(&serde_json::json!({ "record": "summary", "summary": &summary }))?;
        write_json(&dir.join(SUMMARY), &summary)?;
        write_json(
            &dir.join(TIMING),
            &Timing {
                started_unix_secs,
                wall_time_secs: clock.elapsed().as_secs_f64(),
                iteration_secs: outcome.reports.iter().map(|r| r.wall_time_secs).collect(),
            },
        )?;
        summaries.push(summary);
    }
    let errors: Vec<f64> = summaries.iter().filter_map(|s| s.test_error).collect();
    let (mean, std) = mean_std(&errors);
    let agg = AggregateSummary {
        name: cfg.name.clone(),
        config_hash,
        dataset_hash,
        seeds: summaries.iter().map(|s| s.seed).collect(),
        test_errors: errors,
        mean_test_error: mean,
        std_test_error: std,
        mean_total_params: summaries.iter().map(|s| s.total_params as f64).sum::<f64>() / summaries.len() as f64,
    };
    write_json(&out.join(&cfg.name).join(SUMMARY), &agg)?;
    Ok(summaries)
}

/// Reloads the ensemble behind `manifest_path`, verifying checksums, and
/// scores it on `data` (by default the dataset of the `config.toml` stored
/// beside the manifest).
pub fn cmd_evaluate(manifest_path: &Path, config: Option<&ExperimentConfig>) -> Result<Evaluation> {
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let manifest: EnsembleManifest = read_json(manifest_path)?;
    let stored;
    let cfg = match config {
        Some(c) => c,
        None => {
            stored = ExperimentConfig::load(&dir.join(CONFIG_COPY))?;
            &stored
        }
    };
    let ens = load_ensemble(&manifest, dir)?;
    let data = load_dataset(&cfg.dataset)?;
    cfg.check_against(data.task.input)?;
    evaluate_ensemble(&ens, &data, cfg.augment.as_ref())
}
