//! The greedy search loop: propose, train, select, freeze, repeat.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Checksum, Graph, OptimizerState, Tensor};
use crate::data::{eval_inputs, model_task, AugmentConfig, BatchStream, Dataset};
use crate::ensemble::{mix_logits, uniform_weights, Ensemble, MixtureReport, MixtureWeights, WeightMode};
use crate::error::{Error, Result};
use crate::generator::{propose, GeneratorSpec};
use crate::losses::{candidate_objective, distillation_term, evaluate_logits, teacher_logits, KdConfig};
use crate::model::{build_subnetwork, ArchSpec, Subnetwork, TaskShape};
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Upper bound on the number of members; the budget may stop earlier.
    pub iterations: usize,
    pub kd: KdConfig,
    pub lambda_kd: f64,
    pub weight_mode: WeightMode,
    pub generator: GeneratorSpec,
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Fixed step size of mixture-weight gradient descent.
    pub mixture_lr: f64,
    /// One mixture-weight step every this many candidate steps.
    pub mixture_every: usize,
    /// Extra full-batch mixture-weight steps once a candidate is trained.
    pub mixture_final_steps: usize,
    /// Steps per metrics window.
    pub log_every: usize,
    pub seed: u64,
    /// Candidate-training threads; 0 lets rayon decide.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            kd: KdConfig::default(),
            lambda_kd: 1.0,
            weight_mode: WeightMode::Uniform,
            generator: GeneratorSpec::constant(ArchSpec { depth: 2, width: 8 }, u64::MAX),
            steps_per_iteration: 1000,
            batch_size: 32,
            base_lr: 0.025,
            momentum: 0.9,
            clip_norm: 5.0,
            mixture_lr: 0.01,
            mixture_every: 100,
            mixture_final_steps: 100,
            log_every: 100,
            seed: 0,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.iterations == 0 || self.steps_per_iteration == 0 || self.batch_size == 0 {
            return bad("iterations, steps_per_iteration and batch_size must be >= 1".into());
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm > 0.0) {
            return bad(format!(
                "optimizer: base_lr {} momentum {} clip_norm {}",
                self.base_lr, self.momentum, self.clip_norm
            ));
        }
        if !(self.lambda_kd >= 0.0) || !self.lambda_kd.is_finite() {
            return bad(format!("lambda_kd must be >= 0, got {}", self.lambda_kd));
        }
        if !(self.mixture_lr > 0.0) || self.mixture_every == 0 || self.log_every == 0 {
            return bad("mixture_lr, mixture_every and log_every must be positive".into());
        }
        self.kd.validate()?;
        self.generator.validate()
    }
}

/// Seed stream of candidate `index` at `iteration` (1-based).
pub fn candidate_seed(run_seed: u64, iteration: usize, index: usize) -> SeedStream {
    SeedStream::new(run_seed)
        .child("candidate")
        .index(iteration as u64)
        .index(index as u64)
}

/// Aggregated training metrics over one window of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub candidate: usize,
    /// Last step of the window (1-based).
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping, last step of the window.
    pub grad_norm: f64,
    /// Largest post-clip norm in the window.
    pub max_applied_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub index: usize,
    pub arch: ArchSpec,
    pub param_count: u64,
    /// `None` when the candidate was disqualified.
    pub final_objective: Option<f64>,
    pub ensemble_loss: Option<f64>,
    pub ensemble_error: Option<f64>,
    pub weights: Vec<f64>,
    pub disqualified: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub candidates: Vec<CandidateReport>,
    pub selected: usize,
    pub selected_arch: ArchSpec,
    pub ensemble_loss: f64,
    pub ensemble_error: f64,
    pub cumulative_params: u64,
    pub weights: Vec<f64>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricRecord {
    Step(StepRecord),
    Iteration(IterationReport),
    Stop { iteration: usize, reason: String },
}

/// Receives metric records in a deterministic order.
pub trait MetricsSink {
    fn record(&mut self, record: &MetricRecord) -> Result<()>;
}

pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricRecord) -> Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Default)]
pub struct MemorySink {
    pub records: Vec<MetricRecord>,
}

impl MetricsSink for MemorySink {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// One JSON object per line, flushed after every record.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write_value<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io("metrics", e))
    }
}

impl<W: Write> MetricsSink for JsonlSink<W> {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.write_value(record)
    }
}

/// Read-only state shared by every candidate of one iteration.
pub struct IterationContext<'a> {
    pub config: &'a RunConfig,
    pub dataset: &'a Dataset,
    pub augment: Option<&'a AugmentConfig>,
    /// Shape the networks consume (after cropping).
    pub task: TaskShape,
    pub iteration: usize,
    pub prev: &'a Ensemble,
    /// Evaluation-mode training inputs, in dataset order.
    pub train_inputs: &'a Tensor,
    /// Each previous member's logits on `train_inputs`.
    pub prev_train_logits: &'a [Tensor],
}

impl<'a> IterationContext<'a> {
    /// Context for `iteration`; the network input shape is derived here.
    pub fn prepare(
        config: &'a RunConfig,
        dataset: &'a Dataset,
        augment: Option<&'a AugmentConfig>,
        iteration: usize,
        prev: &'a Ensemble,
        train_inputs: &'a Tensor,
        prev_train_logits: &'a [Tensor],
    ) -> Result<Self> {
        Ok(Self {
            config,
            dataset,
            augment,
            task: model_task(dataset.task, augment)?,
            iteration,
            prev,
            train_inputs,
            prev_train_logits,
        })
    }

    fn labels(&self) -> &[usize] {
        self.dataset.train.labels()
    }

    /// Ensemble loss and error of the previous members plus `candidate`.
    pub fn ensemble_with(&self, candidate_logits: &Tensor, weights: &[f64]) -> Result<(f64, f64)> {
        let mut refs: Vec<&Tensor> = self.prev_train_logits.iter().collect();
        refs.push(candidate_logits);
        evaluate_logits(&mix_logits(&refs, weights)?, self.labels())
    }
}

/// A trained, still unfrozen candidate.
#[derive(Clone, Debug)]
pub struct TrainedCandidate {
    pub net: Subnetwork,
    /// Mixture weights for previous members followed by this candidate.
    pub weights: Vec<f64>,
    pub final_objective: f64,
    pub records: Vec<StepRecord>,
    pub mixture: Option<MixtureReport>,
}

fn diverged(arch: ArchSpec, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged {
            arch: arch.to_string(),
            step,
        },
        other => other,
    }
}

/// Trains candidate `index` of `ctx.iteration` from a fresh initialization.
///
/// Runs `steps_per_iteration` clipped momentum-SGD steps under a cosine
/// schedule of exactly that length. Teacher logits come from the frozen
/// previous ensemble, recomputed for every batch. In learned mode the
/// candidate's mixture weights take one step every `mixture_every`
/// candidate steps and `mixture_final_steps` more at the end.
pub fn train_candidate(ctx: &IterationContext<'_>, arch: ArchSpec, index: usize) -> Result<TrainedCandidate> {
    let cfg = ctx.config;
    let seed = candidate_seed(cfg.seed, ctx.iteration, index);
    let mut net = build_subnetwork(arch, ctx.task, seed)?;
    let slots = ctx.prev.len() + 1;
    let mut mixture = match cfg.weight_mode {
        WeightMode::Learned => Some(MixtureWeights::uniform(slots, cfg.mixture_lr)?),
        WeightMode::Uniform => None,
    };
    let mut records = Vec::new();
    let mut final_objective = f64::NAN;
    if cfg.steps_per_iteration > 0 {
        let train = &ctx.dataset.train;
        let mut stream = BatchStream::new(train.len(), cfg.batch_size, seed.child("batches"))?;
        let mut opt = OptimizerState::new(
            net.params(),
            cfg.steps_per_iteration,
            cfg.base_lr,
            cfg.momentum,
            cfg.clip_norm,
        )?;
        let mut window = (0.0, 0usize, 0.0f64);
        for step in 1..=cfg.steps_per_iteration {
            let on_err = diverged(arch, step);
            let batch = stream.next_batch(train, ctx.dataset.task.input, ctx.augment)?;
            let teacher = teacher_logits(cfg.kd.mode, ctx.prev, &batch.inputs)?;
            let mut g = Graph::new();
            let x = g.constant(batch.inputs);
            let fwd = net.forward(&mut g, x, true).map_err(&on_err)?;
            let kd = distillation_term(&mut g, &cfg.kd, teacher.as_ref(), fwd.logits).map_err(&on_err)?;
            let loss = candidate_objective(&mut g, fwd.logits, &batch.labels, kd, cfg.lambda_kd).map_err(&on_err)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(on_err(Error::NonFinite { op: "objective" }));
            }
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = fwd
                .params
                .iter()
                .zip(net.params().tensors())
                .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
                .collect();
            let stats = opt.update(net.params_mut()?, grads)?;
            if !stats.grad_norm.is_finite() {
                return Err(on_err(Error::NonFinite { op: "gradient" }));
            }
            final_objective = value;
            window = (window.0 + value, window.1 + 1, window.2.max(stats.applied_norm));
            if step % cfg.log_every == 0 || step == cfg.steps_per_iteration {
                records.push(StepRecord {
                    iteration: ctx.iteration,
                    candidate: index,
                    step,
                    loss: window.0 / window.1 as f64,
                    lr: stats.lr,
                    grad_norm: stats.grad_norm,
                    max_applied_norm: window.2,
                });
                window = (0.0, 0, 0.0);
            }
            if let Some(m) = mixture.as_mut() {
                if step % cfg.mixture_every == 0 {
                    let logits = net.logits(ctx.train_inputs).map_err(&on_err)?;
                    let mut refs: Vec<&Tensor> = ctx.prev_train_logits.iter().collect();
                    refs.push(&logits);
                    m.train(&refs, ctx.labels(), 1)?;
                }
            }
        }
    }
    let (weights, report) = match mixture {
        Some(mut m) => {
            let logits = net
                .logits(ctx.train_inputs)
                .map_err(diverged(arch, cfg.steps_per_iteration))?;
            let mut refs: Vec<&Tensor> = ctx.prev_train_logits.iter().collect();
            refs.push(&logits);
            let report = m.train(&refs, ctx.labels(), cfg.mixture_final_steps)?;
            (m.into_weights(), Some(report))
        }
        None => (uniform_weights(slots)?, None),
    };
    Ok(TrainedCandidate {
        net,
        weights,
        final_objective,
        records,
        mixture: report,
    })
}

/// Index of the smallest loss. Equal losses go to the lexicographically
/// smallest architecture, then to the lowest index.
pub fn select_best(scored: &[(ArchSpec, f64)]) -> Result<usize> {
    scored
        .iter()
        .enumerate()
        .min_by(|(i, (a, x)), (j, (b, y))| x.total_cmp(y).then(a.cmp(b)).then(i.cmp(j)))
        .map(|(i, _)| i)
        .ok_or(Error::NoCandidates)
}

/// Trains one network exactly as candidate `index` of iteration
/// `iteration` would be trained against an empty ensemble without
/// distillation.
pub fn train_standalone(
    config: &RunConfig,
    dataset: &Dataset,
    augment: Option<&AugmentConfig>,
    arch: ArchSpec,
    iteration: usize,
    index: usize,
) -> Result<Subnetwork> {
    let empty = Ensemble::new(config.weight_mode);
    let task = model_task(dataset.task, augment)?;
    let inputs = eval_inputs(&dataset.train, dataset.task.input, augment)?;
    let cfg = RunConfig {
        kd: KdConfig::default(),
        weight_mode: WeightMode::Uniform,
        ..config.clone()
    };
    let ctx = IterationContext {
        config: &cfg,
        dataset,
        augment,
        task,
        iteration,
        prev: &empty,
        train_inputs: &inputs,
        prev_train_logits: &[],
    };
    Ok(train_candidate(&ctx, arch, index)?.net)
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub ensemble: Ensemble,
    pub reports: Vec<IterationReport>,
    /// Checksum of each member taken when it was selected.
    pub selection_checksums: Vec<Checksum>,
    /// Set when the budget ended the run before `iterations`.
    pub stopped_early: Option<usize>,
}

/// Builds an ensemble of up to `config.iterations` members.
///
/// Candidates of one iteration train in parallel on `config.workers`
/// threads; results are gathered in candidate order, so the outcome does
/// not depend on the thread count. Selection uses the evaluation-mode
/// training set only.
pub fn run(
    config: &RunConfig,
    dataset: &Dataset,
    augment: Option<&AugmentConfig>,
    sink: &mut dyn MetricsSink,
) -> Result<SearchOutcome> {
    config.validate()?;
    let task = model_task(dataset.task, augment)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let train_inputs = eval_inputs(&dataset.train, dataset.task.input, augment)?;
    let mut ensemble = Ensemble::new(config.weight_mode);
    let mut prev_logits: Vec<Tensor> = Vec::new();
    let mut reports = Vec::new();
    let mut selection_checksums = Vec::new();
    let mut stopped_early = None;

    for iteration in 1..=config.iterations {
        let started = Instant::now();
        let candidates = propose(&config.generator, &ensemble, task);
        if candidates.is_empty() {
            log::info!("iteration {iteration}: no candidate fits the budget, stopping");
            sink.record(&MetricRecord::Stop {
                iteration,
                reason: "budget exhausted".into(),
            })?;
            stopped_early = Some(iteration);
            break;
        }
        let ctx = IterationContext::prepare(
            config,
            dataset,
            augment,
            iteration,
            &ensemble,
            &train_inputs,
            &prev_logits,
        )?;
        let archs = candidates.archs();
        let results: Vec<Result<TrainedCandidate>> = pool.install(|| {
            archs
                .par_iter()
                .enumerate()
                .map(|(j, &a)| train_candidate(&ctx, a, j))
                .collect()
        });

        let mut survivors: Vec<(usize, TrainedCandidate, Tensor, f64, f64)> = Vec::new();
        let mut cand_reports = Vec::new();
        for (j, (arch, res)) in archs.iter().zip(results).enumerate() {
            let mut rep = CandidateReport {
                index: j,
                arch: *arch,
                param_count: crate::model::param_count(*arch, task),
                final_objective: None,
                ensemble_loss: None,
                ensemble_error: None,
                weights: Vec::new(),
                disqualified: None,
            };
            let scored = res.and_then(|t| {
                let logits = t.net.logits(&train_inputs)?;
                let (loss, err) = ctx.ensemble_with(&logits, &t.weights)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite { op: "ensemble loss" });
                }
                Ok((t, logits, loss, err))
            });
            match scored {
                Ok((t, logits, loss, err)) => {
                    for r in &t.records {
                        sink.record(&MetricRecord::Step(r.clone()))?;
                    }
                    rep.final_objective = Some(t.final_objective);
                    rep.ensemble_loss = Some(loss);
                    rep.ensemble_error = Some(err);
                    rep.weights = t.weights.clone();
                    survivors.push((j, t, logits, loss, err));
                }
                Err(e @ (Error::Diverged { .. } | Error::NonFinite { .. })) => {
                    log::warn!("iteration {iteration}: candidate {j} ({arch}) disqualified: {e}");
                    rep.disqualified = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
            cand_reports.push(rep);
        }
        if survivors.is_empty() {
            return Err(Error::AllDisqualified { iteration });
        }
        let scored: Vec<(ArchSpec, f64)> = survivors.iter().map(|s| (s.1.net.arch(), s.3)).collect();
        let best = select_best(&scored)?;
        let (j, mut winner, logits, loss, err) = survivors.swap_remove(best);
        winner.net.freeze(iteration);
        selection_checksums.push(winner.net.checksum());
        let weights = winner.weights.clone();
        ensemble.push(winner.net, Some(weights))?;
        prev_logits.push(logits);
        let report = IterationReport {
            iteration,
            candidates: cand_reports,
            selected: j,
            selected_arch: ensemble.last_arch().ok_or(Error::EmptyEnsemble)?,
            ensemble_loss: loss,
            ensemble_error: err,
            cumulative_params: ensemble.param_count(),
            weights: ensemble.weights().to_vec(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {iteration}: selected {} (candidate {j}), train loss {loss:.4}, error {err:.4}",
            report.selected_arch
        );
        sink.record(&MetricRecord::Iteration(report.clone()))?;
        reports.push(report);
    }
    Ok(SearchOutcome {
        ensemble,
        reports,
        selection_checksums,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SyntheticKind, SyntheticSpec};

    fn a(d: usize, w: usize) -> ArchSpec {
        ArchSpec::new(d, w).unwrap()
    }

    fn tiny() -> (RunConfig, Dataset) {
        let data = SyntheticSpec::new(SyntheticKind::Gaussians, 60, 20, 2, 0.3, 1)
            .generate()
            .unwrap();
        let cfg = RunConfig {
            iterations: 2,
            steps_per_iteration: 20,
            log_every: 10,
            generator: GeneratorSpec::constant(a(1, 4), u64::MAX),
            ..RunConfig::default()
        };
        (cfg, data)
    }

    #[test]
    fn select_best_tie_breaks() {
        assert_eq!(select_best(&[(a(1, 8), 0.5)]).unwrap(), 0);
        assert_eq!(
            select_best(&[(a(2, 8), 0.3), (a(1, 8), 0.2), (a(1, 4), 0.4)]).unwrap(),
            1
        );
        assert_eq!(select_best(&[(a(2, 8), 0.2), (a(1, 8), 0.2)]).unwrap(), 1);
        assert_eq!(select_best(&[(a(1, 8), 0.2), (a(1, 8), 0.2)]).unwrap(), 0);
        assert!(matches!(select_best(&[]), Err(Error::NoCandidates)));
    }

    #[test]
    fn candidate_seeds_are_distinct() {
        let s = [
            candidate_seed(0, 1, 0),
            candidate_seed(0, 1, 1),
            candidate_seed(0, 2, 0),
            candidate_seed(1, 1, 0),
        ];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let (mut cfg, data) = tiny();
        cfg.steps_per_iteration = 0;
        let net = train_standalone(&cfg, &data, None, a(1, 4), 1, 0).unwrap();
        let init = build_subnetwork(a(1, 4), data.task, candidate_seed(cfg.seed, 1, 0)).unwrap();
        assert_eq!(net.checksum(), init.checksum());
    }

    #[test]
    fn single_iteration_has_unit_weight() {
        let (mut cfg, data) = tiny();
        cfg.iterations = 1;
        let out = run(&cfg, &data, None, &mut NullSink).unwrap();
        assert_eq!(out.ensemble.weights(), &[1.0]);
        let member = &out.ensemble.members()[0];
        let x = eval_inputs(&data.train, data.task.input, None).unwrap();
        let alone = evaluate_logits(&member.logits(&x).unwrap(), data.train.labels()).unwrap();
        assert_eq!(alone.1, out.reports[0].ensemble_error);
    }

    #[test]
    fn records_arrive_in_order() {
        let (cfg, data) = tiny();
        let mut sink = MemorySink::default();
        let out = run(&cfg, &data, None, &mut sink).unwrap();
        assert_eq!(out.ensemble.len(), 2);
        let kinds: Vec<&str> = sink
            .records
            .iter()
            .map(|r| match r {
                MetricRecord::Step(_) => "s",
                MetricRecord::Iteration(_) => "i",
                MetricRecord::Stop { .. } => "x",
            })
            .collect();
        assert_eq!(kinds, ["s", "s", "i", "s", "s", "i"]);
    }

    #[test]
    fn divergent_candidates_are_disqualified() {
        let (mut cfg, data) = tiny();
        cfg.base_lr = 1e300;
        cfg.clip_norm = f64::INFINITY;
        cfg.momentum = 0.0;
        let err = run(&cfg, &data, None, &mut NullSink).unwrap_err();
        assert!(matches!(err, Error::AllDisqualified { iteration: 1 }), "{err}");
    }
}
