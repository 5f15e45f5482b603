//! Weighted-logit ensembles of frozen subnetworks.
//!
//! Member logits are mixed before the softmax: `f = sum_k w_k * h_k`.
//! Mixture weights are plain reals, either fixed at `1/i` or fitted by
//! gradient descent on the ensemble's cross entropy with every member's
//! logits held constant.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Checksum, Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::{classification_loss, evaluate_logits};
use crate::model::{read_checkpoint, write_checkpoint, ArchSpec, Subnetwork, TaskShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Uniform,
    Learned,
}

/// `i` entries of `1/i`.
pub fn uniform_weights(i: usize) -> Result<Vec<f64>> {
    if i == 0 {
        return Err(Error::Invalid("uniform weights need at least one member".into()));
    }
    Ok(vec![1.0 / i as f64; i])
}

/// `sum_k weights[k] * logits[k]`, accumulated in member order.
pub fn mix_logits(logits: &[&Tensor], weights: &[f64]) -> Result<Tensor> {
    let Some(first) = logits.first() else {
        return Err(Error::EmptyEnsemble);
    };
    if logits.len() != weights.len() {
        return Err(Error::Shape {
            op: "mix_logits",
            left: vec![logits.len()],
            right: vec![weights.len()],
        });
    }
    let mut out = Tensor::zeros(first.shape());
    for (l, &w) in logits.iter().zip(weights) {
        if l.shape() != first.shape() {
            return Err(Error::Shape {
                op: "mix_logits",
                left: first.shape().to_vec(),
                right: l.shape().to_vec(),
            });
        }
        for (o, &v) in out.data_mut().iter_mut().zip(l.data()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Ordered frozen members and their mixture weights.
#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<Arc<Subnetwork>>,
    weights: Vec<f64>,
    mode: WeightMode,
}

impl Ensemble {
    pub fn new(mode: WeightMode) -> Self {
        Self {
            members: Vec::new(),
            weights: Vec::new(),
            mode,
        }
    }

    pub fn from_parts(members: Vec<Arc<Subnetwork>>, weights: Vec<f64>, mode: WeightMode) -> Result<Self> {
        let mut ens = Self::new(mode);
        if members.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "{} members but {} weights",
                members.len(),
                weights.len()
            )));
        }
        if let Some(m) = members.iter().find(|m| !m.is_frozen()) {
            return Err(Error::Invalid(format!("ensemble member {} is not frozen", m.arch())));
        }
        if mode == WeightMode::Uniform && !members.is_empty() && weights != uniform_weights(members.len())? {
            return Err(Error::Invalid("uniform ensemble with non-uniform weights".into()));
        }
        ens.members = members;
        ens.weights = weights;
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Arc<Subnetwork>] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn last_arch(&self) -> Option<ArchSpec> {
        self.members.last().map(|m| m.arch())
    }

    /// Total trainable parameters across members.
    pub fn param_count(&self) -> u64 {
        self.members.iter().map(|m| m.param_count()).sum()
    }

    pub fn checksums(&self) -> Vec<Checksum> {
        self.members.iter().map(|m| m.checksum()).collect()
    }

    /// Appends a frozen member. In uniform mode `weights` is ignored and
    /// every weight becomes `1/len`; in learned mode it must cover all
    /// members including the new one.
    pub fn push(&mut self, member: Subnetwork, weights: Option<Vec<f64>>) -> Result<()> {
        if !member.is_frozen() {
            return Err(Error::Invalid(format!(
                "member {} must be frozen before joining",
                member.arch()
            )));
        }
        let n = self.members.len() + 1;
        let weights = match (self.mode, weights) {
            (WeightMode::Uniform, _) => uniform_weights(n)?,
            (WeightMode::Learned, Some(w)) if w.len() == n => w,
            (WeightMode::Learned, w) => {
                return Err(Error::Invalid(format!(
                    "learned ensemble of {n} members needs {n} weights, got {:?}",
                    w.map(|w| w.len())
                )))
            }
        };
        self.members.push(Arc::new(member));
        self.weights = weights;
        Ok(())
    }

    /// Logits of every member on `batch`, in member order.
    pub fn member_logits(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.members.iter().map(|m| m.logits(batch)).collect()
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        ensemble_logits(self, batch, None)
    }
}

/// Mixed logits of `ens` on `batch`, optionally with one extra weighted
/// network (a candidate) appended to the sum.
pub fn ensemble_logits(ens: &Ensemble, batch: &Tensor, extra: Option<(&Subnetwork, f64)>) -> Result<Tensor> {
    let mut logits = ens.member_logits(batch)?;
    let mut weights = ens.weights.clone();
    if let Some((net, w)) = extra {
        logits.push(net.logits(batch)?);
        weights.push(w);
    }
    let refs: Vec<&Tensor> = logits.iter().collect();
    mix_logits(&refs, &weights)
}

/// Mean cross entropy and top-1 error of the ensemble on a labelled set.
pub fn ensemble_loss(ens: &Ensemble, inputs: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    evaluate_logits(&ens.logits(inputs)?, labels)
}

/// Candidate-local mixture weights: one slot per previous member plus one
/// for the candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureWeights {
    weights: Vec<f64>,
    lr: f64,
    steps_taken: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

impl MixtureWeights {
    /// Starts at `1/slots` for every slot.
    pub fn uniform(slots: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Invalid(format!("mixture lr must be > 0, got {lr}")));
        }
        Ok(Self {
            weights: uniform_weights(slots)?,
            lr,
            steps_taken: 0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    fn check(&self, logits: &[&Tensor]) -> Result<()> {
        if logits.len() != self.weights.len() {
            return Err(Error::Shape {
                op: "mixture_weights",
                left: vec![self.weights.len()],
                right: vec![logits.len()],
            });
        }
        Ok(())
    }

    /// Ensemble cross entropy at the current weights.
    pub fn loss(&self, logits: &[&Tensor], labels: &[usize]) -> Result<f64> {
        self.check(logits)?;
        evaluate_logits(&mix_logits(logits, &self.weights)?, labels).map(|(l, _)| l)
    }

    /// Loss and gradient w.r.t. the weights, with every logit tensor a
    /// constant on the tape.
    pub fn loss_and_grad(&self, logits: &[&Tensor], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(logits)?;
        let mut g = Graph::new();
        let mut mixed = None;
        let mut wvars = Vec::with_capacity(self.weights.len());
        for (&l, &w) in logits.iter().zip(&self.weights) {
            let wv = g.param(Tensor::scalar(w));
            wvars.push(wv);
            let lv = g.constant(l.clone());
            let term = g.scale_by(lv, wv)?;
            mixed = Some(match mixed {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let mixed = mixed.ok_or(Error::EmptyEnsemble)?;
        let loss = classification_loss(&mut g, mixed, labels)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let grad = wvars.iter().map(|&v| grads.get(v).map_or(0.0, |t| t.item())).collect();
        Ok((value, grad))
    }

    /// Runs `steps` full-batch gradient steps on the ensemble loss.
    ///
    /// A step that would raise the loss is retried with the step size
    /// halved (up to 30 times) and skipped if it never improves, so the
    /// final loss never exceeds the initial one.
    pub fn train(&mut self, logits: &[&Tensor], labels: &[usize], steps: usize) -> Result<MixtureReport> {
        let (initial_loss, _) = self.loss_and_grad(logits, labels)?;
        let mut current = initial_loss;
        for _ in 0..steps {
            let (_, grad) = self.loss_and_grad(logits, labels)?;
            let mut lr = self.lr;
            for _ in 0..30 {
                let trial = Self {
                    weights: self.weights.iter().zip(&grad).map(|(w, g)| w - lr * g).collect(),
                    ..self.clone()
                };
                let loss = trial.loss(logits, labels)?;
                if loss <= current {
                    self.weights = trial.weights;
                    current = loss;
                    break;
                }
                lr *= 0.5;
            }
            self.steps_taken += 1;
        }
        Ok(MixtureReport {
            initial_loss,
            final_loss: current,
            steps,
        })
    }
}

/// Fits `state` for a candidate joining `members`, using precomputed
/// member logits. Neither the members nor the candidate are touched.
pub fn train_mixture_weights(
    state: &mut MixtureWeights,
    member_logits: &[Tensor],
    candidate_logits: &Tensor,
    labels: &[usize],
    steps: usize,
) -> Result<MixtureReport> {
    let mut refs: Vec<&Tensor> = member_logits.iter().collect();
    refs.push(candidate_logits);
    state.train(&refs, labels, steps)
}

/// One member entry of an [`EnsembleManifest`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    /// Checkpoint path relative to the manifest's directory.
    pub checkpoint: String,
    pub arch: ArchSpec,
    pub iteration_born: usize,
    pub param_count: u64,
    pub checksum: Checksum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub weight_mode: WeightMode,
    pub weights: Vec<f64>,
    pub task: TaskShape,
    pub members: Vec<MemberRecord>,
}

/// Writes every member to `dir/checkpoints/` and returns the manifest
/// describing them.
pub fn save_ensemble(ens: &Ensemble, dir: &Path) -> Result<EnsembleManifest> {
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let first = ens.members.first().ok_or(Error::EmptyEnsemble)?;
    let mut members = Vec::with_capacity(ens.len());
    for (k, m) in ens.members.iter().enumerate() {
        let rel = format!("checkpoints/member-{k:02}.ckpt");
        write_checkpoint(m, &dir.join(&rel))?;
        members.push(MemberRecord {
            checkpoint: rel,
            arch: m.arch(),
            iteration_born: m.iteration_born(),
            param_count: m.param_count(),
            checksum: m.checksum(),
        });
    }
    Ok(EnsembleManifest {
        weight_mode: ens.mode,
        weights: ens.weights.clone(),
        task: first.task(),
        members,
    })
}

/// Loads the members named by `manifest`, resolving checkpoint paths
/// against `dir`. Fails on the first member whose stored or recomputed
/// checksum disagrees with the manifest.
pub fn load_ensemble(manifest: &EnsembleManifest, dir: &Path) -> Result<Ensemble> {
    let mut members = Vec::with_capacity(manifest.members.len());
    for (k, rec) in manifest.members.iter().enumerate() {
        let path = dir.join(&rec.checkpoint);
        let (header, net) = read_checkpoint(&path)?;
        if header.checksum != rec.checksum || net.checksum() != rec.checksum || header.arch != rec.arch {
            return Err(Error::Checksum { member: k, path });
        }
        members.push(Arc::new(net));
    }
    Ensemble::from_parts(members, manifest.weights.clone(), manifest.weight_mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_subnetwork;
    use crate::rng::SeedStream;

    fn frozen(arch: (usize, usize), seed: u64) -> Subnetwork {
        let mut n = build_subnetwork(
            ArchSpec::new(arch.0, arch.1).unwrap(),
            TaskShape::flat(2, 3),
            SeedStream::new(seed),
        )
        .unwrap();
        n.freeze(1);
        n
    }

    #[test]
    fn uniform_weight_vectors() {
        assert_eq!(uniform_weights(1).unwrap(), vec![1.0]);
        assert_eq!(uniform_weights(4).unwrap(), vec![0.25; 4]);
        let ten = uniform_weights(10).unwrap();
        assert_eq!(ten.len(), 10);
        assert!(ten.iter().all(|&w| w == 0.1));
        assert!((ten.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn weighted_sum_examples() {
        let a = Tensor::matrix(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::matrix(&[vec![0.0, 1.0]]).unwrap();
        let m = mix_logits(&[&a, &b], &[0.25, 0.75]).unwrap();
        assert_eq!(m.data(), &[0.25, 0.75]);

        let neg = a.map(|v| -v);
        let m = mix_logits(&[&a, &neg], &[0.5, 0.5]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));

        assert!(matches!(mix_logits(&[], &[]), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn single_member_identity() {
        let net = frozen((1, 4), 1);
        let mut ens = Ensemble::new(WeightMode::Uniform);
        ens.push(net.clone(), None).unwrap();
        let x = Tensor::matrix(&[vec![0.3, -0.1], vec![2.0, 1.0]]).unwrap();
        assert_eq!(ens.logits(&x).unwrap(), net.logits(&x).unwrap());
    }

    #[test]
    fn push_requires_frozen_and_weights() {
        let mut ens = Ensemble::new(WeightMode::Learned);
        let mut net =
            build_subnetwork(ArchSpec::new(1, 2).unwrap(), TaskShape::flat(2, 3), SeedStream::new(0)).unwrap();
        assert!(ens.push(net.clone(), Some(vec![1.0])).is_err());
        net.freeze(1);
        assert!(ens.push(net.clone(), None).is_err());
        assert!(ens.push(net.clone(), Some(vec![0.5, 0.5])).is_err());
        ens.push(net, Some(vec![1.3])).unwrap();
        assert_eq!(ens.weights(), &[1.3]);
    }

    #[test]
    fn empty_ensemble_loss_is_error() {
        let ens = Ensemble::new(WeightMode::Uniform);
        assert!(matches!(
            ensemble_loss(&ens, &Tensor::zeros(&[1, 2]), &[0]),
            Err(Error::EmptyEnsemble)
        ));
        assert!(ens.logits(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn weighted_pair_loss() {
        let a = Tensor::matrix(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::matrix(&[vec![0.0, 1.0]]).unwrap();
        let m = mix_logits(&[&a, &b], &[0.25, 0.75]).unwrap();
        let (loss, err) = evaluate_logits(&m, &[1]).unwrap();
        let expected = -(0.75f64.exp() / (0.25f64.exp() + 0.75f64.exp())).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.4741).abs() < 1e-4);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn zero_logit_member_has_zero_weight_gradient() {
        let zero = Tensor::zeros(&[4, 2]);
        let other = Tensor::matrix(&[vec![1.0, -1.0], vec![-1.0, 1.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let labels = [0, 1, 0, 1];
        let mut state = MixtureWeights::uniform(2, 0.01).unwrap();
        let (_, grad) = state.loss_and_grad(&[&zero, &other], &labels).unwrap();
        assert_eq!(grad[0], 0.0);
        state.train(&[&zero, &other], &labels, 25).unwrap();
        assert_eq!(state.weights()[0], 0.5);
    }

    #[test]
    fn training_does_not_increase_loss() {
        let a = Tensor::matrix(&[vec![3.0, -3.0], vec![-2.0, 2.0]]).unwrap();
        let mut state = MixtureWeights::uniform(1, 0.01).unwrap();
        let r = state.train(&[&a], &[0, 1], 50).unwrap();
        assert!(r.final_loss <= r.initial_loss);
        assert!(state.weights()[0] > 1.0);
    }

    #[test]
    fn manifest_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let mut ens = Ensemble::new(WeightMode::Learned);
        ens.push(frozen((1, 3), 1), Some(vec![1.0])).unwrap();
        ens.push(frozen((2, 3), 2), Some(vec![0.7, 0.4])).unwrap();
        let manifest = save_ensemble(&ens, dir.path()).unwrap();
        let text = serde_json::to_string_pretty(&manifest).unwrap();
        let back: EnsembleManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, manifest);
        let loaded = load_ensemble(&back, dir.path()).unwrap();
        assert_eq!(loaded.checksums(), ens.checksums());
        assert_eq!(loaded.weights(), ens.weights());

        let mut wrong = back.clone();
        wrong.members[1].checksum = wrong.members[0].checksum;
        assert!(matches!(
            load_ensemble(&wrong, dir.path()),
            Err(Error::Checksum { member: 1, .. })
        ));

        std::fs::remove_file(dir.path().join(&back.members[0].checkpoint)).unwrap();
        assert!(matches!(load_ensemble(&back, dir.path()), Err(Error::Io { .. })));
    }
}
