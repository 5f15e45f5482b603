//! Candidate-architecture proposal.

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model::{param_count, ArchSpec, TaskShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// The same single architecture every iteration.
    Constant,
    /// One deeper and one wider variant of the previous selection.
    Dynamic,
    /// `Dynamic` plus the previous selection itself.
    DynamicReconsider,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Architecture for [`GeneratorKind::Constant`], or the starting point
    /// of the dynamic kinds.
    pub arch: ArchSpec,
    pub depth_increment: usize,
    pub width_increment: usize,
    /// Maximum total trainable parameters of the ensemble.
    pub budget: u64,
}

impl GeneratorSpec {
    pub fn constant(arch: ArchSpec, budget: u64) -> Self {
        Self {
            kind: GeneratorKind::Constant,
            arch,
            depth_increment: 1,
            width_increment: 1,
            budget,
        }
    }

    pub fn dynamic(start: ArchSpec, depth_increment: usize, width_increment: usize, budget: u64) -> Self {
        Self {
            kind: GeneratorKind::Dynamic,
            arch: start,
            depth_increment,
            width_increment,
            budget,
        }
    }

    pub fn reconsidering(self) -> Self {
        Self {
            kind: GeneratorKind::DynamicReconsider,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != GeneratorKind::Constant && (self.depth_increment == 0 || self.width_increment == 0) {
            return Err(Error::Invalid("dynamic generators need increments >= 1".into()));
        }
        if self.budget == 0 {
            return Err(Error::Invalid("parameter budget must be positive".into()));
        }
        Ok(())
    }
}

/// Architectures proposed for one iteration. Empty means stop.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    archs: Vec<ArchSpec>,
}

impl CandidateSet {
    pub fn archs(&self) -> &[ArchSpec] {
        &self.archs
    }

    pub fn len(&self) -> usize {
        self.archs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archs.is_empty()
    }

    fn push_unique(&mut self, a: ArchSpec) {
        if !self.archs.contains(&a) {
            self.archs.push(a);
        }
    }
}

/// True iff adding `candidate` keeps the ensemble within `budget`.
pub fn check_budget(prev_total: u64, candidate: ArchSpec, budget: u64, task: TaskShape) -> bool {
    prev_total.saturating_add(param_count(candidate, task)) <= budget
}

/// Unfiltered proposals given the previously selected architecture.
pub fn raw_proposals(spec: &GeneratorSpec, previous: Option<ArchSpec>) -> CandidateSet {
    let mut set = CandidateSet::default();
    match spec.kind {
        GeneratorKind::Constant => set.push_unique(spec.arch),
        GeneratorKind::Dynamic | GeneratorKind::DynamicReconsider => {
            let base = previous.unwrap_or(spec.arch);
            set.push_unique(base.deeper(spec.depth_increment));
            set.push_unique(base.wider(spec.width_increment));
            if spec.kind == GeneratorKind::DynamicReconsider {
                set.push_unique(base);
            }
        }
    }
    set
}

/// Candidates for the iteration after `prev`, minus any that would push
/// the ensemble past the budget.
pub fn propose(spec: &GeneratorSpec, prev: &Ensemble, task: TaskShape) -> CandidateSet {
    let used = prev.param_count();
    let mut set = raw_proposals(spec, prev.last_arch());
    set.archs.retain(|&a| check_budget(used, a, spec.budget, task));
    set
}
