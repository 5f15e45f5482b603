use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::TaskShape;
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Interleaved arms in the plane, one per class.
    Spirals,
    /// Isotropic blobs with means evenly spaced on a circle of radius 2.
    Gaussians,
}

/// A reproducible 2-feature classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    /// Spirals: std of the angular jitter in radians. Gaussians: std of
    /// each blob.
    pub noise: f64,
    pub seed: u64,
}

/// Angle swept by each spiral arm from the centre to radius 1.
const SPIRAL_SWEEP: f64 = 1.5 * PI;

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, train: usize, test: usize, classes: usize, noise: f64, seed: u64) -> Self {
        Self {
            kind,
            train,
            test,
            classes,
            noise,
            seed,
        }
    }

    /// Example `i` has label `i % classes`, so both splits are balanced to
    /// within one example per class. Points are drawn from one stream, so
    /// train and test never share an example.
    pub fn generate(&self) -> Result<Dataset> {
        if self.classes < 2 || self.train < self.classes || !(self.noise >= 0.0) {
            return Err(Error::Invalid(format!(
                "synthetic task needs classes >= 2, train >= classes and noise >= 0 (got {self:?})"
            )));
        }
        let mut rng = SeedStream::new(self.seed).child("synthetic").rng();
        let c = self.classes as f64;
        let mut point = |i: usize| -> (f64, f64, usize) {
            let k = i % self.classes;
            let phase = 2.0 * PI * k as f64 / c;
            let (n1, n2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            match self.kind {
                SyntheticKind::Spirals => {
                    let r: f64 = rng.random_range(0.05..1.0);
                    let theta = phase + SPIRAL_SWEEP * r + self.noise * n1;
                    (r * theta.cos(), r * theta.sin(), k)
                }
                SyntheticKind::Gaussians => (
                    2.0 * phase.cos() + self.noise * n1,
                    2.0 * phase.sin() + self.noise * n2,
                    k,
                ),
            }
        };
        let mut split = |offset: usize, n: usize| -> Result<Split> {
            let mut x = Vec::with_capacity(2 * n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b, k) = point(offset + i);
                x.extend([a, b]);
                y.push(k);
            }
            Split::new(x, y, 2)
        };
        let train = split(0, self.train)?;
        let test = if self.test == 0 {
            Split::new(Vec::new(), Vec::new(), 2)?
        } else {
            split(self.train, self.test)?
        };
        let name = match self.kind {
            SyntheticKind::Spirals => "spirals",
            SyntheticKind::Gaussians => "gaussians",
        };
        Dataset::new(name, TaskShape::flat(2, self.classes), train, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SyntheticSpec::new(SyntheticKind::Spirals, 301, 50, 3, 0.1, 11);
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        let mut counts = [0usize; 3];
        a.train.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        let other = SyntheticSpec { seed: 12, ..spec }.generate().unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn splits_are_disjoint() {
        let ds = SyntheticSpec::new(SyntheticKind::Gaussians, 200, 200, 4, 0.5, 1)
            .generate()
            .unwrap();
        for i in 0..ds.test.len() {
            let t = ds.test.example(i);
            assert!((0..ds.train.len()).all(|j| ds.train.example(j) != t));
        }
    }

    #[test]
    fn noiseless_gaussians_sit_on_means() {
        let ds = SyntheticSpec::new(SyntheticKind::Gaussians, 4, 0, 2, 0.0, 0)
            .generate()
            .unwrap();
        assert_eq!(ds.train.example(0), &[2.0, 0.0]);
        assert!((ds.train.example(1)[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SyntheticSpec::new(SyntheticKind::Spirals, 2, 0, 3, 0.0, 0)
            .generate()
            .is_err());
        assert!(SyntheticSpec::new(SyntheticKind::Spirals, 10, 0, 1, 0.0, 0)
            .generate()
            .is_err());
    }
}
