use std::f64::consts::PI;

use super::params::ParameterVector;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    Ok(base_lr * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm && norm > 0.0 {
        let scale = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Momentum-SGD state for one parameter vector.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
    step: usize,
    total_steps: usize,
    base_lr: f64,
    momentum: f64,
    clip_norm: f64,
    schedule: LrSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm actually applied.
    pub applied_norm: f64,
}

impl OptimizerState {
    /// Cosine-scheduled momentum SGD. Use `f64::INFINITY` as `clip_norm`
    /// to disable clipping.
    pub fn new(
        params: &ParameterVector,
        total_steps: usize,
        base_lr: f64,
        momentum: f64,
        clip_norm: f64,
    ) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Invalid("optimizer needs total_steps > 0".into()));
        }
        if !(base_lr > 0.0) || !(0.0..1.0).contains(&momentum) || !(clip_norm > 0.0) {
            return Err(Error::Invalid(format!(
                "optimizer: base_lr {base_lr}, momentum {momentum}, clip_norm {clip_norm}"
            )));
        }
        Ok(Self {
            velocity: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
            total_steps,
            base_lr,
            momentum,
            clip_norm,
            schedule: LrSchedule::Cosine,
        })
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Learning rate that the next update will use.
    pub fn current_lr(&self) -> Result<f64> {
        match self.schedule {
            LrSchedule::Constant => Ok(self.base_lr),
            LrSchedule::Cosine => cosine_lr(self.step, self.total_steps, self.base_lr),
        }
    }

    /// Clips `grads` to the configured global norm, then applies one
    /// momentum step.
    pub fn update(&mut self, params: &mut ParameterVector, mut grads: Vec<Tensor>) -> Result<StepStats> {
        let grad_norm = clip_global_norm(&mut grads, self.clip_norm);
        let applied_norm = global_norm(&grads);
        let lr = sgd_momentum_step(params, &grads, self)?;
        Ok(StepStats {
            lr,
            grad_norm,
            applied_norm,
        })
    }
}

/// Classic momentum: `v <- momentum * v + g; p <- p - lr * v`.
/// Returns the learning rate used.
pub fn sgd_momentum_step(params: &mut ParameterVector, grads: &[Tensor], state: &mut OptimizerState) -> Result<f64> {
    if state.step >= state.total_steps {
        return Err(Error::StepOutOfRange {
            step: state.step,
            total: state.total_steps,
        });
    }
    if grads.len() != params.len() || grads.len() != state.velocity.len() {
        return Err(Error::Shape {
            op: "sgd_momentum_step",
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    for ((p, g), v) in params.tensors().zip(grads).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape {
                op: "sgd_momentum_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    let lr = state.current_lr()?;
    let mu = state.momentum;
    for ((p, g), v) in params.tensors_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParameterVector {
        let mut p = ParameterVector::new();
        p.push("w", Tensor::vector(vec![w]));
        p
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 1000, 0.025).unwrap(), 0.025);
        assert!(cosine_lr(1000, 1000, 0.025).unwrap().abs() < 1e-18);
        assert!((cosine_lr(500, 1000, 0.025).unwrap() - 0.0125).abs() < 1e-15);
        assert!(cosine_lr(1001, 1000, 0.025).is_err());
        assert!(cosine_lr(0, 0, 0.025).is_err());
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![Tensor::vector(vec![6.0, 8.0])];
        assert_eq!(clip_global_norm(&mut g, 5.0), 10.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);

        let mut g = vec![Tensor::vector(vec![5.0, 0.0, 0.0])];
        clip_global_norm(&mut g, 5.0);
        assert_eq!(g[0].data(), &[5.0, 0.0, 0.0]);

        let mut g = vec![Tensor::vector(vec![0.0; 3])];
        assert_eq!(clip_global_norm(&mut g, 5.0), 0.0);
        assert_eq!(g[0].data(), &[0.0; 3]);

        // norm 3 across two tensors stays put
        let mut g = vec![Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![2.0])];
        clip_global_norm(&mut g, 5.0);
        assert_eq!(g[0].data(), &[1.0, 2.0]);

        // norm 10 across two tensors gets halved
        let mut g = vec![Tensor::vector(vec![6.0]), Tensor::vector(vec![8.0])];
        clip_global_norm(&mut g, 5.0);
        assert_eq!((g[0].item(), g[1].item()), (3.0, 4.0));
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = single(1.0);
        let mut s = OptimizerState::new(&p, 10, 0.1, 0.0, f64::INFINITY)
            .unwrap()
            .with_schedule(LrSchedule::Constant);
        sgd_momentum_step(&mut p, &[Tensor::vector(vec![1.0])], &mut s).unwrap();
        assert!((p.get("w").unwrap().item() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = single(1.0);
        let mut s = OptimizerState::new(&p, 10, 0.1, 0.9, f64::INFINITY)
            .unwrap()
            .with_schedule(LrSchedule::Constant);
        let g = [Tensor::vector(vec![1.0])];
        sgd_momentum_step(&mut p, &g, &mut s).unwrap();
        assert!((s.velocity()[0].item() - 1.0).abs() < 1e-15);
        assert!((p.get("w").unwrap().item() - 0.9).abs() < 1e-15);
        sgd_momentum_step(&mut p, &g, &mut s).unwrap();
        assert!((s.velocity()[0].item() - 1.9).abs() < 1e-15);
        assert!((p.get("w").unwrap().item() - 0.71).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut p = single(2.5);
        let mut s = OptimizerState::new(&p, 3, 0.1, 0.9, 5.0).unwrap();
        for _ in 0..3 {
            s.update(&mut p, vec![Tensor::vector(vec![0.0])]).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 2.5);
        assert!(matches!(
            s.update(&mut p, vec![Tensor::vector(vec![0.0])]),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single(1.0);
        let mut s = OptimizerState::new(&p, 3, 0.1, 0.9, 5.0).unwrap();
        let err = sgd_momentum_step(&mut p, &[Tensor::vector(vec![1.0, 2.0])], &mut s);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
