//! Minibatch sampling and evaluation tensors.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, eval_transform, AugmentConfig, Image};
use super::dataset::Split;
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{InputShape, TaskShape};
use crate::rng::SeedStream;

#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// Endless epochs over `0..n`, reshuffled at the start of every epoch.
/// The last batch of an epoch holds the remainder and may be short.
/// Shuffling and augmentation draw from separate streams, so the batch
/// order does not depend on whether augmentation is on.
#[derive(Clone, Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    epoch: usize,
    shuffle_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: SeedStream) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Invalid(format!(
                "batch stream needs examples and a positive batch size (n {n}, batch {batch_size})"
            )));
        }
        let mut shuffle_rng = seed.child("shuffle").rng();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        Ok(Self {
            order,
            cursor: 0,
            batch_size,
            epoch: 0,
            shuffle_rng,
            augment_rng: seed.child("augment").rng(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Completed passes over the data.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.shuffle_rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }

    /// Next batch of `split`, augmented when `aug` is set and the task
    /// takes images.
    pub fn next_batch(&mut self, split: &Split, input: InputShape, aug: Option<&AugmentConfig>) -> Result<Batch> {
        let idx = self.next_indices();
        let labels = idx.iter().map(|&i| split.labels()[i]).collect();
        let inputs = match (input, aug) {
            (
                InputShape::Image {
                    height,
                    width,
                    channels,
                },
                Some(cfg),
            ) => {
                let mut data = Vec::with_capacity(idx.len() * cfg.crop_to * cfg.crop_to * channels);
                for &i in &idx {
                    let img = Image::new(height, width, channels, split.example(i).to_vec())?;
                    data.extend(augment(&img, cfg, &mut self.augment_rng).data);
                }
                Tensor::new(vec![idx.len(), cfg.crop_to, cfg.crop_to, channels], data)?
            }
            _ => gather(split, input, &idx)?,
        };
        Ok(Batch { inputs, labels })
    }
}

fn gather(split: &Split, input: InputShape, idx: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.len() * split.example_size());
    for &i in idx {
        data.extend_from_slice(split.example(i));
    }
    Tensor::new(input.batch_shape(idx.len()), data)
}

/// The whole split as one tensor, passed through the deterministic
/// evaluation transform for augmented image tasks.
pub fn eval_inputs(split: &Split, input: InputShape, aug: Option<&AugmentConfig>) -> Result<Tensor> {
    let idx: Vec<usize> = (0..split.len()).collect();
    match (input, aug) {
        (
            InputShape::Image {
                height,
                width,
                channels,
            },
            Some(cfg),
        ) => {
            let mut data = Vec::with_capacity(idx.len() * cfg.crop_to * cfg.crop_to * channels);
            for &i in &idx {
                let img = Image::new(height, width, channels, split.example(i).to_vec())?;
                data.extend(eval_transform(&img, cfg).data);
            }
            Tensor::new(vec![idx.len(), cfg.crop_to, cfg.crop_to, channels], data)
        }
        _ => gather(split, input, &idx),
    }
}

/// Shape the subnetworks see: image tasks shrink to the crop size when
/// augmentation is on.
pub fn model_task(task: TaskShape, aug: Option<&AugmentConfig>) -> Result<TaskShape> {
    match (task.input, aug) {
        (
            InputShape::Image {
                height,
                width,
                channels,
            },
            Some(cfg),
        ) => {
            cfg.validate(height, width)?;
            Ok(TaskShape::image(cfg.crop_to, cfg.crop_to, channels, task.classes))
        }
        _ => Ok(task),
    }
}
