//! Datasets, augmentation and batching.

mod augment;
mod batches;
mod dataset;
mod synthetic;

pub use augment::{
    augment, cutout, eval_transform, flip_horizontal, pad_centered, random_crop, whiten, AugmentConfig, Image,
};
pub use batches::{eval_inputs, model_task, Batch, BatchStream};
pub use dataset::{load_dataset, read_binary, read_csv, write_binary, DataSource, Dataset, Split};
pub use synthetic::{SyntheticKind, SyntheticSpec};
