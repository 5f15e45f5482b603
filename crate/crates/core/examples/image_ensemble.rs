//! Convolutional subnetworks on a small synthetic image task, trained
//! with the augmentation pipeline and evaluated through its deterministic
//! transform.
//!
//! `cargo run --release --example image_ensemble`

use ensemble_search::data::{eval_inputs, AugmentConfig, Dataset, Split};
use ensemble_search::ensemble::WeightMode;
use ensemble_search::generator::GeneratorSpec;
use ensemble_search::losses::evaluate_logits;
use ensemble_search::model::{ArchSpec, TaskShape};
use ensemble_search::rng::SeedStream;
use ensemble_search::search::{self, RunConfig};
use rand::Rng;
use rand_distr::StandardNormal;

const SIDE: usize = 8;

/// Class 0 draws a horizontal bar, class 1 a vertical bar, class 2 both.
/// All three are invariant under horizontal flips.
fn split(n: usize, rng: &mut impl Rng) -> ensemble_search::Result<Split> {
    let mut features = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 3;
        let (row, col) = (rng.random_range(1..SIDE - 1), rng.random_range(1..SIDE - 1));
        for r in 0..SIDE {
            for c in 0..SIDE {
                let on = (label != 1 && r == row) || (label != 0 && c == col);
                let noise: f64 = rng.sample(StandardNormal);
                features.push(f64::from(u8::from(on)) + 0.35 * noise);
            }
        }
        labels.push(label);
    }
    Split::new(features, labels, SIDE * SIDE)
}

fn main() -> ensemble_search::Result<()> {
    let mut rng = SeedStream::new(9).rng();
    let data = Dataset::new(
        "bars",
        TaskShape::image(SIDE, SIDE, 1, 3),
        split(300, &mut rng)?,
        split(150, &mut rng)?,
    )?;
    let aug = AugmentConfig {
        pad_to: 10,
        crop_to: SIDE,
        flip: true,
        whiten: true,
        cutout_size: 2,
    };
    let config = RunConfig {
        iterations: 3,
        steps_per_iteration: 200,
        base_lr: 0.05,
        weight_mode: WeightMode::Learned,
        mixture_every: 50,
        generator: GeneratorSpec::dynamic(ArchSpec::new(1, 4)?, 1, 2, u64::MAX),
        ..RunConfig::default()
    };
    let out = search::run(&config, &data, Some(&aug), &mut search::NullSink)?;
    let x = eval_inputs(&data.test, data.task.input, Some(&aug))?;
    for (k, member) in out.ensemble.members().iter().enumerate() {
        let (_, err) = evaluate_logits(&member.logits(&x)?, data.test.labels())?;
        println!(
            "member {k} {}: {} params, test error {:.2}%",
            member.arch(),
            member.param_count(),
            100.0 * err
        );
    }
    let (loss, err) = evaluate_logits(&out.ensemble.logits(&x)?, data.test.labels())?;
    println!("ensemble weights {:?}", out.ensemble.weights());
    println!("ensemble test loss {loss:.4}, error {:.2}%", 100.0 * err);
    Ok(())
}
