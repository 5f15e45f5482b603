//! The training-time image pipeline (pad, random crop, flip, whitening,
//! cutout) and the evaluation transform, drawn as text.
//!
//! `cargo run --example augmentation`

use ensemble_search::data::{augment, eval_transform, AugmentConfig, Image};
use ensemble_search::rng::SeedStream;

fn show(title: &str, img: &Image) {
    println!(
        "{title} ({}x{}, mean {:+.3}, std {:.3})",
        img.height,
        img.width,
        img.mean(),
        img.std()
    );
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let (lo, hi) = img
        .data
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    for r in 0..img.height {
        let line: String = (0..img.width)
            .map(|c| {
                let v = img.data[r * img.width + c];
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                shades[(t * 9.0).round() as usize]
            })
            .collect();
        println!("  |{line}|");
    }
}

fn main() -> ensemble_search::Result<()> {
    let side = 12;
    // A diagonal ramp with a bright block, so flips and crops are visible.
    let data = (0..side * side)
        .map(|i| {
            let (r, c) = (i / side, i % side);
            let block = if (2..5).contains(&r) && (7..10).contains(&c) {
                1.0
            } else {
                0.0
            };
            (r + c) as f64 / (2 * side) as f64 + block
        })
        .collect();
    let img = Image::new(side, side, 1, data)?;
    let cfg = AugmentConfig::standard(side);
    println!("{cfg:?}\n");
    show("original", &img);
    show("evaluation transform", &eval_transform(&img, &cfg));
    let mut rng = SeedStream::new(5).child("augment").rng();
    for k in 1..=3 {
        show(&format!("training sample {k}"), &augment(&img, &cfg, &mut rng));
    }
    Ok(())
}
