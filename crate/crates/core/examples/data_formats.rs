//! Writes one small image dataset as CSV and as the fixed binary layout,
//! loads both back through the config-level loader and checks they agree.
//! Pixels are multiples of 1/255 so the 8-bit binary form is lossless.
//!
//! `cargo run --example data_formats`

use std::fs;

use ensemble_search::data::{load_dataset, write_binary, DataSource, Split};
use ensemble_search::model::TaskShape;
use ensemble_search::rng::SeedStream;
use ensemble_search::Error;
use rand::Rng;

fn split(n: usize, rng: &mut impl Rng) -> ensemble_search::Result<Split> {
    let pixels = (0..n * 16)
        .map(|_| f64::from(rng.random_range(0u8..=255)) / 255.0)
        .collect();
    Split::new(pixels, (0..n).map(|i| i % 3).collect(), 16)
}

fn main() -> ensemble_search::Result<()> {
    let task = TaskShape::image(4, 4, 1, 3);
    let mut rng = SeedStream::new(3).rng();
    let (train, test) = (split(12, &mut rng)?, split(6, &mut rng)?);
    let root = std::env::temp_dir().join("ensemble-search-data-formats");
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    for (name, split) in [("train", &train), ("test", &test)] {
        let mut text = String::from("label,pixels...\n");
        for i in 0..split.len() {
            let row: Vec<String> = split.example(i).iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&format!("{},{}\n", split.labels()[i], row.join(",")));
        }
        let path = root.join(format!("{name}.csv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        write_binary(&root.join(format!("{name}.bin")), task, split)?;
    }
    let from_csv = load_dataset(&DataSource::Csv {
        train: root.join("train.csv"),
        test: root.join("test.csv"),
        classes: None,
        image: Some([4, 4, 1]),
    })?;
    let from_bin = load_dataset(&DataSource::Binary {
        train: root.join("train.bin"),
        test: root.join("test.bin"),
    })?;
    for (label, d) in [("csv", &from_csv), ("binary", &from_bin)] {
        println!(
            "{label:>6}: {:?}, {} train / {} test, hash {}",
            d.task,
            d.train.len(),
            d.test.len(),
            d.content_hash()
        );
    }
    let same = [&from_csv, &from_bin]
        .iter()
        .all(|d| d.train.features() == train.features() && d.test.labels() == test.labels());
    println!("identical to the source after both round trips: {same}");
    println!("files under {}", root.display());
    Ok(())
}
