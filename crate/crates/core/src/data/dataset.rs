use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{InputShape, TaskShape};

/// Examples of one split, stored row-major with `example_size` values each.
/// Image examples are `[height, width, channels]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    features: Vec<f64>,
    labels: Vec<usize>,
    example_size: usize,
}

impl Split {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, example_size: usize) -> Result<Self> {
        if example_size == 0 || features.len() != labels.len() * example_size {
            return Err(Error::Invalid(format!(
                "{} feature values do not form {} examples of size {example_size}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            example_size,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn example_size(&self) -> usize {
        self.example_size
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.features[i * self.example_size..(i + 1) * self.example_size]
    }
}

/// Train and test splits of one classification task.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Shape of the stored examples (before any cropping).
    pub task: TaskShape,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    pub fn new(name: impl Into<String>, task: TaskShape, train: Split, test: Split) -> Result<Self> {
        let size = task.input.size();
        for (which, split) in [("train", &train), ("test", &test)] {
            if split.example_size != size {
                return Err(Error::Invalid(format!(
                    "{which} examples have {} values, task expects {size}",
                    split.example_size
                )));
            }
            if let Some(row) = split.labels.iter().position(|&l| l >= task.classes) {
                return Err(Error::LabelOutOfRange {
                    source_name: which.into(),
                    row,
                    label: split.labels[row],
                    classes: task.classes,
                });
            }
        }
        if train.is_empty() {
            return Err(Error::Invalid("training split is empty".into()));
        }
        Ok(Self {
            name: name.into(),
            task,
            train,
            test,
        })
    }

    /// SHA-256 over shape, labels and feature bits of both splits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.task).expect("task serializes"));
        for split in [&self.train, &self.test] {
            h.update((split.len() as u64).to_le_bytes());
            for &l in &split.labels {
                h.update((l as u64).to_le_bytes());
            }
            for v in &split.features {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(super::SyntheticSpec),
    /// `label,value,value,...` rows; optional header line.
    Csv {
        train: PathBuf,
        test: PathBuf,
        /// Inferred as `max label + 1` over both files when absent.
        #[serde(default)]
        classes: Option<usize>,
        /// `[height, width, channels]` when rows are HWC images.
        #[serde(default)]
        image: Option<[usize; 3]>,
    },
    /// The fixed binary layout documented in `docs/formats.md`.
    Binary {
        train: PathBuf,
        test: PathBuf,
    },
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(spec) => spec.generate(),
        DataSource::Csv {
            train,
            test,
            classes,
            image,
        } => {
            let (tr_x, tr_y, tr_n) = read_csv(train)?;
            let (te_x, te_y, te_n) = read_csv(test)?;
            if tr_n != te_n {
                return Err(Error::Parse {
                    source_name: test.display().to_string(),
                    location: "line 1".into(),
                    message: format!("{te_n} features per row, train file has {tr_n}"),
                });
            }
            let classes = match classes {
                Some(c) => *c,
                None => tr_y.iter().chain(&te_y).max().map_or(0, |m| m + 1),
            };
            for (path, labels) in [(train, &tr_y), (test, &te_y)] {
                if let Some(row) = labels.iter().position(|&l| l >= classes) {
                    return Err(Error::LabelOutOfRange {
                        source_name: path.display().to_string(),
                        row: row + 1,
                        label: labels[row],
                        classes,
                    });
                }
            }
            let input = match image {
                Some([h, w, c]) if h * w * c == tr_n => InputShape::Image {
                    height: *h,
                    width: *w,
                    channels: *c,
                },
                Some(dims) => {
                    return Err(Error::Invalid(format!(
                        "image shape {dims:?} does not match {tr_n} values per row"
                    )))
                }
                None => InputShape::Flat { features: tr_n },
            };
            let task = TaskShape { input, classes };
            Dataset::new(
                stem_of(train),
                task,
                Split::new(tr_x, tr_y, tr_n)?,
                Split::new(te_x, te_y, te_n)?,
            )
        }
        DataSource::Binary { train, test } => {
            let (tr_task, tr) = read_binary(train)?;
            let (te_task, te) = read_binary(test)?;
            if tr_task != te_task {
                return Err(Error::Parse {
                    source_name: test.display().to_string(),
                    location: "header".into(),
                    message: format!("shape {te_task:?} differs from train shape {tr_task:?}"),
                });
            }
            Dataset::new(stem_of(train), tr_task, tr, te)
        }
    }
}

fn stem_of(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

/// Parses `label,f1,f2,...` rows. A first line whose label field is not an
/// integer is treated as a header. Returns features, labels and the
/// number of features per row.
pub fn read_csv(path: &Path) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let name = path.display().to_string();
    let parse_err = |line: u64, message: String| Error::Parse {
        source_name: name.clone(),
        location: format!("line {line}"),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(0, format!("{other:?}")),
        })?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(i as u64 + 1, e.to_string()))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        let Some(first) = record.get(0) else { continue };
        let label: usize = match first.parse() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(parse_err(
                    line,
                    format!("label {first:?} is not a non-negative integer"),
                ))
            }
        };
        let n = record.len() - 1;
        match width {
            None if n == 0 => return Err(parse_err(line, "row has no features".into())),
            None => width = Some(n),
            Some(w) if w != n => return Err(parse_err(line, format!("expected {w} features, found {n}"))),
            Some(_) => {}
        }
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("feature {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("feature {field:?} is not finite")));
            }
            features.push(v);
        }
        labels.push(label);
    }
    let width = width.ok_or_else(|| parse_err(1, "no data rows".into()))?;
    Ok((features, labels, width))
}

const BINARY_MAGIC: &[u8; 4] = b"ENSD";
const BINARY_VERSION: u8 = 1;

/// Serializes one split of 8-bit images in the binary dataset layout.
/// Pixel values are `round(255 * v)` clamped to `[0, 255]`.
pub fn write_binary(path: &Path, task: TaskShape, split: &Split) -> Result<()> {
    let InputShape::Image {
        height,
        width,
        channels,
    } = task.input
    else {
        return Err(Error::Invalid("binary datasets hold images only".into()));
    };
    if task.classes > 256 {
        return Err(Error::Invalid("binary datasets hold at most 256 classes".into()));
    }
    let mut buf = Vec::with_capacity(25 + split.len() * (1 + split.example_size));
    buf.extend_from_slice(BINARY_MAGIC);
    buf.push(BINARY_VERSION);
    for v in [split.len(), height, width, channels, task.classes] {
        let v = u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} too large for header")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..split.len() {
        buf.push(split.labels[i] as u8);
        buf.extend(
            split
                .example(i)
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_binary(path: &Path) -> Result<(TaskShape, Split)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let err = |offset: usize, message: String| Error::Parse {
        source_name: path.display().to_string(),
        location: format!("offset {offset}"),
        message,
    };
    if bytes.len() < 25 {
        return Err(err(0, "file shorter than the 25-byte header".into()));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(err(0, "bad magic".into()));
    }
    if bytes[4] != BINARY_VERSION {
        return Err(err(4, format!("unsupported version {}", bytes[4])));
    }
    let field = |k: usize| u32::from_le_bytes(bytes[5 + 4 * k..9 + 4 * k].try_into().expect("4 bytes")) as usize;
    let (count, h, w, c, classes) = (field(0), field(1), field(2), field(3), field(4));
    if count == 0 || h == 0 || w == 0 || c == 0 || classes < 2 {
        return Err(err(
            5,
            format!("invalid header count={count} dims={h}x{w}x{c} classes={classes}"),
        ));
    }
    let size = h * w * c;
    let record = 1 + size;
    if bytes.len() != 25 + count * record {
        return Err(err(
            25,
            format!("expected {} payload bytes, found {}", count * record, bytes.len() - 25),
        ));
    }
    let mut features = Vec::with_capacity(count * size);
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in bytes[25..].chunks_exact(record).enumerate() {
        let label = rec[0] as usize;
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                source_name: path.display().to_string(),
                row: i,
                label,
                classes,
            });
        }
        labels.push(label);
        features.extend(rec[1..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok((TaskShape::image(h, w, c, classes), Split::new(features, labels, size)?))
}
