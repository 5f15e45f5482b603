//! The depth/width subnetwork family.
//!
//! A subnetwork is a stem mapping the input to `width` channels, `depth`
//! identical cells, a global average pool and an affine head producing
//! logits. On image inputs the stem and cells are 3x3 same-padded
//! convolutions followed by ReLU; on flat inputs they are affine layers
//! followed by ReLU and the pool is skipped.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autograd::{Checksum, Graph, ParameterVector, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

const KERNEL: usize = 3;

/// `depth@width`: number of stacked cells and channels per cell.
///
/// Ordering is lexicographic on `(depth, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArchSpec {
    pub depth: usize,
    pub width: usize,
}

impl ArchSpec {
    pub fn new(depth: usize, width: usize) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(Error::Invalid(format!(
                "architecture {depth}@{width} must have depth, width >= 1"
            )));
        }
        Ok(Self { depth, width })
    }

    pub fn deeper(self, cells: usize) -> Self {
        Self {
            depth: self.depth + cells,
            ..self
        }
    }

    pub fn wider(self, channels: usize) -> Self {
        Self {
            width: self.width + channels,
            ..self
        }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.depth, self.width)
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("architecture {s:?} is not of the form DEPTH@WIDTH"));
        let (d, w) = s.trim().split_once('@').ok_or_else(bad)?;
        let depth = d.trim().parse().map_err(|_| bad())?;
        let width = w.trim().parse().map_err(|_| bad())?;
        ArchSpec::new(depth, width)
    }
}

impl Serialize for ArchSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArchSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputShape {
    Flat {
        features: usize,
    },
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl InputShape {
    /// Number of scalars per example.
    pub fn size(&self) -> usize {
        match *self {
            InputShape::Flat { features } => features,
            InputShape::Image {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    /// Tensor shape of a batch of `n` examples.
    pub fn batch_shape(&self, n: usize) -> Vec<usize> {
        match *self {
            InputShape::Flat { features } => vec![n, features],
            InputShape::Image {
                height,
                width,
                channels,
            } => vec![n, height, width, channels],
        }
    }
}

/// What a subnetwork consumes and produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskShape {
    pub input: InputShape,
    pub classes: usize,
}

impl TaskShape {
    pub fn flat(features: usize, classes: usize) -> Self {
        Self {
            input: InputShape::Flat { features },
            classes,
        }
    }

    pub fn image(height: usize, width: usize, channels: usize, classes: usize) -> Self {
        Self {
            input: InputShape::Image {
                height,
                width,
                channels,
            },
            classes,
        }
    }
}

/// Exact number of trainable scalars in `build_subnetwork(arch, task, _)`.
pub fn param_count(arch: ArchSpec, task: TaskShape) -> u64 {
    let (d, w, c) = (arch.depth as u64, arch.width as u64, task.classes as u64);
    let (stem, cell) = match task.input {
        InputShape::Flat { features } => (features as u64 * w + w, w * w + w),
        InputShape::Image { channels, .. } => {
            let k2 = (KERNEL * KERNEL) as u64;
            (k2 * channels as u64 * w + w, k2 * w * w + w)
        }
    };
    stem + d * cell + w * c + c
}

/// A network from the family, with its parameters.
///
/// Once frozen, parameters can no longer be borrowed mutably.
#[derive(Clone, Debug, PartialEq)]
pub struct Subnetwork {
    arch: ArchSpec,
    task: TaskShape,
    params: ParameterVector,
    frozen: bool,
    iteration_born: usize,
}

/// Output of [`Subnetwork::forward`].
#[derive(Debug)]
pub struct Forward {
    pub logits: Var,
    /// Parameter leaves in [`ParameterVector`] order.
    pub params: Vec<Var>,
}

fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-bound..bound));
    t
}

/// Realizes `arch` as an initialized, unfrozen network.
///
/// Weights are He-uniform (bound `sqrt(6 / fan_in)`) drawn from the
/// `init` child of `seed`; biases start at zero.
pub fn build_subnetwork(arch: ArchSpec, task: TaskShape, seed: SeedStream) -> Result<Subnetwork> {
    ArchSpec::new(arch.depth, arch.width)?;
    if task.classes < 2 || task.input.size() == 0 {
        return Err(Error::Invalid(format!(
            "task {task:?} needs >= 2 classes and a non-empty input"
        )));
    }
    let mut rng = seed.child("init").rng();
    let w = arch.width;
    let mut params = ParameterVector::new();
    match task.input {
        InputShape::Flat { features } => {
            params.push("stem.weight", he_uniform(&mut rng, &[features, w], features));
            params.push("stem.bias", Tensor::zeros(&[w]));
            for k in 0..arch.depth {
                params.push(format!("cell{k}.weight"), he_uniform(&mut rng, &[w, w], w));
                params.push(format!("cell{k}.bias"), Tensor::zeros(&[w]));
            }
        }
        InputShape::Image { channels, .. } => {
            let fan = KERNEL * KERNEL * channels;
            params.push("stem.weight", he_uniform(&mut rng, &[KERNEL, KERNEL, channels, w], fan));
            params.push("stem.bias", Tensor::zeros(&[w]));
            for k in 0..arch.depth {
                let fan = KERNEL * KERNEL * w;
                params.push(
                    format!("cell{k}.weight"),
                    he_uniform(&mut rng, &[KERNEL, KERNEL, w, w], fan),
                );
                params.push(format!("cell{k}.bias"), Tensor::zeros(&[w]));
            }
        }
    }
    params.push("head.weight", he_uniform(&mut rng, &[w, task.classes], w));
    params.push("head.bias", Tensor::zeros(&[task.classes]));
    debug_assert_eq!(params.total_count() as u64, param_count(arch, task));
    Ok(Subnetwork {
        arch,
        task,
        params,
        frozen: false,
        iteration_born: 0,
    })
}

impl Subnetwork {
    /// Reassembles a network from stored parameters, checking they fit `arch`.
    pub fn from_parts(
        arch: ArchSpec,
        task: TaskShape,
        flat: &[f64],
        iteration_born: usize,
        frozen: bool,
    ) -> Result<Self> {
        let mut net = build_subnetwork(arch, task, SeedStream::new(0))?;
        if !net.params.load_flat(flat) {
            return Err(Error::Invalid(format!(
                "{arch}: expected {} parameters, got {}",
                net.params.total_count(),
                flat.len()
            )));
        }
        net.iteration_born = iteration_born;
        net.frozen = frozen;
        Ok(net)
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch
    }

    pub fn task(&self) -> TaskShape {
        self.task
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> Result<&mut ParameterVector> {
        if self.frozen {
            return Err(Error::Frozen(self.arch.to_string()));
        }
        Ok(&mut self.params)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn iteration_born(&self) -> usize {
        self.iteration_born
    }

    pub fn param_count(&self) -> u64 {
        self.params.total_count() as u64
    }

    pub fn checksum(&self) -> Checksum {
        self.params.checksum()
    }

    /// Freezes the network as the member selected at `iteration`.
    pub fn freeze(&mut self, iteration: usize) {
        self.frozen = true;
        self.iteration_born = iteration;
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expected = self.task.input.batch_shape(shape.first().copied().unwrap_or(0));
        if shape != expected.as_slice() {
            return Err(Error::Shape {
                op: "logits",
                left: shape.to_vec(),
                right: expected,
            });
        }
        Ok(())
    }

    /// Records the forward pass on `g`. Parameters become trainable leaves
    /// only when `trainable` is set and the network is not frozen.
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Forward> {
        self.check_input(g.value(x).shape())?;
        let track = trainable && !self.frozen;
        let params: Vec<Var> = self
            .params
            .tensors()
            .map(|t| {
                if track {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let image = matches!(self.task.input, InputShape::Image { .. });
        let layer = |g: &mut Graph, h: Var, w: Var, b: Var| -> Result<Var> {
            let z = if image { g.conv2d(h, w, b)? } else { g.affine(h, w, b)? };
            g.relu(z)
        };
        let mut h = layer(g, x, params[0], params[1])?;
        for k in 0..self.arch.depth {
            h = layer(g, h, params[2 + 2 * k], params[3 + 2 * k])?;
        }
        if image {
            h = g.global_average_pool(h)?;
        }
        let n = params.len();
        let logits = g.affine(h, params[n - 2], params[n - 1])?;
        Ok(Forward { logits, params })
    }

    /// Pre-softmax logits `[batch, classes]`, computed without gradient tracking.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch.shape())?;
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, x, false)?;
        Ok(g.value(out.logits).clone())
    }
}

const MAGIC: &[u8; 8] = b"ENSCKPT1";
const VERSION: u8 = 1;

/// Header of a subnetwork checkpoint file. See `docs/formats.md`.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub arch: ArchSpec,
    pub task: TaskShape,
    pub iteration_born: usize,
    pub checksum: Checksum,
    pub count: u64,
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit the checkpoint header")))
}

pub fn write_checkpoint(net: &Subnetwork, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = Vec::with_capacity(128 + 8 * net.params.total_count());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&u32_of(net.arch.depth, "depth")?.to_le_bytes());
    buf.extend_from_slice(&u32_of(net.arch.width, "width")?.to_le_bytes());
    buf.extend_from_slice(&u32_of(net.iteration_born, "iteration")?.to_le_bytes());
    let (kind, dims) = match net.task.input {
        InputShape::Flat { features } => (0u8, [features, 0, 0]),
        InputShape::Image {
            height,
            width,
            channels,
        } => (1u8, [height, width, channels]),
    };
    buf.push(kind);
    for d in dims {
        buf.extend_from_slice(&u32_of(d, "input dimension")?.to_le_bytes());
    }
    buf.extend_from_slice(&u32_of(net.task.classes, "classes")?.to_le_bytes());
    buf.extend_from_slice(&net.checksum().0);
    buf.extend_from_slice(&(net.params.total_count() as u64).to_le_bytes());
    for v in net.params.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint. The returned network is frozen; the header checksum
/// is returned alongside so callers can compare it with other records.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Subnetwork)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        name: &name,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::Parse {
            source_name: name.clone(),
            location: "offset 0".into(),
            message: "bad magic".into(),
        });
    }
    let version = cur.take(1)?[0];
    if version != VERSION {
        return Err(cur.corrupt(&format!("unsupported version {version}")));
    }
    let depth = cur.u32()?;
    let width = cur.u32()?;
    let iteration_born = cur.u32()?;
    let kind = cur.take(1)?[0];
    let dims = [cur.u32()?, cur.u32()?, cur.u32()?];
    let classes = cur.u32()?;
    let input = match kind {
        0 => InputShape::Flat { features: dims[0] },
        1 => InputShape::Image {
            height: dims[0],
            width: dims[1],
            channels: dims[2],
        },
        k => return Err(cur.corrupt(&format!("unknown input kind {k}"))),
    };
    let checksum = Checksum(cur.take(32)?.try_into().expect("32 bytes"));
    let count = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let arch = ArchSpec::new(depth, width)?;
    let task = TaskShape { input, classes };
    if count != param_count(arch, task) {
        return Err(cur.corrupt(&format!(
            "{count} parameters stored, {arch} needs {}",
            param_count(arch, task)
        )));
    }
    let payload = cur.take(8 * count as usize)?;
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if cur.pos != bytes.len() {
        return Err(cur.corrupt("trailing bytes"));
    }
    let net = Subnetwork::from_parts(arch, task, &flat, iteration_born, true)?;
    Ok((
        CheckpointHeader {
            arch,
            task,
            iteration_born,
            checksum,
            count,
        },
        net,
    ))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, message: &str) -> Error {
        Error::Parse {
            source_name: self.name.to_string(),
            location: format!("offset {}", self.pos),
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.corrupt("truncated checkpoint"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_task() -> TaskShape {
        TaskShape::flat(2, 3)
    }

    #[test]
    fn count_matches_hand_sum() {
        // stem 2*8+8, one cell 8*8+8, head 8*3+3
        let a = ArchSpec::new(1, 8).unwrap();
        assert_eq!(param_count(a, flat_task()), 24 + 72 + 27);
        let net = build_subnetwork(a, flat_task(), SeedStream::new(1)).unwrap();
        assert_eq!(net.params().total_count(), 123);
    }

    #[test]
    fn image_count_matches_built_network() {
        let task = TaskShape::image(6, 6, 3, 10);
        for (d, w) in [(1, 4), (2, 8), (3, 5)] {
            let a = ArchSpec::new(d, w).unwrap();
            let net = build_subnetwork(a, task, SeedStream::new(0)).unwrap();
            assert_eq!(net.param_count(), param_count(a, task));
        }
    }

    #[test]
    fn deeper_has_more_parameters() {
        let task = TaskShape::image(32, 32, 3, 10);
        let a = ArchSpec::new(6, 768).unwrap();
        assert!(param_count(a.deeper(1), task) > param_count(a, task));
    }

    #[test]
    fn cell_term_quadruples_with_width() {
        let task = TaskShape::flat(2, 3);
        let cell = |w: usize| {
            param_count(ArchSpec::new(2, w).unwrap(), task) - param_count(ArchSpec::new(1, w).unwrap(), task)
        };
        for w in [8, 64, 512] {
            let ratio = cell(2 * w) as f64 / cell(w) as f64;
            assert!((ratio - 4.0).abs() < 4.0 / w as f64 + 1e-12, "w={w} ratio={ratio}");
        }
    }

    #[test]
    fn same_seed_same_init() {
        let a = ArchSpec::new(2, 5).unwrap();
        let n1 = build_subnetwork(a, flat_task(), SeedStream::new(9)).unwrap();
        let n2 = build_subnetwork(a, flat_task(), SeedStream::new(9)).unwrap();
        let n3 = build_subnetwork(a, flat_task(), SeedStream::new(10)).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1.checksum(), n3.checksum());
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut net = build_subnetwork(ArchSpec::new(1, 4).unwrap(), flat_task(), SeedStream::new(2)).unwrap();
        let p = net.params_mut().unwrap();
        p.get_mut("head.weight").unwrap().data_mut().fill(0.0);
        let x = Tensor::matrix(&[vec![1.0, -3.0], vec![0.2, 0.7], vec![9.0, 9.0]]).unwrap();
        let l = net.logits(&x).unwrap();
        assert_eq!(l.shape(), &[3, 3]);
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_reject_wrong_input() {
        let net = build_subnetwork(ArchSpec::new(1, 4).unwrap(), flat_task(), SeedStream::new(2)).unwrap();
        assert!(matches!(net.logits(&Tensor::zeros(&[3, 5])), Err(Error::Shape { .. })));
    }

    #[test]
    fn frozen_network_gets_no_gradient() {
        let mut net = build_subnetwork(ArchSpec::new(1, 4).unwrap(), flat_task(), SeedStream::new(3)).unwrap();
        net.freeze(1);
        assert!(net.params_mut().is_err());
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(&[vec![0.5, -0.5]]).unwrap());
        let out = net.forward(&mut g, x, true).unwrap();
        let loss = g.sum(out.logits).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(out.params.iter().all(|&p| grads.get(p).is_none()));
    }

    #[test]
    fn image_forward_shape() {
        let task = TaskShape::image(5, 5, 2, 4);
        let net = build_subnetwork(ArchSpec::new(2, 3).unwrap(), task, SeedStream::new(4)).unwrap();
        let l = net.logits(&Tensor::full(&[7, 5, 5, 2], 0.3)).unwrap();
        assert_eq!(l.shape(), &[7, 4]);
    }

    #[test]
    fn arch_parse_and_order() {
        let a: ArchSpec = "6@768".parse().unwrap();
        assert_eq!(a, ArchSpec { depth: 6, width: 768 });
        assert_eq!(a.to_string(), "6@768");
        assert!("6x768".parse::<ArchSpec>().is_err());
        assert!("0@8".parse::<ArchSpec>().is_err());
        assert!(ArchSpec::new(1, 900).unwrap() < ArchSpec::new(2, 8).unwrap());
        assert!(ArchSpec::new(2, 8).unwrap() < ArchSpec::new(2, 9).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut net = build_subnetwork(
            ArchSpec::new(2, 3).unwrap(),
            TaskShape::image(4, 4, 1, 2),
            SeedStream::new(5),
        )
        .unwrap();
        net.freeze(3);
        write_checkpoint(&net, &path).unwrap();
        let (header, back) = read_checkpoint(&path).unwrap();
        assert_eq!(header.checksum, net.checksum());
        assert_eq!(header.iteration_born, 3);
        assert_eq!(back, net);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Parse { .. })));
    }
}
