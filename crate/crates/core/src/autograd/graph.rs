use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: usize },
    Conv2d { x: usize, k: usize, b: usize },
    Relu(usize),
    GlobalAvgPool(usize),
    Flatten(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    Pick(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations.
///
/// Leaves are either parameters (gradients are tracked) or constants
/// (treated as fixed inputs). Every op checks its operand shapes and the
/// finiteness of its output. A graph supports exactly one backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` did not
    /// influence the loss or is a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but moves the tensor out.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient w.r.t. `v`, zero-filled to `shape` when absent.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.take(v).unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(cols) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Row-wise softmax over the last dimension.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    log_softmax_rows(x).map(f64::exp)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf, true)
    }

    /// Non-trainable leaf; no gradient ever reaches it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// `x · w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if xt.shape().len() != 2 || wt.shape().len() != 2 || xt.shape()[1] != wt.shape()[0] {
            return Err(shape_err("affine", xt, wt));
        }
        let (rows, inner, out) = (xt.shape()[0], wt.shape()[0], wt.shape()[1]);
        if bt.shape() != [out] {
            return Err(shape_err("affine", wt, bt));
        }
        let (xd, wd, bd) = (xt.data(), wt.data(), bt.data());
        let mut y = Vec::with_capacity(rows * out);
        for r in 0..rows {
            let mut acc = bd.to_vec();
            for (i, &xv) in xd[r * inner..(r + 1) * inner].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (a, &wv) in acc.iter_mut().zip(&wd[i * out..(i + 1) * out]) {
                    *a += xv * wv;
                }
            }
            y.extend(acc);
        }
        let y = Tensor::new(vec![rows, out], y)?;
        self.push("affine", y, Op::Affine { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0])
    }

    /// Stride-1 convolution with zero "same" padding.
    ///
    /// `x: [batch, h, w, cin]`, `k: [ks, ks, cin, cout]` with odd `ks`,
    /// `b: [cout]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (xt, kt, bt) = (self.value(x), self.value(k), self.value(b));
        let (xs, ks) = (xt.shape(), kt.shape());
        if xs.len() != 4 || ks.len() != 4 || ks[0] != ks[1] || ks[0] % 2 == 0 || xs[3] != ks[2] {
            return Err(shape_err("conv2d", xt, kt));
        }
        let (batch, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let (ksz, cout) = (ks[0], ks[3]);
        if bt.shape() != [cout] {
            return Err(shape_err("conv2d", kt, bt));
        }
        let pad = ksz / 2;
        let (xd, kd, bd) = (xt.data(), kt.data(), bt.data());
        let mut y = vec![0.0; batch * h * w * cout];
        for n in 0..batch {
            for i in 0..h {
                for j in 0..w {
                    let base = ((n * h + i) * w + j) * cout;
                    let out = &mut y[base..base + cout];
                    out.copy_from_slice(bd);
                    for di in 0..ksz {
                        let Some(ii) = (i + di).checked_sub(pad).filter(|&v| v < h) else {
                            continue;
                        };
                        for dj in 0..ksz {
                            let Some(jj) = (j + dj).checked_sub(pad).filter(|&v| v < w) else {
                                continue;
                            };
                            let xo = ((n * h + ii) * w + jj) * cin;
                            let ko = (di * ksz + dj) * cin * cout;
                            for c in 0..cin {
                                let xv = xd[xo + c];
                                let krow = &kd[ko + c * cout..ko + (c + 1) * cout];
                                for (o, &kv) in out.iter_mut().zip(krow) {
                                    *o += xv * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let y = Tensor::new(vec![batch, h, w, cout], y)?;
        self.push("conv2d", y, Op::Conv2d { x: x.0, k: k.0, b: b.0 }, &[x.0, k.0, b.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push("relu", y, Op::Relu(x.0), &[x.0])
    }

    /// `[batch, h, w, c] -> [batch, c]`, averaging over the spatial axes.
    pub fn global_average_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() != 4 {
            return Err(Error::Shape {
                op: "global_average_pool",
                left: s.to_vec(),
                right: vec![0, 0, 0, 0],
            });
        }
        let (batch, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut y = vec![0.0; batch * c];
        for n in 0..batch {
            let acc = &mut y[n * c..(n + 1) * c];
            for p in xt.data()[n * hw * c..(n + 1) * hw * c].chunks(c) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a /= hw as f64;
            }
        }
        let y = Tensor::new(vec![batch, c], y)?;
        self.push("global_average_pool", y, Op::GlobalAvgPool(x.0), &[x.0])
    }

    /// `[batch, ...] -> [batch, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let batch = xt.shape()[0];
        let y = xt.clone().reshape(vec![batch, xt.len() / batch])?;
        self.push("flatten", y, Op::Flatten(x.0), &[x.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("add", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let y = Tensor::new(at.shape().to_vec(), data)?;
        self.push("add", y, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("mul", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::new(at.shape().to_vec(), data)?;
        self.push("mul", y, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// Multiplication by a fixed scalar.
    pub fn scalar_scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let y = self.value(x).map(|v| v * s);
        self.push("scalar_scale", y, Op::Scale(x.0, s), &[x.0])
    }

    /// Multiplication by a differentiable scalar `s` of shape `[1]`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let st = self.value(s);
        if !st.is_scalar() {
            return Err(shape_err("scale_by", self.value(x), st));
        }
        let sv = st.item();
        let y = self.value(x).map(|v| v * sv);
        self.push("scale_by", y, Op::ScaleBy(x.0, s.0), &[x.0, s.0])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = softmax_rows(self.value(x));
        self.push("softmax", y, Op::Softmax(x.0), &[x.0])
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let y = log_softmax_rows(self.value(x));
        self.push("log_softmax", y, Op::LogSoftmax(x.0), &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        self.push("sum", y, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let y = Tensor::scalar(xt.sum() / xt.len() as f64);
        self.push("mean", y, Op::Mean(x.0), &[x.0])
    }

    /// Selects `x[r, index[r]]` from each row: `[rows, cols] -> [rows]`.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let cols = xt.cols();
        if xt.rows() != index.len() {
            return Err(Error::Shape {
                op: "pick",
                left: xt.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
            return Err(Error::Invalid(format!(
                "pick: index {bad} out of range for {cols} columns"
            )));
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(r, &c)| xt.data()[r * cols + c])
            .collect();
        let y = Tensor::new(vec![index.len()], data)?;
        self.push("pick", y, Op::Pick(x.0, index.to_vec()), &[x.0])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| self.nodes[i].value.data();
        let mut acc = |i: usize, contrib: Vec<f64>| match &mut grads[i] {
            Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
            slot => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Affine { x, w, b } => {
                let xs = self.nodes[x].value.shape();
                let (rows, inner) = (xs[0], xs[1]);
                let out = self.nodes[w].value.shape()[1];
                let (xd, wd) = (val(x), val(w));
                if self.wants(x) {
                    let mut dx = vec![0.0; rows * inner];
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for i in 0..inner {
                            dx[r * inner + i] = gr.iter().zip(&wd[i * out..(i + 1) * out]).map(|(a, b)| a * b).sum();
                        }
                    }
                    acc(x, dx);
                }
                if self.wants(w) {
                    let mut dw = vec![0.0; inner * out];
                    for r in 0..rows {
                        let gr = &g[r * out..(r + 1) * out];
                        for i in 0..inner {
                            let xv = xd[r * inner + i];
                            if xv == 0.0 {
                                continue;
                            }
                            for (d, &gv) in dw[i * out..(i + 1) * out].iter_mut().zip(gr) {
                                *d += xv * gv;
                            }
                        }
                    }
                    acc(w, dw);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; out];
                    for gr in g.chunks(out) {
                        db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                    }
                    acc(b, db);
                }
            }
            &Op::Conv2d { x, k, b } => {
                let xs = self.nodes[x].value.shape();
                let ks = self.nodes[k].value.shape();
                let (batch, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
                let (ksz, cout) = (ks[0], ks[3]);
                let pad = ksz / 2;
                let (xd, kd) = (val(x), val(k));
                let (want_x, want_k) = (self.wants(x), self.wants(k));
                let mut dx = vec![0.0; if want_x { xd.len() } else { 0 }];
                let mut dk = vec![0.0; if want_k { kd.len() } else { 0 }];
                let mut db = vec![0.0; cout];
                for n in 0..batch {
                    for i in 0..h {
                        for j in 0..w {
                            let base = ((n * h + i) * w + j) * cout;
                            let gy = &g[base..base + cout];
                            db.iter_mut().zip(gy).for_each(|(d, v)| *d += v);
                            for di in 0..ksz {
                                let Some(ii) = (i + di).checked_sub(pad).filter(|&v| v < h) else {
                                    continue;
                                };
                                for dj in 0..ksz {
                                    let Some(jj) = (j + dj).checked_sub(pad).filter(|&v| v < w) else {
                                        continue;
                                    };
                                    let xo = ((n * h + ii) * w + jj) * cin;
                                    let ko = (di * ksz + dj) * cin * cout;
                                    for c in 0..cin {
                                        let kr = ko + c * cout;
                                        if want_x {
                                            dx[xo + c] +=
                                                gy.iter().zip(&kd[kr..kr + cout]).map(|(a, b)| a * b).sum::<f64>();
                                        }
                                        if want_k {
                                            let xv = xd[xo + c];
                                            for (d, &gv) in dk[kr..kr + cout].iter_mut().zip(gy) {
                                                *d += xv * gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if want_x {
                    acc(x, dx);
                }
                if want_k {
                    acc(k, dk);
                }
                if self.wants(b) {
                    acc(b, db);
                }
            }
            &Op::Relu(x) => {
                let d = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                acc(x, d);
            }
            &Op::GlobalAvgPool(x) => {
                let s = self.nodes[x].value.shape();
                let (batch, hw, c) = (s[0], s[1] * s[2], s[3]);
                let mut d = Vec::with_capacity(batch * hw * c);
                for n in 0..batch {
                    let gr = &g[n * c..(n + 1) * c];
                    for _ in 0..hw {
                        d.extend(gr.iter().map(|v| v / hw as f64));
                    }
                }
                acc(x, d);
            }
            &Op::Flatten(x) => acc(x, g.to_vec()),
            &Op::Add(a, b) => {
                if self.wants(a) {
                    acc(a, g.to_vec());
                }
                if self.wants(b) {
                    acc(b, g.to_vec());
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    acc(a, g.iter().zip(val(b)).map(|(x, y)| x * y).collect());
                }
                if self.wants(b) {
                    acc(b, g.iter().zip(val(a)).map(|(x, y)| x * y).collect());
                }
            }
            &Op::Scale(x, s) => acc(x, g.iter().map(|v| v * s).collect()),
            &Op::ScaleBy(x, s) => {
                let sv = val(s)[0];
                if self.wants(x) {
                    acc(x, g.iter().map(|v| v * sv).collect());
                }
                if self.wants(s) {
                    acc(s, vec![g.iter().zip(val(x)).map(|(a, b)| a * b).sum()]);
                }
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                acc(x, d);
            }
            &Op::LogSoftmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(g.chunks(cols)) {
                    let gsum: f64 = gr.iter().sum();
                    d.extend(yr.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * gsum));
                }
                acc(x, d);
            }
            &Op::Sum(x) => acc(x, vec![g[0]; val(x).len()]),
            &Op::Mean(x) => {
                let n = val(x).len();
                acc(x, vec![g[0] / n as f64; n]);
            }
            Op::Pick(x, index) => {
                let cols = self.nodes[*x].value.cols();
                let mut d = vec![0.0; val(*x).len()];
                for (r, (&c, &gv)) in index.iter().zip(g).enumerate() {
                    d[r * cols + c] = gv;
                }
                acc(*x, d);
            }
        }
    }
}
