//! Reverse-mode differentiation over a fixed set of primitives.
//!
//! A [`Tape`] records primitive applications in order together with the
//! activations each adjoint needs. [`Tape::backward`] walks the records in
//! reverse and accumulates gradients into named leaves. There is no general
//! graph compiler: the primitives are exactly what the decoder and the
//! alignment loss use.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{self, Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("batch too small for train-mode batch norm: {rows} row(s), need at least 2")]
    BatchTooSmall { rows: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Gradient per leaf name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Storage precision for activations recorded on a tape.
///
/// Arithmetic is always carried out in `f64`; in `Single` mode every recorded
/// value is rounded to the nearest `f32` so training behaves like a
/// single-precision run and its parameters survive the `f32` checkpoint format
/// unchanged. `Double` is used for gradient audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    pub fn settle(self, v: f64) -> f64 {
        match self {
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::Shape(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_points(points: &[Vec3]) -> Self {
        Self {
            shape: vec![points.len(), 3],
            data: points.iter().flatten().copied().collect(),
        }
    }

    pub fn to_points(&self) -> Vec<Vec3> {
        self.data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(AutodiffError::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape.last().copied().unwrap_or(1);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// How a batch-norm application normalizes.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    /// Normalize with the statistics of the rows themselves.
    Train { eps: f64 },
    /// Normalize with stored running statistics.
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
        eps: f64,
    },
}

/// Per-channel batch statistics observed in train mode. `var` is the unbiased
/// estimate used for the running average.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

// One Op per recorded node; the transform variant's cached Jacobian is
// the largest and boxing it buys nothing at these graph sizes.
#[allow(clippy::large_enum_variant)]
#[derive(Debug)]
enum Op {
    Leaf {
        name: String,
    },
    Constant,
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    MaxPool {
        input: NodeId,
        // Row index of the maximum, segment-major then channel.
        argmax: Vec<usize>,
    },
    ConcatLatent {
        points: NodeId,
        latents: Vec<NodeId>,
        segments: Vec<usize>,
    },
    Row {
        input: NodeId,
        index: usize,
    },
    TransformPoints {
        angles: NodeId,
        translation: NodeId,
        points: NodeId,
        rotation: Mat3,
        jacobian: [Mat3; 3],
    },
    ScalarFn {
        input: NodeId,
        grad: Vec<f64>,
    },
    WeightedSum {
        inputs: Vec<NodeId>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    precision: Precision,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, mut value: Tensor, op: Op, name: &'static str) -> Result<NodeId> {
        if self.consumed {
            return Err(AutodiffError::InvalidState(
                "tape has already been differentiated".into(),
            ));
        }
        if self.precision == Precision::Single {
            let p = self.precision;
            value.data.iter_mut().for_each(|v| *v = p.settle(*v));
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Leaf { .. } | Op::Constant => false,
            Op::Linear { input, weight, bias } => {
                self.needs(*input) || self.needs(*weight) || self.needs(*bias)
            }
            Op::LeakyRelu { input, .. }
            | Op::MaxPool { input, .. }
            | Op::Row { input, .. }
            | Op::ScalarFn { input, .. } => self.needs(*input),
            Op::BatchNorm {
                input, gamma, beta, ..
            } => self.needs(*input) || self.needs(*gamma) || self.needs(*beta),
            Op::ConcatLatent {
                points, latents, ..
            } => self.needs(*points) || latents.iter().any(|z| self.needs(*z)),
            Op::TransformPoints {
                angles,
                translation,
                points,
                ..
            } => self.needs(*angles) || self.needs(*translation) || self.needs(*points),
            Op::WeightedSum { inputs, .. } => inputs.iter().any(|i| self.needs(*i)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Registers a named input. Leaves sharing a name share one gradient entry.
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        let id = self.push(value, Op::Leaf { name: name.into() }, "leaf")?;
        self.nodes[id.0].needs_grad = requires_grad;
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Constant, "constant")
    }

    /// `out = input * weight + bias` for `input: M x Din`, `weight: Din x Dout`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (m, din) = x.dims2()?;
        let (wi, dout) = w.dims2()?;
        if wi != din || b.len() != dout {
            return Err(AutodiffError::Shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let mut out = vec![0.0; m * dout];
        for r in 0..m {
            let orow = &mut out[r * dout..(r + 1) * dout];
            orow.copy_from_slice(b.data());
            let xrow = x.row(r);
            for (k, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w.data()[k * dout..(k + 1) * dout];
                for (o, wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let value = Tensor::new(vec![m, dout], out)?;
        self.push(value, Op::Linear { input, weight, bias }, "linear")
    }

    /// Elementwise `max(x, slope * x)`.
    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> Result<NodeId> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(AutodiffError::InvalidArgument(format!(
                "leaky slope must lie in (0, 1), got {slope}"
            )));
        }
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::LeakyRelu { input, slope }, "leaky_relu")
    }

    /// Per-channel normalization over all rows of `input: M x C`.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: NormMode<'_>,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        let x = self.value(input);
        let (m, c) = x.dims2()?;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        if g.len() != c || b.len() != c {
            return Err(AutodiffError::Shape(format!(
                "batch_norm: {c} channels but gamma {} / beta {}",
                g.len(),
                b.len()
            )));
        }
        let (mean, var, eps, stats) = match mode {
            NormMode::Train { eps } => {
                if m < 2 {
                    return Err(AutodiffError::BatchTooSmall { rows: m });
                }
                let mut mean = vec![0.0; c];
                for r in 0..m {
                    for (acc, v) in mean.iter_mut().zip(x.row(r)) {
                        *acc += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0; c];
                for r in 0..m {
                    for ((acc, v), mu) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *acc += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, eps, Some(stats))
            }
            NormMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(AutodiffError::Shape(format!(
                        "batch_norm: {c} channels but running stats of length {}/{}",
                        running_mean.len(),
                        running_var.len()
                    )));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; m * c];
        let mut out = vec![0.0; m * c];
        for r in 0..m {
            for j in 0..c {
                let h = (x.data()[r * c + j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        let value = Tensor::new(vec![m, c], out)?;
        let train = stats.is_some();
        let id = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            "batch_norm",
        )?;
        Ok((id, stats))
    }

    /// Channel-wise maximum over all rows; `N x C` to a length-`C` vector.
    pub fn max_pool_rows(&mut self, input: NodeId) -> Result<NodeId> {
        let (n, c) = self.value(input).dims2()?;
        let pooled = self.max_pool_segments(input, &[n])?;
        let mut value = self.nodes[pooled.0].value.clone();
        value.shape = vec![c];
        self.nodes[pooled.0].value = value;
        Ok(pooled)
    }

    /// Channel-wise maximum over consecutive row segments; `N x C` to `S x C`.
    /// Ties resolve to the lowest row index.
    pub fn max_pool_segments(&mut self, input: NodeId, segments: &[usize]) -> Result<NodeId> {
        let x = self.value(input);
        let (n, c) = x.dims2()?;
        if segments.iter().sum::<usize>() != n || segments.contains(&0) {
            return Err(AutodiffError::Shape(format!(
                "max_pool: segments {segments:?} do not tile {n} rows"
            )));
        }
        let mut out = vec![0.0; segments.len() * c];
        let mut argmax = vec![0usize; segments.len() * c];
        let mut start = 0;
        for (s, &len) in segments.iter().enumerate() {
            for j in 0..c {
                let mut best = start;
                let mut best_v = x.data()[start * c + j];
                for r in start + 1..start + len {
                    let v = x.data()[r * c + j];
                    if v > best_v {
                        best_v = v;
                        best = r;
                    }
                }
                out[s * c + j] = best_v;
                argmax[s * c + j] = best;
            }
            start += len;
        }
        let value = Tensor::new(vec![segments.len(), c], out)?;
        self.push(value, Op::MaxPool { input, argmax }, "max_pool")
    }

    /// Appends the latent vector to every point row.
    pub fn concat_latent(&mut self, points: NodeId, latent: NodeId) -> Result<NodeId> {
        let (n, _) = self.value(points).dims2()?;
        self.concat_latents(points, &[latent], &[n])
    }

    /// Row segment `s` of `points` is extended with `latents[s]`.
    pub fn concat_latents(
        &mut self,
        points: NodeId,
        latents: &[NodeId],
        segments: &[usize],
    ) -> Result<NodeId> {
        let p = self.value(points);
        let (n, pc) = p.dims2()?;
        if latents.len() != segments.len() || segments.iter().sum::<usize>() != n {
            return Err(AutodiffError::Shape(format!(
                "concat_latents: {} latents, segments {segments:?}, {n} rows",
                latents.len()
            )));
        }
        let d = self.value(latents[0]).len();
        if latents.iter().any(|z| self.value(*z).len() != d) {
            return Err(AutodiffError::Shape("concat_latents: latent sizes differ".into()));
        }
        let width = pc + d;
        let mut out = Vec::with_capacity(n * width);
        let mut row = 0;
        for (z, &len) in latents.iter().zip(segments) {
            let zv = self.value(*z).data();
            for _ in 0..len {
                out.extend_from_slice(p.row(row));
                out.extend_from_slice(zv);
                row += 1;
            }
        }
        let value = Tensor::new(vec![n, width], out)?;
        let op = Op::ConcatLatent {
            points,
            latents: latents.to_vec(),
            segments: segments.to_vec(),
        };
        self.push(value, op, "concat_latent")
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let x = self.value(input);
        let (m, _) = x.dims2()?;
        if index >= m {
            return Err(AutodiffError::Shape(format!("row {index} of a {m}-row matrix")));
        }
        let value = Tensor::vector(x.row(index).to_vec());
        self.push(value, Op::Row { input, index }, "row")
    }

    /// Applies the rigid transform given by 3 Euler angles and 3 translation
    /// values to the rows of `points: N x 3`.
    pub fn transform_points(&mut self, angles: NodeId, translation: NodeId, points: NodeId) -> Result<NodeId> {
        let a = self.value(angles).data();
        let t = self.value(translation).data();
        let p = self.value(points);
        let (n, c) = p.dims2()?;
        if a.len() != 3 || t.len() != 3 || c != 3 {
            return Err(AutodiffError::Shape(format!(
                "transform_points: angles {}, translation {}, points {:?}",
                a.len(),
                t.len(),
                p.shape()
            )));
        }
        let av = [a[0], a[1], a[2]];
        let tv = [t[0], t[1], t[2]];
        let rotation = geometry::euler_to_matrix(av)
            .map_err(|_| AutodiffError::NonFinite { op: "transform_points" })?;
        let jacobian = geometry::rotation_jacobian(av);
        let mut out = Vec::with_capacity(n * 3);
        for r in 0..n {
            let row = p.row(r);
            let q = geometry::mat_vec(&rotation, &[row[0], row[1], row[2]]);
            out.extend_from_slice(&geometry::add(q, tv));
        }
        let value = Tensor::new(vec![n, 3], out)?;
        let op = Op::TransformPoints {
            angles,
            translation,
            points,
            rotation,
            jacobian,
        };
        self.push(value, op, "transform_points")
    }

    /// Records a scalar function of `input` whose value and gradient were
    /// computed outside the tape.
    pub fn record_scalar(&mut self, input: NodeId, value: f64, grad: Vec<f64>, name: &'static str) -> Result<NodeId> {
        if grad.len() != self.value(input).len() {
            return Err(AutodiffError::Shape(format!(
                "{name}: gradient of length {} for an input of {}",
                grad.len(),
                self.value(input).len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.push(Tensor::scalar(value), Op::ScalarFn { input, grad }, name)
    }

    /// `sum_i weights[i] * inputs[i]` over scalar nodes.
    pub fn weighted_sum(&mut self, inputs: &[NodeId], weights: &[f64]) -> Result<NodeId> {
        if inputs.len() != weights.len() || inputs.is_empty() {
            return Err(AutodiffError::Shape(format!(
                "weighted_sum: {} inputs, {} weights",
                inputs.len(),
                weights.len()
            )));
        }
        let mut total = 0.0;
        for (i, w) in inputs.iter().zip(weights) {
            let v = self.value(*i);
            if v.len() != 1 {
                return Err(AutodiffError::Shape("weighted_sum: inputs must be scalars".into()));
            }
            total += w * v.data()[0];
        }
        let op = Op::WeightedSum {
            inputs: inputs.to_vec(),
            weights: weights.to_vec(),
        };
        self.push(Tensor::scalar(total), op, "weighted_sum")
    }

    /// Back-propagates `seed` from `output`.
    pub fn backward(&mut self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        self.backward_multi(vec![(output, seed)])
    }

    /// Back-propagates several seeds at once. Every leaf that requires a
    /// gradient gets an entry, zero when unreachable. A tape can be
    /// differentiated once.
    pub fn backward_multi(&mut self, seeds: Vec<(NodeId, Tensor)>) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::InvalidState(
                "tape has already been differentiated".into(),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            let v = self.value(id);
            if seed.len() != v.len() {
                return Err(AutodiffError::Shape(format!(
                    "seed of length {} for a value of length {}",
                    seed.len(),
                    v.len()
                )));
            }
            let seed = Tensor {
                shape: v.shape().to_vec(),
                data: seed.data,
            };
            accumulate(&mut grads[id.0], seed);
        }

        let mut out = Gradients::new();
        for node in &self.nodes {
            if let Op::Leaf { name } = &node.op {
                if node.needs_grad {
                    out.entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
                }
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf { name } => {
                    if let Some(acc) = out.get_mut(name) {
                        acc.add_assign(&g);
                    }
                }
                Op::Constant => {}
                Op::Linear { input, weight, bias } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (m, din) = x.dims2()?;
                    let dout = w.shape()[1];
                    if self.needs(*input) {
                        let mut gx = vec![0.0; m * din];
                        for r in 0..m {
                            let grow = g.row(r);
                            for k in 0..din {
                                let wrow = &w.data()[k * dout..(k + 1) * dout];
                                gx[r * din + k] = dot(grow, wrow);
                            }
                        }
                        accumulate(&mut grads[input.0], Tensor::new(vec![m, din], gx)?);
                    }
                    if self.needs(*weight) {
                        let mut gw = vec![0.0; din * dout];
                        for r in 0..m {
                            let grow = g.row(r);
                            for (k, &xv) in x.row(r).iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let dst = &mut gw[k * dout..(k + 1) * dout];
                                for (d, gv) in dst.iter_mut().zip(grow) {
                                    *d += xv * gv;
                                }
                            }
                        }
                        accumulate(&mut grads[weight.0], Tensor::new(vec![din, dout], gw)?);
                    }
                    if self.needs(*bias) {
                        let gb = column_sums(&g, m, dout);
                        let shape = self.nodes[bias.0].value.shape().to_vec();
                        accumulate(&mut grads[bias.0], Tensor::new(shape, gb)?);
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &self.nodes[input.0].value;
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { slope * gv })
                        .collect();
                    accumulate(&mut grads[input.0], Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (m, c) = g.dims2()?;
                    let gam = self.nodes[gamma.0].value.data();
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for r in 0..m {
                        for j in 0..c {
                            let gv = g.data()[r * c + j];
                            sum_g[j] += gv;
                            sum_gx[j] += gv * xhat[r * c + j];
                        }
                    }
                    if self.needs(*input) {
                        let mut gx = vec![0.0; m * c];
                        for r in 0..m {
                            for j in 0..c {
                                let gv = g.data()[r * c + j];
                                gx[r * c + j] = if *train {
                                    gam[j] * inv_std[j] / m as f64
                                        * (m as f64 * gv - sum_g[j] - xhat[r * c + j] * sum_gx[j])
                                } else {
                                    gam[j] * inv_std[j] * gv
                                };
                            }
                        }
                        accumulate(&mut grads[input.0], Tensor::new(vec![m, c], gx)?);
                    }
                    if self.needs(*gamma) {
                        let shape = self.nodes[gamma.0].value.shape().to_vec();
                        accumulate(&mut grads[gamma.0], Tensor::new(shape, sum_gx)?);
                    }
                    if self.needs(*beta) {
                        let shape = self.nodes[beta.0].value.shape().to_vec();
                        accumulate(&mut grads[beta.0], Tensor::new(shape, sum_g)?);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let x = &self.nodes[input.0].value;
                    let (n, c) = x.dims2()?;
                    let mut gx = vec![0.0; n * c];
                    for (slot, &r) in argmax.iter().enumerate() {
                        let j = slot % c;
                        gx[r * c + j] += g.data()[slot];
                    }
                    accumulate(&mut grads[input.0], Tensor::new(vec![n, c], gx)?);
                }
                Op::ConcatLatent {
                    points,
                    latents,
                    segments,
                } => {
                    let (n, width) = g.dims2()?;
                    let pc = self.nodes[points.0].value.shape()[1];
                    let d = width - pc;
                    if self.needs(*points) {
                        let mut gp = Vec::with_capacity(n * pc);
                        for r in 0..n {
                            gp.extend_from_slice(&g.row(r)[..pc]);
                        }
                        accumulate(&mut grads[points.0], Tensor::new(vec![n, pc], gp)?);
                    }
                    let mut row = 0;
                    for (z, &len) in latents.iter().zip(segments) {
                        if self.needs(*z) {
                            let mut gz = vec![0.0; d];
                            for r in row..row + len {
                                for (acc, v) in gz.iter_mut().zip(&g.row(r)[pc..]) {
                                    *acc += v;
                                }
                            }
                            let shape = self.nodes[z.0].value.shape().to_vec();
                            accumulate(&mut grads[z.0], Tensor::new(shape, gz)?);
                        }
                        row += len;
                    }
                }
                Op::Row { input, index } => {
                    let x = &self.nodes[input.0].value;
                    let (m, c) = x.dims2()?;
                    let mut gx = vec![0.0; m * c];
                    gx[index * c..(index + 1) * c].copy_from_slice(g.data());
                    accumulate(&mut grads[input.0], Tensor::new(vec![m, c], gx)?);
                }
                Op::TransformPoints {
                    angles,
                    translation,
                    points,
                    rotation,
                    jacobian,
                } => {
                    let p = &self.nodes[points.0].value;
                    let (n, _) = p.dims2()?;
                    if self.needs(*translation) {
                        let gt = column_sums(&g, n, 3);
                        let shape = self.nodes[translation.0].value.shape().to_vec();
                        accumulate(&mut grads[translation.0], Tensor::new(shape, gt)?);
                    }
                    if self.needs(*angles) {
                        let mut ga = vec![0.0; 3];
                        for r in 0..n {
                            let pr = p.row(r);
                            let pv = [pr[0], pr[1], pr[2]];
                            let gr = g.row(r);
                            let gv = [gr[0], gr[1], gr[2]];
                            for (k, jac) in jacobian.iter().enumerate() {
                                ga[k] += geometry::dot(&gv, &geometry::mat_vec(jac, &pv));
                            }
                        }
                        let shape = self.nodes[angles.0].value.shape().to_vec();
                        accumulate(&mut grads[angles.0], Tensor::new(shape, ga)?);
                    }
                    if self.needs(*points) {
                        let rt = geometry::transpose(rotation);
                        let mut gp = Vec::with_capacity(n * 3);
                        for r in 0..n {
                            let gr = g.row(r);
                            gp.extend_from_slice(&geometry::mat_vec(&rt, &[gr[0], gr[1], gr[2]]));
                        }
                        accumulate(&mut grads[points.0], Tensor::new(vec![n, 3], gp)?);
                    }
                }
                Op::ScalarFn { input, grad } => {
                    let s = g.data()[0];
                    let shape = self.nodes[input.0].value.shape().to_vec();
                    let data = grad.iter().map(|v| s * v).collect();
                    accumulate(&mut grads[input.0], Tensor::new(shape, data)?);
                }
                Op::WeightedSum { inputs, weights } => {
                    let s = g.data()[0];
                    for (inp, w) in inputs.iter().zip(weights) {
                        if self.needs(*inp) {
                            accumulate(&mut grads[inp.0], Tensor::scalar(s * w));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_sums(g: &Tensor, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (acc, v) in out.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum FdError {
    #[error("finite-difference step {0} outside [1e-7, 1e-4]")]
    BadStep(f64),
    #[error("graph evaluation failed: {0}")]
    Eval(#[from] AutodiffError),
    #[error("non-finite loss while probing leaf {leaf}[{index}]")]
    NonFiniteLoss { leaf: String, index: usize },
    #[error("leaf {0} has no tape gradient")]
    MissingGradient(String),
}

/// Outcome of a gradient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Worst relative error over all probed coordinates.
    pub max_rel_err: f64,
    /// Leaf name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Relative-error denominators never drop below this fraction of the largest
/// gradient magnitude, so entries that are zero up to round-off do not dominate.
pub const FD_REL_FLOOR: f64 = 1e-3;

/// Compares tape gradients with central differences for every coordinate of
/// every leaf. `eval` must compute in double precision and return the scalar
/// loss with its tape gradients.
pub fn fd_check<F>(mut eval: F, leaves: &BTreeMap<String, Tensor>, eps: f64) -> std::result::Result<FdReport, FdError>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<(f64, Gradients)>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(FdError::BadStep(eps));
    }
    let (_, tape_grads) = eval(leaves)?;
    let mut numeric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut probe = leaves.clone();
    for (name, value) in leaves {
        let analytic = tape_grads
            .get(name)
            .ok_or_else(|| FdError::MissingGradient(name.clone()))?;
        if analytic.len() != value.len() {
            return Err(FdError::Eval(AutodiffError::Shape(format!(
                "gradient for {name} has {} entries, leaf has {}",
                analytic.len(),
                value.len()
            ))));
        }
        let mut est = Vec::with_capacity(value.len());
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).expect("cloned key").data_mut()[i] = orig + eps;
            let (up, _) = eval(&probe)?;
            probe.get_mut(name).expect("cloned key").data_mut()[i] = orig - eps;
            let (down, _) = eval(&probe)?;
            probe.get_mut(name).expect("cloned key").data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(FdError::NonFiniteLoss {
                    leaf: name.clone(),
                    index: i,
                });
            }
            est.push((up - down) / (2.0 * eps));
        }
        numeric.insert(name.clone(), est);
    }

    let scale = numeric
        .iter()
        .flat_map(|(name, est)| {
            let a = tape_grads[name].data();
            est.iter().zip(a).map(|(n, a)| n.abs().max(a.abs()))
        })
        .fold(0.0, f64::max);
    let floor = (FD_REL_FLOOR * scale).max(1e-12);

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (name, est) in &numeric {
        for (i, (n, a)) in est.iter().zip(tape_grads[name].data()).enumerate() {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            report.coordinates += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
