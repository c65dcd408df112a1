//! Transformation decoder.
//!
//! Every source point is concatenated with the pair's latent code and pushed
//! through a per-point MLP. The rows are max-pooled into one global feature,
//! which two separate MLP heads turn into three Euler angles (radians) and a
//! three-component translation. Batch norm follows every linear layer except
//! the two 3-wide outputs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, BatchStats, Gradients, NodeId, NormMode, Precision, Tape, Tensor};
use crate::geometry::{PointCloud, RigidTransform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("invalid decoder configuration: {0}")]
    Config(String),
    #[error("numeric failure in layer {layer}: {source}")]
    NumericFailure {
        layer: String,
        #[source]
        source: AutodiffError,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, DecoderError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub latent_dim: usize,
    /// Widths of the per-point layers before pooling.
    pub stage1_widths: Vec<usize>,
    pub rotation_head: Vec<usize>,
    pub translation_head: Vec<usize>,
    pub leaky_slope: f64,
    pub batch_norm: bool,
    pub bn_eps: f64,
    /// Weight of the newest batch statistic in the running averages.
    pub bn_momentum: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2048,
            stage1_widths: vec![256, 128],
            rotation_head: vec![128, 64, 3],
            translation_head: vec![128, 64, 3],
            leaky_slope: 0.01,
            batch_norm: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// One linear layer of the decoder as declared by a [`DecoderConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub normalized: bool,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DecoderError::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.stage1_widths.is_empty() || self.stage1_widths.contains(&0) {
            return bad(format!("stage1 widths {:?} must be non-empty and positive", self.stage1_widths));
        }
        for (name, head) in [("rotation", &self.rotation_head), ("translation", &self.translation_head)] {
            if head.last() != Some(&3) || head.contains(&0) {
                return bad(format!("{name} head {head:?} must be positive and end in width 3"));
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope {} outside (0, 1)", self.leaky_slope));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("batch-norm eps must be positive and momentum in (0, 1]".into());
        }
        Ok(())
    }

    pub fn global_width(&self) -> usize {
        *self.stage1_widths.last().expect("validated")
    }

    /// Layers in evaluation order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut fan_in = 3 + self.latent_dim;
        for (i, &w) in self.stage1_widths.iter().enumerate() {
            out.push(LayerSpec {
                name: format!("stage1.{i}"),
                fan_in,
                fan_out: w,
                normalized: self.batch_norm,
            });
            fan_in = w;
        }
        let g = fan_in;
        for (prefix, head) in [("rot", &self.rotation_head), ("trans", &self.translation_head)] {
            let mut fan_in = g;
            for (i, &w) in head.iter().enumerate() {
                out.push(LayerSpec {
                    name: format!("{prefix}.{i}"),
                    fan_in,
                    fan_out: w,
                    normalized: self.batch_norm && i + 1 < head.len(),
                });
                fan_in = w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `fan_in x fan_out`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Option<NormParams>,
}

/// Decoder weights keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    config: DecoderConfig,
    layers: BTreeMap<String, LayerParams>,
}

/// Train mode normalizes with batch statistics; eval mode with running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which leaves of a forward pass receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradTargets {
    pub params: bool,
    pub latents: bool,
}

impl GradTargets {
    pub const ALL: GradTargets = GradTargets {
        params: true,
        latents: true,
    };
    pub const LATENTS: GradTargets = GradTargets {
        params: false,
        latents: true,
    };
}

/// Draws weights from `U(-sqrt(6/fan_in), sqrt(6/fan_in))` with zero biases,
/// unit `gamma`, zero `beta` and unit running variance. Values are drawn in
/// single precision.
pub fn init_params(config: &DecoderConfig, seed: u64) -> Result<DecoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = BTreeMap::new();
    for spec in config.layers() {
        let bound = (6.0 / spec.fan_in as f64).sqrt();
        let weight: Vec<f64> = (0..spec.fan_in * spec.fan_out)
            .map(|_| rng.random_range(-bound..bound) as f32 as f64)
            .collect();
        let c = spec.fan_out;
        let norm = spec.normalized.then(|| NormParams {
            gamma: Tensor::filled(vec![c], 1.0),
            beta: Tensor::zeros(vec![c]),
            running_mean: Tensor::zeros(vec![c]),
            running_var: Tensor::filled(vec![c], 1.0),
        });
        layers.insert(
            spec.name.clone(),
            LayerParams {
                weight: Tensor::new(vec![spec.fan_in, c], weight)?,
                bias: Tensor::zeros(vec![c]),
                norm,
            },
        );
    }
    Ok(DecoderParams {
        config: config.clone(),
        layers,
    })
}

impl DecoderParams {
    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn layer(&self, name: &str) -> Option<&LayerParams> {
        self.layers.get(name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut LayerParams> {
        self.layers.get_mut(name)
    }

    /// Number of trainable scalars (weights, biases, gamma, beta).
    pub fn param_count(&self) -> usize {
        self.layers
            .values()
            .map(|l| {
                l.weight.len()
                    + l.bias.len()
                    + l.norm.as_ref().map_or(0, |n| n.gamma.len() + n.beta.len())
            })
            .sum()
    }

    /// Every tensor, running statistics included, under its checkpoint name.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, l) in &self.layers {
            out.insert(format!("{name}.weight"), l.weight.clone());
            out.insert(format!("{name}.bias"), l.bias.clone());
            if let Some(n) = &l.norm {
                out.insert(format!("{name}.gamma"), n.gamma.clone());
                out.insert(format!("{name}.beta"), n.beta.clone());
                out.insert(format!("{name}.running_mean"), n.running_mean.clone());
                out.insert(format!("{name}.running_var"), n.running_var.clone());
            }
        }
        out
    }

    /// Rebuilds parameters from [`named_tensors`](Self::named_tensors) output.
    /// Layer widths, latent size and batch-norm use are read off the shapes;
    /// `leaky_slope` is not stored and must be supplied. Keys containing `/`
    /// belong to other owners and are skipped.
    pub fn from_named_tensors(tensors: &BTreeMap<String, Tensor>, leaky_slope: f64) -> Result<Self> {
        let widths = |prefix: &str| -> Result<Vec<(usize, usize)>> {
            let mut out = Vec::new();
            while let Some(w) = tensors.get(&format!("{prefix}.{}.weight", out.len())) {
                let (i, o) = w.dims2().map_err(|e| DecoderError::Shape(e.to_string()))?;
                out.push((i, o));
            }
            Ok(out)
        };
        let stage1 = widths("stage1")?;
        let rot = widths("rot")?;
        let trans = widths("trans")?;
        if stage1.is_empty() || rot.is_empty() || trans.is_empty() {
            return Err(DecoderError::Shape("checkpoint lacks decoder layers".into()));
        }
        if stage1[0].0 < 4 {
            return Err(DecoderError::Shape("first layer narrower than a point plus one latent".into()));
        }
        let config = DecoderConfig {
            latent_dim: stage1[0].0 - 3,
            stage1_widths: stage1.iter().map(|w| w.1).collect(),
            rotation_head: rot.iter().map(|w| w.1).collect(),
            translation_head: trans.iter().map(|w| w.1).collect(),
            leaky_slope,
            batch_norm: tensors.contains_key("stage1.0.gamma"),
            ..DecoderConfig::default()
        };
        config.validate()?;
        let mut layers = BTreeMap::new();
        let take = |key: String, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .get(&key)
                .ok_or_else(|| DecoderError::Shape(format!("missing tensor {key}")))?;
            if t.shape() != shape {
                return Err(DecoderError::Shape(format!(
                    "{key} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        for spec in config.layers() {
            let n = &spec.name;
            let c = spec.fan_out;
            let norm = if spec.normalized {
                Some(NormParams {
                    gamma: take(format!("{n}.gamma"), &[c])?,
                    beta: take(format!("{n}.beta"), &[c])?,
                    running_mean: take(format!("{n}.running_mean"), &[c])?,
                    running_var: take(format!("{n}.running_var"), &[c])?,
                })
            } else {
                None
            };
            layers.insert(
                n.clone(),
                LayerParams {
                    weight: take(format!("{n}.weight"), &[spec.fan_in, c])?,
                    bias: take(format!("{n}.bias"), &[c])?,
                    norm,
                },
            );
        }
        let expected = config.layers().len();
        let known = tensors
            .keys()
            .filter(|k| !k.contains('/'))
            .count();
        let declared: usize = config
            .layers()
            .iter()
            .map(|s| if s.normalized { 6 } else { 2 })
            .sum();
        if known != declared {
            return Err(DecoderError::Shape(format!(
                "{known} decoder tensors present, {declared} expected for {expected} layers"
            )));
        }
        Ok(Self { config, layers })
    }

    /// Replaces the settings that are not recoverable from tensor shapes.
    pub fn set_scalar_settings(&mut self, leaky_slope: f64, bn_eps: f64, bn_momentum: f64) -> Result<()> {
        let config = DecoderConfig {
            leaky_slope,
            bn_eps,
            bn_momentum,
            ..self.config.clone()
        };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Trainable tensors under their leaf names.
    pub fn trainable(&self) -> BTreeMap<String, &Tensor> {
        let mut out = BTreeMap::new();
        for (name, l) in &self.layers {
            out.insert(format!("{name}.weight"), &l.weight);
            out.insert(format!("{name}.bias"), &l.bias);
            if let Some(n) = &l.norm {
                out.insert(format!("{name}.gamma"), &n.gamma);
                out.insert(format!("{name}.beta"), &n.beta);
            }
        }
        out
    }

    /// Mutable access to a trainable tensor by leaf name.
    pub fn trainable_mut(&mut self, leaf: &str) -> Option<&mut Tensor> {
        let (layer, field) = leaf.rsplit_once('.')?;
        let l = self.layers.get_mut(layer)?;
        match field {
            "weight" => Some(&mut l.weight),
            "bias" => Some(&mut l.bias),
            "gamma" => l.norm.as_mut().map(|n| &mut n.gamma),
            "beta" => l.norm.as_mut().map(|n| &mut n.beta),
            _ => None,
        }
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)], precision: Precision) {
        let m = self.config.bn_momentum;
        for (layer, s) in stats {
            let Some(norm) = self.layers.get_mut(layer).and_then(|l| l.norm.as_mut()) else {
                continue;
            };
            for (r, v) in norm.running_mean.data_mut().iter_mut().zip(&s.mean) {
                *r = precision.settle((1.0 - m) * *r + m * v);
            }
            for (r, v) in norm.running_var.data_mut().iter_mut().zip(&s.var) {
                *r = precision.settle((1.0 - m) * *r + m * v);
            }
        }
    }
}

/// One pair's input to a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DecoderInput<'a> {
    pub points: &'a [Vec3],
    pub latent: &'a [f64],
    /// Leaf name under which the latent's gradient is reported.
    pub latent_name: &'a str,
}

/// Handles into the tape for a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// `B x 3` Euler angles.
    pub rotation: NodeId,
    /// `B x 3` translations.
    pub translation: NodeId,
    /// `B x C` pooled global features.
    pub global: NodeId,
    /// Train-mode statistics per normalized layer.
    pub stats: Vec<(String, BatchStats)>,
}

/// Records the decoder for a batch of pairs on `tape`.
pub fn forward_batch(
    params: &DecoderParams,
    inputs: &[DecoderInput<'_>],
    mode: Mode,
    grads: GradTargets,
    tape: &mut Tape,
) -> Result<BatchForward> {
    let cfg = &params.config;
    if inputs.is_empty() {
        return Err(DecoderError::Shape("empty batch".into()));
    }
    let mut segments = Vec::with_capacity(inputs.len());
    let mut stacked = Vec::new();
    let mut latents = Vec::with_capacity(inputs.len());
    for inp in inputs {
        if inp.points.is_empty() {
            return Err(DecoderError::Shape("source cloud is empty".into()));
        }
        if inp.latent.len() != cfg.latent_dim {
            return Err(DecoderError::Shape(format!(
                "latent {} has dimension {}, decoder expects {}",
                inp.latent_name,
                inp.latent.len(),
                cfg.latent_dim
            )));
        }
        segments.push(inp.points.len());
        stacked.extend_from_slice(inp.points);
        let z = tape.leaf(inp.latent_name, Tensor::vector(inp.latent.to_vec()), grads.latents)?;
        latents.push(z);
    }
    let points = tape.constant(Tensor::from_points(&stacked))?;
    let mut h = tape.concat_latents(points, &latents, &segments)?;

    let mut stats = Vec::new();
    let mut run_layer = |tape: &mut Tape, name: &str, x: NodeId, activate: bool| -> Result<NodeId> {
        let layer = params
            .layers
            .get(name)
            .ok_or_else(|| DecoderError::Config(format!("missing layer {name}")))?;
        let wrap = |source: AutodiffError| match source {
            AutodiffError::NonFinite { .. } => DecoderError::NumericFailure {
                layer: name.to_string(),
                source,
            },
            other => DecoderError::Autodiff(other),
        };
        let w = tape
            .leaf(format!("{name}.weight"), layer.weight.clone(), grads.params)
            .map_err(wrap)?;
        let b = tape
            .leaf(format!("{name}.bias"), layer.bias.clone(), grads.params)
            .map_err(wrap)?;
        let mut y = tape.linear(x, w, b).map_err(wrap)?;
        if let Some(norm) = &layer.norm {
            let g = tape
                .leaf(format!("{name}.gamma"), norm.gamma.clone(), grads.params)
                .map_err(wrap)?;
            let be = tape
                .leaf(format!("{name}.beta"), norm.beta.clone(), grads.params)
                .map_err(wrap)?;
            let nm = match mode {
                Mode::Train => NormMode::Train { eps: cfg.bn_eps },
                Mode::Eval => NormMode::Eval {
                    running_mean: norm.running_mean.data(),
                    running_var: norm.running_var.data(),
                    eps: cfg.bn_eps,
                },
            };
            let (out, s) = tape.batch_norm(y, g, be, nm).map_err(wrap)?;
            y = out;
            if let Some(s) = s {
                stats.push((name.to_string(), s));
            }
        }
        if activate {
            y = tape.leaky_relu(y, cfg.leaky_slope).map_err(wrap)?;
        }
        Ok(y)
    };

    for i in 0..cfg.stage1_widths.len() {
        h = run_layer(tape, &format!("stage1.{i}"), h, true)?;
    }
    let global = tape.max_pool_segments(h, &segments).map_err(|source| DecoderError::NumericFailure {
        layer: "max_pool".into(),
        source,
    })?;
    let mut heads = [global; 2];
    for (slot, (prefix, widths)) in [("rot", &cfg.rotation_head), ("trans", &cfg.translation_head)]
        .into_iter()
        .enumerate()
    {
        let mut x = global;
        for i in 0..widths.len() {
            x = run_layer(tape, &format!("{prefix}.{i}"), x, i + 1 < widths.len())?;
        }
        heads[slot] = x;
    }
    Ok(BatchForward {
        rotation: heads[0],
        translation: heads[1],
        global,
        stats,
    })
}

/// Output of a single-pair forward pass.
#[derive(Debug)]
pub struct DecoderOutput {
    pub transform: RigidTransform,
    pub global_feature: Vec<f64>,
    pub stats: Vec<(String, BatchStats)>,
    tape: Tape,
    rotation: NodeId,
    translation: NodeId,
}

/// Leaf name of the latent in single-pair passes.
pub const LATENT_LEAF: &str = "z";

/// Decodes one source cloud and latent into a rigid transform, keeping the
/// tape for a later [`DecoderOutput::backward`].
pub fn forward(
    params: &DecoderParams,
    source: &PointCloud,
    latent: &[f64],
    mode: Mode,
    precision: Precision,
) -> Result<DecoderOutput> {
    let mut tape = Tape::new(precision);
    let input = DecoderInput {
        points: source.points(),
        latent,
        latent_name: LATENT_LEAF,
    };
    let out = forward_batch(params, &[input], mode, GradTargets::ALL, &mut tape)?;
    let a = tape.value(out.rotation).data();
    let t = tape.value(out.translation).data();
    let transform = RigidTransform::new([a[0], a[1], a[2]], [t[0], t[1], t[2]])
        .map_err(|e| DecoderError::Shape(e.to_string()))?;
    let global_feature = tape.value(out.global).data().to_vec();
    Ok(DecoderOutput {
        transform,
        global_feature,
        stats: out.stats,
        tape,
        rotation: out.rotation,
        translation: out.translation,
    })
}

impl DecoderOutput {
    /// Gradients of every parameter leaf and of the latent (`"z"`), given the
    /// loss gradient with respect to `[ax, ay, az, tx, ty, tz]`.
    pub fn backward(&mut self, upstream: &[f64; 6]) -> Result<Gradients> {
        let seeds = vec![
            (self.rotation, Tensor::new(vec![1, 3], upstream[..3].to_vec())?),
            (self.translation, Tensor::new(vec![1, 3], upstream[3..].to_vec())?),
        ];
        Ok(self.tape.backward_multi(seeds)?)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}
