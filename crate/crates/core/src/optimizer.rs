//! Adam, the per-pair latent bank, joint training of decoder and latents, and
//! latent-only optimization at test time.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Precision, Tape, Tensor};
use crate::decoder::{self, DecoderConfig, DecoderError, DecoderInput, DecoderParams, GradTargets, Mode};
use crate::geometry::{GeometryError, PointCloud, RigidTransform};
use crate::loss::{self, ChamferConfig};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("poisoned update: non-finite gradient for leaf {leaf}")]
    PoisonedUpdate { leaf: String },
    #[error("gradient for leaf {leaf} has {got} entries, leaf has {expected}")]
    ShapeMismatch { leaf: String, expected: usize, got: usize },
    #[error("training diverged: {0}")]
    Diverged(Box<DivergenceSnapshot>),
    #[error("unknown pair id {0}")]
    UnknownPair(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// State captured when a run stops on a non-finite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSnapshot {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub last_finite_loss: Option<f64>,
    pub history: Vec<f64>,
}

impl std::fmt::Display for DivergenceSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch {} step {} lr {:e}, last finite loss {:?}",
            self.epoch, self.step, self.lr, self.last_finite_loss
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a set of named leaves.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

/// One leaf handed to [`AdamState::step`].
pub struct LeafUpdate<'a> {
    pub name: &'a str,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self, leaf: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(leaf).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One bias-corrected Adam update over all `leaves`. Nothing is modified
    /// if any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, leaves: &mut [LeafUpdate<'_>], lr: f64) -> Result<()> {
        for l in leaves.iter() {
            if l.grad.len() != l.values.len() {
                return Err(OptimError::ShapeMismatch {
                    leaf: l.name.to_string(),
                    expected: l.values.len(),
                    got: l.grad.len(),
                });
            }
            if l.grad.iter().any(|g| !g.is_finite()) {
                return Err(OptimError::PoisonedUpdate {
                    leaf: l.name.to_string(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for l in leaves.iter_mut() {
            let (m, v) = self
                .moments
                .entry(l.name.to_string())
                .or_insert_with(|| (vec![0.0; l.values.len()], vec![0.0; l.values.len()]));
            for i in 0..l.values.len() {
                let g = l.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                l.values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr(epoch) = base * decay^epoch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 0.001,
            decay: 0.995,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let mut lr = self.base;
        for _ in 0..epoch {
            lr *= self.decay;
        }
        lr
    }
}

/// A pair's latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct ScrLatent {
    pub pair_id: String,
    pub values: Vec<f64>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Standard-normal latent, a pure function of `(seed, pair_id)`. Entries are
/// drawn in single precision.
pub fn init_latent(pair_id: &str, latent_dim: usize, seed: u64) -> Result<ScrLatent> {
    if latent_dim == 0 {
        return Err(OptimError::Config("latent_dim must be at least 1".into()));
    }
    let mix = fnv1a(pair_id.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let values = (0..latent_dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32 as f64
        })
        .collect();
    Ok(ScrLatent {
        pair_id: pair_id.to_string(),
        values,
    })
}

/// One latent and its optimizer state per training pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentBank {
    entries: BTreeMap<String, (ScrLatent, AdamState)>,
}

impl LatentBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, latent: ScrLatent, state: AdamState) {
        self.entries.insert(latent.pair_id.clone(), (latent, state));
    }

    pub fn get(&self, pair_id: &str) -> Option<&ScrLatent> {
        self.entries.get(pair_id).map(|(l, _)| l)
    }

    pub fn state(&self, pair_id: &str) -> Option<&AdamState> {
        self.entries.get(pair_id).map(|(_, s)| s)
    }

    fn get_mut(&mut self, pair_id: &str) -> Result<&mut (ScrLatent, AdamState)> {
        self.entries
            .get_mut(pair_id)
            .ok_or_else(|| OptimError::UnknownPair(pair_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScrLatent> {
        self.entries.values().map(|(l, _)| l)
    }
}

/// A training pair. Ground truth is deliberately absent.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub id: String,
    pub source: PointCloud,
    pub target: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub decoder: DecoderConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub chamfer: ChamferConfig,
    pub precision: Precision,
    pub init_seed: u64,
    pub latent_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            batch_size: 128,
            epochs: 100,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            chamfer: ChamferConfig::default(),
            precision: Precision::Single,
            init_seed: 0,
            latent_seed: 1,
            shuffle_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean Chamfer loss over all pairs seen in the epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DecoderParams,
    pub bank: LatentBank,
    pub history: Vec<EpochRecord>,
}

/// Splits shuffled indices into batches; a trailing singleton joins the
/// previous batch so train-mode batch norm always sees two or more pairs.
fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Joint optimization of decoder weights and per-pair latents.
pub fn train(
    config: &TrainConfig,
    pairs: &[TrainPair],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let params = decoder::init_params(&config.decoder, config.init_seed)?;
    train_from(config, params, pairs, on_epoch)
}

/// [`train`] starting from given decoder parameters.
pub fn train_from(
    config: &TrainConfig,
    mut params: DecoderParams,
    pairs: &[TrainPair],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if config.batch_size == 0 {
        return Err(OptimError::Config("batch size must be at least 1".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.id.as_str())) {
        return Err(OptimError::Config(format!("duplicate pair id {}", dup.id)));
    }
    let dim = params.config().latent_dim;
    let mut bank = LatentBank::new();
    for p in pairs {
        bank.insert(init_latent(&p.id, dim, config.latent_seed)?, AdamState::new(config.adam));
    }
    let mut theta_state = AdamState::new(config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let lr = config.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in batches(&order, config.batch_size) {
            let losses = train_batch(config, &mut params, &mut theta_state, &mut bank, pairs, &batch, lr)
                .map_err(|e| match e {
                    OptimError::Autodiff(AutodiffError::NonFinite { .. })
                    | OptimError::Decoder(DecoderError::NumericFailure { .. })
                    | OptimError::PoisonedUpdate { .. } => OptimError::Diverged(Box::new(DivergenceSnapshot {
                        epoch,
                        step,
                        lr,
                        last_finite_loss: history.last().map(|r: &EpochRecord| r.mean_loss),
                        history: history.iter().map(|r| r.mean_loss).collect(),
                    })),
                    other => other,
                })?;
            loss_sum += losses.iter().sum::<f64>();
            step += 1;
        }
        let mean_loss = loss_sum / pairs.len().max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(OptimError::Diverged(Box::new(DivergenceSnapshot {
                epoch,
                step,
                lr,
                last_finite_loss: history.last().map(|r| r.mean_loss),
                history: history.iter().map(|r| r.mean_loss).collect(),
            })));
        }
        let record = EpochRecord { epoch, lr, mean_loss };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, bank, history })
}

fn latent_leaf(id: &str) -> String {
    format!("latent/{id}")
}

/// Forward, backward and update for one batch; returns per-pair losses.
fn train_batch(
    config: &TrainConfig,
    params: &mut DecoderParams,
    theta_state: &mut AdamState,
    bank: &mut LatentBank,
    pairs: &[TrainPair],
    batch: &[usize],
    lr: f64,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new(config.precision);
    let names: Vec<String> = batch.iter().map(|&i| latent_leaf(&pairs[i].id)).collect();
    let latents: Vec<Vec<f64>> = batch
        .iter()
        .map(|&i| bank.get(&pairs[i].id).map(|l| l.values.clone()))
        .collect::<Option<_>>()
        .ok_or_else(|| OptimError::UnknownPair("batch member missing from bank".into()))?;
    let inputs: Vec<DecoderInput<'_>> = batch
        .iter()
        .zip(&latents)
        .zip(&names)
        .map(|((&i, z), name)| DecoderInput {
            points: pairs[i].source.points(),
            latent: z,
            latent_name: name,
        })
        .collect();
    let fwd = decoder::forward_batch(params, &inputs, Mode::Train, GradTargets::ALL, &mut tape)?;

    let mut loss_nodes = Vec::with_capacity(batch.len());
    for (b, &i) in batch.iter().enumerate() {
        let rot = tape.row(fwd.rotation, b)?;
        let trans = tape.row(fwd.translation, b)?;
        let src = tape.constant(Tensor::from_points(pairs[i].source.points()))?;
        let moved = tape.transform_points(rot, trans, src)?;
        loss_nodes.push(loss::chamfer_on_tape(&mut tape, moved, pairs[i].target.points(), &config.chamfer)?);
    }
    let losses: Vec<f64> = loss_nodes.iter().map(|n| tape.value(*n).data()[0]).collect();
    let weights = vec![1.0 / batch.len() as f64; batch.len()];
    let total = tape.weighted_sum(&loss_nodes, &weights)?;
    let grads = tape.backward(total, Tensor::scalar(1.0))?;

    let precision = config.precision;
    let leaf_names: Vec<String> = params.trainable().keys().cloned().collect();
    {
        let mut values: Vec<(String, Tensor)> = leaf_names
            .iter()
            .map(|n| (n.clone(), params.trainable()[n].clone()))
            .collect();
        let mut updates: Vec<LeafUpdate<'_>> = values
            .iter_mut()
            .map(|(n, t)| LeafUpdate {
                name: n,
                values: t.data_mut(),
                grad: grads[n.as_str()].data(),
            })
            .collect();
        theta_state.step(&mut updates, lr)?;
        drop(updates);
        for (n, t) in values {
            let dst = params.trainable_mut(&n).expect("leaf names come from params");
            for (d, s) in dst.data_mut().iter_mut().zip(t.data()) {
                *d = precision.settle(*s);
            }
        }
    }
    params.update_running_stats(&fwd.stats, precision);

    for (&i, name) in batch.iter().zip(&names) {
        let (latent, state) = bank.get_mut(&pairs[i].id)?;
        let mut upd = [LeafUpdate {
            name: "z",
            values: &mut latent.values,
            grad: grads[name.as_str()].data(),
        }];
        state.step(&mut upd, lr)?;
        latent.values.iter_mut().for_each(|v| *v = precision.settle(*v));
    }
    Ok(losses)
}

/// Budget and stopping rule shared by every test-time optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTimeConfig {
    /// Adam steps per restart.
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    /// Stop when the relative loss improvement over `early_stop_window` steps
    /// drops below this.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    pub adam: AdamConfig,
    pub chamfer: ChamferConfig,
    pub seed: u64,
}

impl Default for TestTimeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.001,
            restarts: 1,
            early_stop_tol: 1e-6,
            early_stop_window: 25,
            adam: AdamConfig::default(),
            chamfer: ChamferConfig::default(),
            seed: 0,
        }
    }
}

/// Loss at every evaluated iterate, starting with the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub losses: Vec<f64>,
    pub best_index: usize,
}

impl LossTrace {
    pub fn best_loss(&self) -> f64 {
        self.losses[self.best_index]
    }

    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }
}

/// Result of a test-time optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTimeOutcome {
    /// Transform at the best-loss iterate.
    pub transform: RigidTransform,
    /// Optimized variables at the best-loss iterate (latent or raw transform).
    pub variables: Vec<f64>,
    /// Trace of the restart that produced the result.
    pub trace: LossTrace,
    pub restart: usize,
}

/// Adam on `init` under `eval`, tracking the best iterate. Shared by
/// [`infer_scr`] and the direct-optimization baseline.
pub(crate) fn optimize_variables<F>(cfg: &TestTimeConfig, init: Vec<f64>, mut eval: F) -> Result<(Vec<f64>, LossTrace)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = init;
    let mut best = x.clone();
    let mut state = AdamState::new(cfg.adam);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut best_index = 0;
    for k in 0..=cfg.steps {
        let (loss, grad) = eval(&x)?;
        if !loss.is_finite() {
            return Err(OptimError::Diverged(Box::new(DivergenceSnapshot {
                epoch: 0,
                step: k,
                lr: cfg.lr,
                last_finite_loss: losses.last().copied(),
                history: losses,
            })));
        }
        losses.push(loss);
        if loss < losses[best_index] {
            best_index = k;
            best.clone_from(&x);
        }
        if k == cfg.steps {
            break;
        }
        let w = cfg.early_stop_window;
        if w > 0 && k >= w {
            let before = losses[k - w];
            let rel = (before - loss) / before.abs().max(f64::MIN_POSITIVE);
            if rel < cfg.early_stop_tol {
                break;
            }
        }
        state.step(
            &mut [LeafUpdate {
                name: "x",
                values: &mut x,
                grad: &grad,
            }],
            cfg.lr,
        )?;
    }
    Ok((best, LossTrace { losses, best_index }))
}

/// Chamfer loss of the decoded transform and its gradient in the latent, with
/// the decoder frozen in eval mode.
pub fn latent_loss_and_grad(
    params: &DecoderParams,
    source: &PointCloud,
    target: &PointCloud,
    latent: &[f64],
    chamfer: &ChamferConfig,
) -> Result<(f64, Vec<f64>, RigidTransform)> {
    let mut tape = Tape::new(Precision::Double);
    let input = DecoderInput {
        points: source.points(),
        latent,
        latent_name: decoder::LATENT_LEAF,
    };
    let fwd = decoder::forward_batch(params, &[input], Mode::Eval, GradTargets::LATENTS, &mut tape)?;
    let rot = tape.row(fwd.rotation, 0)?;
    let trans = tape.row(fwd.translation, 0)?;
    let phi = RigidTransform::new(
        tape.value(rot).data().try_into().expect("3 angles"),
        tape.value(trans).data().try_into().expect("3 offsets"),
    )?;
    let src = tape.constant(Tensor::from_points(source.points()))?;
    let moved = tape.transform_points(rot, trans, src)?;
    let loss_node = loss::chamfer_on_tape(&mut tape, moved, target.points(), chamfer)?;
    let loss = tape.value(loss_node).data()[0];
    let grads = tape.backward(loss_node, Tensor::scalar(1.0))?;
    Ok((loss, grads[decoder::LATENT_LEAF].data().to_vec(), phi))
}

/// Decodes the transform for a latent with the decoder in eval mode.
pub fn decode_transform(params: &DecoderParams, source: &PointCloud, latent: &[f64]) -> Result<RigidTransform> {
    Ok(decoder::forward(params, source, latent, Mode::Eval, Precision::Double)?.transform)
}

/// Registers `source` to `target` by optimizing a fresh latent against the
/// frozen decoder. With several restarts the lowest final loss wins.
pub fn infer_scr(
    params: &DecoderParams,
    source: &PointCloud,
    target: &PointCloud,
    pair_id: &str,
    cfg: &TestTimeConfig,
) -> Result<TestTimeOutcome> {
    if cfg.restarts == 0 {
        return Err(OptimError::Config("restarts must be at least 1".into()));
    }
    let dim = params.config().latent_dim;
    let mut best: Option<TestTimeOutcome> = None;
    for r in 0..cfg.restarts {
        let z0 = init_latent(pair_id, dim, cfg.seed.wrapping_add(r as u64))?;
        let (z, trace) = optimize_variables(cfg, z0.values, |z| {
            let (l, g, _) = latent_loss_and_grad(params, source, target, z, &cfg.chamfer)?;
            Ok((l, g))
        })?;
        let better = best
            .as_ref()
            .is_none_or(|b| trace.best_loss() < b.trace.best_loss());
        if better {
            let transform = decode_transform(params, source, &z)?;
            best = Some(TestTimeOutcome {
                transform,
                variables: z,
                trace,
                restart: r,
            });
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = AdamState::new(AdamConfig::default());
        let mut v = vec![1.0, -2.0];
        s.step(
            &mut [LeafUpdate {
                name: "a",
                values: &mut v,
                grad: &[0.0, 0.0],
            }],
            0.1,
        )
        .unwrap();
        assert_eq!(v, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut s = AdamState::new(AdamConfig::default());
        let mut v = vec![0.0];
        s.step(
            &mut [LeafUpdate {
                name: "a",
                values: &mut v,
                grad: &[1.0],
            }],
            0.001,
        )
        .unwrap();
        assert!((v[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_is_poisoned() {
        let mut s = AdamState::new(AdamConfig::default());
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let err = s
            .step(
                &mut [
                    LeafUpdate {
                        name: "a",
                        values: &mut a,
                        grad: &[1.0],
                    },
                    LeafUpdate {
                        name: "b",
                        values: &mut b,
                        grad: &[f64::NAN],
                    },
                ],
                0.1,
            )
            .unwrap_err();
        assert!(matches!(err, OptimError::PoisonedUpdate { leaf } if leaf == "b"));
        assert_eq!((a[0], s.step), (0.0, 0));
    }

    #[test]
    fn schedule_ratio() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 0.001);
        for e in 0..50 {
            let r = s.lr(e + 1) / s.lr(e);
            assert!((r - 0.995).abs() <= 2.0 * f64::EPSILON);
        }
    }

    #[test]
    fn latent_init_is_deterministic() {
        let a = init_latent("p1", 2048, 4).unwrap();
        assert_eq!(a.values.len(), 2048);
        assert_eq!(a, init_latent("p1", 2048, 4).unwrap());
        assert_ne!(a.values, init_latent("p2", 2048, 4).unwrap().values);
        assert!(init_latent("p", 0, 0).is_err());
    }

    #[test]
    fn latent_moments_are_standard_normal() {
        let mut all = Vec::with_capacity(100_000);
        for i in 0..50 {
            all.extend(init_latent(&format!("pair-{i}"), 2000, 9).unwrap().values);
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }

    #[test]
    fn batching_folds_trailing_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(batches(&[0], 4), vec![vec![0]]);
    }

    #[test]
    fn bank_lookup_does_not_create() {
        let mut bank = LatentBank::new();
        assert!(bank.get("x").is_none());
        assert!(bank.get_mut("x").is_err());
        assert!(bank.is_empty());
    }
}
