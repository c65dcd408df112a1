use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{fd_check, AutodiffError, FdError, FdReport, Precision, Tape, Tensor};
use crate::decoder::{self, DecoderConfig, DecoderInput, DecoderParams, GradTargets, Mode};
use crate::loss::{self, ChamferConfig};

/// Size of the audited graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSpec {
    pub pairs: usize,
    pub points: usize,
    pub decoder: DecoderConfig,
    pub seed: u64,
    pub eps: f64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            pairs: 3,
            points: 16,
            decoder: DecoderConfig {
                latent_dim: 8,
                stage1_widths: vec![32, 16],
                rotation_head: vec![16, 8, 3],
                translation_head: vec![16, 8, 3],
                ..DecoderConfig::default()
            },
            seed: 0,
            eps: 1e-6,
        }
    }
}

fn to_decoder_err(e: decoder::DecoderError) -> AutodiffError {
    match e {
        decoder::DecoderError::Autodiff(a) | decoder::DecoderError::NumericFailure { source: a, .. } => a,
        other => AutodiffError::InvalidArgument(other.to_string()),
    }
}

/// Central-difference audit of every decoder weight and latent through the
/// train-mode decoder, the rigid transform and the batch-mean Chamfer loss.
pub fn gradcheck(spec: &GradcheckSpec) -> Result<FdReport, FdError> {
    let params = decoder::init_params(&spec.decoder, spec.seed)
        .map_err(|e| FdError::Eval(to_decoder_err(e)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut cloud = |n: usize| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect()
    };
    let sources: Vec<_> = (0..spec.pairs).map(|_| cloud(spec.points)).collect();
    let targets: Vec<_> = (0..spec.pairs).map(|_| cloud(spec.points)).collect();

    let mut leaves: BTreeMap<String, Tensor> = params
        .trainable()
        .into_iter()
        .map(|(k, v)| (k, v.clone()))
        .collect();
    let latent_names: Vec<String> = (0..spec.pairs).map(|i| format!("latent/{i}")).collect();
    for name in &latent_names {
        let z = (0..spec.decoder.latent_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        leaves.insert(name.clone(), Tensor::vector(z));
    }

    let cfg = ChamferConfig::default();
    let eval = |leaves: &BTreeMap<String, Tensor>| -> Result<(f64, BTreeMap<String, Tensor>), AutodiffError> {
        let mut p: DecoderParams = params.clone();
        for (k, v) in leaves {
            if let Some(t) = p.trainable_mut(k) {
                *t = v.clone();
            }
        }
        let mut tape = Tape::new(Precision::Double);
        let inputs: Vec<DecoderInput<'_>> = (0..spec.pairs)
            .map(|i| DecoderInput {
                points: &sources[i],
                latent: leaves[&latent_names[i]].data(),
                latent_name: &latent_names[i],
            })
            .collect();
        let fwd = decoder::forward_batch(&p, &inputs, Mode::Train, GradTargets::ALL, &mut tape)
            .map_err(to_decoder_err)?;
        let mut losses = Vec::new();
        for (i, target) in targets.iter().enumerate() {
            let rot = tape.row(fwd.rotation, i)?;
            let trans = tape.row(fwd.translation, i)?;
            let src = tape.constant(Tensor::from_points(&sources[i]))?;
            let moved = tape.transform_points(rot, trans, src)?;
            losses.push(loss::chamfer_on_tape(&mut tape, moved, target, &cfg)?);
        }
        let w = vec![1.0 / spec.pairs as f64; spec.pairs];
        let total = tape.weighted_sum(&losses, &w)?;
        let value = tape.value(total).data()[0];
        let grads = tape.backward(total, Tensor::scalar(1.0))?;
        Ok((value, grads))
    };
    fd_check(eval, &leaves, spec.eps)
}
