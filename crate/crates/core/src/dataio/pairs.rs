use super::noise::{corrupt, CorruptionOptions, NoiseSpec};
use super::Result;
use crate::geometry::{apply_transform, center_and_rescale, PointCloud, RigidTransform, TransformSampler};
use crate::optimizer::TrainPair;

/// A source/target pair with the transform that produced the target.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub id: String,
    pub source: PointCloud,
    pub target: PointCloud,
    pub ground_truth: RigidTransform,
}

impl RegistrationPair {
    /// The view handed to training, without the ground truth.
    pub fn train_pair(&self) -> TrainPair {
        TrainPair {
            id: self.id.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
        }
    }
}

/// One pair per shape: the shape is normalized, a transform is drawn from
/// `sampler`, and the target is the transformed copy, corrupted if `noise`
/// is given.
pub fn make_pairs(
    shapes: &[PointCloud],
    sampler: &mut TransformSampler,
    noise: Option<(&NoiseSpec, &CorruptionOptions)>,
    seed: u64,
) -> Result<Vec<RegistrationPair>> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let source = center_and_rescale(shape);
            let gt = sampler.sample();
            let moved = apply_transform(&gt, &source);
            let target = match noise {
                Some((spec, opts)) => corrupt(&moved, spec, opts, seed.wrapping_add(i as u64))?,
                None => moved,
            };
            Ok(RegistrationPair {
                id: format!("{i:05}-{}", shape.id()),
                source,
                target,
                ground_truth: gt,
            })
        })
        .collect()
}
