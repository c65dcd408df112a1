//! Chamfer alignment loss and the nearest-neighbor search beneath it.

use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::geometry::{dist2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Nearest reference point for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

/// Reference sets at or below this size are searched by brute force.
const BRUTE_FORCE_MAX: usize = 32;
const LEAF_SIZE: usize = 8;

/// Exact nearest neighbors by double loop; ties go to the lowest index.
pub fn nearest_neighbor_brute(query: &[Vec3], reference: &[Vec3]) -> Result<Vec<Neighbor>> {
    if reference.is_empty() {
        return Err(LossError::InvalidArgument("reference set is empty".into()));
    }
    Ok(query.iter().map(|q| brute_one(q, reference)).collect())
}

fn brute_one(q: &Vec3, reference: &[Vec3]) -> Neighbor {
    let mut best = Neighbor {
        index: 0,
        dist2: dist2(q, &reference[0]),
    };
    for (i, r) in reference.iter().enumerate().skip(1) {
        let d = dist2(q, r);
        if d < best.dist2 {
            best = Neighbor { index: i, dist2: d };
        }
    }
    best
}

/// Exact nearest neighbors; uses a k-d tree for larger reference sets.
/// Results are identical to [`nearest_neighbor_brute`], including tie-breaking.
pub fn nearest_neighbor(query: &[Vec3], reference: &[Vec3]) -> Result<Vec<Neighbor>> {
    if reference.len() <= BRUTE_FORCE_MAX {
        return nearest_neighbor_brute(query, reference);
    }
    let tree = KdTree::build(reference)?;
    Ok(query.iter().map(|q| tree.nearest(q)).collect())
}

#[derive(Debug)]
enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static 3-d tree over a borrowed point set.
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(LossError::InvalidArgument("reference set is empty".into()));
        }
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        // Split the widest axis at the median.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn nearest(&self, q: &Vec3) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.search(0, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut Neighbor) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if d < best.dist2 || (d == best.dist2 && i < best.index) {
                        *best = Neighbor { index: i, dist2: d };
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for tie-breaking.
                if diff * diff <= best.dist2 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Sum of squared distances in each direction.
    #[default]
    Sum,
    /// Each directed sum divided by its point count.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChamferConfig {
    /// Per-point cap on squared distance; capped terms carry no gradient.
    pub clip: Option<f64>,
    pub reduction: Reduction,
}

impl ChamferConfig {
    /// Clip threshold used for incompleteness and outlier experiments.
    pub const ROBUST_CLIP: f64 = 0.1;

    pub fn validate(&self) -> Result<()> {
        match self.clip {
            Some(c) if !(c > 0.0 && c.is_finite()) => Err(LossError::InvalidArgument(format!(
                "clip must be positive, got {c}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Symmetric Chamfer distance between `a` and `b`.
pub fn chamfer(a: &[Vec3], b: &[Vec3], cfg: &ChamferConfig) -> Result<f64> {
    chamfer_with_grad(a, b, cfg).map(|(v, _)| v)
}

/// Chamfer distance and its gradient with respect to the points of `a`.
/// Matched indices are treated as locally constant.
pub fn chamfer_with_grad(a: &[Vec3], b: &[Vec3], cfg: &ChamferConfig) -> Result<(f64, Vec<Vec3>)> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(LossError::InvalidArgument("Chamfer distance of an empty cloud".into()));
    }
    let (wa, wb) = match cfg.reduction {
        Reduction::Sum => (1.0, 1.0),
        Reduction::Mean => (1.0 / a.len() as f64, 1.0 / b.len() as f64),
    };
    let clip = cfg.clip.unwrap_or(f64::INFINITY);
    let mut grad = vec![[0.0; 3]; a.len()];

    let mut forward = 0.0;
    for (i, nb) in nearest_neighbor(a, b)?.into_iter().enumerate() {
        if nb.dist2 > clip {
            forward += clip;
            continue;
        }
        forward += nb.dist2;
        let y = &b[nb.index];
        for k in 0..3 {
            grad[i][k] += 2.0 * wa * (a[i][k] - y[k]);
        }
    }
    let mut backward = 0.0;
    for (j, nb) in nearest_neighbor(b, a)?.into_iter().enumerate() {
        if nb.dist2 > clip {
            backward += clip;
            continue;
        }
        backward += nb.dist2;
        let x = &a[nb.index];
        for k in 0..3 {
            grad[nb.index][k] += 2.0 * wb * (x[k] - b[j][k]);
        }
    }
    Ok((wa * forward + wb * backward, grad))
}

/// Records `chamfer(points, target)` on a tape, differentiable in `points`.
pub fn chamfer_on_tape(
    tape: &mut Tape,
    points: NodeId,
    target: &[Vec3],
    cfg: &ChamferConfig,
) -> std::result::Result<NodeId, AutodiffError> {
    let a = tape.value(points).to_points();
    let (value, grad) = chamfer_with_grad(&a, target, cfg)
        .map_err(|e| AutodiffError::InvalidArgument(e.to_string()))?;
    let flat = grad.into_iter().flatten().collect();
    tape.record_scalar(points, value, flat, "chamfer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn self_query_maps_to_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = cloud(&mut rng, 200);
        for (i, nb) in nearest_neighbor(&pts, &pts).unwrap().iter().enumerate() {
            assert_eq!((nb.index, nb.dist2), (i, 0.0));
        }
    }

    #[test]
    fn hand_case() {
        let nb = nearest_neighbor(&[[0.0; 3]], &[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap();
        assert_eq!(nb, vec![Neighbor { index: 0, dist2: 1.0 }]);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(nearest_neighbor(&[[0.0; 3]], &[]).is_err());
        assert!(chamfer(&[], &[[0.0; 3]], &ChamferConfig::default()).is_err());
    }

    #[test]
    fn kd_tree_agrees_with_brute_force_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = cloud(&mut rng, 512);
        let q = cloud(&mut rng, 512);
        assert_eq!(nearest_neighbor(&q, &pts).unwrap(), nearest_neighbor_brute(&q, &pts).unwrap());

        // Integer lattice with duplicates: many exact ties.
        let lattice: Vec<Vec3> = (0..300)
            .map(|i| [(i % 5) as f64, ((i / 5) % 4) as f64, (i % 3) as f64])
            .collect();
        let queries: Vec<Vec3> = (0..100)
            .map(|i| [(i % 7) as f64 * 0.5, (i % 3) as f64 * 0.5, (i % 4) as f64 * 0.5])
            .collect();
        assert_eq!(
            nearest_neighbor(&queries, &lattice).unwrap(),
            nearest_neighbor_brute(&queries, &lattice).unwrap()
        );
    }

    #[test]
    fn chamfer_hand_values() {
        let cfg = ChamferConfig::default();
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]], &cfg).unwrap(), 2.0);
        let clipped = ChamferConfig {
            clip: Some(0.1),
            ..Default::default()
        };
        let (v, g) = chamfer_with_grad(&[[0.0; 3]], &[[1.0, 0.0, 0.0]], &clipped).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        assert_eq!(g, vec![[0.0; 3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = cloud(&mut rng, 40);
        assert_eq!(chamfer(&a, &a, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn mean_reduction_divides_each_direction() {
        let a = [[0.0; 3], [0.0; 3]];
        let b = [[1.0, 0.0, 0.0]];
        let cfg = ChamferConfig {
            reduction: Reduction::Mean,
            ..Default::default()
        };
        assert_eq!(chamfer(&a, &b, &cfg).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &b, &ChamferConfig::default()).unwrap(), 3.0);
    }

    #[test]
    fn invalid_clip_rejected() {
        let cfg = ChamferConfig {
            clip: Some(0.0),
            ..Default::default()
        };
        assert!(chamfer(&[[0.0; 3]], &[[0.0; 3]], &cfg).is_err());
    }
}
