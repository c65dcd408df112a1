//! Closed-form Kabsch alignment, point-to-point ICP, and direct gradient
//! descent on the six transform parameters.

use thiserror::Error;

use crate::autodiff::{Precision, Tape, Tensor};
use crate::geometry::{
    self, cross, dot, mat_vec, norm, sub, Mat3, PointCloud, RigidTransform, Vec3,
};
use crate::loss::{self, ChamferConfig, LossError};
use crate::optimizer::{self, OptimError, TestTimeConfig, TestTimeOutcome};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Second singular value below this fraction of the first means the
/// correspondences span less than a plane.
const RANK_TOL: f64 = 1e-10;

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; eigenvectors are the matching columns.
pub fn symmetric_eigen(a: &Mat3) -> ([f64; 3], Mat3) {
    let mut m = *a;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..64 {
        let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        if off.sqrt() <= f64::EPSILON * f64::EPSILON * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[p][q] == 0.0 {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let mkp = m[k][p];
                let mkq = m[k][q];
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let mpk = m[p][k];
                let mqk = m[q][k];
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let vals = order.map(|i| m[i][i]);
    let mut vecs = [[0.0; 3]; 3];
    for (col, &i) in order.iter().enumerate() {
        for r in 0..3 {
            vecs[r][col] = v[r][i];
        }
    }
    (vals, vecs)
}

fn column(m: &Mat3, c: usize) -> Vec3 {
    [m[0][c], m[1][c], m[2][c]]
}

fn scale(v: &Vec3, s: f64) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Least-squares rigid transform taking `source[i]` onto `target[j]` for each
/// `(i, j)` in `pairs`.
pub fn kabsch(source: &[Vec3], target: &[Vec3], pairs: &[(usize, usize)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(BaselineError::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            pairs.len()
        )));
    }
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= source.len() || *j >= target.len()) {
        return Err(BaselineError::InvalidArgument(format!(
            "correspondence ({i}, {j}) out of range"
        )));
    }
    let n = pairs.len() as f64;
    let mut cs = [0.0; 3];
    let mut ct = [0.0; 3];
    for &(i, j) in pairs {
        for k in 0..3 {
            cs[k] += source[i][k];
            ct[k] += target[j][k];
        }
    }
    cs = scale(&cs, 1.0 / n);
    ct = scale(&ct, 1.0 / n);

    // h = Σ a bᵀ with a, b the centered source and target points
    let mut h = [[0.0; 3]; 3];
    for &(i, j) in pairs {
        let a = sub(source[i], cs);
        let b = sub(target[j], ct);
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] += a[r] * b[c];
            }
        }
    }
    let hth = geometry::mat_mul(&geometry::transpose(&h), &h);
    let (_, v) = symmetric_eigen(&hth);
    let v1 = column(&v, 0);
    let v2 = column(&v, 1);
    let hv1 = mat_vec(&h, &v1);
    let sigma1 = norm(&hv1);
    let mut hv2 = mat_vec(&h, &v2);
    if sigma1 == 0.0 || !sigma1.is_finite() {
        return Err(BaselineError::Degenerate("correspondences collapse to a point".into()));
    }
    let u1 = scale(&hv1, 1.0 / sigma1);
    let proj = dot(&hv2, &u1);
    hv2 = sub(hv2, scale(&u1, proj));
    let sigma2 = norm(&hv2);
    if sigma2 <= RANK_TOL * sigma1 {
        return Err(BaselineError::Degenerate("correspondences are collinear".into()));
    }
    let u2 = scale(&hv2, 1.0 / sigma2);
    let u3 = cross(&u1, &u2);
    let u = [
        [u1[0], u2[0], u3[0]],
        [u1[1], u2[1], u3[1]],
        [u1[2], u2[2], u3[2]],
    ];
    let d = geometry::det(&v).signum();
    let vd = [
        [v[0][0], v[0][1], d * v[0][2]],
        [v[1][0], v[1][1], d * v[1][2]],
        [v[2][0], v[2][1], d * v[2][2]],
    ];
    let r = geometry::mat_mul(&vd, &geometry::transpose(&u));
    let t = sub(ct, mat_vec(&r, &cs));
    Ok(RigidTransform::from_matrix(&r, t)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the largest change in rotation-matrix entries or translation
    /// falls below this.
    pub tolerance: f64,
    pub initial: RigidTransform,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            initial: RigidTransform::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpIteration {
    /// Mean squared distance between the correspondences chosen in this
    /// iteration, before the update.
    pub matched_before: f64,
    /// Same correspondences after the update.
    pub matched_after: f64,
    /// Chamfer distance after the update.
    pub chamfer: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome {
    pub transform: RigidTransform,
    pub trace: Vec<IcpIteration>,
    pub converged: bool,
}

fn transform_delta(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let ma = a.matrix();
    let mb = b.matrix();
    let mut d: f64 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            d = d.max((ma[r][c] - mb[r][c]).abs());
        }
        d = d.max((a.translation[r] - b.translation[r]).abs());
    }
    d
}

fn matched_error(t: &RigidTransform, source: &[Vec3], target: &[Vec3], pairs: &[(usize, usize)]) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| geometry::dist2(&t.apply_point(&source[i]), &target[j]))
        .sum();
    sum / pairs.len() as f64
}

/// Point-to-point ICP with source→target nearest-neighbor correspondences.
pub fn icp(source: &PointCloud, target: &PointCloud, cfg: &IcpConfig) -> Result<IcpOutcome> {
    if cfg.max_iterations == 0 {
        return Err(BaselineError::InvalidArgument("max_iterations must be at least 1".into()));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(BaselineError::InvalidArgument("tolerance must be non-negative".into()));
    }
    let src = source.points();
    let tgt = target.points();
    let tree = loss::KdTree::build(tgt)?;
    let chamfer_cfg = ChamferConfig::default();
    let mut t = cfg.initial;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let pairs: Vec<(usize, usize)> = src
            .iter()
            .enumerate()
            .map(|(i, p)| (i, tree.nearest(&t.apply_point(p)).index))
            .collect();
        let before = matched_error(&t, src, tgt, &pairs);
        let next = kabsch(src, tgt, &pairs)?;
        let after = matched_error(&next, src, tgt, &pairs);
        let moved: Vec<Vec3> = src.iter().map(|p| next.apply_point(p)).collect();
        let chamfer = loss::chamfer(&moved, tgt, &chamfer_cfg)?;
        let delta = transform_delta(&t, &next);
        t = next;
        trace.push(IcpIteration {
            matched_before: before,
            matched_after: after,
            chamfer,
            delta,
        });
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(IcpOutcome {
        transform: t,
        trace,
        converged,
    })
}

/// Chamfer loss of `apply(φ, source)` against `target` and its gradient in
/// the six parameters of φ.
pub fn transform_loss_and_grad(
    source: &PointCloud,
    target: &PointCloud,
    params: &[f64],
    chamfer: &ChamferConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new(Precision::Double);
    let map_err = |e: crate::autodiff::AutodiffError| BaselineError::Optim(e.into());
    let angles = tape.leaf("angles", Tensor::vector(params[..3].to_vec()), true).map_err(map_err)?;
    let trans = tape
        .leaf("translation", Tensor::vector(params[3..6].to_vec()), true)
        .map_err(map_err)?;
    let pts = tape.constant(Tensor::from_points(source.points())).map_err(map_err)?;
    let moved = tape.transform_points(angles, trans, pts).map_err(map_err)?;
    let out = loss::chamfer_on_tape(&mut tape, moved, target.points(), chamfer).map_err(map_err)?;
    let value = tape.value(out).data()[0];
    let grads = tape.backward(out, Tensor::scalar(1.0)).map_err(map_err)?;
    let mut g = grads["angles"].data().to_vec();
    g.extend_from_slice(grads["translation"].data());
    Ok((value, g))
}

/// Adam directly on the transform parameters, starting from identity, under
/// the same budget and stopping rule as latent inference.
pub fn direct_optimize(source: &PointCloud, target: &PointCloud, cfg: &TestTimeConfig) -> Result<TestTimeOutcome> {
    let init = RigidTransform::identity().to_params().to_vec();
    let (params, trace) = optimizer::optimize_variables(cfg, init, |p| {
        transform_loss_and_grad(source, target, p, &cfg.chamfer).map_err(|e| match e {
            BaselineError::Optim(o) => o,
            other => OptimError::Config(other.to_string()),
        })
    })?;
    Ok(TestTimeOutcome {
        transform: RigidTransform::from_params(&params)?,
        variables: params,
        trace,
        restart: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TransformSampler;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn identity_pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, i)).collect()
    }

    #[test]
    fn eigen_reconstructs() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 1.0]];
        let (vals, v) = symmetric_eigen(&a);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for c in 0..3 {
            let col = column(&v, c);
            let av = mat_vec(&a, &col);
            for k in 0..3 {
                assert!((av[k] - vals[c] * col[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kabsch_identity() {
        let p = cloud(20, 1);
        let t = kabsch(&p, &p, &identity_pairs(20)).unwrap();
        assert!(t.to_params().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn kabsch_recovers_known_transform() {
        let mut s = TransformSampler::new(45.0, 0.5, 3).unwrap();
        for seed in 0..20 {
            let gt = s.sample();
            let p = cloud(30, seed);
            let q: Vec<Vec3> = p.iter().map(|x| gt.apply_point(x)).collect();
            let t = kabsch(&p, &q, &identity_pairs(30)).unwrap();
            for (a, b) in t.to_params().iter().zip(gt.to_params()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kabsch_rejects_collinear() {
        let p: Vec<Vec3> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(kabsch(&p, &p, &identity_pairs(5)), Err(BaselineError::Degenerate(_))));
        assert!(kabsch(&p[..2], &p[..2], &identity_pairs(2)).is_err());
    }

    #[test]
    fn icp_identity_first_iteration() {
        let c = PointCloud::new("c", cloud(100, 2)).unwrap();
        let out = icp(&c, &c, &IcpConfig::default()).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.converged);
        assert!(out.transform.to_params().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn direct_identity_pair_stays_put() {
        let c = PointCloud::new("c", cloud(64, 4)).unwrap();
        let out = direct_optimize(&c, &c, &TestTimeConfig::default()).unwrap();
        assert!(out.trace.best_loss() < 1e-12);
        assert!(out.transform.to_params().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn transform_gradient_matches_differences() {
        let s = PointCloud::new("s", cloud(40, 5)).unwrap();
        let t = PointCloud::new("t", cloud(40, 6)).unwrap();
        let p = [0.1, -0.2, 0.3, 0.05, 0.0, -0.1];
        let cfg = ChamferConfig::default();
        let (_, g) = transform_loss_and_grad(&s, &t, &p, &cfg).unwrap();
        for k in 0..6 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            let fa = transform_loss_and_grad(&s, &t, &a, &cfg).unwrap().0;
            let fb = transform_loss_and_grad(&s, &t, &b, &cfg).unwrap().0;
            let num = (fa - fb) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()), "{k}: {num} vs {}", g[k]);
        }
    }
}
