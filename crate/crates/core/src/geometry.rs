//! Rigid-transform algebra on 3D point clouds.
//!
//! Rotations are parameterized by three fixed-axis Euler angles composed as
//! `Rz(az) * Ry(ay) * Rx(ax)`. Angles are radians everywhere inside the
//! library; conversion to degrees happens at I/O and metric boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Below this `|cos(ay)|` the Euler decomposition of a matrix is not unique.
pub const GIMBAL_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate Euler angles: |cos(ay)| = {0:e} is too close to zero")]
    DegenerateAngles(f64),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    /// File the cloud was read or sampled from, if any.
    pub source: Option<String>,
    /// Seed used when the cloud was sampled, if any.
    pub seed: Option<u64>,
}

/// An ordered, non-empty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    id: String,
    points: Vec<Vec3>,
    provenance: Provenance,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeometryError::InvalidArgument("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            id: id.into(),
            points,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    /// Same id and provenance, different points.
    pub(crate) fn with_points(&self, points: Vec<Vec3>) -> Result<Self> {
        let mut out = PointCloud::new(self.id.clone(), points)?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }
}

/// A rotation given by fixed-axis Euler angles (radians) plus a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub angles: Vec3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            angles: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn new(angles: Vec3, translation: Vec3) -> Result<Self> {
        if angles.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument(
                "transform has a non-finite component".into(),
            ));
        }
        Ok(Self { angles, translation })
    }

    pub fn from_degrees(angles_deg: Vec3, translation: Vec3) -> Result<Self> {
        Self::new(angles_deg.map(f64::to_radians), translation)
    }

    /// Builds a transform from a rotation matrix by extracting its Euler angles.
    pub fn from_matrix(rotation: &Mat3, translation: Vec3) -> Result<Self> {
        let angles = matrix_to_euler(rotation)?;
        Self::new(angles, translation)
    }

    /// Packs as `[ax, ay, az, tx, ty, tz]`.
    pub fn to_params(&self) -> [f64; 6] {
        let [a, b, c] = self.angles;
        let [x, y, z] = self.translation;
        [a, b, c, x, y, z]
    }

    pub fn from_params(p: &[f64]) -> Result<Self> {
        if p.len() != 6 {
            return Err(GeometryError::InvalidArgument(format!(
                "expected 6 transform parameters, got {}",
                p.len()
            )));
        }
        Self::new([p[0], p[1], p[2]], [p[3], p[4], p[5]])
    }

    pub fn angles_deg(&self) -> Vec3 {
        self.angles.map(f64::to_degrees)
    }

    pub fn matrix(&self) -> Mat3 {
        rotation_matrix(self.angles)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        let m = self.matrix();
        add(mat_vec(&m, p), self.translation)
    }

    /// Re-derives the angles from the rotation matrix so that equivalent
    /// triples map to one representative (`ay` in `[-pi/2, pi/2]`).
    pub fn canonical(&self) -> Result<Self> {
        Self::from_matrix(&self.matrix(), self.translation)
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

// Closed form of Rz * Ry * Rx; the axis factors above are kept for the
// derivative code in `autodiff`.
fn rotation_matrix(angles: Vec3) -> Mat3 {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// `M = Rz(az) * Ry(ay) * Rx(ax)` for `angles = (ax, ay, az)` in radians.
pub fn euler_to_matrix(angles: Vec3) -> Result<Mat3> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(GeometryError::InvalidArgument(
            "Euler angles must be finite".into(),
        ));
    }
    Ok(rotation_matrix(angles))
}

/// Inverse of [`euler_to_matrix`] on the branch `ay` in `[-pi/2, pi/2]`.
pub fn matrix_to_euler(m: &Mat3) -> Result<Vec3> {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidArgument(
            "rotation matrix has a non-finite entry".into(),
        ));
    }
    let cy = m[0][0].hypot(m[1][0]);
    if cy < GIMBAL_EPS {
        return Err(GeometryError::DegenerateAngles(cy));
    }
    let ay = (-m[2][0]).atan2(cy);
    let ax = m[2][1].atan2(m[2][2]);
    let az = m[1][0].atan2(m[0][0]);
    Ok([ax, ay, az])
}

/// Derivatives of the rotation matrix with respect to `(ax, ay, az)`.
pub(crate) fn rotation_jacobian(angles: Vec3) -> [Mat3; 3] {
    let (rx, ry, rz) = (rot_x(angles[0]), rot_y(angles[1]), rot_z(angles[2]));
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    let drx = [[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]];
    let dry = [[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]];
    let drz = [[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]];
    [
        mat_mul(&mat_mul(&rz, &ry), &drx),
        mat_mul(&mat_mul(&rz, &dry), &rx),
        mat_mul(&mat_mul(&drz, &ry), &rx),
    ]
}

pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let m = t.matrix();
    let points = cloud
        .points()
        .iter()
        .map(|p| add(mat_vec(&m, p), t.translation))
        .collect();
    PointCloud {
        id: cloud.id.clone(),
        points,
        provenance: cloud.provenance.clone(),
    }
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform> {
    let ma = a.matrix();
    let m = mat_mul(&ma, &b.matrix());
    let t = add(mat_vec(&ma, &b.translation), a.translation);
    RigidTransform::from_matrix(&m, t)
}

pub fn invert(t: &RigidTransform) -> Result<RigidTransform> {
    let mt = transpose(&t.matrix());
    let tr = mat_vec(&mt, &t.translation).map(|v| -v);
    RigidTransform::from_matrix(&mt, tr)
}

/// Draws per-axis uniform rotations and translations.
#[derive(Debug, Clone)]
pub struct TransformSampler {
    pub min_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub translation_range: f64,
    rng: ChaCha8Rng,
}

impl TransformSampler {
    pub const DEFAULT_MAX_ROTATION_DEG: f64 = 45.0;
    pub const DEFAULT_TRANSLATION_RANGE: f64 = 0.5;

    pub fn new(max_rotation_deg: f64, translation_range: f64, seed: u64) -> Result<Self> {
        Self::with_rotation_band(0.0, max_rotation_deg, translation_range, seed)
    }

    /// Angles drawn from `[min_rotation_deg, max_rotation_deg]` on every axis.
    pub fn with_rotation_band(
        min_rotation_deg: f64,
        max_rotation_deg: f64,
        translation_range: f64,
        seed: u64,
    ) -> Result<Self> {
        let ok = min_rotation_deg.is_finite()
            && max_rotation_deg.is_finite()
            && translation_range.is_finite()
            && min_rotation_deg >= 0.0
            && max_rotation_deg >= min_rotation_deg
            && translation_range >= 0.0;
        if !ok {
            return Err(GeometryError::InvalidArgument(format!(
                "bad sampler bounds: rotation [{min_rotation_deg}, {max_rotation_deg}] deg, translation +/-{translation_range}"
            )));
        }
        Ok(Self {
            min_rotation_deg,
            max_rotation_deg,
            translation_range,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(
            Self::DEFAULT_MAX_ROTATION_DEG,
            Self::DEFAULT_TRANSLATION_RANGE,
            seed,
        )
        .expect("default bounds are valid")
    }

    pub fn sample(&mut self) -> RigidTransform {
        let (lo, hi) = (self.min_rotation_deg, self.max_rotation_deg);
        let r = self.translation_range;
        let mut angles = [0.0; 3];
        for a in &mut angles {
            *a = (lo + (hi - lo) * self.rng.random::<f64>()).to_radians();
        }
        let mut translation = [0.0; 3];
        for t in &mut translation {
            *t = -r + 2.0 * r * self.rng.random::<f64>();
        }
        RigidTransform { angles, translation }
    }
}

/// Moves the centroid to the origin and scales so the farthest point has norm 1.
/// A cloud whose points all coincide is only centered.
pub fn center_and_rescale(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let mut points: Vec<Vec3> = cloud.points().iter().map(|p| sub(*p, c)).collect();
    let max_norm = points.iter().map(norm).fold(0.0, f64::max);
    if max_norm > 0.0 {
        for p in &mut points {
            *p = p.map(|v| v / max_norm);
        }
    }
    PointCloud {
        id: cloud.id.clone(),
        points,
        provenance: cloud.provenance.clone(),
    }
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn det(m: &Mat3) -> f64 {
    dot(&m[0], &cross(&m[1], &m[2]))
}

/// Rotation angle of `R` in radians, from its trace.
pub fn rotation_angle(m: &Mat3) -> f64 {
    let tr = m[0][0] + m[1][1] + m[2][2];
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| (a[k] - b[k]).abs() < tol)
    }

    #[test]
    fn identity_angles_give_identity_matrix() {
        let m = euler_to_matrix([0.0; 3]).unwrap();
        assert_eq!(m, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn quarter_turn_about_x() {
        let m = euler_to_matrix([FRAC_PI_2, 0.0, 0.0]).unwrap();
        assert!(close(&mat_vec(&m, &[0.0, 1.0, 0.0]), &[0.0, 0.0, 1.0], 1e-15));
    }

    #[test]
    fn non_finite_angles_rejected() {
        assert!(matches!(
            euler_to_matrix([f64::NAN, 0.0, 0.0]),
            Err(GeometryError::InvalidArgument(_))
        ));
        assert!(RigidTransform::new([0.0, f64::INFINITY, 0.0], [0.0; 3]).is_err());
    }

    #[test]
    fn closed_form_matches_axis_product() {
        let a = [0.3, -1.1, 2.4];
        let expect = mat_mul(&mat_mul(&rot_z(a[2]), &rot_y(a[1])), &rot_x(a[0]));
        let got = euler_to_matrix(a).unwrap();
        for i in 0..3 {
            assert!(close(&got[i], &expect[i], 1e-15));
        }
    }

    #[test]
    fn unit_translation_of_origin() {
        let t = RigidTransform::new([0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        let c = PointCloud::new("o", vec![[0.0; 3]]).unwrap();
        assert_eq!(apply_transform(&t, &c).points(), &[[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn identity_transform_keeps_cloud() {
        let c = PointCloud::new("c", vec![[0.1, 0.2, 0.3], [-4.0, 5.0, 6.5]]).unwrap();
        assert_eq!(apply_transform(&RigidTransform::identity(), &c), c);
    }

    #[test]
    fn compose_with_identity_and_invert_identity() {
        let t = RigidTransform::new([0.2, -0.4, 0.9], [0.1, 0.2, -0.3]).unwrap();
        let c = compose(&t, &RigidTransform::identity()).unwrap();
        assert!(close(&c.angles, &t.angles, 1e-12));
        assert!(close(&c.translation, &t.translation, 1e-15));
        let i = invert(&RigidTransform::identity()).unwrap();
        assert_eq!(i.angles.map(f64::abs), [0.0; 3]);
        assert_eq!(i.translation.map(f64::abs), [0.0; 3]);
    }

    #[test]
    fn gimbal_extraction_is_an_error() {
        let t = RigidTransform::new([0.3, FRAC_PI_2, 0.1], [0.0; 3]).unwrap();
        assert!(matches!(
            t.canonical(),
            Err(GeometryError::DegenerateAngles(_))
        ));
    }

    #[test]
    fn matrix_round_trip_on_principal_branch() {
        let a = [0.7, -0.5, -2.9];
        let back = matrix_to_euler(&euler_to_matrix(a).unwrap()).unwrap();
        assert!(close(&a, &back, 1e-12));
    }

    #[test]
    fn zero_width_sampler_is_identity() {
        let mut s = TransformSampler::new(0.0, 0.0, 7).unwrap();
        assert_eq!(s.sample(), RigidTransform::identity());
    }

    #[test]
    fn default_sampler_respects_bounds() {
        let mut s = TransformSampler::with_defaults(11);
        for _ in 0..1000 {
            let t = s.sample();
            assert!(t.angles_deg().iter().all(|a| (0.0..=45.0).contains(a)));
            assert!(t.translation.iter().all(|v| (-0.5..=0.5).contains(v)));
        }
        let mut a = TransformSampler::with_defaults(3);
        let mut b = TransformSampler::with_defaults(3);
        assert_eq!(a.sample(), b.sample());
    }

    #[test]
    fn sampler_moments_match_uniform() {
        // Uniform on [lo, hi]: mean (lo+hi)/2, sd (hi-lo)/sqrt(12).
        let n = 100_000;
        let mut s = TransformSampler::with_defaults(2024);
        let mut sums = [0.0; 6];
        for _ in 0..n {
            let t = s.sample();
            let d = t.angles_deg();
            for k in 0..3 {
                sums[k] += d[k];
                sums[k + 3] += t.translation[k];
            }
        }
        let three_sigma = |sd: f64| 3.0 * sd / (n as f64).sqrt();
        for k in 0..3 {
            assert!((sums[k] / n as f64 - 22.5).abs() < three_sigma(45.0 / 12f64.sqrt()));
            assert!((sums[k + 3] / n as f64).abs() < three_sigma(1.0 / 12f64.sqrt()));
        }
    }

    #[test]
    fn rescale_two_point_cloud() {
        let c = PointCloud::new("c", vec![[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]).unwrap();
        let n = center_and_rescale(&c);
        assert_eq!(n.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn rescale_is_idempotent_on_normalized_cloud() {
        let c = PointCloud::new("c", vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]])
            .unwrap();
        let n = center_and_rescale(&c);
        for (a, b) in n.points().iter().zip(c.points()) {
            assert!(close(a, b, 1e-12));
        }
    }

    #[test]
    fn degenerate_cloud_is_only_centered() {
        let c = PointCloud::new("c", vec![[3.0, 3.0, 3.0]; 4]).unwrap();
        assert_eq!(center_and_rescale(&c).points(), &[[0.0; 3]; 4]);
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new("e", vec![]).is_err());
        assert!(PointCloud::new("e", vec![[0.0, f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let a = [0.4, -0.3, 1.2];
        let jac = rotation_jacobian(a);
        let h = 1e-6;
        for k in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[k] += h;
            am[k] -= h;
            let (mp, mm) = (rotation_matrix(ap), rotation_matrix(am));
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (mp[i][j] - mm[i][j]) / (2.0 * h);
                    assert!((fd - jac[k][i][j]).abs() < 1e-8);
                }
            }
        }
    }
}
