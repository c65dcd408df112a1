use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Result};
use crate::geometry::{center_and_rescale, norm, PointCloud, Provenance, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Cube,
    Sphere,
    Helix,
    Plane,
    Blob,
}

impl FromStr for ShapeKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(ShapeKind::Cube),
            "sphere" => Ok(ShapeKind::Sphere),
            "helix" => Ok(ShapeKind::Helix),
            "plane" => Ok(ShapeKind::Plane),
            "blob" => Ok(ShapeKind::Blob),
            _ => Err(DataError::InvalidArgument(format!(
                "unknown shape {s:?} (cube, sphere, helix, plane, blob)"
            ))),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Cube => "cube",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Helix => "helix",
            ShapeKind::Plane => "plane",
            ShapeKind::Blob => "blob",
        })
    }
}

fn neg(p: Vec3) -> Vec3 {
    [-p[0], -p[1], -p[2]]
}

/// Fills `out` up to `n` with antipodal pairs from `draw`; an odd remainder is
/// covered by `triple`, three points summing to zero. The centroid of the
/// result is zero up to rounding.
fn symmetric_fill(out: &mut Vec<Vec3>, n: usize, triple: [Vec3; 3], mut draw: impl FnMut() -> Vec3) {
    if (n - out.len()) % 2 == 1 {
        out.extend(triple);
    }
    while out.len() < n {
        let p = draw();
        out.push(p);
        out.push(neg(p));
    }
}

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let r = norm(&v);
        if r > 1e-6 {
            return [v[0] / r, v[1] / r, v[2] / r];
        }
    }
}

/// Normalized parametric point sets for desk-scale experiments.
///
/// * `sphere`: points on the unit sphere in antipodal pairs.
/// * `cube`: the 8 corners first, then surface points in antipodal pairs.
/// * `helix`: a conical helix with a seed-dependent number of turns, phase
///   and taper; it has no rotational self-symmetry.
/// * `plane`: uniform points on a square.
/// * `blob`: a triaxial ellipsoid surface with three large seed-placed bumps; no
///   rotational or mirror symmetry.
pub fn synth_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(DataError::InvalidArgument(format!("need at least 8 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<Vec3> = Vec::with_capacity(n);
    match kind {
        ShapeKind::Sphere => {
            let h = 3f64.sqrt() / 2.0;
            let triple = [[1.0, 0.0, 0.0], [-0.5, h, 0.0], [-0.5, -h, 0.0]];
            symmetric_fill(&mut pts, n, triple, || unit(&mut rng));
        }
        ShapeKind::Cube => {
            for i in 0..8 {
                pts.push([
                    if i & 1 == 0 { -1.0 } else { 1.0 },
                    if i & 2 == 0 { -1.0 } else { 1.0 },
                    if i & 4 == 0 { -1.0 } else { 1.0 },
                ]);
            }
            let triple = [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]];
            symmetric_fill(&mut pts, n, triple, || {
                let axis = rng.random_range(0..3);
                let mut p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                p[axis] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                p
            });
        }
        ShapeKind::Helix => {
            let turns = rng.random_range(1.5..2.5);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let taper = rng.random_range(0.6..0.9);
            for _ in 0..n {
                let t: f64 = rng.random();
                let r = 1.0 - taper * t;
                let a = phase + std::f64::consts::TAU * turns * t;
                pts.push([r * a.cos(), r * a.sin(), 2.0 * t - 1.0]);
            }
        }
        ShapeKind::Plane => {
            for _ in 0..n {
                pts.push([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0]);
            }
        }
        ShapeKind::Blob => {
            let axes = [1.0, rng.random_range(0.75..0.9), rng.random_range(0.55..0.7)];
            let bumps: Vec<(Vec3, f64)> = (0..3)
                .map(|_| (unit(&mut rng), rng.random_range(0.35..0.6)))
                .collect();
            for _ in 0..n {
                let u = unit(&mut rng);
                let r = 1.0
                    + bumps
                        .iter()
                        .map(|(c, amp)| amp * (-(1.0 - crate::geometry::dot(&u, c)) / 0.2).exp())
                        .sum::<f64>();
                pts.push(std::array::from_fn(|k| r * axes[k] * u[k]));
            }
        }
    }
    let cloud = PointCloud::new(format!("{kind}-{seed}"), pts)?.with_provenance(Provenance {
        source: Some(format!("synthetic:{kind}")),
        seed: Some(seed),
    });
    Ok(center_and_rescale(&cloud))
}
