use proptest::prelude::*;

use scralign::geometry::{
    apply_transform, compose, dist2, euler_to_matrix, invert, PointCloud, RigidTransform, TransformSampler, Vec3,
};

const PI: f64 = std::f64::consts::PI;

fn angle() -> impl Strategy<Value = f64> {
    -PI..PI
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    [-r..r, -r..r, -r..r]
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    ([angle(), angle(), angle()], vec3(2.0)).prop_map(|(a, t)| RigidTransform::new(a, t).unwrap())
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(vec3(1.5), 2..max).prop_map(|p| PointCloud::new("p", p).unwrap())
}

fn max_dev(a: &PointCloud, b: &PointCloud) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn euler_matrices_are_rotations(a in angle(), b in angle(), c in angle()) {
        let m = euler_to_matrix([a, b, c]).unwrap();
        for r in 0..3 {
            for s in 0..3 {
                let d: f64 = (0..3).map(|k| m[k][r] * m[k][s]).sum();
                let want = if r == s { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
        }
        prop_assert!((scralign::geometry::det(&m) - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pairwise_distances_are_preserved(t in transform(), c in cloud(40)) {
        let moved = apply_transform(&t, &c);
        let (p, q) = (c.points(), moved.points());
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let d0 = dist2(&p[i], &p[j]).sqrt();
                let d1 = dist2(&q[i], &q[j]).sqrt();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn compose_then_invert_round_trips(a in transform(), b in transform(), c in cloud(128)) {
        let ab = compose(&a, &b).unwrap();
        let via = apply_transform(&a, &apply_transform(&b, &c));
        prop_assert!(max_dev(&apply_transform(&ab, &c), &via) < 1e-9);
        let back = apply_transform(&invert(&ab).unwrap(), &via);
        prop_assert!(max_dev(&back, &c) < 1e-9);
    }

    #[test]
    fn sampler_stays_in_bounds(lo in 0.0f64..40.0, width in 0.0f64..40.0, range in 0.0f64..1.0, seed: u64) {
        let mut s = TransformSampler::with_rotation_band(lo, lo + width, range, seed).unwrap();
        for _ in 0..20 {
            let t = s.sample();
            for a in t.angles {
                let d = a.to_degrees();
                prop_assert!(d >= lo - 1e-9 && d <= lo + width + 1e-9);
            }
            for v in t.translation {
                prop_assert!(v.abs() <= range);
            }
        }
    }
}
