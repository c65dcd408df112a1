use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scralign::dataio::{
    corrupt, make_pairs, parse_off, sample_surface, synth_shape, write_off, CorruptionOptions, DiMode, NoiseKind,
    NoiseSpec, ShapeKind, TriangleMesh,
};
use scralign::geometry::{apply_transform, rotation_angle, RigidTransform, TransformSampler};
use scralign::loss::{chamfer, ChamferConfig};

fn mesh() -> impl Strategy<Value = (Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    prop::collection::vec([-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0], 3..20).prop_flat_map(|v| {
        let n = v.len();
        let faces = prop::collection::vec([0..n, 0..n, 0..n], 1..30);
        (Just(v), faces)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn off_write_then_parse_is_identity((vertices, faces) in mesh()) {
        let Ok(m) = TriangleMesh::new(vertices, faces) else {
            // Random index triples can be all degenerate; those meshes are rejected.
            return Ok(());
        };
        let back = parse_off(&write_off(&m)).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn noise_counts_follow_the_level(n in 8usize..2000, level in 0.0f64..0.95, seed: u64) {
        let cloud = synth_shape(ShapeKind::Sphere, n, 1).unwrap();
        let want = (level * n as f64).round() as usize;
        for mode in [DiMode::Uniform, DiMode::Region] {
            let opts = CorruptionOptions { di_mode: mode, ..CorruptionOptions::default() };
            let spec = NoiseSpec::new(NoiseKind::Incompleteness, level).unwrap();
            match corrupt(&cloud, &spec, &opts, seed) {
                Ok(c) => prop_assert_eq!(c.len(), n - want),
                Err(_) => prop_assert_eq!(want, n),
            }
        }
        let spec = NoiseSpec::new(NoiseKind::Outliers, level).unwrap();
        let c = corrupt(&cloud, &spec, &CorruptionOptions::default(), seed).unwrap();
        prop_assert_eq!(c.len(), n + want);
        prop_assert_eq!(&c.points()[..n], cloud.points());
    }
}

#[test]
fn surface_samples_follow_triangle_area() {
    // Areas 3 : 1.
    let mesh = TriangleMesh::new(
        vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [10.0, 0.0, 0.0], [11.0, 0.0, 0.0], [10.0, 2.0, 0.0]],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let n = 4096;
    let sigma = (n as f64 * 0.75 * 0.25).sqrt();
    for seed in 0..5 {
        let cloud = sample_surface(&mesh, n, seed).unwrap();
        let big = cloud.points().iter().filter(|p| p[0] < 5.0).count() as f64;
        assert!((big - 3072.0).abs() <= 4.0 * sigma, "seed {seed}: {big}");
    }
}

#[test]
fn helix_has_no_rotational_self_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = ChamferConfig::default();
    for seed in 0..3 {
        let h = synth_shape(ShapeKind::Helix, 256, seed).unwrap();
        let mut tried = 0;
        while tried < 1000 {
            let t = RigidTransform::new(
                std::array::from_fn(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
                [0.0; 3],
            )
            .unwrap();
            // Rotations within a few degrees of identity are trivial.
            if rotation_angle(&t.matrix()).to_degrees() < 5.0 {
                continue;
            }
            tried += 1;
            let c = chamfer(apply_transform(&t, &h).points(), h.points(), &cfg).unwrap();
            assert!(c >= 1e-3, "seed {seed}: chamfer {c} at {:?}", t.angles_deg());
        }
    }
}

#[test]
fn pairs_are_built_from_normalized_shapes() {
    let shapes: Vec<_> = (0..4).map(|s| synth_shape(ShapeKind::Blob, 64, s).unwrap()).collect();
    let a = make_pairs(&shapes, &mut TransformSampler::with_defaults(3), None, 3).unwrap();
    let b = make_pairs(&shapes, &mut TransformSampler::with_defaults(3), None, 3).unwrap();
    assert_eq!(a.len(), shapes.len());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.source.points(), q.source.points());
        assert_eq!(p.target.points(), q.target.points());
        let c = p.source.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        let r = p.source.points().iter().map(scralign::geometry::norm).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
        let moved = apply_transform(&p.ground_truth, &p.source);
        assert_eq!(moved.points(), p.target.points());
    }
}
