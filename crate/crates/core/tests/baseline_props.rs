use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scralign::baselines::{direct_optimize, icp, kabsch, IcpConfig};
use scralign::geometry::{apply_transform, det, mat_mul, transpose, PointCloud, RigidTransform, Vec3};
use scralign::optimizer::{infer_scr, TestTimeConfig};

fn residual(t: &RigidTransform, a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let m = t.apply_point(p);
            (0..3).map(|k| (m[k] - q[k]).powi(2)).sum::<f64>()
        })
        .sum()
}

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec([-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0], n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// No random perturbation of the Kabsch solution fits better.
    #[test]
    fn kabsch_beats_random_search(a in points(6..40), b in points(6..40), seed: u64) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let t = kabsch(a, b, &pairs).unwrap();
        let m = t.matrix();
        let i3 = mat_mul(&transpose(&m), &m);
        for (r, row) in i3.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let want = if r == c { 1.0 } else { 0.0 };
                prop_assert!((v - want).abs() < 1e-9);
            }
        }
        prop_assert!((det(&m) - 1.0).abs() < 1e-9);
        let best = residual(&t, a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let s = rng.random_range(1e-4..0.3);
            let mut p = t.to_params();
            for v in &mut p {
                *v += rng.random_range(-s..s);
            }
            let other = RigidTransform::from_params(&p).unwrap();
            prop_assert!(residual(&other, a, b) >= best - 1e-9 * (1.0 + best));
        }
    }

    /// The matched objective never rises, within or across iterations.
    #[test]
    fn icp_objective_is_monotone(a in points(10..80), noise in points(10..80), ang in [-0.6f64..0.6, -0.6f64..0.6, -0.6f64..0.6]) {
        let source = PointCloud::new("s", a.clone()).unwrap();
        let t = RigidTransform::new(ang, [0.1, -0.2, 0.05]).unwrap();
        let mut target: Vec<Vec3> = a.iter().map(|p| t.apply_point(p)).collect();
        for (p, e) in target.iter_mut().zip(&noise) {
            for k in 0..3 {
                p[k] += 0.05 * e[k];
            }
        }
        let target = PointCloud::new("t", target).unwrap();
        let Ok(out) = icp(&source, &target, &IcpConfig::default()) else {
            // Degenerate correspondences (all matches collinear) are reported as errors.
            return Ok(());
        };
        let slack = |v: f64| 1e-12 * (1.0 + v);
        for it in &out.trace {
            prop_assert!(it.matched_after <= it.matched_before + slack(it.matched_before));
        }
        for w in out.trace.windows(2) {
            prop_assert!(w[1].matched_before <= w[0].matched_after + slack(w[0].matched_after));
        }
    }
}

#[test]
fn direct_and_latent_inference_share_the_trace_schema() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vec3> = (0..24).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let source = PointCloud::new("s", pts).unwrap();
    let target = apply_transform(&RigidTransform::from_degrees([10.0, 0.0, 5.0], [0.1, 0.0, 0.0]).unwrap(), &source);
    let cfg = TestTimeConfig {
        steps: 40,
        lr: 0.01,
        early_stop_window: 0,
        ..TestTimeConfig::default()
    };
    let params = scralign::decoder::init_params(
        &scralign::decoder::DecoderConfig {
            latent_dim: 4,
            stage1_widths: vec![8],
            rotation_head: vec![4, 3],
            translation_head: vec![4, 3],
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let d = direct_optimize(&source, &target, &cfg).unwrap();
    let s = infer_scr(&params, &source, &target, "p", &cfg).unwrap();
    assert_eq!(d.trace.losses.len(), cfg.steps + 1);
    assert_eq!(s.trace.losses.len(), cfg.steps + 1);
    for o in [&d, &s] {
        let min = o.trace.losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(o.trace.best_loss(), min);
    }
    assert_eq!(d.variables.len(), 6);
    assert_eq!(s.variables.len(), 4);
}
