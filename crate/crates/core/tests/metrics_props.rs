use proptest::prelude::*;

use scralign::eval::{render_csv, MetricsRow, MetricsTable, RegistrationResult};
use scralign::geometry::RigidTransform;

fn transform() -> impl Strategy<Value = RigidTransform> {
    ([-170.0f64..170.0, -80.0f64..80.0, -170.0f64..170.0], [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0])
        .prop_map(|(a, t)| RigidTransform::from_degrees(a, t).unwrap())
}

fn results() -> impl Strategy<Value = Vec<RegistrationResult>> {
    prop::collection::vec((transform(), transform()), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (p, g))| RegistrationResult {
                pair_id: format!("{i:05}"),
                predicted: p,
                ground_truth: g,
                initial_chamfer: 1.0,
                final_chamfer: 0.5,
                wall_time_s: 0.0,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rmse_squared_is_mse(rs in results()) {
        let row = MetricsRow::from_results("m", &rs).unwrap();
        for s in [row.rotation, row.translation] {
            prop_assert!((s.rmse * s.rmse - s.mse).abs() <= 1e-9 * (1.0 + s.mse));
        }
    }

    #[test]
    fn metrics_ignore_result_order(rs in results(), seed: u64) {
        let mut shuffled = rs.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = MetricsTable { rows: vec![MetricsRow::from_results("m", &rs).unwrap()] };
        let b = MetricsTable { rows: vec![MetricsRow::from_results("m", &shuffled).unwrap()] };
        prop_assert_eq!(render_csv(&a), render_csv(&b));
        for (x, y) in a.rows[0].values().iter().zip(b.rows[0].values().iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}
