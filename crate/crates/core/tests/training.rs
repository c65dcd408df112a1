use std::collections::BTreeMap;

use scralign::autodiff::Tensor;
use scralign::dataio::{synth_shape, ShapeKind};
use scralign::decoder::{init_params, DecoderConfig, DecoderParams};
use scralign::geometry::{apply_transform, RigidTransform};
use scralign::optimizer::{
    decode_transform, infer_scr, init_latent, train, LrSchedule, TestTimeConfig, TrainConfig, TrainPair,
};

fn tiny(batch_norm: bool) -> DecoderConfig {
    DecoderConfig {
        latent_dim: 8,
        stage1_widths: vec![16, 8],
        rotation_head: vec![8, 3],
        translation_head: vec![8, 3],
        batch_norm,
        ..DecoderConfig::default()
    }
}

fn pairs(n: usize) -> Vec<TrainPair> {
    (0..n)
        .map(|i| {
            let source = synth_shape(ShapeKind::Blob, 48, i as u64).unwrap();
            let t = RigidTransform::from_degrees([10.0 + i as f64, -5.0, 20.0], [0.1, 0.0, -0.1]).unwrap();
            TrainPair {
                id: format!("{i:05}"),
                target: apply_transform(&t, &source),
                source,
            }
        })
        .collect()
}

fn config(decoder: DecoderConfig, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        decoder,
        epochs,
        batch_size,
        schedule: LrSchedule {
            base: 0.01,
            decay: 0.995,
        },
        ..TrainConfig::default()
    }
}

fn bits(p: &DecoderParams) -> BTreeMap<String, Vec<u64>> {
    p.named_tensors()
        .into_iter()
        .map(|(k, t): (String, Tensor)| (k, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn zero_epochs_leave_everything_at_init() {
    let cfg = config(tiny(true), 0, 2);
    let data = pairs(3);
    let out = train(&cfg, &data, &mut |_| {}).unwrap();
    assert_eq!(bits(&out.params), bits(&init_params(&cfg.decoder, cfg.init_seed).unwrap()));
    assert!(out.history.is_empty());
    for p in &data {
        let z = out.bank.get(&p.id).unwrap();
        assert_eq!(z.values, init_latent(&p.id, 8, cfg.latent_seed).unwrap().values);
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = config(tiny(true), 4, 2);
    let data = pairs(5);
    let a = train(&cfg, &data, &mut |_| {}).unwrap();
    let b = train(&cfg, &data, &mut |_| {}).unwrap();
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.history, b.history);
    for (x, y) in a.bank.iter().zip(b.bank.iter()) {
        assert_eq!(x, y);
    }
}

#[test]
fn each_batch_touches_only_its_own_latents() {
    // Four pairs in batches of two: every latent gets exactly one update per
    // epoch, so its optimizer step equals the epoch count.
    let epochs = 3;
    let cfg = config(tiny(true), epochs, 2);
    let data = pairs(4);
    let out = train(&cfg, &data, &mut |_| {}).unwrap();
    assert_eq!(out.bank.len(), 4);
    for p in &data {
        assert_eq!(out.bank.state(&p.id).unwrap().step, epochs as u64, "{}", p.id);
        assert_ne!(out.bank.get(&p.id).unwrap().values, init_latent(&p.id, 8, cfg.latent_seed).unwrap().values);
    }
}

#[test]
fn one_pair_fits_well() {
    let cfg = config(tiny(false), 200, 1);
    let data = pairs(1);
    let out = train(&cfg, &data, &mut |_| {}).unwrap();
    let first = out.history.first().unwrap().mean_loss;
    let last = out.history.last().unwrap().mean_loss;
    assert!(last < 0.1 * first, "{first} -> {last}");
}

fn pair() -> (scralign::geometry::PointCloud, scralign::geometry::PointCloud) {
    let source = synth_shape(ShapeKind::Blob, 40, 9).unwrap();
    let t = RigidTransform::from_degrees([15.0, 5.0, -10.0], [0.0, 0.2, 0.0]).unwrap();
    let target = apply_transform(&t, &source);
    (source, target)
}

#[test]
fn inference_does_not_touch_the_decoder() {
    let params = init_params(&tiny(true), 2).unwrap();
    let before = bits(&params);
    let (s, t) = pair();
    let cfg = TestTimeConfig {
        steps: 30,
        lr: 0.05,
        restarts: 2,
        ..TestTimeConfig::default()
    };
    infer_scr(&params, &s, &t, "p", &cfg).unwrap();
    assert_eq!(bits(&params), before);
}

#[test]
fn a_latent_the_decoder_ignores_gives_a_flat_trace() {
    let mut params = init_params(&tiny(true), 3).unwrap();
    let layer = params.layer_mut("stage1.0").unwrap();
    let width = layer.weight.shape()[1];
    for row in 3..3 + 8 {
        for c in 0..width {
            layer.weight.data_mut()[row * width + c] = 0.0;
        }
    }
    let (s, t) = pair();
    let out = infer_scr(&params, &s, &t, "p", &TestTimeConfig::default()).unwrap();
    let l = &out.trace.losses;
    assert!(l.len() > 1);
    assert!(l.iter().all(|v| *v == l[0]), "{l:?}");
    assert_eq!(out.trace.best_index, 0);
}

#[test]
fn zero_steps_decode_the_initial_latent() {
    let params = init_params(&tiny(true), 4).unwrap();
    let (s, t) = pair();
    let cfg = TestTimeConfig {
        steps: 0,
        seed: 7,
        ..TestTimeConfig::default()
    };
    let out = infer_scr(&params, &s, &t, "p", &cfg).unwrap();
    assert_eq!(out.trace.losses.len(), 1);
    let z0 = init_latent("p", 8, 7).unwrap().values;
    assert_eq!(out.variables, z0);
    assert_eq!(out.transform, decode_transform(&params, &s, &z0).unwrap());
}

#[test]
fn reported_transform_is_the_best_iterate() {
    let params = init_params(&tiny(true), 5).unwrap();
    let (s, t) = pair();
    let cfg = TestTimeConfig {
        steps: 80,
        lr: 0.2,
        early_stop_window: 0,
        ..TestTimeConfig::default()
    };
    let out = infer_scr(&params, &s, &t, "p", &cfg).unwrap();
    let min = out.trace.losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(out.trace.best_loss(), min);
    let (loss, _, tr) =
        scralign::optimizer::latent_loss_and_grad(&params, &s, &t, &out.variables, &cfg.chamfer).unwrap();
    assert_eq!(loss, min);
    assert_eq!(tr, out.transform);
}
