use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use super::config::{DatasetKind, Method, RunConfig, TestShapes};
use super::metrics::{MetricsRow, MetricsTable, RegistrationResult};
use super::report::{emit_report, render_pair_csv, ReportFormat};
use super::{EvalError, Result};
use crate::baselines::{self, IcpConfig};
use crate::dataio::{
    make_pairs, read_off, sample_surface, save_checkpoint, scan_modelnet, synth_shape, DatasetSplit,
    RegistrationPair,
};
use crate::decoder::DecoderParams;
use crate::geometry::{apply_transform, PointCloud, RigidTransform, TransformSampler};
use crate::loss;
use crate::optimizer::{self, EpochRecord, TrainOutcome, TrainPair};

fn sampler(cfg: &RunConfig, seed: u64) -> Result<TransformSampler> {
    Ok(TransformSampler::with_rotation_band(
        cfg.min_rotation_deg,
        cfg.max_rotation_deg,
        cfg.translation_range,
        seed,
    )?)
}

fn synthetic_shapes(cfg: &RunConfig, first_seed: u64) -> Result<Vec<PointCloud>> {
    (0..cfg.num_shapes as u64)
        .map(|i| Ok(synth_shape(cfg.shape_kind, cfg.num_points, first_seed + i)?))
        .collect()
}

fn mesh_clouds(cfg: &RunConfig, entries: &[crate::dataio::MeshEntry]) -> Result<Vec<PointCloud>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mesh = read_off(&e.path)?;
            let mut c = sample_surface(&mesh, cfg.num_points, cfg.shape_seed().wrapping_add(i as u64))?;
            c.set_id(e.id.clone());
            Ok(c)
        })
        .collect()
}

/// Training and test pairs for `cfg`.
pub fn build_pairs(cfg: &RunConfig) -> Result<(Vec<RegistrationPair>, Vec<RegistrationPair>)> {
    let (train_shapes, test_shapes) = match cfg.dataset {
        DatasetKind::Synthetic => {
            let train = synthetic_shapes(cfg, cfg.shape_seed())?;
            let test = match cfg.test_shapes {
                TestShapes::Same => train.clone(),
                TestShapes::Unseen => synthetic_shapes(cfg, cfg.shape_seed() + cfg.num_shapes as u64)?,
            };
            (train, test)
        }
        DatasetKind::ModelNet => {
            let root = cfg.data_root.as_ref().expect("validated");
            let split = DatasetSplit::new(&scan_modelnet(root)?, cfg.split_mode);
            (mesh_clouds(cfg, &split.train)?, mesh_clouds(cfg, &split.test)?)
        }
    };
    let opts = cfg.corruption_options();
    let noise = cfg.noise.as_ref().map(|n| (n, &opts));
    let train = make_pairs(&train_shapes, &mut sampler(cfg, cfg.train_pair_seed())?, noise, cfg.train_pair_seed())?;
    let test = make_pairs(&test_shapes, &mut sampler(cfg, cfg.test_pair_seed())?, noise, cfg.test_pair_seed())?;
    Ok((train, test))
}

pub fn train_on(
    cfg: &RunConfig,
    pairs: &[RegistrationPair],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let view: Vec<TrainPair> = pairs.iter().map(RegistrationPair::train_pair).collect();
    Ok(optimizer::train(&cfg.train_config(), &view, on_epoch)?)
}

fn chamfer_of(t: &RigidTransform, source: &PointCloud, target: &PointCloud, cfg: &RunConfig) -> Result<f64> {
    Ok(loss::chamfer(apply_transform(t, source).points(), target.points(), &cfg.chamfer())?)
}

/// Registers every pair with `method`. `params` is required for SCR.
pub fn register_pairs(
    method: Method,
    cfg: &RunConfig,
    params: Option<&DecoderParams>,
    pairs: &[RegistrationPair],
) -> Result<Vec<RegistrationResult>> {
    let tt = cfg.test_time_config();
    let icp_cfg = IcpConfig {
        max_iterations: cfg.icp_max_iterations,
        tolerance: cfg.icp_tolerance,
        initial: RigidTransform::identity(),
    };
    pairs
        .iter()
        .map(|p| {
            let start = Instant::now();
            let predicted = match method {
                Method::Scr => {
                    let params = params.ok_or_else(|| {
                        EvalError::InvalidArgument("SCR registration needs decoder parameters".into())
                    })?;
                    optimizer::infer_scr(params, &p.source, &p.target, &p.id, &tt)?.transform
                }
                Method::Icp => baselines::icp(&p.source, &p.target, &icp_cfg)?.transform,
                Method::Direct => baselines::direct_optimize(&p.source, &p.target, &tt)?.transform,
            };
            let wall_time_s = start.elapsed().as_secs_f64();
            Ok(RegistrationResult {
                pair_id: p.id.clone(),
                predicted,
                ground_truth: p.ground_truth,
                initial_chamfer: chamfer_of(&RigidTransform::identity(), &p.source, &p.target, cfg)?,
                final_chamfer: chamfer_of(&predicted, &p.source, &p.target, cfg)?,
                wall_time_s,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub table: MetricsTable,
    pub results: BTreeMap<&'static str, Vec<RegistrationResult>>,
    pub history: Vec<EpochRecord>,
}

/// Builds pairs, trains when SCR is requested, registers the test pairs with
/// every method and writes tables, per-pair CSVs, the loss log, the
/// checkpoint and the manifest into `cfg.output_dir`.
pub fn run_benchmark(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<BenchmarkOutput> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("manifest.txt"), cfg.manifest())?;
    let (train, test) = build_pairs(cfg)?;
    log(&format!("{} training pairs, {} test pairs", train.len(), test.len()));

    let mut history = Vec::new();
    let mut params = None;
    if cfg.methods.contains(&Method::Scr) {
        let started = Instant::now();
        let outcome = train_on(cfg, &train, &mut |r| {
            if r.epoch % 10 == 0 || r.epoch + 1 == cfg.epochs {
                log(&format!("epoch {:4}  lr {:.6e}  loss {:.6}", r.epoch, r.lr, r.mean_loss));
            }
        })?;
        log(&format!("training took {:.1} s", started.elapsed().as_secs_f64()));
        let mut loss_log = String::from("epoch,lr,mean_loss\n");
        for r in &outcome.history {
            let _ = writeln!(loss_log, "{},{:e},{:?}", r.epoch, r.lr, r.mean_loss);
        }
        std::fs::write(cfg.output_dir.join("loss_log.csv"), loss_log)?;
        save_checkpoint(&cfg.output_dir.join("checkpoint.scra"), &outcome.params, Some(&outcome.bank))?;
        history = outcome.history;
        params = Some(outcome.params);
    }

    let mut table = MetricsTable::default();
    let mut results = BTreeMap::new();
    for &m in &cfg.methods {
        let started = Instant::now();
        let r = register_pairs(m, cfg, params.as_ref(), &test)?;
        log(&format!("{}: {} pairs in {:.1} s", m.as_str(), r.len(), started.elapsed().as_secs_f64()));
        std::fs::write(cfg.output_dir.join(format!("pairs_{}.csv", m.as_str())), render_pair_csv(&r))?;
        table.rows.push(MetricsRow::from_results(m.as_str(), &r)?);
        results.insert(m.as_str(), r);
    }
    emit_report(&table, ReportFormat::Csv, &cfg.output_dir.join("metrics.csv"))?;
    emit_report(&table, ReportFormat::Markdown, &cfg.output_dir.join("metrics.md"))?;
    Ok(BenchmarkOutput {
        table,
        results,
        history,
    })
}
