//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 for usage errors, 2 for runtime failures.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::baselines::{self, IcpConfig};
use crate::dataio::{self, CorruptionOptions, NoiseSpec};
use crate::eval::{self, EvalError, GradcheckSpec, MetricsRow, MetricsTable, RegistrationResult, ReportFormat, RunConfig};
use crate::geometry::{apply_transform, PointCloud, RigidTransform};
use crate::loss::{self, ChamferConfig};
use crate::optimizer::{self, TestTimeConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Gradient audits pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "scralign", version, about = "Rigid point cloud registration with per-pair latent codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct PairArgs {
    /// Source cloud, one `x y z` line per point.
    #[arg(long)]
    source: PathBuf,
    /// Target cloud.
    #[arg(long)]
    target: PathBuf,
    /// Write the resolved settings here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct TestTimeArgs {
    /// Adam steps per restart.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Cap on per-point squared distances in the loss.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train decoder and latents on the pairs described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a pair by optimizing a fresh latent against a trained decoder.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        tt: TestTimeArgs,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
    },
    /// Register a pair with point-to-point ICP.
    Icp {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = 50)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Register a pair by gradient descent on the transform parameters.
    DirectOpt {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        tt: TestTimeArgs,
    },
    /// Apply a noise model to a cloud.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// pd, di or do.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        level: f64,
        /// uniform or region.
        #[arg(long, default_value = "uniform")]
        di_mode: String,
        #[arg(long, default_value_t = 0.5)]
        outlier_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train, register the test pairs with every configured method and write
    /// metric tables.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare tape gradients with finite differences on a small decoder.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Rebuild metric tables from per-pair CSV files.
    Report {
        /// Per-pair CSVs; the method name is the file stem without `pairs_`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// csv or markdown.
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        output: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownKey(_) | EvalError::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    dataio::DataError,
    optimizer::OptimError,
    baselines::BaselineError,
    crate::loss::LossError,
    crate::geometry::GeometryError,
    crate::autodiff::FdError
);

type CliResult = std::result::Result<i32, Failure>;

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "usage error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> std::result::Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out_dir {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn write_manifest(path: Option<&Path>, entries: &[(&str, String)]) -> std::io::Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    std::fs::write(path, s)
}

fn print_transform(out: &mut dyn Write, t: &RigidTransform, initial: f64, fin: f64) -> std::io::Result<()> {
    let a = t.angles_deg();
    let tr = t.translation;
    writeln!(out, "rotation_deg {:.6} {:.6} {:.6}", a[0], a[1], a[2])?;
    writeln!(out, "translation {:.6} {:.6} {:.6}", tr[0], tr[1], tr[2])?;
    writeln!(out, "chamfer_initial {initial:.6e}")?;
    writeln!(out, "chamfer_final {fin:.6e}")
}

fn chamfer_pair(t: &RigidTransform, s: &PointCloud, g: &PointCloud, cfg: &ChamferConfig) -> std::result::Result<(f64, f64), Failure> {
    let initial = loss::chamfer(s.points(), g.points(), cfg)?;
    let fin = loss::chamfer(apply_transform(t, s).points(), g.points(), cfg)?;
    Ok((initial, fin))
}

fn test_time(tt: &TestTimeArgs, restarts: usize) -> std::result::Result<TestTimeConfig, Failure> {
    let chamfer = ChamferConfig {
        clip: tt.clip,
        ..ChamferConfig::default()
    };
    chamfer.validate()?;
    if restarts == 0 {
        return Err(Failure::Usage("--restarts must be at least 1".into()));
    }
    Ok(TestTimeConfig {
        steps: tt.steps,
        lr: tt.lr,
        restarts,
        chamfer,
        seed: tt.seed,
        ..TestTimeConfig::default()
    })
}

fn test_time_manifest(pair: &PairArgs, cfg: &TestTimeConfig) -> Vec<(&'static str, String)> {
    vec![
        ("source", pair.source.display().to_string()),
        ("target", pair.target.display().to_string()),
        ("test_steps", cfg.steps.to_string()),
        ("test_lr", format!("{:?}", cfg.lr)),
        ("test_restarts", cfg.restarts.to_string()),
        ("early_stop_tol", format!("{:?}", cfg.early_stop_tol)),
        ("early_stop_window", cfg.early_stop_window.to_string()),
        ("chamfer_clip", cfg.chamfer.clip.map_or("none".into(), |c| format!("{c:?}"))),
        ("seed", cfg.seed.to_string()),
    ]
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Train { config, seed, out: dir } => {
            let cfg = load_config(&config, seed, dir)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("manifest.txt"), cfg.manifest())?;
            let (train, _) = eval::build_pairs(&cfg)?;
            let outcome = eval::train_on(&cfg, &train, &mut |r| {
                let _ = writeln!(err, "epoch {:4}  lr {:.6e}  loss {:.6}", r.epoch, r.lr, r.mean_loss);
            })?;
            let mut log = String::from("epoch,lr,mean_loss\n");
            for r in &outcome.history {
                let _ = writeln!(log, "{},{:e},{:?}", r.epoch, r.lr, r.mean_loss);
            }
            std::fs::write(cfg.output_dir.join("loss_log.csv"), log)?;
            let ck = cfg.output_dir.join("checkpoint.scra");
            dataio::save_checkpoint(&ck, &outcome.params, Some(&outcome.bank))?;
            writeln!(out, "trained {} pairs for {} epochs", train.len(), cfg.epochs)?;
            if let Some(last) = outcome.history.last() {
                writeln!(out, "final mean loss {:.6e}", last.mean_loss)?;
            }
            writeln!(out, "checkpoint {}", ck.display())?;
            Ok(EXIT_OK)
        }
        Command::Register {
            checkpoint,
            pair,
            tt,
            restarts,
        } => {
            let cfg = test_time(&tt, restarts)?;
            let mut entries = test_time_manifest(&pair, &cfg);
            entries.push(("checkpoint", checkpoint.display().to_string()));
            write_manifest(pair.manifest.as_deref(), &entries)?;
            let ck = dataio::load_checkpoint(&checkpoint)?;
            let s = dataio::read_xyz(&pair.source)?;
            let g = dataio::read_xyz(&pair.target)?;
            let id = s.id().to_string();
            let r = optimizer::infer_scr(&ck.params, &s, &g, &id, &cfg)?;
            let (i, f) = chamfer_pair(&r.transform, &s, &g, &cfg.chamfer)?;
            print_transform(out, &r.transform, i, f)?;
            writeln!(out, "steps {}", r.trace.losses.len() - 1)?;
            Ok(EXIT_OK)
        }
        Command::Icp {
            pair,
            max_iterations,
            tolerance,
        } => {
            let entries = vec![
                ("source", pair.source.display().to_string()),
                ("target", pair.target.display().to_string()),
                ("icp_max_iterations", max_iterations.to_string()),
                ("icp_tolerance", format!("{tolerance:?}")),
            ];
            write_manifest(pair.manifest.as_deref(), &entries)?;
            if max_iterations == 0 {
                return Err(Failure::Usage("--max-iterations must be at least 1".into()));
            }
            let s = dataio::read_xyz(&pair.source)?;
            let g = dataio::read_xyz(&pair.target)?;
            let r = baselines::icp(
                &s,
                &g,
                &IcpConfig {
                    max_iterations,
                    tolerance,
                    initial: RigidTransform::identity(),
                },
            )?;
            let (i, f) = chamfer_pair(&r.transform, &s, &g, &ChamferConfig::default())?;
            print_transform(out, &r.transform, i, f)?;
            writeln!(out, "iterations {}", r.trace.len())?;
            Ok(EXIT_OK)
        }
        Command::DirectOpt { pair, tt } => {
            let cfg = test_time(&tt, 1)?;
            write_manifest(pair.manifest.as_deref(), &test_time_manifest(&pair, &cfg))?;
            let s = dataio::read_xyz(&pair.source)?;
            let g = dataio::read_xyz(&pair.target)?;
            let r = baselines::direct_optimize(&s, &g, &cfg)?;
            let (i, f) = chamfer_pair(&r.transform, &s, &g, &cfg.chamfer)?;
            print_transform(out, &r.transform, i, f)?;
            writeln!(out, "steps {}", r.trace.losses.len() - 1)?;
            Ok(EXIT_OK)
        }
        Command::Corrupt {
            input,
            output,
            kind,
            level,
            di_mode,
            outlier_std,
            seed,
            manifest,
        } => {
            let usage = |e: dataio::DataError| Failure::Usage(e.to_string());
            let spec = NoiseSpec::new(kind.parse().map_err(usage)?, level).map_err(usage)?;
            let opts = CorruptionOptions {
                di_mode: di_mode.parse().map_err(usage)?,
                outlier_std,
            };
            write_manifest(
                manifest.as_deref(),
                &[
                    ("input", input.display().to_string()),
                    ("output", output.display().to_string()),
                    ("noise_kind", spec.kind().to_string()),
                    ("noise_level", format!("{level:?}")),
                    ("di_mode", opts.di_mode.to_string()),
                    ("outlier_std", format!("{outlier_std:?}")),
                    ("seed", seed.to_string()),
                ],
            )?;
            let c = dataio::read_xyz(&input)?;
            let r = dataio::corrupt(&c, &spec, &opts, seed)?;
            dataio::write_xyz(&output, &r)?;
            writeln!(out, "{} points in, {} points out", c.len(), r.len())?;
            Ok(EXIT_OK)
        }
        Command::Benchmark { config, seed, out: dir } => {
            let cfg = load_config(&config, seed, dir)?;
            let result = eval::run_benchmark(&cfg, &mut |m| {
                let _ = writeln!(err, "{m}");
            })?;
            out.write_all(eval::render_csv(&result.table).as_bytes())?;
            writeln!(out, "wrote {}", cfg.output_dir.join("metrics.csv").display())?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck { seed, eps } => {
            let spec = GradcheckSpec {
                seed,
                eps,
                ..GradcheckSpec::default()
            };
            if !(1e-7..=1e-4).contains(&eps) {
                return Err(Failure::Usage(format!("--eps {eps} outside [1e-7, 1e-4]")));
            }
            let started = std::time::Instant::now();
            let report = eval::gradcheck(&spec)?;
            writeln!(
                out,
                "max relative error {:.3e} over {} coordinates ({:.1} s)",
                report.max_rel_err,
                report.coordinates,
                started.elapsed().as_secs_f64()
            )?;
            if let Some((leaf, i)) = &report.worst {
                writeln!(out, "worst coordinate {leaf}[{i}]")?;
            }
            if report.max_rel_err < GRADCHECK_TOLERANCE {
                writeln!(out, "PASS")?;
                Ok(EXIT_OK)
            } else {
                writeln!(out, "FAIL (tolerance {GRADCHECK_TOLERANCE:e})")?;
                Ok(EXIT_RUNTIME)
            }
        }
        Command::Report { inputs, format, output } => {
            let format: ReportFormat = format.parse().map_err(|e: EvalError| Failure::Usage(e.to_string()))?;
            let mut table = MetricsTable::default();
            for path in &inputs {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("method");
                let method = stem.strip_prefix("pairs_").unwrap_or(stem);
                let results = parse_pair_csv(&std::fs::read_to_string(path)?)
                    .map_err(|m| Failure::Runtime(format!("{}: {m}", path.display())))?;
                table.rows.push(MetricsRow::from_results(method, &results)?);
            }
            eval::emit_report(&table, format, &output)?;
            writeln!(out, "wrote {}", output.display())?;
            Ok(EXIT_OK)
        }
    }
}

/// Reads the per-pair CSV written by the benchmark.
fn parse_pair_csv(text: &str) -> std::result::Result<Vec<RegistrationResult>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if !header.starts_with("pair_id,") || header.split(',').count() != 15 {
        return Err("unexpected header".into());
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 15 {
            return Err(format!("line {}: expected 15 columns", i + 2));
        }
        let v: Vec<f64> = cols[1..]
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 2))?;
        let t = |a: &[f64]| RigidTransform::from_degrees([a[0], a[1], a[2]], [a[3], a[4], a[5]]);
        out.push(RegistrationResult {
            pair_id: cols[0].to_string(),
            predicted: t(&v[0..6]).map_err(|e| e.to_string())?,
            ground_truth: t(&v[6..12]).map_err(|e| e.to_string())?,
            initial_chamfer: v[12],
            final_chamfer: v[13],
            wall_time_s: 0.0,
        });
    }
    Ok(out)
}
