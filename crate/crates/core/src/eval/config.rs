//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use super::{EvalError, Result};
use crate::autodiff::Precision;
use crate::dataio::{CorruptionOptions, DiMode, NoiseKind, NoiseSpec, ShapeKind, SplitMode};
use crate::decoder::DecoderConfig;
use crate::loss::{ChamferConfig, Reduction};
use crate::optimizer::{AdamConfig, LrSchedule, TestTimeConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Scr,
    Icp,
    Direct,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Scr => "scr",
            Method::Icp => "icp",
            Method::Direct => "direct",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "scr" => Ok(Method::Scr),
            "icp" => Ok(Method::Icp),
            "direct" => Ok(Method::Direct),
            _ => Err(EvalError::Config(format!("unknown method {s:?} (scr, icp, direct)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    ModelNet,
}

/// Which clouds the synthetic test pairs use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestShapes {
    /// The training shapes under freshly drawn transforms.
    Same,
    /// New shapes from unused seeds.
    Unseen,
}

/// Every tunable of a run. Seeds for the individual stages are derived from
/// `seed` by fixed offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub stage1_widths: Vec<usize>,
    pub rotation_head: Vec<usize>,
    pub translation_head: Vec<usize>,
    pub leaky_slope: f64,
    pub batch_norm: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub precision: Precision,
    pub test_steps: usize,
    pub test_lr: f64,
    pub test_restarts: usize,
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    pub chamfer_clip: Option<f64>,
    pub chamfer_reduction: Reduction,
    pub noise: Option<NoiseSpec>,
    pub di_mode: DiMode,
    pub outlier_std: f64,
    pub dataset: DatasetKind,
    pub data_root: Option<PathBuf>,
    pub split_mode: SplitMode,
    pub shape_kind: ShapeKind,
    pub num_shapes: usize,
    pub test_shapes: TestShapes,
    pub num_points: usize,
    pub min_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub translation_range: f64,
    pub methods: Vec<Method>,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DecoderConfig::default();
        let t = TestTimeConfig::default();
        Self {
            seed: 0,
            latent_dim: d.latent_dim,
            stage1_widths: d.stage1_widths,
            rotation_head: d.rotation_head,
            translation_head: d.translation_head,
            leaky_slope: d.leaky_slope,
            batch_norm: d.batch_norm,
            batch_size: 128,
            lr: 0.001,
            lr_decay: 0.995,
            epochs: 100,
            precision: Precision::Single,
            test_steps: t.steps,
            test_lr: t.lr,
            test_restarts: t.restarts,
            early_stop_tol: t.early_stop_tol,
            early_stop_window: t.early_stop_window,
            chamfer_clip: None,
            chamfer_reduction: Reduction::Sum,
            noise: None,
            di_mode: DiMode::Uniform,
            outlier_std: 0.5,
            dataset: DatasetKind::Synthetic,
            data_root: None,
            split_mode: SplitMode::ByShape,
            shape_kind: ShapeKind::Helix,
            num_shapes: 8,
            test_shapes: TestShapes::Same,
            num_points: 1024,
            min_rotation_deg: 0.0,
            max_rotation_deg: 45.0,
            translation_range: 0.5,
            methods: vec![Method::Scr, Method::Icp, Method::Direct],
            icp_max_iterations: 50,
            icp_tolerance: 1e-6,
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "latent_dim",
    "stage1_widths",
    "rotation_head",
    "translation_head",
    "leaky_slope",
    "batch_norm",
    "batch_size",
    "lr",
    "lr_decay",
    "epochs",
    "precision",
    "test_steps",
    "test_lr",
    "test_restarts",
    "early_stop_tol",
    "early_stop_window",
    "chamfer_clip",
    "chamfer_reduction",
    "noise_kind",
    "noise_level",
    "di_mode",
    "outlier_std",
    "dataset",
    "data_root",
    "split_mode",
    "shape_kind",
    "num_shapes",
    "test_shapes",
    "num_points",
    "min_rotation_deg",
    "max_rotation_deg",
    "translation_range",
    "methods",
    "icp_max_iterations",
    "icp_tolerance",
    "output_dir",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| EvalError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut noise_kind: Option<String> = None;
        let mut noise_level: Option<f64> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EvalError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "noise_kind" => noise_kind = Some(v.to_string()),
                "noise_level" => noise_level = Some(num(k, v)?),
                _ => cfg.set(k, v)?,
            }
        }
        cfg.noise = match (noise_kind.as_deref(), noise_level) {
            (None | Some("none"), _) => None,
            (Some(kind), level) => {
                let kind: NoiseKind = kind.parse().map_err(|e: crate::dataio::DataError| EvalError::Config(e.to_string()))?;
                let spec = NoiseSpec::new(kind, level.unwrap_or(0.0))
                    .map_err(|e| EvalError::Config(e.to_string()))?;
                Some(spec)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; unknown keys are rejected with the key in the message.
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let cfg_err = |e: crate::dataio::DataError| EvalError::Config(format!("{k}: {e}"));
        match k {
            "seed" => self.seed = num(k, v)?,
            "latent_dim" => self.latent_dim = num(k, v)?,
            "stage1_widths" => self.stage1_widths = list(k, v)?,
            "rotation_head" => self.rotation_head = list(k, v)?,
            "translation_head" => self.translation_head = list(k, v)?,
            "leaky_slope" => self.leaky_slope = num(k, v)?,
            "batch_norm" => self.batch_norm = num(k, v)?,
            "batch_size" => self.batch_size = num(k, v)?,
            "lr" => self.lr = num(k, v)?,
            "lr_decay" => self.lr_decay = num(k, v)?,
            "epochs" => self.epochs = num(k, v)?,
            "precision" => {
                self.precision = match v {
                    "single" => Precision::Single,
                    "double" => Precision::Double,
                    _ => return Err(EvalError::Config(format!("{k}: expected single or double, found {v:?}"))),
                }
            }
            "test_steps" => self.test_steps = num(k, v)?,
            "test_lr" => self.test_lr = num(k, v)?,
            "test_restarts" => self.test_restarts = num(k, v)?,
            "early_stop_tol" => self.early_stop_tol = num(k, v)?,
            "early_stop_window" => self.early_stop_window = num(k, v)?,
            "chamfer_clip" => self.chamfer_clip = if v == "none" { None } else { Some(num(k, v)?) },
            "chamfer_reduction" => {
                self.chamfer_reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(EvalError::Config(format!("{k}: expected sum or mean, found {v:?}"))),
                }
            }
            "noise_kind" => {
                self.noise = if v == "none" {
                    None
                } else {
                    let kind: NoiseKind = v.parse().map_err(cfg_err)?;
                    let level = self.noise.map_or(0.0, |n| n.level());
                    Some(NoiseSpec::new(kind, level).map_err(cfg_err)?)
                };
            }
            "noise_level" => {
                let kind = self
                    .noise
                    .map(|n| n.kind())
                    .ok_or_else(|| EvalError::Config("noise_level needs a noise_kind".into()))?;
                self.noise = Some(NoiseSpec::new(kind, num(k, v)?).map_err(cfg_err)?);
            }
            "di_mode" => self.di_mode = v.parse().map_err(cfg_err)?,
            "outlier_std" => self.outlier_std = num(k, v)?,
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetKind::Synthetic,
                    "modelnet" => DatasetKind::ModelNet,
                    _ => return Err(EvalError::Config(format!("{k}: expected synthetic or modelnet, found {v:?}"))),
                }
            }
            "data_root" => self.data_root = (v != "none").then(|| PathBuf::from(v)),
            "split_mode" => self.split_mode = v.parse().map_err(cfg_err)?,
            "shape_kind" => self.shape_kind = v.parse().map_err(cfg_err)?,
            "num_shapes" => self.num_shapes = num(k, v)?,
            "test_shapes" => {
                self.test_shapes = match v {
                    "same" => TestShapes::Same,
                    "unseen" => TestShapes::Unseen,
                    _ => return Err(EvalError::Config(format!("{k}: expected same or unseen, found {v:?}"))),
                }
            }
            "num_points" => self.num_points = num(k, v)?,
            "min_rotation_deg" => self.min_rotation_deg = num(k, v)?,
            "max_rotation_deg" => self.max_rotation_deg = num(k, v)?,
            "translation_range" => self.translation_range = num(k, v)?,
            "methods" => {
                self.methods = v.split(',').map(|s| Method::parse(s.trim())).collect::<Result<_>>()?;
            }
            "icp_max_iterations" => self.icp_max_iterations = num(k, v)?,
            "icp_tolerance" => self.icp_tolerance = num(k, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(EvalError::UnknownKey(k.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder_config()
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        let checks: [(bool, &str); 9] = [
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.lr > 0.0 && self.test_lr > 0.0, "learning rates must be positive"),
            (self.lr_decay > 0.0, "lr_decay must be positive"),
            (self.test_restarts >= 1, "test_restarts must be at least 1"),
            (self.num_shapes >= 1, "num_shapes must be at least 1"),
            (self.num_points >= 8, "num_points must be at least 8"),
            (!self.methods.is_empty(), "methods must not be empty"),
            (self.icp_max_iterations >= 1, "icp_max_iterations must be at least 1"),
            (self.outlier_std > 0.0, "outlier_std must be positive"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(EvalError::Config(msg.to_string()));
        }
        self.chamfer().validate().map_err(|e| EvalError::Config(e.to_string()))?;
        if self.dataset == DatasetKind::ModelNet && self.data_root.is_none() {
            return Err(EvalError::Config("dataset = modelnet needs data_root".into()));
        }
        Ok(())
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            latent_dim: self.latent_dim,
            stage1_widths: self.stage1_widths.clone(),
            rotation_head: self.rotation_head.clone(),
            translation_head: self.translation_head.clone(),
            leaky_slope: self.leaky_slope,
            batch_norm: self.batch_norm,
            ..DecoderConfig::default()
        }
    }

    pub fn chamfer(&self) -> ChamferConfig {
        ChamferConfig {
            clip: self.chamfer_clip,
            reduction: self.chamfer_reduction,
        }
    }

    pub fn corruption_options(&self) -> CorruptionOptions {
        CorruptionOptions {
            di_mode: self.di_mode,
            outlier_std: self.outlier_std,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            decoder: self.decoder_config(),
            batch_size: self.batch_size,
            epochs: self.epochs,
            schedule: LrSchedule {
                base: self.lr,
                decay: self.lr_decay,
            },
            adam: AdamConfig::default(),
            chamfer: self.chamfer(),
            precision: self.precision,
            init_seed: self.seed,
            latent_seed: self.seed.wrapping_add(1),
            shuffle_seed: self.seed.wrapping_add(2),
        }
    }

    pub fn test_time_config(&self) -> TestTimeConfig {
        TestTimeConfig {
            steps: self.test_steps,
            lr: self.test_lr,
            restarts: self.test_restarts,
            early_stop_tol: self.early_stop_tol,
            early_stop_window: self.early_stop_window,
            adam: AdamConfig::default(),
            chamfer: self.chamfer(),
            seed: self.seed.wrapping_add(5),
        }
    }

    pub fn shape_seed(&self) -> u64 {
        self.seed.wrapping_add(100)
    }

    pub fn train_pair_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn test_pair_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    /// The resolved configuration in parseable form, one key per line.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("stage1_widths", join(&self.stage1_widths));
        kv("rotation_head", join(&self.rotation_head));
        kv("translation_head", join(&self.translation_head));
        kv("leaky_slope", format!("{:?}", self.leaky_slope));
        kv("batch_norm", self.batch_norm.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("lr_decay", format!("{:?}", self.lr_decay));
        kv("epochs", self.epochs.to_string());
        kv(
            "precision",
            match self.precision {
                Precision::Single => "single",
                Precision::Double => "double",
            }
            .into(),
        );
        kv("test_steps", self.test_steps.to_string());
        kv("test_lr", format!("{:?}", self.test_lr));
        kv("test_restarts", self.test_restarts.to_string());
        kv("early_stop_tol", format!("{:?}", self.early_stop_tol));
        kv("early_stop_window", self.early_stop_window.to_string());
        kv("chamfer_clip", self.chamfer_clip.map_or("none".into(), |c| format!("{c:?}")));
        kv(
            "chamfer_reduction",
            match self.chamfer_reduction {
                Reduction::Sum => "sum",
                Reduction::Mean => "mean",
            }
            .into(),
        );
        match &self.noise {
            Some(n) => {
                kv("noise_kind", n.kind().to_string());
                kv("noise_level", format!("{:?}", n.level()));
            }
            None => kv("noise_kind", "none".into()),
        }
        kv("di_mode", self.di_mode.to_string());
        kv("outlier_std", format!("{:?}", self.outlier_std));
        kv(
            "dataset",
            match self.dataset {
                DatasetKind::Synthetic => "synthetic",
                DatasetKind::ModelNet => "modelnet",
            }
            .into(),
        );
        kv(
            "data_root",
            self.data_root.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
        kv("split_mode", self.split_mode.to_string());
        kv("shape_kind", self.shape_kind.to_string());
        kv("num_shapes", self.num_shapes.to_string());
        kv(
            "test_shapes",
            match self.test_shapes {
                TestShapes::Same => "same",
                TestShapes::Unseen => "unseen",
            }
            .into(),
        );
        kv("num_points", self.num_points.to_string());
        kv("min_rotation_deg", format!("{:?}", self.min_rotation_deg));
        kv("max_rotation_deg", format!("{:?}", self.max_rotation_deg));
        kv("translation_range", format!("{:?}", self.translation_range));
        kv(
            "methods",
            self.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
        );
        kv("icp_max_iterations", self.icp_max_iterations.to_string());
        kv("icp_tolerance", format!("{:?}", self.icp_tolerance));
        kv("output_dir", self.output_dir.display().to_string());
        s
    }
}
