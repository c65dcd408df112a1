use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DataError, Result};
use crate::geometry::{dot, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Gaussian jitter on every point; level is the standard deviation.
    PositionDrift,
    /// A fraction of points removed.
    Incompleteness,
    /// A fraction of extra Gaussian points appended.
    Outliers,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::PositionDrift => "pd",
            NoiseKind::Incompleteness => "di",
            NoiseKind::Outliers => "do",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pd" => Ok(NoiseKind::PositionDrift),
            "di" => Ok(NoiseKind::Incompleteness),
            "do" => Ok(NoiseKind::Outliers),
            _ => Err(DataError::InvalidArgument(format!("unknown noise kind {s:?} (pd, di, do)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    kind: NoiseKind,
    level: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, level: f64) -> Result<Self> {
        let ok = match kind {
            NoiseKind::PositionDrift | NoiseKind::Outliers => level >= 0.0 && level.is_finite(),
            NoiseKind::Incompleteness => (0.0..1.0).contains(&level),
        };
        if !ok {
            return Err(DataError::InvalidArgument(format!("level {level} out of range for {kind}")));
        }
        Ok(Self { kind, level })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn level(&self) -> f64 {
        self.level
    }
}

/// How incompleteness picks the points to drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiMode {
    /// Uniformly without replacement.
    #[default]
    Uniform,
    /// The cap furthest along a random direction.
    Region,
}

impl FromStr for DiMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(DiMode::Uniform),
            "region" => Ok(DiMode::Region),
            _ => Err(DataError::InvalidArgument(format!("unknown di_mode {s:?} (uniform, region)"))),
        }
    }
}

impl fmt::Display for DiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiMode::Uniform => "uniform",
            DiMode::Region => "region",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionOptions {
    pub di_mode: DiMode,
    /// Standard deviation of appended outliers.
    pub outlier_std: f64,
}

impl Default for CorruptionOptions {
    fn default() -> Self {
        Self {
            di_mode: DiMode::Uniform,
            outlier_std: 0.5,
        }
    }
}

fn count_for(level: f64, n: usize) -> usize {
    (level * n as f64).round() as usize
}

pub fn corrupt(cloud: &PointCloud, spec: &NoiseSpec, opts: &CorruptionOptions, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cloud.points();
    let out: Vec<Vec3> = match spec.kind {
        NoiseKind::PositionDrift => {
            if spec.level == 0.0 {
                pts.to_vec()
            } else {
                let d = Normal::new(0.0, spec.level).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
                pts.iter()
                    .map(|p| [p[0] + d.sample(&mut rng), p[1] + d.sample(&mut rng), p[2] + d.sample(&mut rng)])
                    .collect()
            }
        }
        NoiseKind::Incompleteness => {
            let k = count_for(spec.level, pts.len());
            if k >= pts.len() {
                return Err(DataError::InvalidArgument(format!(
                    "removing {k} of {} points leaves nothing",
                    pts.len()
                )));
            }
            let mut drop = vec![false; pts.len()];
            match opts.di_mode {
                DiMode::Uniform => {
                    for i in rand::seq::index::sample(&mut rng, pts.len(), k) {
                        drop[i] = true;
                    }
                }
                DiMode::Region => {
                    let dir = random_direction(&mut rng);
                    let mut order: Vec<usize> = (0..pts.len()).collect();
                    order.sort_by(|&a, &b| dot(&pts[b], &dir).total_cmp(&dot(&pts[a], &dir)).then(a.cmp(&b)));
                    for &i in &order[..k] {
                        drop[i] = true;
                    }
                }
            }
            pts.iter().zip(&drop).filter(|(_, d)| !**d).map(|(p, _)| *p).collect()
        }
        NoiseKind::Outliers => {
            if !(opts.outlier_std > 0.0 && opts.outlier_std.is_finite()) {
                return Err(DataError::InvalidArgument("outlier_std must be positive".into()));
            }
            let k = count_for(spec.level, pts.len());
            let mut v = pts.to_vec();
            for _ in 0..k {
                let g: [f64; 3] = std::array::from_fn(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * opts.outlier_std
                });
                v.push(g);
            }
            v
        }
    };
    Ok(cloud.with_points(out)?)
}

fn random_direction(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = crate::geometry::norm(&v);
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}
