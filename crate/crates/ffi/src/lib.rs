//! C interface to the scralign registration toolkit.
//!
//! Clouds and models are opaque handles created and freed by this library.
//! Every fallible call returns a [`ScraStatus`]; on failure a message is
//! available from [`scra_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use scralign::baselines::{self, BaselineError, IcpConfig};
use scralign::dataio::{self, DataError};
use scralign::decoder::DecoderParams;
use scralign::geometry::{self, GeometryError, PointCloud, RigidTransform};
use scralign::loss::{self, ChamferConfig, LossError};
use scralign::optimizer::{self, OptimError, TestTimeConfig, TestTimeOutcome};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed input file or checkpoint.
    Parse = 4,
    /// Degenerate geometry or a non-finite loss.
    Numeric = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// A point cloud owned by the library.
pub struct ScraCloud(PointCloud);

/// A trained decoder loaded from a checkpoint.
pub struct ScraModel(DecoderParams);

/// Rigid transform: Euler angles in degrees (applied x, then y, then z) and
/// a translation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScraTransform {
    pub angles_deg: [f64; 3],
    pub translation: [f64; 3],
}

/// Budget for the gradient-based registrations.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScraTestTimeOptions {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    /// Per-point cap on squared distances; zero or negative disables it.
    pub clip: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScraRegistration {
    pub transform: ScraTransform,
    /// Chamfer distance of the untransformed source to the target.
    pub chamfer_initial: f64,
    pub chamfer_final: f64,
    /// Optimizer steps or ICP iterations actually run.
    pub iterations: usize,
}

struct Error {
    status: ScraStatus,
    message: String,
}

impl Error {
    fn new(status: ScraStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<DataError> for Error {
    fn from(e: DataError) -> Self {
        let status = match &e {
            DataError::Io(_) => ScraStatus::Io,
            DataError::Parse { .. } | DataError::CorruptCheckpoint(_) | DataError::VersionMismatch { .. } => {
                ScraStatus::Parse
            }
            _ => ScraStatus::InvalidArgument,
        };
        Error::new(status, e.to_string())
    }
}

impl From<GeometryError> for Error {
    fn from(e: GeometryError) -> Self {
        Error::new(ScraStatus::InvalidArgument, e.to_string())
    }
}

impl From<LossError> for Error {
    fn from(e: LossError) -> Self {
        Error::new(ScraStatus::InvalidArgument, e.to_string())
    }
}

impl From<OptimError> for Error {
    fn from(e: OptimError) -> Self {
        let status = match &e {
            OptimError::Config(_) => ScraStatus::InvalidArgument,
            _ => ScraStatus::Numeric,
        };
        Error::new(status, e.to_string())
    }
}

impl From<BaselineError> for Error {
    fn from(e: BaselineError) -> Self {
        let status = match &e {
            BaselineError::InvalidArgument(_) => ScraStatus::InvalidArgument,
            _ => ScraStatus::Numeric,
        };
        Error::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording any error or panic for [`scra_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Error>) -> ScraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScraStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(_) => {
            set_last_error("internal panic");
            ScraStatus::Panic
        }
    }
}

fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Error> {
    // SAFETY: callers pass either null or a pointer obtained from this library
    // (or a valid caller-owned struct) that outlives the call.
    unsafe { p.as_ref() }.ok_or_else(|| Error::new(ScraStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Error> {
    // SAFETY: as in `deref`; the caller provides writable storage.
    unsafe { p.as_mut() }.ok_or_else(|| Error::new(ScraStatus::NullPointer, format!("{what} is null")))
}

fn path_arg(p: *const c_char) -> Result<PathBuf, Error> {
    if p.is_null() {
        return Err(Error::new(ScraStatus::NullPointer, "path is null"));
    }
    // SAFETY: non-null and documented to be a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Error::new(ScraStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Error> {
    *out_ptr(out, "output handle")? = Box::into_raw(Box::new(value));
    Ok(())
}

fn to_transform(t: &ScraTransform) -> Result<RigidTransform, Error> {
    Ok(RigidTransform::from_degrees(t.angles_deg, t.translation)?)
}

fn from_transform(t: &RigidTransform) -> ScraTransform {
    ScraTransform {
        angles_deg: t.angles_deg(),
        translation: t.translation,
    }
}

fn chamfer_config(clip: f64) -> Result<ChamferConfig, Error> {
    let cfg = ChamferConfig {
        clip: (clip > 0.0).then_some(clip),
        ..ChamferConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn test_time(opts: &ScraTestTimeOptions) -> Result<TestTimeConfig, Error> {
    Ok(TestTimeConfig {
        steps: opts.steps,
        lr: opts.lr,
        restarts: opts.restarts,
        chamfer: chamfer_config(opts.clip)?,
        seed: opts.seed,
        ..TestTimeConfig::default()
    })
}

fn registration(
    t: &RigidTransform,
    source: &PointCloud,
    target: &PointCloud,
    cfg: &ChamferConfig,
    iterations: usize,
) -> Result<ScraRegistration, Error> {
    Ok(ScraRegistration {
        transform: from_transform(t),
        chamfer_initial: loss::chamfer(source.points(), target.points(), cfg)?,
        chamfer_final: loss::chamfer(geometry::apply_transform(t, source).points(), target.points(), cfg)?,
        iterations,
    })
}

fn from_outcome(
    r: &TestTimeOutcome,
    source: &PointCloud,
    target: &PointCloud,
    cfg: &TestTimeConfig,
) -> Result<ScraRegistration, Error> {
    registration(&r.transform, source, target, &cfg.chamfer, r.trace.losses.len() - 1)
}

/// Message for the most recent failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn scra_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Defaults matching the command-line tool: 500 steps, lr 0.001, one
/// restart, no clipping, seed 0.
#[no_mangle]
pub extern "C" fn scra_test_time_defaults() -> ScraTestTimeOptions {
    let d = TestTimeConfig::default();
    ScraTestTimeOptions {
        steps: d.steps,
        lr: d.lr,
        restarts: d.restarts,
        clip: 0.0,
        seed: d.seed,
    }
}

/// Copies `n_points` xyz triples from `xyz` into a new cloud.
///
/// # Safety
/// `xyz` must point to `3 * n_points` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_cloud_new(xyz: *const f64, n_points: usize, out: *mut *mut ScraCloud) -> ScraStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(Error::new(ScraStatus::NullPointer, "xyz is null"));
        }
        let len = n_points
            .checked_mul(3)
            .ok_or_else(|| Error::new(ScraStatus::InvalidArgument, "n_points too large"))?;
        // SAFETY: the caller guarantees `3 * n_points` readable doubles.
        let flat = unsafe { std::slice::from_raw_parts(xyz, len) };
        let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        boxed(out, ScraCloud(PointCloud::new("ffi", points)?))
    })
}

/// Reads a cloud from a text file with one `x y z` line per point.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_cloud_read_xyz(path: *const c_char, out: *mut *mut ScraCloud) -> ScraStatus {
    guard(|| boxed(out, ScraCloud(dataio::read_xyz(&path_arg(path)?)?)))
}

/// Releases a cloud. Null is ignored.
///
/// # Safety
/// `cloud` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scra_cloud_free(cloud: *mut ScraCloud) {
    if !cloud.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(cloud) });
    }
}

/// Number of points, or 0 for null.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scra_cloud_len(cloud: *const ScraCloud) -> usize {
    // SAFETY: null or a live handle, per the contract.
    unsafe { cloud.as_ref() }.map_or(0, |c| c.0.len())
}

/// Copies the points into `xyz`, which holds `capacity_points` triples.
///
/// # Safety
/// `cloud` must be a live handle; `xyz` must hold `3 * capacity_points` doubles.
#[no_mangle]
pub unsafe extern "C" fn scra_cloud_points(cloud: *const ScraCloud, xyz: *mut f64, capacity_points: usize) -> ScraStatus {
    guard(|| {
        let c = deref(cloud, "cloud")?;
        if xyz.is_null() {
            return Err(Error::new(ScraStatus::NullPointer, "xyz is null"));
        }
        if capacity_points < c.0.len() {
            return Err(Error::new(
                ScraStatus::InvalidArgument,
                format!("buffer holds {capacity_points} points, cloud has {}", c.0.len()),
            ));
        }
        // SAFETY: capacity checked above; the caller guarantees the buffer size.
        let dst = unsafe { std::slice::from_raw_parts_mut(xyz, 3 * c.0.len()) };
        for (d, p) in dst.chunks_exact_mut(3).zip(c.0.points()) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// New cloud holding `transform` applied to `cloud`.
///
/// # Safety
/// Pointers must be live handles or valid structs; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_apply_transform(
    transform: *const ScraTransform,
    cloud: *const ScraCloud,
    out: *mut *mut ScraCloud,
) -> ScraStatus {
    guard(|| {
        let t = to_transform(deref(transform, "transform")?)?;
        let c = deref(cloud, "cloud")?;
        boxed(out, ScraCloud(geometry::apply_transform(&t, &c.0)))
    })
}

/// Symmetric Chamfer distance; `clip` ≤ 0 disables clipping.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_chamfer(a: *const ScraCloud, b: *const ScraCloud, clip: f64, out: *mut f64) -> ScraStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        *out_ptr(out, "out")? = loss::chamfer(a.0.points(), b.0.points(), &chamfer_config(clip)?)?;
        Ok(())
    })
}

/// Point-to-point ICP from the identity.
///
/// # Safety
/// `source` and `target` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_icp(
    source: *const ScraCloud,
    target: *const ScraCloud,
    max_iterations: usize,
    tolerance: f64,
    out: *mut ScraRegistration,
) -> ScraStatus {
    guard(|| {
        let (s, g) = (deref(source, "source")?, deref(target, "target")?);
        let cfg = IcpConfig {
            max_iterations,
            tolerance,
            initial: RigidTransform::identity(),
        };
        let r = baselines::icp(&s.0, &g.0, &cfg)?;
        *out_ptr(out, "out")? = registration(&r.transform, &s.0, &g.0, &ChamferConfig::default(), r.trace.len())?;
        Ok(())
    })
}

/// Adam on the six transform parameters from the identity.
///
/// # Safety
/// `source`, `target` and `options` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_direct_optimize(
    source: *const ScraCloud,
    target: *const ScraCloud,
    options: *const ScraTestTimeOptions,
    out: *mut ScraRegistration,
) -> ScraStatus {
    guard(|| {
        let (s, g) = (deref(source, "source")?, deref(target, "target")?);
        let cfg = test_time(deref(options, "options")?)?;
        let r = baselines::direct_optimize(&s.0, &g.0, &cfg)?;
        *out_ptr(out, "out")? = from_outcome(&r, &s.0, &g.0, &cfg)?;
        Ok(())
    })
}

/// Loads the decoder from a checkpoint written by `scralign train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_model_load(path: *const c_char, out: *mut *mut ScraModel) -> ScraStatus {
    guard(|| boxed(out, ScraModel(dataio::load_checkpoint(&path_arg(path)?)?.params)))
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scra_model_free(model: *mut ScraModel) {
    if !model.is_null() {
        // SAFETY: the handle came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Latent size of a model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scra_model_latent_dim(model: *const ScraModel) -> usize {
    // SAFETY: null or a live handle, per the contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.0.config().latent_dim)
}

/// Registers `source` to `target` by optimizing a fresh latent code against
/// the frozen decoder.
///
/// # Safety
/// All pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scra_register(
    model: *const ScraModel,
    source: *const ScraCloud,
    target: *const ScraCloud,
    options: *const ScraTestTimeOptions,
    out: *mut ScraRegistration,
) -> ScraStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let (s, g) = (deref(source, "source")?, deref(target, "target")?);
        let cfg = test_time(deref(options, "options")?)?;
        let r = optimizer::infer_scr(&m.0, &s.0, &g.0, s.0.id(), &cfg)?;
        *out_ptr(out, "out")? = from_outcome(&r, &s.0, &g.0, &cfg)?;
        Ok(())
    })
}
