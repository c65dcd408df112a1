//! Mesh and cloud I/O, synthetic shapes, noise corruptions, pair generation
//! and checkpoint persistence.

mod checkpoint;
mod mesh;
mod modelnet;
mod noise;
mod pairs;
mod synth;
mod xyz;

use thiserror::Error;

pub use checkpoint::{
    decode_tensors, encode_tensors, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use mesh::{parse_off, read_off, sample_surface, write_off, TriangleMesh, DEFAULT_SAMPLE_COUNT};
pub use modelnet::{scan_modelnet, DatasetSplit, MeshEntry, SplitMode, CATEGORY_TRAIN_COUNT};
pub use noise::{corrupt, CorruptionOptions, DiMode, NoiseKind, NoiseSpec};
pub use pairs::{make_pairs, RegistrationPair};
pub use synth::{synth_shape, ShapeKind};
pub use xyz::{parse_xyz, read_xyz, write_xyz};

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, DataError>;
