pub mod camera;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kdtree;
pub mod manifest;
pub mod mask;
pub mod model;
pub mod pipeline;
pub mod ply;
pub mod refine;
pub mod render;
pub mod rng;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
pub use model::{ClassId, LabelSet, PointCloud, Vec3, UNLABELED};
