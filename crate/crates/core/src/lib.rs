pub mod error;
pub mod field;
pub mod geom;
pub mod guidance;
pub mod losses;
pub mod mesh;
pub mod mt;
pub mod render;
pub mod sampler;
pub mod scalar;
pub mod tet;

pub use error::{Error, Result};
pub use geom::{Mat3, Vec3};
pub use scalar::Real;
pub mod pipeline;

/// Double-precision aliases used by the command-line front end.
pub type Mesh = mesh::TriMesh<f64>;
pub type Grid = tet::TetGrid<f64>;
pub type Field = field::FieldNet<f64>;
pub type Scene = pipeline::SceneInput<f64>;

/// Single-precision aliases.
pub type MeshF32 = mesh::TriMesh<f32>;
pub type GridF32 = tet::TetGrid<f32>;
pub type FieldF32 = field::FieldNet<f32>;
pub type SceneF32 = pipeline::SceneInput<f32>;
