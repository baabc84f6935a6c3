//! Explicit geometry substrate: meshes, SDF grids, isosurface extraction,
//! spatial indexing, and deterministic sampling.

pub mod grid;
pub mod io;
pub mod kdtree;
pub mod marching;
pub mod mesh;
pub mod primitives;
pub mod sampling;
pub mod sdf;
mod tables;
pub mod vec3;

pub use grid::SdfGrid;
pub use kdtree::PointIndex;
pub use marching::marching_cubes;
pub use mesh::{remesh_subdivide, PointSample, TriMesh};
pub use sampling::{sample_band_points, sample_surface_points};
pub use sdf::{sample_sdf_from_mesh, TriangleBvh};
pub use vec3::Vec3;
