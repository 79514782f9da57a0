//! Meshes, convex hulls and signed distance grids.

mod hull;
pub mod inside;
mod mesh;
mod obj;
pub mod primitives;
mod sdf;

pub use hull::{compute_convex_hull, hulls_intersect, hulls_intersect_at, ConvexHull, Plane, TOUCH_TOLERANCE};
pub use mesh::{closest_point_on_triangle, triangle_area, Aabb, Obb, TriMesh};
pub use obj::{load_obj, save_obj};
pub use primitives::subdivide;
pub use sdf::{build_sdf_grid, cell_size_for, load_sidecar, SdfCache, SdfGrid};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("triangle {tri} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { tri: usize, index: u32, count: usize },
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("convex hull is degenerate: {0}")]
    DegenerateHull(String),
    #[error("failed to load {path}: {source}")]
    Obj { path: String, source: tobj::LoadError },
    #[error("invalid SDF sidecar: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
