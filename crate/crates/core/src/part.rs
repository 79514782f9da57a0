//! Per-part derived geometry shared read-only by the simulator and planners.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::geometry::{build_sdf_grid, compute_convex_hull, Aabb, ConvexHull, GeometryError, SdfCache, SdfGrid, TriMesh};

/// Mass properties in the assembled frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyProps {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub com: Point3<f64>,
}

/// How mass is derived from a part's oriented bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassModel {
    pub density: f64,
    /// Upper bound on the mass; inertia is scaled by the same factor.
    pub max_mass: f64,
}

impl Default for MassModel {
    fn default() -> Self {
        Self { density: 1.0, max_mass: 5.0 }
    }
}

// Keeps inertia invertible for sheet-like boxes.
const MIN_BOX_EDGE: f64 = 1e-3;

impl BodyProps {
    /// Solid box of the mesh's oriented bounding box.
    pub fn from_mesh(mesh: &TriMesh, model: &MassModel) -> Option<Self> {
        let obb = mesh.obb()?;
        let e = (obb.half_extents * 2.0).map(|x| x.max(MIN_BOX_EDGE));
        let mass = (model.density * e.x * e.y * e.z).min(model.max_mass);
        let local = Matrix3::from_diagonal(&Vector3::new(
            e.y * e.y + e.z * e.z,
            e.x * e.x + e.z * e.z,
            e.x * e.x + e.y * e.y,
        )) * (mass / 12.0);
        let inertia = obb.axes * local * obb.axes.transpose();
        Some(Self { mass, inertia: (inertia + inertia.transpose()) / 2.0, com: obb.center })
    }
}

/// Mesh plus everything derived from it.
#[derive(Debug, Clone)]
pub struct PartGeometry {
    pub mesh: TriMesh,
    pub sdf: SdfGrid,
    pub hull: ConvexHull,
    pub props: BodyProps,
    pub bounds: Aabb,
}

impl PartGeometry {
    pub fn build(mesh: TriMesh, mass: &MassModel, cache: Option<&SdfCache>) -> Result<Self, GeometryError> {
        let sdf = match cache {
            Some(c) => c.get_or_build(&mesh)?,
            None => build_sdf_grid(&mesh)?,
        };
        let hull = compute_convex_hull(&mesh)?;
        let bounds = mesh.bounds().ok_or(GeometryError::EmptyMesh)?;
        let props = BodyProps::from_mesh(&mesh, mass).ok_or(GeometryError::EmptyMesh)?;
        Ok(Self { mesh, sdf, hull, props, bounds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::cuboid;

    #[test]
    fn box_mass_properties() {
        let m = cuboid(Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 1.0, 0.5));
        let p = BodyProps::from_mesh(&m, &MassModel::default()).unwrap();
        assert!((p.mass - 1.0).abs() < 1e-12);
        assert!((p.com - Point3::new(1.0, 0.5, 0.25)).norm() < 1e-12);
        assert!((p.inertia[(2, 2)] - 5.0 / 12.0).abs() < 1e-12);
        assert!(p.inertia.cholesky().is_some());
    }

    #[test]
    fn heavy_parts_are_capped() {
        let m = cuboid(Point3::origin(), Point3::new(4.0, 4.0, 4.0));
        let p = BodyProps::from_mesh(&m, &MassModel::default()).unwrap();
        assert_eq!(p.mass, 5.0);
        assert!((p.inertia[(0, 0)] - 5.0 * 32.0 / 12.0).abs() < 1e-9);
    }
}
