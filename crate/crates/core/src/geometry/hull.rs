use nalgebra::{Isometry3, Point3, Unit, Vector3};
use parry3d_f64::shape::ConvexPolyhedron;

use super::{GeometryError, TriMesh};

/// Hulls closer than this are treated as touching.
pub const TOUCH_TOLERANCE: f64 = 1e-6;
const DEGENERATE_INFLATION: f64 = 1e-6;

/// Outward-oriented plane `normal · x = offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
}

#[derive(Clone)]
pub struct ConvexHull {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub faces: Vec<Plane>,
    shape: ConvexPolyhedron,
}

impl std::fmt::Debug for ConvexHull {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexHull")
            .field("vertices", &self.vertices.len())
            .field("faces", &self.faces.len())
            .finish()
    }
}

impl ConvexHull {
    pub fn from_points(points: &[Point3<f64>]) -> Result<Self, GeometryError> {
        if points.len() < 4 {
            return Err(GeometryError::DegenerateHull(format!("{} points", points.len())));
        }
        if let Some(h) = Self::try_build(points) {
            return Ok(h);
        }
        let (inflated, stretch) = inflate_degenerate(points);
        // Hull topology is affine invariant: compute it on a stretched copy, keep the inflated points.
        let stretched: Vec<_> = inflated.iter().map(|p| stretch.transform_point(p)).collect();
        let (sv, st) = parry3d_f64::transformation::try_convex_hull(&stretched)
            .map_err(|e| GeometryError::DegenerateHull(format!("{e:?}")))?;
        let inverse = stretch.try_inverse().expect("stretch is invertible");
        let vertices: Vec<_> = sv.iter().map(|p| inverse.transform_point(p)).collect();
        Self::from_hull_mesh(vertices, st)
            .ok_or_else(|| GeometryError::DegenerateHull("hull failed after inflation".into()))
    }

    fn try_build(points: &[Point3<f64>]) -> Option<Self> {
        let (vertices, triangles) = parry3d_f64::transformation::try_convex_hull(points).ok()?;
        let hull = Self::from_hull_mesh(vertices, triangles)?;
        let scale = TriMesh { vertices: hull.vertices.clone(), triangles: vec![] }.bounds()?.extents().max().max(1e-12);
        (hull.volume() > 1e-12 * scale.powi(3)).then_some(hull)
    }

    fn from_hull_mesh(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Option<Self> {
        if vertices.len() < 4 {
            return None;
        }
        let shape = ConvexPolyhedron::from_convex_mesh(vertices.clone(), &triangles)?;
        let faces = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                let normal = Unit::new_normalize((b - a).cross(&(c - a)));
                Plane { normal, offset: normal.dot(&a.coords) }
            })
            .collect();
        Some(Self { vertices, triangles, faces, shape })
    }

    pub fn volume(&self) -> f64 {
        TriMesh { vertices: self.vertices.clone(), triangles: self.triangles.clone() }.volume()
    }

    /// Whether `p` lies inside or on the hull within `slack`.
    pub fn contains(&self, p: &Point3<f64>, slack: f64) -> bool {
        self.faces.iter().all(|f| f.normal.dot(&p.coords) <= f.offset + slack)
    }

    pub fn shape(&self) -> &ConvexPolyhedron {
        &self.shape
    }
}

pub fn compute_convex_hull(mesh: &TriMesh) -> Result<ConvexHull, GeometryError> {
    ConvexHull::from_points(&mesh.vertices)
}

/// Separation test with touching counted as intersecting.
pub fn hulls_intersect(a: &ConvexHull, b: &ConvexHull) -> bool {
    hulls_intersect_at(a, &Isometry3::identity(), b, &Isometry3::identity())
}

pub fn hulls_intersect_at(a: &ConvexHull, pa: &Isometry3<f64>, b: &ConvexHull, pb: &Isometry3<f64>) -> bool {
    match parry3d_f64::query::distance(pa, &a.shape, pb, &b.shape) {
        Ok(d) => d <= TOUCH_TOLERANCE,
        Err(_) => true,
    }
}

// Duplicates the points offset along the direction(s) of least spread, and returns an
// affine map that stretches those directions back to unit scale.
fn inflate_degenerate(points: &[Point3<f64>]) -> (Vec<Point3<f64>>, nalgebra::Matrix4<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cov = points.iter().fold(nalgebra::Matrix3::zeros(), |a, p| {
        let d = p.coords - mean;
        a + d * d.transpose()
    });
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let thin = eig.eigenvectors.column(order[0]).into_owned();
    let stretch_along = |dirs: &[Vector3<f64>]| {
        let mut m = nalgebra::Matrix3::identity();
        for d in dirs {
            m += d * d.transpose() * (1.0 / DEGENERATE_INFLATION - 1.0);
        }
        m.to_homogeneous()
    };
    let mut out = Vec::with_capacity(points.len() * 4);
    for p in points {
        out.push(p + thin * DEGENERATE_INFLATION);
        out.push(p - thin * DEGENERATE_INFLATION);
    }
    // Collinear input also needs the second thin direction.
    if eig.eigenvalues[order[1]] <= 1e-18 * eig.eigenvalues[order[2]].max(1e-300) {
        let second = eig.eigenvectors.column(order[1]).into_owned();
        let extra: Vec<_> = out.iter().flat_map(|p| [p + second * DEGENERATE_INFLATION, p - second * DEGENERATE_INFLATION]).collect();
        return (extra, stretch_along(&[thin, second]));
    }
    (out, stretch_along(&[thin]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{cuboid, tetrahedron, torus};

    fn unit_cube(c: Point3<f64>) -> ConvexHull {
        let h = Vector3::repeat(0.5);
        compute_convex_hull(&cuboid(c - h, c + h)).unwrap()
    }

    #[test]
    fn cube_hull_has_eight_vertices() {
        assert_eq!(unit_cube(Point3::origin()).vertices.len(), 8);
    }

    #[test]
    fn torus_hull_is_larger() {
        let t = torus(2.0, 0.5, 32, 16);
        let h = compute_convex_hull(&t).unwrap();
        assert!(h.volume() > t.volume());
        assert!(t.vertices.iter().all(|v| h.contains(v, 1e-6)));
    }

    #[test]
    fn tetrahedron_hull_is_itself() {
        let p = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        let h = compute_convex_hull(&tetrahedron(p)).unwrap();
        assert_eq!(h.vertices.len(), 4);
        assert!((h.volume() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn planar_input_is_inflated() {
        let pts: Vec<_> = (0..5).flat_map(|i| (0..5).map(move |j| Point3::new(i as f64, j as f64, 0.0))).collect();
        let h = ConvexHull::from_points(&pts).unwrap();
        assert!(pts.iter().all(|p| h.contains(p, 1e-9)));
        assert!(h.volume() > 0.0 && h.volume() < 1e-4);
    }

    #[test]
    fn separated_coincident_and_touching() {
        let a = unit_cube(Point3::origin());
        assert!(!hulls_intersect(&a, &unit_cube(Point3::new(10.0, 0.0, 0.0))));
        assert!(hulls_intersect(&a, &unit_cube(Point3::origin())));
        assert!(hulls_intersect(&a, &unit_cube(Point3::new(1.0, 0.0, 0.0))));
        assert!(!hulls_intersect(&a, &unit_cube(Point3::new(1.0 + 1e-3, 0.0, 0.0))));
    }
}
