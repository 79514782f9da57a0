use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix4, Point3, SymmetricEigen, Vector3};
use sha2::{Digest, Sha256};

use super::GeometryError;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        Some(it.fold(Self::new(first, first), |b, p| b.include(p)))
    }

    pub fn include(self, p: &Point3<f64>) -> Self {
        Self::new(self.min.inf(p), self.max.sup(p))
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Vector3::repeat(margin);
        Aabb::new(self.min - m, self.max + m)
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        [
            Point3::new(a.x, a.y, a.z),
            Point3::new(b.x, a.y, a.z),
            Point3::new(a.x, b.y, a.z),
            Point3::new(b.x, b.y, a.z),
            Point3::new(a.x, a.y, b.z),
            Point3::new(b.x, a.y, b.z),
            Point3::new(a.x, b.y, b.z),
            Point3::new(b.x, b.y, b.z),
        ]
    }
}

/// Oriented bounding box. `axes` columns are unit directions, `half_extents` along them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Point3<f64>,
    pub axes: Matrix3<f64>,
    pub half_extents: Vector3<f64>,
}

impl Obb {
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn thinnest_edge(&self) -> f64 {
        2.0 * self.half_extents.min()
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let count = vertices.len();
        for (tri, t) in triangles.iter().enumerate() {
            if let Some(&index) = t.iter().find(|&&i| i as usize >= count) {
                return Err(GeometryError::IndexOutOfRange { tri, index, count });
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Signed volume via the divergence theorem; positive for outward-oriented closed meshes.
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.coords.dot(&b.coords.cross(&c.coords))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| triangle_area(&self.triangle(t))).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |k| (t[k], t[(k + 1) % 3]))
            })
            .map(|(a, b)| (self.vertices[a as usize] - self.vertices[b as usize]).norm())
            .fold(0.0, f64::max)
    }

    /// Reports why the mesh is not a closed, consistently oriented 2-manifold surface.
    pub fn watertight_diagnostic(&self) -> Result<(), String> {
        if self.triangles.is_empty() {
            return Err("mesh has no triangles".into());
        }
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(format!("triangle {ti} is degenerate"));
            }
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 {
                return Err(format!("edge ({a}, {b}) is used {n} times with the same orientation"));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(format!("edge ({a}, {b}) is a boundary edge"));
            }
        }
        Ok(())
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight_diagnostic().is_ok()
    }

    pub fn transformed(&self, m: &Matrix4<f64>) -> TriMesh {
        let vertices = self.vertices.iter().map(|p| m.transform_point(p)).collect();
        let mut triangles = self.triangles.clone();
        if m.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
            triangles.iter_mut().for_each(|t| t.swap(1, 2));
        }
        TriMesh { vertices, triangles }
    }

    pub fn map_vertices(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> TriMesh {
        TriMesh { vertices: self.vertices.iter().map(f).collect(), triangles: self.triangles.clone() }
    }

    /// Appends another mesh as an additional shell.
    pub fn merge(&mut self, other: &TriMesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }

    /// SHA-256 over the raw vertex and index data.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_le_bytes());
            }
        }
        h.update((self.triangles.len() as u64).to_le_bytes());
        for t in &self.triangles {
            for i in t {
                h.update(i.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Smaller of the PCA-aligned box and the axis-aligned box.
    pub fn obb(&self) -> Option<Obb> {
        let aabb = self.bounds()?;
        let aabb_box = Obb {
            center: aabb.center(),
            axes: Matrix3::identity(),
            half_extents: aabb.extents() / 2.0,
        };
        let n = self.vertices.len() as f64;
        let mean = self.vertices.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
        let cov = self
            .vertices
            .iter()
            .fold(Matrix3::zeros(), |a, p| {
                let d = p.coords - mean;
                a + d * d.transpose()
            })
            / n;
        let eig = SymmetricEigen::new(cov);
        let mut axes = eig.eigenvectors;
        if axes.determinant() < 0.0 {
            axes.column_mut(2).neg_mut();
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            let local = axes.transpose() * p.coords;
            lo = lo.inf(&local);
            hi = hi.sup(&local);
        }
        let pca_box = Obb {
            center: Point3::from(axes * ((lo + hi) / 2.0)),
            axes,
            half_extents: (hi - lo) / 2.0,
        };
        if pca_box.volume() < aabb_box.volume() * (1.0 - 1e-9) {
            Some(pca_box)
        } else {
            Some(aabb_box)
        }
    }

    /// Unique undirected edges.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }
}

pub fn triangle_area(t: &[Point3<f64>; 3]) -> f64 {
    (t[1] - t[0]).cross(&(t[2] - t[0])).norm() / 2.0
}

/// Closest point on triangle `t` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Point3<f64>, t: &[Point3<f64>; 3]) -> Point3<f64> {
    let (a, b, c) = (t[0], t[1], t[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::cuboid;

    #[test]
    fn cube_volume_and_watertight() {
        let m = cuboid(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        assert!((m.volume() - 8.0).abs() < 1e-12);
        assert!(m.is_watertight());
        assert_eq!(m.edges().len(), 18);
    }

    #[test]
    fn missing_face_is_not_watertight() {
        let mut m = cuboid(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        m.triangles.truncate(10);
        assert!(!m.is_watertight());
    }

    #[test]
    fn two_disjoint_shells_are_watertight() {
        let mut m = cuboid(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        m.merge(&cuboid(Point3::new(3.0, 0.0, 0.0), Point3::new(4.0, 1.0, 1.0)));
        assert!(m.is_watertight());
    }

    #[test]
    fn obb_of_rotated_slab_is_tight() {
        let slab = cuboid(Point3::new(-2.0, -1.0, -0.05), Point3::new(2.0, 1.0, 0.05));
        let r = nalgebra::Rotation3::from_euler_angles(0.3, 0.5, 0.2).to_homogeneous();
        let obb = slab.transformed(&r).obb().unwrap();
        assert!((obb.thinnest_edge() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn closest_point_cases() {
        let t = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        let q = closest_point_on_triangle(&Point3::new(0.2, 0.2, 3.0), &t);
        assert!((q - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
        let q = closest_point_on_triangle(&Point3::new(-1.0, -1.0, 0.0), &t);
        assert!((q - t[0]).norm() < 1e-12);
        let q = closest_point_on_triangle(&Point3::new(1.0, 1.0, 0.0), &t);
        assert!((q - Point3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }
}
