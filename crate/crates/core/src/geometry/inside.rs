//! Inside/outside classification by axis-aligned ray parity.

use nalgebra::Point3;

use super::{Aabb, TriMesh};

// Transverse offsets keep rays off mesh edges and vertices that lie on round coordinates.
const JITTER: [[f64; 2]; 3] = [[3.17e-9, 7.41e-9], [5.93e-9, 2.27e-9], [8.63e-9, 4.79e-9]];

fn transverse(axis: usize) -> (usize, usize) {
    ((axis + 1) % 3, (axis + 2) % 3)
}

/// Coordinate along `axis` where the line through (pu, pv) crosses the triangle, if it does.
fn crossing(t: &[Point3<f64>; 3], axis: usize, pu: f64, pv: f64) -> Option<f64> {
    let (u, v) = transverse(axis);
    let (au, av) = (t[0][u] - pu, t[0][v] - pv);
    let (bu, bv) = (t[1][u] - pu, t[1][v] - pv);
    let (cu, cv) = (t[2][u] - pu, t[2][v] - pv);
    let w0 = bu * cv - bv * cu;
    let w1 = cu * av - cv * au;
    let w2 = au * bv - av * bu;
    let positive = w0 > 0.0 && w1 > 0.0 && w2 > 0.0;
    let negative = w0 < 0.0 && w1 < 0.0 && w2 < 0.0;
    if !(positive || negative) {
        return None;
    }
    let s = w0 + w1 + w2;
    Some((w0 * t[0][axis] + w1 * t[1][axis] + w2 * t[2][axis]) / s)
}

/// For every column `(us[i], vs[j])` parallel to `axis`, the sorted coordinates where the
/// column crosses the surface. Result is indexed `i * vs.len() + j`.
pub fn column_crossings(mesh: &TriMesh, axis: usize, us: &[f64], vs: &[f64]) -> Vec<Vec<f64>> {
    let (u, v) = transverse(axis);
    let [ju, jv] = JITTER[axis];
    let mut cols = vec![Vec::new(); us.len() * vs.len()];
    let range = |lo: f64, hi: f64, axis_vals: &[f64], jit: f64| {
        let a = axis_vals.partition_point(|&x| x + jit < lo);
        let b = axis_vals.partition_point(|&x| x + jit <= hi);
        a..b
    };
    for ti in 0..mesh.triangles.len() {
        let t = mesh.triangle(ti);
        let (umin, umax) = min_max(t.iter().map(|p| p[u]));
        let (vmin, vmax) = min_max(t.iter().map(|p| p[v]));
        for i in range(umin, umax, us, ju) {
            for j in range(vmin, vmax, vs, jv) {
                if let Some(x) = crossing(&t, axis, us[i] + ju, vs[j] + jv) {
                    cols[i * vs.len() + j].push(x);
                }
            }
        }
    }
    cols.iter_mut().for_each(|c| c.sort_by(f64::total_cmp));
    cols
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

/// Point-in-mesh tester with a 2D bin grid per ray axis.
pub struct InsideTester<'a> {
    mesh: &'a TriMesh,
    bounds: Aabb,
    bins: [Bins; 3],
}

struct Bins {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    tris: Vec<Vec<u32>>,
}

impl<'a> InsideTester<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let bounds = mesh.bounds().unwrap_or(Aabb::new(Point3::origin(), Point3::origin()));
        let res = ((mesh.triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let bins = std::array::from_fn(|axis| {
            let (u, v) = transverse(axis);
            let origin = [bounds.min[u], bounds.min[v]];
            let ext = [bounds.max[u] - bounds.min[u], bounds.max[v] - bounds.min[v]];
            let cell = [ext[0].max(1e-12) / res as f64, ext[1].max(1e-12) / res as f64];
            let mut tris = vec![Vec::new(); res * res];
            for ti in 0..mesh.triangles.len() {
                let t = mesh.triangle(ti);
                let (umin, umax) = min_max(t.iter().map(|p| p[u]));
                let (vmin, vmax) = min_max(t.iter().map(|p| p[v]));
                let cu = |x: f64| (((x - origin[0]) / cell[0]).floor().max(0.0) as usize).min(res - 1);
                let cv = |x: f64| (((x - origin[1]) / cell[1]).floor().max(0.0) as usize).min(res - 1);
                for i in cu(umin)..=cu(umax) {
                    for j in cv(vmin)..=cv(vmax) {
                        tris[i * res + j].push(ti as u32);
                    }
                }
            }
            Bins { origin, cell, dims: [res, res], tris }
        });
        Self { mesh, bounds, bins }
    }

    fn parity(&self, p: &Point3<f64>, axis: usize) -> bool {
        let (u, v) = transverse(axis);
        let [ju, jv] = JITTER[axis];
        let (pu, pv) = (p[u] + ju, p[v] + jv);
        let b = &self.bins[axis];
        let i = ((pu - b.origin[0]) / b.cell[0]).floor();
        let j = ((pv - b.origin[1]) / b.cell[1]).floor();
        if i < 0.0 || j < 0.0 || i as usize >= b.dims[0] || j as usize >= b.dims[1] {
            return false;
        }
        let list = &b.tris[i as usize * b.dims[1] + j as usize];
        let count = list
            .iter()
            .filter_map(|&ti| crossing(&self.mesh.triangle(ti as usize), axis, pu, pv))
            .filter(|&x| x > p[axis])
            .count();
        count % 2 == 1
    }

    /// Majority vote of the three axis rays.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        if !self.bounds.contains(p) {
            return false;
        }
        (0..3).filter(|&a| self.parity(p, a)).count() >= 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{box_union, cuboid, icosphere};

    #[test]
    fn cube_interior_and_exterior() {
        let m = cuboid(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        let t = InsideTester::new(&m);
        assert!(t.contains(&Point3::origin()));
        // Exactly on a vertex-aligned ray.
        assert!(t.contains(&Point3::new(0.0, 0.0, 0.5)));
        assert!(!t.contains(&Point3::new(1.5, 0.0, 0.0)));
    }

    #[test]
    fn sphere_matches_radius() {
        let m = icosphere(Point3::origin(), 1.0, 3);
        let t = InsideTester::new(&m);
        for k in 0..200 {
            let r = 0.05 + 0.9 * (k as f64 / 200.0);
            let d = nalgebra::Vector3::new(0.3, -0.7, 0.5).normalize();
            assert!(t.contains(&(Point3::origin() + d * r)));
            assert!(!t.contains(&(Point3::origin() + d * (r + 1.1))));
        }
    }

    #[test]
    fn hole_is_outside() {
        let m = box_union(&[
            (Point3::new(-2.0, -2.0, 0.0), Point3::new(-0.5, 2.0, 1.0)),
            (Point3::new(0.5, -2.0, 0.0), Point3::new(2.0, 2.0, 1.0)),
            (Point3::new(-0.5, -2.0, 0.0), Point3::new(0.5, -0.5, 1.0)),
            (Point3::new(-0.5, 0.5, 0.0), Point3::new(0.5, 2.0, 1.0)),
        ]);
        let t = InsideTester::new(&m);
        assert!(!t.contains(&Point3::new(0.0, 0.0, 0.5)));
        assert!(t.contains(&Point3::new(1.0, 0.0, 0.5)));
    }

    #[test]
    fn columns_count_two_crossings_through_cube() {
        let m = cuboid(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        let cols = column_crossings(&m, 2, &[0.0, 0.5, 2.0], &[0.0]);
        assert_eq!(cols[0].len(), 2);
        assert_eq!(cols[1].len(), 2);
        assert!(cols[2].is_empty());
    }
}
