//! Procedural watertight meshes used by fixtures and tests.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};

use super::TriMesh;

/// Axis-aligned box with outward-facing triangles.
pub fn cuboid(min: Point3<f64>, max: Point3<f64>) -> TriMesh {
    box_union(&[(min, max)])
}

/// Surface of the union of axis-aligned boxes.
///
/// The union is rasterised on the rectilinear grid spanned by all box
/// coordinates and every face between a filled and an empty cell is emitted,
/// so the result is closed as long as no two filled cells touch only along an
/// edge or a corner.
pub fn box_union(boxes: &[(Point3<f64>, Point3<f64>)]) -> TriMesh {
    let mut coords: [Vec<f64>; 3] = Default::default();
    for (lo, hi) in boxes {
        for a in 0..3 {
            coords[a].push(lo[a]);
            coords[a].push(hi[a]);
        }
    }
    for c in coords.iter_mut() {
        c.sort_by(f64::total_cmp);
        c.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    }
    let n = [coords[0].len() - 1, coords[1].len() - 1, coords[2].len() - 1];
    let filled = |i: isize, j: isize, k: isize| -> bool {
        if i < 0 || j < 0 || k < 0 || i as usize >= n[0] || j as usize >= n[1] || k as usize >= n[2] {
            return false;
        }
        let c = Point3::new(
            (coords[0][i as usize] + coords[0][i as usize + 1]) / 2.0,
            (coords[1][j as usize] + coords[1][j as usize + 1]) / 2.0,
            (coords[2][k as usize] + coords[2][k as usize + 1]) / 2.0,
        );
        boxes.iter().any(|(lo, hi)| (0..3).all(|a| c[a] > lo[a] && c[a] < hi[a]))
    };
    let mut cells = vec![false; n[0] * n[1] * n[2]];
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                cells[(i * n[1] + j) * n[2] + k] = filled(i as isize, j as isize, k as isize);
            }
        }
    }
    let cell = |i: isize, j: isize, k: isize| -> bool {
        if i < 0 || j < 0 || k < 0 || i as usize >= n[0] || j as usize >= n[1] || k as usize >= n[2] {
            return false;
        }
        cells[(i as usize * n[1] + j as usize) * n[2] + k as usize]
    };

    let mut builder = MeshBuilder::default();
    let node = |g: [usize; 3]| Point3::new(coords[0][g[0]], coords[1][g[1]], coords[2][g[2]]);
    for i in 0..=n[0] as isize {
        for j in 0..=n[1] as isize {
            for k in 0..=n[2] as isize {
                for axis in 0..3 {
                    let mut prev = [i, j, k];
                    prev[axis] -= 1;
                    let here = cell(i, j, k);
                    let before = cell(prev[0], prev[1], prev[2]);
                    if here == before {
                        continue;
                    }
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let base = [i, j, k];
                    if (0..3).any(|a| a != axis && base[a] as usize >= n[a]) {
                        continue;
                    }
                    let corner = |du: usize, dv: usize| {
                        let mut g = [i as usize, j as usize, k as usize];
                        g[u] += du;
                        g[v] += dv;
                        node(g)
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    // Face normal is +axis for (u, v) winding; flip when the filled cell is on the + side.
                    if before {
                        builder.quad(q[0], q[1], q[2], q[3]);
                    } else {
                        builder.quad(q[0], q[3], q[2], q[1]);
                    }
                }
            }
        }
    }
    builder.finish()
}

/// Unit-radius icosphere with `level` loop subdivisions, scaled and centered.
pub fn icosphere(center: Point3<f64>, radius: f64, level: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) / 2.0).normalize());
                verts.len() as u32 - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.extend([[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh {
        vertices: verts.into_iter().map(|v| center + v * radius).collect(),
        triangles: faces,
    }
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(major_segments * minor_segments);
    for i in 0..major_segments {
        let u = 2.0 * PI * i as f64 / major_segments as f64;
        for j in 0..minor_segments {
            let v = 2.0 * PI * j as f64 / minor_segments as f64;
            let r = major + minor * v.cos();
            vertices.push(Point3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % major_segments) * minor_segments + j % minor_segments) as u32;
    let mut triangles = Vec::with_capacity(2 * major_segments * minor_segments);
    for i in 0..major_segments {
        for j in 0..minor_segments {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriMesh { vertices, triangles }
}

pub fn tetrahedron(p: [Point3<f64>; 4]) -> TriMesh {
    let mut triangles = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
    let m = TriMesh { vertices: p.to_vec(), triangles: triangles.clone() };
    if m.volume() < 0.0 {
        triangles.iter_mut().for_each(|t| t.swap(1, 2));
    }
    TriMesh { vertices: p.to_vec(), triangles }
}

/// Splits edges longer than `max_edge` at their midpoints until none remain.
///
/// Each round marks every over-long edge, then each triangle is split according
/// to how many of its edges are marked. Midpoints are shared, so a closed mesh
/// stays closed and the surface itself is unchanged.
pub fn subdivide(mesh: &TriMesh, max_edge: f64) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut triangles = mesh.triangles.clone();
    // Rounding slack, so an already subdivided mesh that was rescaled by ~1 stays as is.
    let max2 = (max_edge * (1.0 + 1e-9)).powi(2);
    loop {
        let long = |a: u32, b: u32, v: &[Point3<f64>]| (v[a as usize] - v[b as usize]).norm_squared() > max2;
        if !triangles.iter().any(|t| (0..3).any(|k| long(t[k], t[(k + 1) % 3], &vertices))) {
            break;
        }
        let mut mids: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if !mids.contains_key(&key) && long(a, b, &vertices) {
                    let m = nalgebra::center(&vertices[a as usize], &vertices[b as usize]);
                    vertices.push(m);
                    mids.insert(key, vertices.len() as u32 - 1);
                }
            }
        }
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for t in &triangles {
            let m: [Option<u32>; 3] = std::array::from_fn(|k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                mids.get(&(a.min(b), a.max(b))).copied()
            });
            split_triangle(*t, m, &vertices, &mut next);
        }
        triangles = next;
    }
    TriMesh { vertices, triangles }
}

// m[k] is the midpoint of edge (t[k], t[k+1]).
fn split_triangle(t: [u32; 3], m: [Option<u32>; 3], v: &[Point3<f64>], out: &mut Vec<[u32; 3]>) {
    match m.iter().filter(|x| x.is_some()).count() {
        0 => out.push(t),
        3 => {
            let (a, b, c) = (m[0].unwrap(), m[1].unwrap(), m[2].unwrap());
            out.extend([[t[0], a, c], [t[1], b, a], [t[2], c, b], [a, b, c]]);
        }
        1 => {
            let k = m.iter().position(|x| x.is_some()).unwrap();
            let (p0, p1, p2) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let mk = m[k].unwrap();
            out.extend([[p0, mk, p2], [mk, p1, p2]]);
        }
        _ => {
            let k = m.iter().position(|x| x.is_none()).unwrap();
            // Unmarked edge (p0, p1); marked edges (p1, p2) and (p2, p0).
            let (p0, p1, p2) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let m12 = m[(k + 1) % 3].unwrap();
            let m20 = m[(k + 2) % 3].unwrap();
            out.push([m12, p2, m20]);
            // Quad p0, p1, m12, m20: cut along the shorter diagonal.
            let d1 = (v[p0 as usize] - v[m12 as usize]).norm_squared();
            let d2 = (v[p1 as usize] - v[m20 as usize]).norm_squared();
            if d1 <= d2 {
                out.extend([[p0, p1, m12], [p0, m12, m20]]);
            } else {
                out.extend([[p0, p1, m20], [p1, m12, m20]]);
            }
        }
    }
}

#[derive(Default)]
struct MeshBuilder {
    index: HashMap<[u64; 3], u32>,
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    fn vertex(&mut self, p: Point3<f64>) -> u32 {
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        let next = self.vertices.len() as u32;
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            next
        })
    }

    fn quad(&mut self, a: Point3<f64>, b: Point3<f64>, c: Point3<f64>, d: Point3<f64>) {
        let [a, b, c, d] = [a, b, c, d].map(|p| self.vertex(p));
        self.triangles.push([a, b, c]);
        self.triangles.push([a, c, d]);
    }

    fn finish(self) -> TriMesh {
        TriMesh { vertices: self.vertices, triangles: self.triangles }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn cuboid_is_closed_with_positive_volume() {
        let m = cuboid(p(0.0, 0.0, 0.0), p(1.0, 2.0, 3.0));
        assert!(m.is_watertight());
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        assert!((m.volume() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn plate_with_hole_is_closed() {
        let m = box_union(&[
            (p(-2.0, -2.0, 0.0), p(-0.5, 2.0, 1.0)),
            (p(0.5, -2.0, 0.0), p(2.0, 2.0, 1.0)),
            (p(-0.5, -2.0, 0.0), p(0.5, -0.5, 1.0)),
            (p(-0.5, 0.5, 0.0), p(0.5, 2.0, 1.0)),
        ]);
        m.watertight_diagnostic().unwrap();
        assert!((m.volume() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn hollow_box_has_two_shells() {
        let mut boxes = vec![];
        for a in 0..3 {
            for s in [-1.0, 1.0] {
                let mut lo = p(-2.0, -2.0, -2.0);
                let mut hi = p(2.0, 2.0, 2.0);
                if s < 0.0 {
                    hi[a] = -1.0;
                } else {
                    lo[a] = 1.0;
                }
                boxes.push((lo, hi));
            }
        }
        let m = box_union(&boxes);
        m.watertight_diagnostic().unwrap();
        assert!((m.volume() - 56.0).abs() < 1e-9);
    }

    #[test]
    fn icosphere_counts() {
        let m = icosphere(Point3::origin(), 1.0, 4);
        assert_eq!(m.triangles.len(), 20 * 256);
        assert_eq!(m.vertices.len(), 2562);
        assert!(m.is_watertight());
        assert!(m.volume() > 4.1 && m.volume() < 4.19);
    }

    #[test]
    fn torus_is_closed() {
        let m = torus(2.0, 0.5, 32, 16);
        assert!(m.is_watertight());
        assert!(m.volume() > 0.0);
    }

    #[test]
    fn tetrahedron_is_outward() {
        let m = tetrahedron([p(0.0, 0.0, 0.0), p(0.0, 1.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 0.0, 1.0)]);
        assert!((m.volume() - 1.0 / 6.0).abs() < 1e-12);
        assert!(m.is_watertight());
    }

    #[test]
    fn subdivide_keeps_volume_and_closure() {
        let m = cuboid(p(-5.0, -5.0, -5.0), p(5.0, 5.0, 5.0));
        let s = subdivide(&m, 0.5);
        assert!(s.max_edge_length() <= 0.5 + 1e-12);
        assert!(s.vertices.len() > m.vertices.len());
        assert!((s.volume() - 1000.0).abs() < 1e-9);
        s.watertight_diagnostic().unwrap();
    }

    #[test]
    fn subdivide_fine_mesh_is_identity() {
        let m = cuboid(p(0.0, 0.0, 0.0), p(0.3, 0.3, 0.3));
        assert_eq!(subdivide(&m, 0.5), m);
    }

    #[test]
    fn subdivide_single_triangle() {
        let m = TriMesh {
            vertices: vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 0.3, 0.0)],
            triangles: vec![[0, 1, 2]],
        };
        let s = subdivide(&m, 0.5);
        assert!(s.max_edge_length() <= 0.5);
        let area: f64 = (0..s.triangles.len()).map(|t| super::super::mesh::triangle_area(&s.triangle(t))).sum();
        assert!((area - 0.15).abs() < 1e-12);
    }
}
