//! Signed distance grids built with the fast sweeping method.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};

use super::inside::column_crossings;
use super::{closest_point_on_triangle, GeometryError, TriMesh};

const MAGIC: &[u8; 4] = b"SDF1";
const MAX_CELL: f64 = 0.05;
const CELLS_PER_EXTENT: f64 = 20.0;
const MIN_PADDING_CELLS: usize = 2;
/// World-space margin the grid covers beyond the mesh bounds.
const PADDING_MARGIN: f64 = 0.5;
/// Nodes within this many cells of a triangle get exact distances before sweeping.
const EXACT_BAND_CELLS: f64 = 2.0;

/// Per-axis cell size for a part with the given extents.
pub fn cell_size_for(extents: &Vector3<f64>) -> Vector3<f64> {
    extents.map(|l| (l / CELLS_PER_EXTENT).min(MAX_CELL).max(1e-4))
}

/// Axis-aligned grid of signed distances; negative inside.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub origin: Point3<f64>,
    pub cell_size: Vector3<f64>,
    pub dims: [usize; 3],
    /// Cells between the mesh bounds and the grid boundary on each axis.
    pub padding: [usize; 3],
    /// Row-major, z fastest.
    pub values: Vec<f32>,
}

impl SdfGrid {
    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)] as f64
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64).component_mul(&self.cell_size)
    }

    pub fn max_cell_size(&self) -> f64 {
        self.cell_size.max()
    }

    /// Upper corner of the grid box.
    pub fn upper(&self) -> Point3<f64> {
        self.node(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Trilinear interpolation inside the grid; outside, the distance to the grid box is
    /// added to the value at the nearest box point.
    #[inline]
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let mut u = [0.0; 3];
        let mut outside = 0.0;
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            let x = (p[a] - self.origin[a]) / self.cell_size[a];
            let c = x.clamp(0.0, max);
            if c != x {
                let d = (x - c) * self.cell_size[a];
                outside += d * d;
            }
            u[a] = c;
        }
        let inside = self.trilinear(u);
        if outside > 0.0 {
            inside + outside.sqrt()
        } else {
            inside
        }
    }

    #[inline]
    fn trilinear(&self, u: [f64; 3]) -> f64 {
        let mut i = [0usize; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let fl = (u[a].floor() as usize).min(self.dims[a] - 2);
            i[a] = fl;
            f[a] = u[a] - fl as f64;
        }
        let base = self.index(i[0], i[1], i[2]);
        let sj = self.dims[2];
        let si = self.dims[1] * self.dims[2];
        let v = &self.values;
        let c000 = v[base] as f64;
        let c001 = v[base + 1] as f64;
        let c010 = v[base + sj] as f64;
        let c011 = v[base + sj + 1] as f64;
        let c100 = v[base + si] as f64;
        let c101 = v[base + si + 1] as f64;
        let c110 = v[base + si + sj] as f64;
        let c111 = v[base + si + sj + 1] as f64;
        let c00 = c000 + (c001 - c000) * f[2];
        let c01 = c010 + (c011 - c010) * f[2];
        let c10 = c100 + (c101 - c100) * f[2];
        let c11 = c110 + (c111 - c110) * f[2];
        let c0 = c00 + (c01 - c00) * f[1];
        let c1 = c10 + (c11 - c10) * f[1];
        c0 + (c1 - c0) * f[0]
    }

    /// Central difference with a step of one cell on each axis.
    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|a, _| {
            let mut e = Vector3::zeros();
            e[a] = self.cell_size[a];
            (self.distance(&(p + e)) - self.distance(&(p - e))) / (2.0 * self.cell_size[a])
        })
    }

    pub fn write_sidecar(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in self.origin.iter().chain(self.cell_size.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    /// Reads a sidecar. The format does not carry padding, so it is reported as zero.
    pub fn read_sidecar(r: &mut impl Read) -> Result<SdfGrid, GeometryError> {
        let bad = |m: &str| GeometryError::BadCache(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(bad("grid needs at least two nodes per axis"));
        }
        let mut f = [0.0; 6];
        for x in f.iter_mut() {
            r.read_exact(&mut b8)?;
            *x = f64::from_le_bytes(b8);
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(SdfGrid {
            origin: Point3::new(f[0], f[1], f[2]),
            cell_size: Vector3::new(f[3], f[4], f[5]),
            dims,
            padding: [0; 3],
            values,
        })
    }
}

/// Builds the signed distance grid of a closed mesh.
///
/// Nodes near the surface get exact point-triangle distances, the rest are filled by
/// eight Gauss-Seidel sweeps of the upwind eikonal update, and the sign comes from a
/// three-axis ray-parity vote.
pub fn build_sdf_grid(mesh: &TriMesh) -> Result<SdfGrid, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    mesh.watertight_diagnostic().map_err(GeometryError::NotWatertight)?;
    let bounds = mesh.bounds().ok_or(GeometryError::EmptyMesh)?;
    let ext = bounds.extents();
    let cell = cell_size_for(&ext);
    let mut dims = [0usize; 3];
    let mut padding = [0usize; 3];
    for a in 0..3 {
        padding[a] = MIN_PADDING_CELLS.max((PADDING_MARGIN / cell[a]).ceil() as usize);
        let cells = (ext[a] / cell[a] - 1e-9).ceil().max(1.0) as usize;
        dims[a] = cells + 1 + 2 * padding[a];
    }
    let origin = bounds.min - Vector3::from_fn(|a, _| padding[a] as f64 * cell[a]);
    let mut grid = SdfGrid { origin, cell_size: cell, dims, padding, values: vec![] };

    let n = dims[0] * dims[1] * dims[2];
    let mut dist = vec![f64::INFINITY; n];
    let coord = |a: usize, i: usize| origin[a] + i as f64 * cell[a];

    for ti in 0..mesh.triangles.len() {
        let t = mesh.triangle(ti);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let band = EXACT_BAND_CELLS * cell[a];
            let mn = t.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min) - band;
            let mx = t.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max) + band;
            lo[a] = (((mn - origin[a]) / cell[a]).ceil().max(0.0) as usize).min(dims[a] - 1);
            hi[a] = (((mx - origin[a]) / cell[a]).floor().max(0.0) as usize).min(dims[a] - 1);
        }
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let p = Point3::new(coord(0, i), coord(1, j), coord(2, k));
                    let d = (closest_point_on_triangle(&p, &t) - p).norm();
                    let idx = grid.index(i, j, k);
                    if d < dist[idx] {
                        dist[idx] = d;
                    }
                }
            }
        }
    }

    sweep(&mut dist, dims, &cell);

    let mut votes = vec![0u8; n];
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let us: Vec<f64> = (0..dims[u]).map(|i| coord(u, i)).collect();
        let vs: Vec<f64> = (0..dims[v]).map(|i| coord(v, i)).collect();
        let cols = column_crossings(mesh, axis, &us, &vs);
        for iu in 0..dims[u] {
            for iv in 0..dims[v] {
                let xs = &cols[iu * dims[v] + iv];
                if xs.is_empty() {
                    continue;
                }
                let mut below = 0;
                for ia in 0..dims[axis] {
                    let x = coord(axis, ia);
                    while below < xs.len() && xs[below] <= x {
                        below += 1;
                    }
                    if (xs.len() - below) % 2 == 1 {
                        let mut g = [0usize; 3];
                        g[axis] = ia;
                        g[u] = iu;
                        g[v] = iv;
                        votes[grid.index(g[0], g[1], g[2])] += 1;
                    }
                }
            }
        }
    }

    grid.values = dist
        .iter()
        .zip(&votes)
        .map(|(&d, &v)| if v >= 2 { -d as f32 } else { d as f32 })
        .collect();
    Ok(grid)
}

fn sweep(dist: &mut [f64], dims: [usize; 3], cell: &Vector3<f64>) {
    let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
    let h = [cell.x, cell.y, cell.z];
    for dir in 0..8 {
        let order = |a: usize, flip: bool| -> Vec<usize> {
            if flip {
                (0..dims[a]).rev().collect()
            } else {
                (0..dims[a]).collect()
            }
        };
        let (oi, oj, ok) = (order(0, dir & 1 != 0), order(1, dir & 2 != 0), order(2, dir & 4 != 0));
        for &i in &oi {
            for &j in &oj {
                for &k in &ok {
                    let g = [i, j, k];
                    let mut a = [(0.0, 0.0); 3];
                    for ax in 0..3 {
                        let mut m = f64::INFINITY;
                        let mut n = g;
                        if g[ax] > 0 {
                            n[ax] = g[ax] - 1;
                            m = m.min(dist[idx(n[0], n[1], n[2])]);
                        }
                        if g[ax] + 1 < dims[ax] {
                            n[ax] = g[ax] + 1;
                            m = m.min(dist[idx(n[0], n[1], n[2])]);
                        }
                        a[ax] = (m, h[ax]);
                    }
                    let u = eikonal_update(a);
                    let id = idx(i, j, k);
                    if u < dist[id] {
                        dist[id] = u;
                    }
                }
            }
        }
    }
}

/// Godunov upwind solution of |grad u| = 1 from neighbour minima `(value, spacing)`.
fn eikonal_update(mut a: [(f64, f64); 3]) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    if !a[0].0.is_finite() {
        return f64::INFINITY;
    }
    let mut u = a[0].0 + a[0].1;
    for m in 2..=3 {
        if u <= a[m - 1].0 {
            break;
        }
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -1.0);
        for &(v, hh) in &a[..m] {
            let w = 1.0 / (hh * hh);
            qa += w;
            qb -= 2.0 * v * w;
            qc += v * v * w;
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            break;
        }
        u = (-qb + disc.sqrt()) / (2.0 * qa);
    }
    u
}

/// On-disk cache of grids keyed by mesh content hash.
#[derive(Debug, Clone)]
pub struct SdfCache {
    dir: PathBuf,
}

impl SdfCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, mesh: &TriMesh) -> PathBuf {
        self.dir.join(format!("{}.sdf", hex::encode(mesh.content_hash())))
    }

    pub fn get_or_build(&self, mesh: &TriMesh) -> Result<SdfGrid, GeometryError> {
        let path = self.path_for(mesh);
        if let Ok(grid) = load_sidecar(&path) {
            if let Some(b) = mesh.bounds() {
                let mut grid = grid;
                for a in 0..3 {
                    grid.padding[a] = ((b.min[a] - grid.origin[a]) / grid.cell_size[a]).round() as usize;
                }
                return Ok(grid);
            }
        }
        let grid = build_sdf_grid(mesh)?;
        std::fs::create_dir_all(&self.dir)?;
        let tmp = path.with_extension("tmp");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        grid.write_sidecar(&mut f)?;
        f.flush()?;
        drop(f);
        std::fs::rename(&tmp, &path)?;
        Ok(grid)
    }
}

pub fn load_sidecar(path: &Path) -> Result<SdfGrid, GeometryError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    SdfGrid::read_sidecar(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{cuboid, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_grid(f: impl Fn(&Point3<f64>) -> f64) -> SdfGrid {
        let dims = [5, 5, 5];
        let mut g = SdfGrid {
            origin: Point3::new(-1.0, -1.0, -1.0),
            cell_size: Vector3::repeat(0.5),
            dims,
            padding: [0; 3],
            values: vec![0.0; 125],
        };
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    let idx = g.index(i, j, k);
                    g.values[idx] = f(&g.node(i, j, k)) as f32;
                }
            }
        }
        g
    }

    #[test]
    fn paper_cell_size_rule() {
        let c = cell_size_for(&Vector3::new(10.0, 4.0, 0.8));
        assert!((c - Vector3::new(0.05, 0.05, 0.04)).norm() < 1e-15);
    }

    #[test]
    fn cube_center_and_outside() {
        let m = cuboid(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        let g = build_sdf_grid(&m).unwrap();
        let c = g.max_cell_size();
        assert!((g.distance(&Point3::origin()) + 1.0).abs() <= c);
        assert!((g.distance(&Point3::new(2.0, 0.0, 0.0)) - 1.0).abs() <= c);
        assert!(g.padding.iter().all(|&p| p >= 2));
    }

    #[test]
    fn interpolation_identity_and_midpoint() {
        let g = linear_grid(|p| p.x * 2.0 + 2.0);
        assert_eq!(g.distance(&g.node(1, 2, 3)), g.value_at(1, 2, 3));
        // Nodes x=-0.5 -> 1.0, x=0.5 -> 3.0.
        assert!((g.distance(&Point3::new(0.0, 0.0, 0.0)) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_of_linear_and_constant_fields() {
        let g = linear_grid(|p| p.z);
        let d = g.gradient(&Point3::new(0.1, -0.3, 0.2));
        assert!((d - Vector3::z()).norm() < 1e-6);
        let c = linear_grid(|_| 0.7);
        assert_eq!(c.gradient(&Point3::new(0.2, 0.1, 0.0)), Vector3::zeros());
    }

    #[test]
    fn sphere_against_analytic_distance() {
        let m = icosphere(Point3::origin(), 1.0, 4);
        let g = build_sdf_grid(&m).unwrap();
        let tol = 2.0 * g.max_cell_size();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = Point3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let err = (g.distance(&p) - (p.coords.norm() - 1.0)).abs();
            assert!(err <= tol, "error {err} at {p}");
        }
        let n = g.gradient(&Point3::new(0.0, 0.0, 0.5));
        assert!((n.normalize() - Vector3::z()).norm() < 0.05);
        assert!(n.norm() > 0.9 && n.norm() < 1.1);
    }

    #[test]
    fn mesh_vertices_lie_on_zero_level() {
        let m = icosphere(Point3::new(0.3, 0.0, 0.1), 0.8, 3);
        let g = build_sdf_grid(&m).unwrap();
        for v in &m.vertices {
            assert!(g.distance(v).abs() <= g.max_cell_size());
        }
    }

    #[test]
    fn build_is_deterministic() {
        let m = icosphere(Point3::origin(), 1.0, 2);
        assert_eq!(build_sdf_grid(&m).unwrap().values, build_sdf_grid(&m).unwrap().values);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let mut m = cuboid(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        m.triangles.pop();
        assert!(matches!(build_sdf_grid(&m), Err(GeometryError::NotWatertight(_))));
    }

    #[test]
    fn sidecar_round_trip_and_cache() {
        let m = icosphere(Point3::origin(), 0.5, 2);
        let g = build_sdf_grid(&m).unwrap();
        let mut buf = Vec::new();
        g.write_sidecar(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDF1");
        let back = SdfGrid::read_sidecar(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!(back.dims, g.dims);

        let dir = tempfile::tempdir().unwrap();
        let cache = SdfCache::new(dir.path());
        let first = cache.get_or_build(&m).unwrap();
        assert!(cache.path_for(&m).exists());
        let second = cache.get_or_build(&m).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn eikonal_update_one_and_two_sided() {
        let inf = f64::INFINITY;
        assert_eq!(eikonal_update([(0.0, 1.0), (inf, 1.0), (inf, 1.0)]), 1.0);
        let u = eikonal_update([(0.0, 1.0), (0.0, 1.0), (inf, 1.0)]);
        assert!((u - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }
}
