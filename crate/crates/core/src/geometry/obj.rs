use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::{GeometryError, TriMesh};

/// Loads every object in an OBJ file into one mesh; polygons are triangulated.
pub fn load_obj(path: &Path) -> Result<TriMesh, GeometryError> {
    let opts = tobj::LoadOptions { triangulate: true, single_index: false, ..Default::default() };
    let (models, _) = tobj::load_obj(path, &opts).map_err(|source| GeometryError::Obj {
        path: path.display().to_string(),
        source,
    })?;
    let mut mesh = TriMesh { vertices: vec![], triangles: vec![] };
    for m in models {
        let pos = &m.mesh.positions;
        let part = TriMesh::new(
            pos.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect(),
            m.mesh.indices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )?;
        mesh.merge(&part);
    }
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    Ok(mesh)
}

/// Writes vertices with round-trip precision.
pub fn save_obj(mesh: &TriMesh, path: &Path) -> Result<(), GeometryError> {
    let mut s = String::with_capacity(mesh.vertices.len() * 64);
    for v in &mesh.vertices {
        writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).expect("write to string");
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.obj");
        let m = icosphere(Point3::new(0.1, 0.2, 0.3), 0.7, 2);
        save_obj(&m, &path).unwrap();
        // The loader may reorder vertices; compare triangle geometry exactly.
        let back = load_obj(&path).unwrap();
        assert_eq!(back.vertices.len(), m.vertices.len());
        for t in 0..m.triangles.len() {
            assert_eq!(back.triangle(t), m.triangle(t));
        }
    }

    #[test]
    fn quads_are_triangulated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(load_obj(&path).unwrap().triangles.len(), 2);
    }
}
