//! Files: assembly directories (OBJ meshes plus a manifest), exported paths and plan files.
//!
//! A manifest line is `name path m00 m01 .. m33`: the part name, the OBJ path relative to
//! the manifest, and the row-major 4x4 transform to the assembled pose. `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly_plan::AssemblyPlan;
use crate::geometry::{load_obj, save_obj, GeometryError, TriMesh};
use crate::model::Assembly;
use crate::path::{ActionMode, DisassemblyPath};
use crate::physics::{Action, RigidState};
use crate::pipeline::RawAssembly;
use crate::sequence::DisassemblySequence;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}:{line}: {msg}")]
    Manifest { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("empty path cannot be exported")]
    EmptyPath,
    #[error("unknown part '{0}'")]
    UnknownPart(String),
    #[error("malformed path file: {0}")]
    Malformed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

/// Reads `dir/manifest.txt` and the meshes it lists, with poses applied.
pub fn load_assembly_dir(dir: &Path) -> Result<RawAssembly, IoError> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let bad = |line: usize, msg: String| IoError::Manifest { path: manifest.display().to_string(), line, msg };
    let mut parts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 18 {
            return Err(bad(n + 1, format!("expected 18 fields, found {}", fields.len())));
        }
        let m: Vec<f64> = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(n + 1, format!("'{f}': {e}"))))
            .collect::<Result<_, _>>()?;
        let pose = Matrix4::from_row_slice(&m);
        let mesh = load_obj(&dir.join(fields[1]))?;
        let mesh = if pose == Matrix4::identity() { mesh } else { mesh.transformed(&pose) };
        parts.push((fields[0].to_string(), mesh));
    }
    if parts.is_empty() {
        return Err(bad(0, "no parts listed".into()));
    }
    let source = dir.file_name().map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
    Ok(RawAssembly::new(source, parts))
}

/// Writes one OBJ per part and an identity-pose manifest.
pub fn write_assembly_dir(dir: &Path, parts: &[(String, TriMesh)]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::from("# name path m00 .. m33 (row-major)\n");
    let identity = Matrix4::<f64>::identity();
    for (name, mesh) in parts {
        let file = format!("{name}.obj");
        save_obj(mesh, &dir.join(&file))?;
        let m: Vec<String> = identity.transpose().iter().map(|x| x.to_string()).collect();
        manifest.push_str(&format!("{name} {file} {}\n", m.join(" ")));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))
}

/// Subdirectories of `dir` holding a manifest, sorted by name.
pub fn corpus_entries(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub wall_time: f64,
    pub sim_calls: u64,
}

/// One waypoint: per moving part a pose `[tx, ty, tz, qw, qx, qy, qz]` and the action that
/// leads to the next waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub step: usize,
    pub t: f64,
    pub q: Vec<[f64; 7]>,
    pub action: Vec<Option<Action>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFile {
    /// Names of the moving parts.
    pub part: Vec<String>,
    pub planner: String,
    pub mode: ActionMode,
    pub states: Vec<StateRecord>,
    pub meta: PathMeta,
}

fn pose(s: &RigidState) -> [f64; 7] {
    let q = s.rotation.quaternion();
    [s.translation.x, s.translation.y, s.translation.z, q.w, q.i, q.j, q.k]
}

fn state(p: &[f64; 7]) -> RigidState {
    // No renormalization, so values come back bit for bit.
    RigidState::at(Vector3::new(p[0], p[1], p[2]), UnitQuaternion::new_unchecked(Quaternion::new(p[3], p[4], p[5], p[6])))
}

impl PathFile {
    /// `dt` is the time between waypoints (zero when it has no meaning).
    pub fn new(assembly: &Assembly, path: &DisassemblyPath, planner: &str, dt: f64, meta: PathMeta) -> Result<Self, IoError> {
        if path.states.is_empty() {
            return Err(IoError::EmptyPath);
        }
        let states = path
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| StateRecord {
                step: i,
                t: i as f64 * dt,
                q: s.iter().map(pose).collect(),
                action: path.actions.get(i).cloned().unwrap_or_else(|| vec![None; s.len()]),
            })
            .collect();
        Ok(Self {
            part: path.parts.iter().map(|&p| assembly.part(p).name.clone()).collect(),
            planner: planner.to_string(),
            mode: path.mode,
            states,
            meta,
        })
    }

    pub fn to_path(&self, assembly: &Assembly) -> Result<DisassemblyPath, IoError> {
        if self.states.is_empty() {
            return Err(IoError::EmptyPath);
        }
        let parts = self.part.iter().map(|n| assembly.find(n).ok_or_else(|| IoError::UnknownPart(n.clone()))).collect::<Result<Vec<_>, _>>()?;
        if self.states.iter().any(|s| s.q.len() != parts.len() || s.action.len() != parts.len()) {
            return Err(IoError::Malformed("every record needs one pose and one action per part".into()));
        }
        Ok(DisassemblyPath {
            parts,
            mode: self.mode,
            states: self.states.iter().map(|s| s.q.iter().map(state).collect()).collect(),
            actions: self.states[..self.states.len() - 1].iter().map(|s| s.action.clone()).collect(),
        })
    }
}

/// A saved plan of any kind, replayable by the validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlanFile {
    Path { path: PathFile },
    Sequence { sequence: DisassemblySequence },
    Assembly { sequence: DisassemblySequence, plan: AssemblyPlan },
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.display().to_string(), source })
}

pub fn export_path(file: &Path, path: &PathFile) -> Result<(), IoError> {
    if path.states.is_empty() {
        return Err(IoError::EmptyPath);
    }
    write_json(file, path)
}

pub fn import_path(file: &Path) -> Result<PathFile, IoError> {
    let p: PathFile = read_json(file)?;
    if p.states.is_empty() {
        return Err(IoError::EmptyPath);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{plan_disassembly_path, PathQuery, PlannerParams};
    use crate::pipeline::fixtures::{fixture_assembly, fixture_meshes, FixtureKind};
    use crate::pipeline::is_duplicate;
    use crate::physics::Action;
    use std::time::Duration;

    #[test]
    fn assembly_dir_round_trip_with_pose() {
        let dir = tempfile::tempdir().unwrap();
        let meshes = fixture_meshes(FixtureKind::PegPlate);
        write_assembly_dir(dir.path(), &meshes).unwrap();
        let raw = load_assembly_dir(dir.path()).unwrap();
        assert_eq!(raw.parts.len(), meshes.len());
        // The loader may reorder vertices; the geometry is what must survive.
        for (p, (name, m)) in raw.parts.iter().zip(&meshes) {
            assert_eq!(&p.name, name);
            assert!(is_duplicate(&p.mesh, m));
            assert_eq!(p.mesh.volume(), m.volume());
        }
        // A translated pose in the manifest moves the mesh.
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap().replacen("peg peg.obj 1 0 0 0", "peg peg.obj 1 0 0 5", 1);
        fs::write(dir.path().join(MANIFEST), text).unwrap();
        let moved = load_assembly_dir(dir.path()).unwrap();
        let (b0, b1) = (meshes[0].1.bounds().unwrap(), moved.parts[0].mesh.bounds().unwrap());
        assert_eq!((b1.min.x, b1.max.x), (b0.min.x + 5.0, b0.max.x + 5.0));
    }

    #[test]
    fn bad_manifest_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "peg peg.obj 1 0 0\n").unwrap();
        assert!(matches!(load_assembly_dir(dir.path()), Err(IoError::Manifest { line: 1, .. })));
    }

    #[test]
    fn path_export_round_trips_exactly() {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let peg = a.find("peg").unwrap();
        let q = PathQuery::single(peg, Duration::from_secs(30), None, ActionMode::Translation);
        let out = plan_disassembly_path(&a, &q, &PlannerParams::default()).unwrap();
        let path = out.result.unwrap();
        let file = PathFile::new(&a, &path, "ours", 0.1, PathMeta { wall_time: out.stats.elapsed, sim_calls: out.stats.sim_calls }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.json");
        export_path(&f, &file).unwrap();
        let back = import_path(&f).unwrap();
        assert_eq!(back, file);
        let restored = back.to_path(&a).unwrap();
        assert_eq!(restored.actions, path.actions);
        for (x, y) in restored.states.iter().flatten().zip(path.states.iter().flatten()) {
            assert_eq!((x.translation, x.rotation), (y.translation, y.rotation));
        }
        assert!(restored.replays_exactly(&a, &PlannerParams::default()));
    }

    #[test]
    fn two_state_path_has_two_records_and_empty_is_rejected() {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let peg = a.find("peg").unwrap();
        let two = DisassemblyPath {
            parts: vec![peg],
            mode: ActionMode::Translation,
            states: vec![vec![RigidState::identity()], vec![RigidState::translated(Vector3::new(0.0, 0.0, 0.1))]],
            actions: vec![vec![Some(Action::force(Vector3::z(), 100.0))]],
        };
        let file = PathFile::new(&a, &two, "ours", 0.1, PathMeta::default()).unwrap();
        assert_eq!(file.states.len(), 2);
        let empty = DisassemblyPath { states: vec![], actions: vec![], ..two };
        assert!(matches!(PathFile::new(&a, &empty, "ours", 0.1, PathMeta::default()), Err(IoError::EmptyPath)));
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("e.json");
        let mut blank = file.clone();
        blank.states.clear();
        assert!(matches!(export_path(&f, &blank), Err(IoError::EmptyPath)));
    }
}
