//! Mesh preprocessing and synthetic fixtures.
//!
//! [`preprocess_assembly`] turns raw posed meshes into a planner-ready set: non-watertight,
//! duplicate, heavily overlapping, thin and disconnected parts are dropped, the rest is
//! scaled into a 10-unit cube and subdivided.

pub mod fixtures;

use std::cmp::Ordering;
use std::fmt;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::inside::InsideTester;
use crate::geometry::{compute_convex_hull, hulls_intersect, subdivide, Aabb, TriMesh};
use crate::model::Assembly;

pub const OVERLAP_LIMIT: f64 = 0.10;
pub const THIN_RATIO: f64 = 0.01;
pub const TARGET_EXTENT: f64 = 10.0;
pub const MAX_EDGE: f64 = 0.5;
pub const OVERLAP_SAMPLES: usize = 10_000;
const DUPLICATE_TOLERANCE: f64 = 1e-9;

/// A part mesh with its assembled pose already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPart {
    pub name: String,
    pub mesh: TriMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawAssembly {
    pub source: String,
    pub parts: Vec<RawPart>,
}

impl RawAssembly {
    pub fn new(source: impl Into<String>, parts: Vec<(String, TriMesh)>) -> Self {
        Self { source: source.into(), parts: parts.into_iter().map(|(name, mesh)| RawPart { name, mesh }).collect() }
    }

    pub fn into_meshes(self) -> Vec<(String, TriMesh)> {
        self.parts.into_iter().map(|p| (p.name, p.mesh)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    NotWatertight,
    Duplicate,
    Overlap,
    Thin,
    Disconnected,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::NotWatertight => "not-watertight",
            Stage::Duplicate => "duplicate",
            Stage::Overlap => "overlap",
            Stage::Thin => "thin",
            Stage::Disconnected => "disconnected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub part: String,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPenetration {
    pub a: String,
    pub b: String,
    pub depth: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub source: String,
    pub input_parts: usize,
    pub removals: Vec<Removal>,
    pub final_parts: Vec<String>,
    /// Factor applied by normalization.
    pub scale: f64,
    pub warnings: Vec<String>,
    /// Disassemblability cannot be checked automatically; always set for a human to review.
    pub needs_review: bool,
    pub penetrations: Vec<PairPenetration>,
}

impl PipelineReport {
    pub fn removed_at(&self, stage: Stage) -> usize {
        self.removals.iter().filter(|r| r.stage == stage).count()
    }

    pub fn is_consistent(&self) -> bool {
        self.input_parts == self.removals.len() + self.final_parts.len()
    }

    /// Fills in the initial pairwise penetrations of a built assembly.
    pub fn record_penetrations(&mut self, assembly: &Assembly) {
        self.penetrations = assembly
            .initial_penetrations()
            .iter()
            .filter(|(_, &d)| d > 0.0)
            .map(|(&(a, b), &depth)| PairPenetration { a: assembly.part(a).name.clone(), b: assembly.part(b).name.clone(), depth })
            .collect();
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("assembly '{0}' has no parts left")]
    Empty(String),
}

pub fn is_watertight(mesh: &TriMesh) -> bool {
    mesh.is_watertight()
}

/// Monte-Carlo estimate of the fraction of `a`'s volume inside `b`, from `samples` points
/// drawn uniformly inside `a`.
pub fn overlap_ratio(a: &TriMesh, b: &TriMesh, samples: usize, seed: u64) -> f64 {
    let (Some(ba), Some(bb)) = (a.bounds(), b.bounds()) else { return 0.0 };
    if samples == 0 || !ba.intersects(&bb) {
        return 0.0;
    }
    let (inside_a, inside_b) = (InsideTester::new(a), InsideTester::new(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut drawn) = (0usize, 0usize);
    // Rejection sampling; the attempt cap only matters for degenerate meshes.
    for _ in 0..samples.saturating_mul(1000) {
        let p = Point3::new(
            rng.gen_range(ba.min.x..=ba.max.x),
            rng.gen_range(ba.min.y..=ba.max.y),
            rng.gen_range(ba.min.z..=ba.max.z),
        );
        if !inside_a.contains(&p) {
            continue;
        }
        drawn += 1;
        hits += usize::from(inside_b.contains(&p));
        if drawn == samples {
            break;
        }
    }
    if drawn == 0 {
        0.0
    } else {
        hits as f64 / drawn as f64
    }
}

fn sorted_vertices(mesh: &TriMesh) -> Vec<Point3<f64>> {
    let mut v = mesh.vertices.clone();
    v.sort_by(|p, q| p.coords.iter().zip(q.coords.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal));
    v
}

/// Same vertex count and the same sorted vertex list within 1e-9.
pub fn is_duplicate(a: &TriMesh, b: &TriMesh) -> bool {
    a.vertices.len() == b.vertices.len()
        && a.triangles.len() == b.triangles.len()
        && sorted_vertices(a).iter().zip(&sorted_vertices(b)).all(|(p, q)| (p - q).amax() <= DUPLICATE_TOLERANCE)
}

fn joint_bounds<'a>(meshes: impl IntoIterator<Item = &'a TriMesh>) -> Option<Aabb> {
    meshes.into_iter().filter_map(TriMesh::bounds).reduce(|a, b| a.union(&b))
}

/// Indices of parts whose thinnest OBB edge is below 1% of the longest edge of the joint bounds.
pub fn thin_parts(meshes: &[&TriMesh]) -> Vec<(usize, f64)> {
    let Some(b) = joint_bounds(meshes.iter().copied()) else { return Vec::new() };
    let scale = b.extents().max();
    meshes
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let ratio = m.obb().map_or(0.0, |o| o.thinnest_edge()) / scale;
            (ratio < THIN_RATIO).then_some((i, ratio))
        })
        .collect()
}

/// Indices of the largest set of parts connected through intersecting convex hulls.
/// Ties go to the set with the lexicographically smaller sorted indices.
pub fn largest_connected_subset(meshes: &[&TriMesh]) -> Vec<usize> {
    let hulls: Vec<_> = meshes.iter().map(|m| compute_convex_hull(m).ok()).collect();
    let n = meshes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if let (Some(a), Some(b)) = (&hulls[i], &hulls[j]) {
                if hulls_intersect(a, b) {
                    let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = components.len();
            components.push(Vec::new());
        }
        components[slot[r]].push(i);
    }
    // Components come out sorted by their smallest member, so a strict comparison keeps the tie-break.
    components.into_iter().fold(Vec::new(), |best, c| if c.len() > best.len() { c } else { best })
}

/// Uniform scale about the joint bounds center so the longest extent becomes 10.
pub fn normalize_meshes(meshes: &mut [TriMesh]) -> f64 {
    let Some(b) = joint_bounds(meshes.iter()) else { return 1.0 };
    let extent = b.extents().max();
    if extent <= 0.0 {
        return 1.0;
    }
    let scale = TARGET_EXTENT / extent;
    let c = b.center();
    for m in meshes.iter_mut() {
        for v in &mut m.vertices {
            *v = c + (*v - c) * scale;
        }
    }
    scale
}

fn remove_parts(parts: &mut Vec<RawPart>, mut gone: Vec<(usize, String)>, stage: Stage, report: &mut PipelineReport) {
    gone.sort_by_key(|(i, _)| std::cmp::Reverse(*i));
    let mut removed: Vec<Removal> = gone.into_iter().map(|(i, reason)| Removal { part: parts.remove(i).name, stage, reason }).collect();
    removed.reverse();
    report.removals.extend(removed);
}

/// Runs every preprocessing step in order on one assembly.
pub fn preprocess_assembly(raw: RawAssembly) -> Result<(RawAssembly, PipelineReport), PipelineError> {
    let mut report = PipelineReport { source: raw.source.clone(), input_parts: raw.parts.len(), ..Default::default() };
    let mut parts = raw.parts;
    let open: Vec<_> = parts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.mesh.watertight_diagnostic().err().map(|e| (i, e)))
        .collect();
    remove_parts(&mut parts, open, Stage::NotWatertight, &mut report);

    let mut dups = Vec::new();
    for j in 0..parts.len() {
        if let Some(i) = (0..j).find(|&i| !dups.iter().any(|(d, _)| *d == i) && is_duplicate(&parts[i].mesh, &parts[j].mesh)) {
            dups.push((j, format!("same geometry and pose as '{}'", parts[i].name)));
        }
    }
    remove_parts(&mut parts, dups, Stage::Duplicate, &mut report);

    // Repeatedly drop the smaller member of the first pair overlapping by more than 10%.
    loop {
        let offending = (0..parts.len()).flat_map(|i| (i + 1..parts.len()).map(move |j| (i, j))).find_map(|(i, j)| {
            let (a, b) = (&parts[i].mesh, &parts[j].mesh);
            let r = overlap_ratio(a, b, OVERLAP_SAMPLES, 0).max(overlap_ratio(b, a, OVERLAP_SAMPLES, 0));
            (r > OVERLAP_LIMIT).then_some((i, j, r))
        });
        let Some((i, j, r)) = offending else { break };
        let (gone, kept) = if parts[j].mesh.volume() <= parts[i].mesh.volume() { (j, i) } else { (i, j) };
        let reason = format!("overlaps '{}' by {:.1}%", parts[kept].name, 100.0 * r);
        remove_parts(&mut parts, vec![(gone, reason)], Stage::Overlap, &mut report);
    }

    let meshes: Vec<&TriMesh> = parts.iter().map(|p| &p.mesh).collect();
    let thin: Vec<_> = thin_parts(&meshes).into_iter().map(|(i, r)| (i, format!("thinnest OBB edge is {:.3}% of the scale", 100.0 * r))).collect();
    remove_parts(&mut parts, thin, Stage::Thin, &mut report);

    let meshes: Vec<&TriMesh> = parts.iter().map(|p| &p.mesh).collect();
    let keep = largest_connected_subset(&meshes);
    let loose: Vec<_> = (0..parts.len()).filter(|i| !keep.contains(i)).map(|i| (i, "outside the largest connected subset".to_string())).collect();
    if parts.len() > 1 && keep.len() == 1 {
        report.warnings.push("no two parts touch; only one part is left".into());
    }
    remove_parts(&mut parts, loose, Stage::Disconnected, &mut report);

    if parts.is_empty() {
        return Err(PipelineError::Empty(report.source));
    }
    let mut meshes: Vec<TriMesh> = parts.iter().map(|p| p.mesh.clone()).collect();
    report.scale = normalize_meshes(&mut meshes);

    log::info!("{}: disassemblability check is manual; flagged for review", report.source);
    report.needs_review = true;

    for (p, m) in parts.iter_mut().zip(meshes) {
        p.mesh = subdivide(&m, MAX_EDGE);
    }
    report.final_parts = parts.iter().map(|p| p.name.clone()).collect();
    Ok((RawAssembly { source: report.source.clone(), parts }, report))
}

/// Independent assemblies in parallel.
pub fn preprocess_many(raws: Vec<RawAssembly>) -> Vec<Result<(RawAssembly, PipelineReport), PipelineError>> {
    raws.into_par_iter().map(preprocess_assembly).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{box_union, cuboid};
    use proptest::prelude::*;

    fn cube(x0: f64, y0: f64, z0: f64, side: f64) -> TriMesh {
        cuboid(Point3::new(x0, y0, z0), Point3::new(x0 + side, y0 + side, z0 + side))
    }

    fn slab(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> TriMesh {
        cuboid(Point3::new(x.0, y.0, z.0), Point3::new(x.1, y.1, z.1))
    }

    #[test]
    fn watertightness() {
        assert!(is_watertight(&cube(0.0, 0.0, 0.0, 1.0)));
        let mut open = cube(0.0, 0.0, 0.0, 1.0);
        open.triangles.truncate(10);
        assert!(!is_watertight(&open));
        let mut two = cube(0.0, 0.0, 0.0, 1.0);
        two.merge(&cube(3.0, 0.0, 0.0, 1.0));
        assert!(is_watertight(&two));
    }

    #[test]
    fn overlap_examples() {
        let a = cube(0.0, 0.0, 0.0, 1.0);
        assert_eq!(overlap_ratio(&a, &cube(5.0, 0.0, 0.0, 1.0), OVERLAP_SAMPLES, 0), 0.0);
        assert_eq!(overlap_ratio(&a, &a, OVERLAP_SAMPLES, 0), 1.0);
        let r = overlap_ratio(&a, &cube(0.5, 0.0, 0.0, 1.0), OVERLAP_SAMPLES, 0);
        assert!((r - 0.5).abs() <= 0.02, "{r}");
    }

    #[test]
    fn overlap_is_seeded_and_converges() {
        let a = cube(0.0, 0.0, 0.0, 1.0);
        let b = slab((0.3, 2.0), (0.2, 2.0), (-1.0, 0.7));
        // Exact fraction: 0.7 * 0.8 * 0.7.
        let exact = 0.7 * 0.8 * 0.7;
        assert_eq!(overlap_ratio(&a, &b, 5000, 7), overlap_ratio(&a, &b, 5000, 7));
        let (r1, r2) = (overlap_ratio(&a, &b, 10_000, 1), overlap_ratio(&a, &b, 20_000, 1));
        assert!((r1 - r2).abs() <= 0.01 && (r2 - exact).abs() <= 0.02, "{r1} {r2} {exact}");
    }

    #[test]
    fn thin_filter_arithmetic() {
        let big = slab((0.0, 10.0), (0.0, 1.0), (0.0, 1.0));
        let sheet = slab((0.0, 2.0), (0.0, 2.0), (1.0, 1.05));
        let unit = cube(2.0, 0.0, 1.0, 1.0);
        let thin = thin_parts(&[&big, &sheet, &unit]);
        assert_eq!(thin.len(), 1);
        assert_eq!(thin[0].0, 1);
        assert!((thin[0].1 - 0.005).abs() < 1e-9);
        assert!(thin_parts(&[&cube(0.0, 0.0, 0.0, 1.0)]).is_empty());
    }

    #[test]
    fn connectivity_examples() {
        let (a, b, c) = (cube(0.0, 0.0, 0.0, 1.0), cube(1.0, 0.0, 0.0, 1.0), cube(2.0, 0.0, 0.0, 1.0));
        let d = cube(9.0, 9.0, 9.0, 1.0);
        assert_eq!(largest_connected_subset(&[&a, &b, &c, &d]), vec![0, 1, 2]);
        let far: Vec<TriMesh> = (0..3).map(|i| cube(3.0 * i as f64, 0.0, 0.0, 1.0)).collect();
        assert_eq!(largest_connected_subset(&far.iter().collect::<Vec<_>>()), vec![0]);
        assert_eq!(largest_connected_subset(&[&d, &a, &b, &far[2], &c]), vec![1, 2, 4]);
        let e = cube(9.0, 9.0, 10.0, 1.0);
        assert_eq!(largest_connected_subset(&[&d, &e, &a, &b, &c]), vec![2, 3, 4]);
    }

    #[test]
    fn normalization_arithmetic() {
        let mut m = vec![slab((0.0, 20.0), (0.0, 10.0), (0.0, 5.0))];
        assert_eq!(normalize_meshes(&mut m), 0.5);
        let e = m[0].bounds().unwrap().extents();
        assert_eq!((e.x, e.y, e.z), (10.0, 5.0, 2.5));
        assert_eq!(m[0].bounds().unwrap().center(), Point3::new(10.0, 5.0, 2.5));
        let mut m = vec![cube(0.0, 0.0, 0.0, 10.0)];
        assert_eq!(normalize_meshes(&mut m), 1.0);
        let mut m = vec![cube(0.0, 0.0, 0.0, 1.0)];
        assert_eq!(normalize_meshes(&mut m), 10.0);
    }

    fn peg_plate() -> RawAssembly {
        let plate = box_union(&[
            (Point3::new(-2.0, -2.0, 0.0), Point3::new(2.0, -0.5, 1.0)),
            (Point3::new(-2.0, 0.5, 0.0), Point3::new(2.0, 2.0, 1.0)),
            (Point3::new(-2.0, -0.5, 0.0), Point3::new(-0.5, 0.5, 1.0)),
            (Point3::new(0.5, -0.5, 0.0), Point3::new(2.0, 0.5, 1.0)),
        ]);
        let peg = slab((-0.4, 0.4), (-0.4, 0.4), (-1.0, 2.0));
        RawAssembly::new("peg-plate", vec![("plate".into(), plate), ("peg".into(), peg)])
    }

    #[test]
    fn clean_assembly_is_only_scaled_and_subdivided() {
        let (out, report) = preprocess_assembly(peg_plate()).unwrap();
        assert!(report.removals.is_empty() && report.is_consistent() && report.needs_review);
        assert_eq!(report.final_parts, ["plate", "peg"]);
        assert_eq!(report.scale, 10.0 / 4.0);
        for p in &out.parts {
            assert!(p.mesh.max_edge_length() <= MAX_EDGE + 1e-12 && p.mesh.is_watertight());
        }
        let b = joint_bounds(out.parts.iter().map(|p| &p.mesh)).unwrap();
        assert!((b.extents().max() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_and_overlapping_parts_are_dropped() {
        let mut raw = peg_plate();
        raw.parts.push(RawPart { name: "peg-copy".into(), mesh: raw.parts[1].mesh.clone() });
        // Half of this block sits inside the plate.
        raw.parts.push(RawPart { name: "wedge".into(), mesh: slab((1.0, 1.5), (-2.0, 2.0), (0.5, 1.5)) });
        let (_, report) = preprocess_assembly(raw).unwrap();
        assert_eq!(report.removed_at(Stage::Duplicate), 1);
        assert_eq!(report.removed_at(Stage::Overlap), 1);
        let names: Vec<&str> = report.removals.iter().map(|r| r.part.as_str()).collect();
        assert_eq!(names, ["peg-copy", "wedge"]);
        assert!(report.removals.iter().all(|r| !r.reason.is_empty()));
        assert!(report.is_consistent());
    }

    #[test]
    fn floating_parts_reduce_to_one() {
        let raw = RawAssembly::new("loose", (0..3).map(|i| (format!("c{i}"), cube(3.0 * i as f64, 0.0, 0.0, 1.0))).collect());
        let (out, report) = preprocess_assembly(raw).unwrap();
        assert_eq!(out.parts.len(), 1);
        assert_eq!(report.final_parts, ["c0"]);
        assert!(!report.warnings.is_empty());
    }

    #[test]
    fn open_meshes_are_dropped_first() {
        let mut raw = peg_plate();
        let mut open = cube(0.0, 0.0, 1.0, 1.0);
        open.triangles.pop();
        raw.parts.insert(0, RawPart { name: "open".into(), mesh: open });
        let (_, report) = preprocess_assembly(raw).unwrap();
        assert_eq!(report.removals[0].stage, Stage::NotWatertight);
        assert_eq!(report.final_parts.len(), 2);
    }

    #[test]
    fn thin_connector_is_removed_before_connectivity() {
        // Two pairs joined only by a thin rod; without the rod they form two components.
        let parts = vec![
            ("a".to_string(), slab((0.0, 2.0), (0.0, 2.0), (0.0, 2.0))),
            ("b".to_string(), slab((0.0, 2.0), (0.0, 2.0), (2.0, 4.0))),
            ("rod".to_string(), slab((2.0, 8.0), (0.95, 1.0), (0.95, 1.0))),
            ("c".to_string(), slab((8.0, 10.0), (0.0, 2.0), (0.0, 2.0))),
        ];
        let (out, report) = preprocess_assembly(RawAssembly::new("rod", parts)).unwrap();
        assert_eq!(report.removals[0].part, "rod");
        assert_eq!(report.removals[0].stage, Stage::Thin);
        let names: Vec<&str> = out.parts.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn everything_removed_is_an_error() {
        let mut open = cube(0.0, 0.0, 0.0, 1.0);
        open.triangles.pop();
        assert!(preprocess_assembly(RawAssembly::new("x", vec![("o".into(), open)])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn preprocessing_is_idempotent(sx in 0.2f64..8.0, dx in -0.3f64..0.3) {
            let mut raw = peg_plate();
            for p in &mut raw.parts {
                p.mesh = p.mesh.map_vertices(|v| Point3::new(v.x * sx + dx, v.y * sx, v.z * sx));
            }
            let (once, _) = preprocess_assembly(raw).unwrap();
            let (twice, report) = preprocess_assembly(once.clone()).unwrap();
            prop_assert!(report.removals.is_empty());
            prop_assert!((report.scale - 1.0).abs() <= 1e-9);
            for (a, b) in once.parts.iter().zip(&twice.parts) {
                prop_assert_eq!(a.mesh.vertices.len(), b.mesh.vertices.len());
                prop_assert!(a.mesh.vertices.iter().zip(&b.mesh.vertices).all(|(p, q)| (p - q).amax() <= 1e-9));
            }
        }
    }
}
