//! Assembly bookkeeping, the disassembled test, state metrics and validity.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Isometry3, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{hulls_intersect_at, Aabb, ConvexHull, GeometryError, SdfCache, TriMesh};
use crate::part::{MassModel, PartGeometry};
use crate::physics::{penetration_depth, simulate, Action, RigidState, SimBody, SimError, SimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartId(pub usize);

impl fmt::Display for PartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("part {name}: {source}")]
    Geometry { name: String, source: GeometryError },
    #[error("assembly has no parts")]
    Empty,
    #[error("unknown part {0}")]
    UnknownPart(PartId),
    #[error("part {0} is not active")]
    Inactive(PartId),
}

#[derive(Debug, Clone)]
pub struct Part {
    pub id: PartId,
    pub name: String,
    pub geometry: Arc<PartGeometry>,
}

/// Parts in their assembled pose plus the set not yet removed.
#[derive(Debug, Clone)]
pub struct Assembly {
    parts: Vec<Part>,
    active: Vec<bool>,
    /// Factor applied during normalization (1 when built directly).
    pub scale: f64,
    initial_penetration: BTreeMap<(PartId, PartId), f64>,
}

impl Assembly {
    /// Builds part geometry in parallel and measures initial pairwise penetration.
    pub fn from_meshes(meshes: Vec<(String, TriMesh)>, mass: &MassModel, cache: Option<&SdfCache>) -> Result<Self, ModelError> {
        if meshes.is_empty() {
            return Err(ModelError::Empty);
        }
        let built: Vec<Result<Part, ModelError>> = meshes
            .into_par_iter()
            .enumerate()
            .map(|(i, (name, mesh))| {
                let geometry = PartGeometry::build(mesh, mass, cache)
                    .map_err(|source| ModelError::Geometry { name: name.clone(), source })?;
                Ok(Part { id: PartId(i), name, geometry: Arc::new(geometry) })
            })
            .collect();
        let parts = built.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_parts(parts))
    }

    pub fn from_parts(parts: Vec<Part>) -> Self {
        let id = RigidState::identity();
        let mut initial_penetration = BTreeMap::new();
        for a in &parts {
            for b in &parts {
                if a.id != b.id {
                    let d = penetration_depth((&a.geometry, &id), (&b.geometry, &id));
                    if d > 0.0 {
                        initial_penetration.insert((a.id, b.id), d);
                    }
                }
            }
        }
        let active = vec![true; parts.len()];
        Self { parts, active, scale: 1.0, initial_penetration }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn part(&self, id: PartId) -> &Part {
        &self.parts[id.0]
    }

    pub fn geometry(&self, id: PartId) -> &PartGeometry {
        &self.parts[id.0].geometry
    }

    pub fn find(&self, name: &str) -> Option<PartId> {
        self.parts.iter().find(|p| p.name == name).map(|p| p.id)
    }

    pub fn is_active(&self, id: PartId) -> bool {
        self.active.get(id.0).copied().unwrap_or(false)
    }

    pub fn active_ids(&self) -> Vec<PartId> {
        self.parts.iter().filter(|p| self.active[p.id.0]).map(|p| p.id).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn remove(&mut self, id: PartId) {
        self.active[id.0] = false;
    }

    /// Restricted copy with only `ids` active.
    pub fn with_active(&self, ids: &[PartId]) -> Self {
        let mut a = self.clone();
        a.active.iter_mut().for_each(|x| *x = false);
        for id in ids {
            a.active[id.0] = true;
        }
        a
    }

    /// Penetration of `a`'s vertices into `b` in the assembled pose.
    pub fn initial_penetration(&self, a: PartId, b: PartId) -> f64 {
        self.initial_penetration.get(&(a, b)).copied().unwrap_or(0.0)
    }

    pub fn initial_penetrations(&self) -> &BTreeMap<(PartId, PartId), f64> {
        &self.initial_penetration
    }

    /// Allowed penetration of `a` into `b`.
    pub fn threshold(&self, a: PartId, b: PartId, base: f64) -> f64 {
        base + self.initial_penetration(a, b)
    }

    pub fn bounds(&self, ids: &[PartId]) -> Option<Aabb> {
        ids.iter().map(|&i| self.geometry(i).bounds).reduce(|a, b| a.union(&b))
    }

    pub fn is_disassembled(&self, part: PartId, state: &RigidState) -> bool {
        Scene::new(self, &[part]).is_disassembled(std::slice::from_ref(state))
    }

    /// Deepest penetration of `part` into any other active part in its assembled pose.
    pub fn max_penetration(&self, part: PartId, state: &RigidState) -> f64 {
        Scene::new(self, &[part]).penetrations(std::slice::from_ref(state))[0]
    }
}

/// Moving parts against the remaining active parts held in the assembled pose.
#[derive(Debug, Clone)]
pub struct Scene<'a> {
    pub assembly: &'a Assembly,
    pub moving: Vec<PartId>,
    pub fixed: Vec<PartId>,
    others_hull: Option<ConvexHull>,
    others_bounds: Option<Aabb>,
}

impl<'a> Scene<'a> {
    pub fn new(assembly: &'a Assembly, moving: &[PartId]) -> Self {
        let fixed: Vec<PartId> = assembly.active_ids().into_iter().filter(|id| !moving.contains(id)).collect();
        let points: Vec<Point3<f64>> = fixed.iter().flat_map(|&id| assembly.geometry(id).hull.vertices.iter().copied()).collect();
        let others_hull = if points.is_empty() { None } else { ConvexHull::from_points(&points).ok() };
        let others_bounds = Aabb::from_points(&points);
        Self { assembly, moving: moving.to_vec(), fixed, others_hull, others_bounds }
    }

    pub fn geometry(&self, id: PartId) -> &'a PartGeometry {
        self.assembly.geometry(id)
    }

    /// Bounds of the fixed parts, `None` when nothing is fixed.
    pub fn others_bounds(&self) -> Option<&Aabb> {
        self.others_bounds.as_ref()
    }

    pub fn world_hull_bounds(&self, id: PartId, s: &RigidState) -> Aabb {
        let g = self.geometry(id);
        let iso = s.isometry(&g.props.com);
        Aabb::from_points(&g.hull.vertices.iter().map(|v| iso * v).collect::<Vec<_>>()).expect("hull has vertices")
    }

    /// Every moving hull is clear of the hull around all fixed parts.
    pub fn is_disassembled(&self, states: &[RigidState]) -> bool {
        let (Some(hull), Some(ob)) = (&self.others_hull, &self.others_bounds) else { return true };
        self.moving.iter().zip(states).all(|(&id, s)| {
            let b = self.world_hull_bounds(id, s);
            if !b.expanded(1e-5).intersects(ob) {
                return true;
            }
            let g = self.geometry(id);
            !hulls_intersect_at(&g.hull, &s.isometry(&g.props.com), hull, &Isometry3::identity())
        })
    }

    fn pose_of(&self, id: PartId, states: &[RigidState]) -> RigidState {
        self.moving.iter().position(|&m| m == id).map(|k| states[k]).unwrap_or_default()
    }

    fn others_of(&self, id: PartId) -> impl Iterator<Item = PartId> + '_ {
        self.fixed.iter().copied().chain(self.moving.iter().copied()).filter(move |&o| o != id)
    }

    /// Per moving part, the deepest penetration into any other body.
    pub fn penetrations(&self, states: &[RigidState]) -> Vec<f64> {
        self.moving
            .iter()
            .zip(states)
            .map(|(&id, s)| {
                self.others_of(id)
                    .map(|o| penetration_depth((self.geometry(id), s), (self.geometry(o), &self.pose_of(o, states))))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Largest amount by which any pair exceeds its allowed penetration (≤ 0 means valid).
    pub fn penetration_excess(&self, states: &[RigidState], base: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (&id, s) in self.moving.iter().zip(states) {
            for o in self.others_of(id) {
                let d = penetration_depth((self.geometry(id), s), (self.geometry(o), &self.pose_of(o, states)));
                worst = worst.max(d - self.assembly.threshold(id, o, base));
            }
        }
        worst
    }

    pub fn is_valid(&self, states: &[RigidState], base: f64) -> bool {
        self.penetration_excess(states, base) <= 0.0
    }

    /// One `dt` step of the moving parts; `actions` lines up with `moving`.
    pub fn simulate(
        &self,
        states: &mut [RigidState],
        actions: &[Option<Action>],
        dt: f64,
        params: &SimParams,
    ) -> Result<(), SimError> {
        let bodies: Vec<SimBody> = self
            .moving
            .iter()
            .map(|&id| SimBody { geometry: self.geometry(id), dynamic: true })
            .chain(self.fixed.iter().map(|&id| SimBody { geometry: self.geometry(id), dynamic: false }))
            .collect();
        let mut all: Vec<RigidState> = states.iter().copied().chain(self.fixed.iter().map(|_| RigidState::identity())).collect();
        let mut acts: Vec<Option<Action>> = actions.to_vec();
        acts.resize(bodies.len(), None);
        simulate(&bodies, &mut all, &acts, dt, params, None)?;
        states.copy_from_slice(&all[..states.len()]);
        Ok(())
    }
}

/// Euclidean translation distance and rotation distance `|ln(qa^-1 qb)| = angle / 2`.
pub fn state_distance(a: &RigidState, b: &RigidState) -> (f64, f64) {
    let trans = (a.translation - b.translation).norm();
    let rel = a.rotation.inverse() * b.rotation;
    let q = rel.quaternion();
    let rot = q.imag().norm().atan2(q.w.abs());
    (trans, rot)
}

pub fn is_similar(a: &RigidState, b: &RigidState, delta_t: f64, delta_r: f64) -> bool {
    let (t, r) = state_distance(a, b);
    t <= delta_t && r <= delta_r
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, UnitQuaternion, Vector3};
    use proptest::prelude::*;
    use crate::geometry::primitives::cuboid;
    use crate::geometry::subdivide;
    use crate::pipeline::fixtures::{fixture_assembly, FixtureKind};
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn distance_examples() {
        let a = RigidState::identity();
        assert_eq!(state_distance(&a, &a), (0.0, 0.0));
        let b = RigidState::translated(Vector3::new(3.0, 4.0, 0.0));
        assert_eq!(state_distance(&a, &b).0, 5.0);
        let c = RigidState::at(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2));
        assert!((state_distance(&a, &c).1 - FRAC_PI_4).abs() < 1e-12);
        // Matrix-log oracle: the rotation angle from the trace, halved.
        let r = c.rotation.to_rotation_matrix();
        let angle = ((r.matrix().trace() - 1.0) / 2.0).acos();
        assert!((state_distance(&a, &c).1 - angle / 2.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let a = RigidState::identity();
        let t = |x: f64| RigidState::translated(Vector3::new(x, 0.0, 0.0));
        assert!(is_similar(&a, &t(0.04), 0.05, 0.5));
        assert!(!is_similar(&a, &t(0.06), 0.05, 0.5));
        let r = RigidState::at(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 1.2));
        assert!(!is_similar(&a, &r, 0.05, 0.5));
    }

    #[test]
    fn ring_on_shaft_disassembly_test() {
        let a = fixture_assembly(FixtureKind::RingShaft);
        let ring = a.find("ring").unwrap();
        assert!(!a.is_disassembled(ring, &RigidState::identity()));
        assert!(a.is_disassembled(ring, &RigidState::translated(Vector3::new(0.0, 0.0, 10.0))));
        assert!(!a.is_disassembled(ring, &RigidState::translated(Vector3::new(0.0, 0.0, 5.0))));
    }

    #[test]
    fn overlapping_cubes_report_their_overlap() {
        let meshes = vec![
            ("a".to_string(), subdivide(&cuboid(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)), 0.5)),
            ("b".to_string(), cuboid(Point3::new(0.998, -0.5, -0.5), Point3::new(1.998, 1.5, 1.5))),
        ];
        let a = Assembly::from_meshes(meshes, &MassModel::default(), None).unwrap();
        let cell = a.geometry(PartId(1)).sdf.max_cell_size();
        let d = a.max_penetration(PartId(0), &RigidState::identity());
        assert!((d - 0.002).abs() <= cell, "{d}");
        assert!((d - 0.002).abs() < 1e-4, "{d}");
        assert!(a.initial_penetration(PartId(0), PartId(1)) > 0.0);
        let scene = Scene::new(&a, &[PartId(0)]);
        assert!(scene.is_valid(&[RigidState::identity()], 0.0));
    }

    fn any_state() -> impl Strategy<Value = RigidState> {
        (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform4(-1.0..1.0f64))
            .prop_filter("nonzero quaternion", |(_, q)| q.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(|(t, q)| {
                RigidState::at(Vector3::from(t), UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3])))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn distance_is_a_metric(a in any_state(), b in any_state(), c in any_state()) {
            let (tab, rab) = state_distance(&a, &b);
            let (tba, rba) = state_distance(&b, &a);
            prop_assert!((tab - tba).abs() < 1e-9 && (rab - rba).abs() < 1e-9);
            let (tbc, rbc) = state_distance(&b, &c);
            let (tac, rac) = state_distance(&a, &c);
            prop_assert!(tac <= tab + tbc + 1e-9);
            prop_assert!(rac <= rab + rbc + 1e-9);
            prop_assert!(is_similar(&a, &a, 0.05, 0.5));
        }

        #[test]
        fn rotation_distance_ignores_quaternion_sign(a in any_state()) {
            let flipped = RigidState::at(a.translation, UnitQuaternion::new_unchecked(-a.rotation.into_inner()));
            prop_assert!(state_distance(&a, &flipped).1.abs() < 1e-12);
        }
    }
}
