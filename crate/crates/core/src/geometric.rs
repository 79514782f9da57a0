//! Pieces shared by the sampling-based planners: configuration, the state metric used for
//! nearest neighbours, interpolation, collision checking of motions and random sampling.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb;
use crate::model::{state_distance, Assembly, PartId, Scene};
use crate::path::{ActionMode, DisassemblyPath};
use crate::physics::RigidState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomPlannerConfig {
    /// Tree extension step, also the edge checking resolution.
    pub step: f64,
    pub max_penetration: f64,
    pub goal_probability: f64,
    pub seed: u64,
}

impl Default for GeomPlannerConfig {
    fn default() -> Self {
        Self { step: 0.01, max_penetration: 0.01, goal_probability: 0.2, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("step must be positive, got {0}")]
    Step(f64),
    #[error("goal probability must lie in [0, 1], got {0}")]
    Probability(f64),
}

impl GeomPlannerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.step > 0.0) {
            return Err(ConfigError::Step(self.step));
        }
        if !(0.0..=1.0).contains(&self.goal_probability) {
            return Err(ConfigError::Probability(self.goal_probability));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeomFailure {
    Timeout,
    /// No valid disassembled goal could be sampled.
    NoGoal,
    /// An endpoint is in collision (or not disassembled where required).
    InvalidEndpoint,
    /// The search space ran out (only possible for bounded searches).
    Exhausted,
}

impl fmt::Display for GeomFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeomFailure::Timeout => "timeout",
            GeomFailure::NoGoal => "no-goal",
            GeomFailure::InvalidEndpoint => "invalid-endpoint",
            GeomFailure::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeomStats {
    pub iterations: u64,
    pub nodes: usize,
    pub sim_calls: u64,
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct GeomOutcome {
    pub result: Result<DisassemblyPath, GeomFailure>,
    pub stats: GeomStats,
}

impl GeomOutcome {
    pub fn is_success(&self) -> bool {
        self.result.is_ok()
    }
}

/// Weighted state distance used for nearest neighbours: translation + 2 * rotation.
pub fn metric(a: &RigidState, b: &RigidState) -> f64 {
    let (t, r) = state_distance(a, b);
    t + 2.0 * r
}

/// Linear in translation, spherical-linear (short way round) in rotation.
pub fn interpolate(a: &RigidState, b: &RigidState, t: f64) -> RigidState {
    let qa = a.rotation;
    let mut qb = b.rotation;
    if qa.coords.dot(&qb.coords) < 0.0 {
        qb = UnitQuaternion::new_unchecked(-qb.into_inner());
    }
    let rotation = qa.try_slerp(&qb, t, 1e-12).unwrap_or(qa);
    RigidState::at(a.translation.lerp(&b.translation, t), rotation)
}

/// Moves from `from` toward `to` by at most `step` in the metric.
pub fn steer(from: &RigidState, to: &RigidState, step: f64) -> RigidState {
    let d = metric(from, to);
    if d <= step {
        RigidState::at(to.translation, to.rotation)
    } else {
        interpolate(from, to, step / d)
    }
}

/// Single-part path without actions, as produced by geometric planners.
pub fn states_to_path(part: PartId, mode: ActionMode, states: Vec<RigidState>) -> DisassemblyPath {
    let actions = vec![vec![None]; states.len().saturating_sub(1)];
    DisassemblyPath { parts: vec![part], mode, states: states.into_iter().map(|s| vec![s]).collect(), actions }
}

/// Validity and disassembly tests for one moving part against the other active parts.
pub struct Checker<'a> {
    pub scene: Scene<'a>,
    pub penetration: f64,
    pub step: f64,
    radius: f64,
}

impl<'a> Checker<'a> {
    pub fn new(assembly: &'a Assembly, part: PartId, penetration: f64, step: f64) -> Self {
        let g = assembly.geometry(part);
        let radius = g.mesh.vertices.iter().map(|v| (v - g.props.com).norm()).fold(0.0, f64::max);
        Self { scene: Scene::new(assembly, &[part]), penetration, step, radius }
    }

    pub fn part(&self) -> PartId {
        self.scene.moving[0]
    }

    pub fn valid(&self, s: &RigidState) -> bool {
        self.scene.is_valid(std::slice::from_ref(s), self.penetration)
    }

    pub fn disassembled(&self, s: &RigidState) -> bool {
        self.scene.is_disassembled(std::slice::from_ref(s))
    }

    /// Upper bound on how far any vertex moves between two states.
    pub fn sweep_length(&self, a: &RigidState, b: &RigidState) -> f64 {
        let (t, r) = state_distance(a, b);
        t + 2.0 * r * self.radius
    }

    /// Checks the motion `a -> b` at resolution `step` (excluding `a`, including `b`).
    pub fn edge_valid(&self, a: &RigidState, b: &RigidState) -> bool {
        let n = (self.sweep_length(a, b) / self.step).ceil().max(1.0) as usize;
        (1..=n).all(|k| self.valid(&interpolate(a, b, k as f64 / n as f64)))
    }
}

/// Uniform states: center of mass in a box, rotation uniform over SO(3) (or fixed).
#[derive(Debug, Clone)]
pub struct Sampler {
    pub lo: Point3<f64>,
    pub hi: Point3<f64>,
    com: Point3<f64>,
    rotate: bool,
}

impl Sampler {
    /// Box of the given bounds inflated by 50% about its center.
    pub fn new(bounds: &Aabb, com: Point3<f64>, mode: ActionMode) -> Self {
        let half = bounds.extents() * 0.75;
        let c = bounds.center();
        Self { lo: c - half, hi: c + half, com, rotate: mode == ActionMode::TranslationRotation }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> RigidState {
        let p = Vector3::new(
            rng.gen_range(self.lo.x..=self.hi.x),
            rng.gen_range(self.lo.y..=self.hi.y),
            rng.gen_range(self.lo.z..=self.hi.z),
        );
        let rotation = if self.rotate { random_rotation(rng) } else { UnitQuaternion::identity() };
        RigidState::at(p - self.com.coords, rotation)
    }
}

/// Shoemake's uniform random unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::new_normalize(Quaternion::new(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin()))
}

// Beyond this many states the index switches from a scan to a grid.
const LINEAR_LIMIT: usize = 50_000;
const GRID_CELL: f64 = 0.25;

/// Exact nearest neighbour under [`metric`]; ties go to the lower index.
#[derive(Debug, Default)]
pub struct NearestIndex {
    states: Vec<RigidState>,
    grid: Option<Grid>,
}

#[derive(Debug)]
struct Grid {
    buckets: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

fn cell_of(s: &RigidState) -> [i64; 3] {
    let t = s.translation / GRID_CELL;
    [t.x.floor() as i64, t.y.floor() as i64, t.z.floor() as i64]
}

impl Grid {
    fn insert(&mut self, s: &RigidState, i: usize) {
        let k = cell_of(s);
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(k[a]);
            self.hi[a] = self.hi[a].max(k[a]);
        }
        self.buckets.entry(k).or_default().push(i);
    }
}

impl NearestIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, i: usize) -> &RigidState {
        &self.states[i]
    }

    pub fn insert(&mut self, s: RigidState) -> usize {
        let i = self.states.len();
        self.states.push(s);
        match &mut self.grid {
            Some(g) => g.insert(&s, i),
            None if self.states.len() > LINEAR_LIMIT => {
                let mut g = Grid { buckets: HashMap::new(), lo: [i64::MAX; 3], hi: [i64::MIN; 3] };
                for (j, t) in self.states.iter().enumerate() {
                    g.insert(t, j);
                }
                self.grid = Some(g);
            }
            None => {}
        }
        i
    }

    pub fn nearest(&self, q: &RigidState) -> Option<(usize, f64)> {
        let better = |best: Option<(usize, f64)>, i: usize, d: f64| match best {
            Some((bi, bd)) if bd < d || (bd == d && bi < i) => Some((bi, bd)),
            _ => Some((i, d)),
        };
        let Some(g) = &self.grid else {
            return self.states.iter().enumerate().fold(None, |best, (i, s)| better(best, i, metric(q, s)));
        };
        let k = cell_of(q);
        let reach = (0..3).map(|a| (k[a] - g.lo[a]).abs().max((g.hi[a] - k[a]).abs())).max().unwrap_or(0);
        let mut best = None;
        for r in 0..=reach {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = g.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &i in ids {
                                best = better(best, i, metric(q, &self.states[i]));
                            }
                        }
                    }
                }
            }
            // Anything not yet seen lies at least r cells away.
            if best.is_some_and(|(_, d)| d <= r as f64 * GRID_CELL) {
                break;
            }
        }
        best
    }
}

/// Tree of states with parent links.
#[derive(Debug, Default)]
pub struct Tree {
    pub index: NearestIndex,
    pub parents: Vec<Option<usize>>,
}

impl Tree {
    pub fn with_root(root: RigidState) -> Self {
        let mut t = Self::default();
        t.add(root, None);
        t
    }

    pub fn add(&mut self, s: RigidState, parent: Option<usize>) -> usize {
        self.parents.push(parent);
        self.index.insert(s)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn state(&self, i: usize) -> &RigidState {
        self.index.get(i)
    }

    pub fn nearest(&self, q: &RigidState) -> usize {
        self.index.nearest(q).expect("tree has a root").0
    }

    /// States from the root to `i`.
    pub fn branch(&self, i: usize) -> Vec<RigidState> {
        let mut out = Vec::new();
        let mut cur = Some(i);
        while let Some(n) = cur {
            out.push(*self.state(n));
            cur = self.parents[n];
        }
        out.reverse();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_invariants() {
        assert!(GeomPlannerConfig::default().validate().is_ok());
        assert!(GeomPlannerConfig { step: 0.0, ..Default::default() }.validate().is_err());
        assert!(GeomPlannerConfig { goal_probability: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = RigidState::identity();
        let b = RigidState::at(Vector3::new(2.0, 0.0, 0.0), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1.0));
        assert_eq!(interpolate(&a, &b, 0.0).translation, a.translation);
        assert!(metric(&interpolate(&a, &b, 1.0), &b) < 1e-12);
        let m = interpolate(&a, &b, 0.5);
        assert!((m.translation.x - 1.0).abs() < 1e-12);
        assert!((m.rotation.angle() - 0.5).abs() < 1e-12);
        // The short way round even with a sign-flipped quaternion.
        let flipped = RigidState::at(b.translation, UnitQuaternion::new_unchecked(-b.rotation.into_inner()));
        assert!((interpolate(&a, &flipped, 0.5).rotation.angle() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn steer_never_overshoots() {
        let a = RigidState::identity();
        let b = RigidState::translated(Vector3::new(1.0, 0.0, 0.0));
        let s = steer(&a, &b, 0.01);
        assert!((metric(&a, &s) - 0.01).abs() < 1e-12);
        assert_eq!(steer(&a, &b, 5.0).translation, b.translation);
    }

    #[test]
    fn random_rotations_are_unit_and_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qs: Vec<_> = (0..2000).map(|_| random_rotation(&mut rng)).collect();
        assert!(qs.iter().all(|q| (q.quaternion().norm() - 1.0).abs() < 1e-12));
        // For uniform rotations E|w| = 4 / (3 pi).
        let mean_w = qs.iter().map(|q| q.w.abs()).sum::<f64>() / qs.len() as f64;
        assert!((mean_w - 4.0 / (3.0 * std::f64::consts::PI)).abs() < 0.03, "{mean_w}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn grid_index_matches_linear_scan(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut linear = NearestIndex::new();
            let mut grid = NearestIndex::new();
            grid.grid = Some(Grid { buckets: HashMap::new(), lo: [i64::MAX; 3], hi: [i64::MIN; 3] });
            for _ in 0..300 {
                let s = RigidState::at(
                    Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                    random_rotation(&mut rng),
                );
                linear.insert(s);
                grid.insert(s);
            }
            for _ in 0..50 {
                let q = RigidState::at(
                    Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                    random_rotation(&mut rng),
                );
                prop_assert_eq!(linear.nearest(&q), grid.nearest(&q));
            }
        }
    }
}
