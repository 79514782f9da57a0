//! Breadth-first disassembly path planning with physics rollouts.
//!
//! Every dequeued state is expanded by each action: the action is applied for repeated
//! `Δt` steps until the state stops being new (similar to some visited state), becomes
//! invalid, or the part set is disassembled. The last new state of a rollout becomes a
//! child node one level deeper.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{is_similar, Assembly, ModelError, PartId, Scene};
use crate::physics::{Action, RigidState, SimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionMode {
    #[serde(rename = "trans")]
    Translation,
    #[serde(rename = "trans-rot")]
    TranslationRotation,
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionMode::Translation => "trans",
            ActionMode::TranslationRotation => "trans-rot",
        })
    }
}

impl std::str::FromStr for ActionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trans" => Ok(ActionMode::Translation),
            "trans-rot" => Ok(ActionMode::TranslationRotation),
            other => Err(format!("unknown action mode {other:?} (expected trans or trans-rot)")),
        }
    }
}

fn axes() -> [Vector3<f64>; 6] {
    [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y(), Vector3::z(), -Vector3::z()]
}

/// Forces along ±x, ±y, ±z, followed by torques about the same axes when rotating.
pub fn action_space(mode: ActionMode, magnitude: f64) -> Vec<Action> {
    let forces = axes().into_iter().map(|d| Action::force(d, magnitude));
    match mode {
        ActionMode::Translation => forces.collect(),
        ActionMode::TranslationRotation => forces.chain(axes().into_iter().map(|d| Action::torque(d, magnitude))).collect(),
    }
}

/// One optional action per moving part; `None` holds the part still.
pub type JointAction = Vec<Option<Action>>;

/// Cartesian product of per-part actions plus a hold, without the all-hold tuple, with
/// the tuples that apply one action to every part first. A single part gets the plain
/// action list.
pub fn joint_action_space(parts: usize, mode: ActionMode, magnitude: f64) -> Vec<JointAction> {
    let base = action_space(mode, magnitude);
    if parts == 1 {
        return base.into_iter().map(|a| vec![Some(a)]).collect();
    }
    let choices: Vec<Option<Action>> = base.into_iter().map(Some).chain(std::iter::once(None)).collect();
    let mut out: Vec<JointAction> = vec![Vec::new()];
    for _ in 0..parts {
        out = out.into_iter().flat_map(|prefix| choices.iter().map(move |c| [prefix.as_slice(), &[*c]].concat())).collect();
    }
    out.retain(|t| t.iter().any(Option::is_some));
    // Rigid motions of the whole set (one action shared by all members) are tried first.
    let (mut uniform, rest): (Vec<_>, Vec<_>) = out.into_iter().partition(|t| t.iter().all(|a| a.is_some() && *a == t[0]));
    uniform.extend(rest);
    uniform
}

/// Search hyper-parameters shared by all physics-based planners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub delta_t: f64,
    pub delta_r: f64,
    /// Simulated time per action application.
    pub step_time: f64,
    pub magnitude: f64,
    /// Allowed penetration on top of the initial overlap of a pair.
    pub penetration: f64,
    /// Upper bound on consecutive applications of one action.
    pub rollout_cap: usize,
    pub sim: SimParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            delta_t: 0.05,
            delta_r: 0.5,
            step_time: 0.1,
            magnitude: 100.0,
            penetration: 0.01,
            rollout_cap: 1000,
            sim: SimParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathQuery {
    pub parts: Vec<PartId>,
    pub t_max: Duration,
    /// `None` searches without a depth limit.
    pub d_max: Option<usize>,
    pub mode: ActionMode,
}

impl PathQuery {
    pub fn single(part: PartId, t_max: Duration, d_max: Option<usize>, mode: ActionMode) -> Self {
        Self { parts: vec![part], t_max, d_max, mode }
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid query: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Timeout,
    Depth,
    Exhausted,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Timeout => "timeout",
            FailureKind::Depth => "depth",
            FailureKind::Exhausted => "exhausted",
        })
    }
}

/// States of the moving parts from the assembled pose to a disassembled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisassemblyPath {
    pub parts: Vec<PartId>,
    pub mode: ActionMode,
    /// `states[k][j]` is the pose of `parts[j]` after `k` steps.
    pub states: Vec<Vec<RigidState>>,
    /// `actions[k]` takes `states[k]` to `states[k + 1]`.
    pub actions: Vec<JointAction>,
}

impl DisassemblyPath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of maximal runs of one joint action.
    pub fn depth(&self) -> usize {
        let mut d = 0;
        for (k, a) in self.actions.iter().enumerate() {
            if k == 0 || self.actions[k - 1] != *a {
                d += 1;
            }
        }
        d
    }

    /// Poses of one member part along the path.
    pub fn track(&self, part: PartId) -> Option<Vec<RigidState>> {
        let j = self.parts.iter().position(|&p| p == part)?;
        Some(self.states.iter().map(|s| s[j]).collect())
    }

    pub fn first(&self) -> &[RigidState] {
        &self.states[0]
    }

    pub fn last(&self) -> &[RigidState] {
        &self.states[self.states.len() - 1]
    }

    /// Re-simulates the recorded actions from the first state; true if every pose matches exactly.
    pub fn replays_exactly(&self, assembly: &Assembly, params: &PlannerParams) -> bool {
        let scene = Scene::new(assembly, &self.parts);
        let mut s = self.states[0].clone();
        for (k, a) in self.actions.iter().enumerate() {
            if scene.simulate(&mut s, a, params.step_time, &params.sim).is_err() {
                return false;
            }
            if !s.iter().zip(&self.states[k + 1]).all(|(x, y)| x.translation == y.translation && x.rotation == y.rotation) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub sim_calls: u64,
    pub nodes: usize,
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub result: Result<DisassemblyPath, FailureKind>,
    pub stats: SearchStats,
}

impl PathOutcome {
    pub fn is_success(&self) -> bool {
        self.result.is_ok()
    }
}

/// Past states bucketed by the first part's translation, cell size `delta_t`.
struct VisitedSet {
    delta_t: f64,
    delta_r: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    states: Vec<Vec<RigidState>>,
}

impl VisitedSet {
    fn new(delta_t: f64, delta_r: f64) -> Self {
        Self { delta_t, delta_r, buckets: HashMap::new(), states: Vec::new() }
    }

    fn key(&self, s: &[RigidState]) -> [i64; 3] {
        let t = s[0].translation / self.delta_t;
        [t.x.floor() as i64, t.y.floor() as i64, t.z.floor() as i64]
    }

    fn contains_similar(&self, s: &[RigidState]) -> bool {
        let k = self.key(s);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else { continue };
                    let hit = ids.iter().any(|&i| {
                        self.states[i].iter().zip(s).all(|(a, b)| is_similar(a, b, self.delta_t, self.delta_r))
                    });
                    if hit {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn insert(&mut self, s: &[RigidState]) {
        let k = self.key(s);
        self.buckets.entry(k).or_default().push(self.states.len());
        self.states.push(s.to_vec());
    }

    fn len(&self) -> usize {
        self.states.len()
    }
}

struct Node {
    parent: Option<usize>,
    action: Option<usize>,
    depth: usize,
    /// States produced by the rollout that created this node; the last one is the node state.
    segment: Vec<Vec<RigidState>>,
}

enum Rollout {
    Disassembled(Vec<Vec<RigidState>>),
    Stopped(Vec<Vec<RigidState>>),
    Timeout,
}

/// Plans a disassembly path for `query.parts` with every other active part fixed.
pub fn plan_disassembly_path(assembly: &Assembly, query: &PathQuery, params: &PlannerParams) -> Result<PathOutcome, QueryError> {
    validate_query(assembly, query)?;
    let start = Instant::now();
    let scene = Scene::new(assembly, &query.parts);
    let actions = joint_action_space(query.parts.len(), query.mode, params.magnitude);
    let root: Vec<RigidState> = vec![RigidState::identity(); query.parts.len()];
    let mut stats = SearchStats::default();

    let finish = |stats: &mut SearchStats, result| {
        stats.elapsed = start.elapsed().as_secs_f64();
        Ok(PathOutcome { result, stats: *stats })
    };

    if scene.is_disassembled(&root) {
        let path = DisassemblyPath { parts: query.parts.clone(), mode: query.mode, states: vec![root], actions: vec![] };
        return finish(&mut stats, Ok(path));
    }

    let mut visited = VisitedSet::new(params.delta_t, params.delta_r);
    visited.insert(&root);
    let mut nodes = vec![Node { parent: None, action: None, depth: 0, segment: vec![root] }];
    let mut queue = VecDeque::from([0usize]);

    while let Some(n) = queue.pop_front() {
        if query.d_max.is_some_and(|d| nodes[n].depth >= d) {
            stats.nodes = nodes.len();
            return finish(&mut stats, Err(FailureKind::Depth));
        }
        for (ai, action) in actions.iter().enumerate() {
            let from = nodes[n].segment.last().expect("nonempty segment").clone();
            match rollout(&scene, from, action, params, &mut visited, &mut stats, start, query.t_max) {
                Rollout::Timeout => {
                    stats.nodes = nodes.len();
                    return finish(&mut stats, Err(FailureKind::Timeout));
                }
                Rollout::Disassembled(segment) => {
                    let path = backtrack(&nodes, n, &actions, query, action, segment);
                    stats.nodes = nodes.len();
                    return finish(&mut stats, Ok(path));
                }
                Rollout::Stopped(segment) if !segment.is_empty() => {
                    let depth = nodes[n].depth + 1;
                    nodes.push(Node { parent: Some(n), action: Some(ai), depth, segment });
                    queue.push_back(nodes.len() - 1);
                }
                Rollout::Stopped(_) => {}
            }
        }
    }
    stats.nodes = nodes.len();
    log::debug!("search exhausted after {} visited states", visited.len());
    finish(&mut stats, Err(FailureKind::Exhausted))
}

fn validate_query(assembly: &Assembly, query: &PathQuery) -> Result<(), QueryError> {
    if query.parts.is_empty() {
        return Err(QueryError::Invalid("no moving parts".into()));
    }
    if query.t_max.is_zero() {
        return Err(QueryError::Invalid("t_max must be positive".into()));
    }
    if query.d_max == Some(0) {
        return Err(QueryError::Invalid("d_max must be at least 1".into()));
    }
    for (k, &p) in query.parts.iter().enumerate() {
        if p.0 >= assembly.len() {
            return Err(ModelError::UnknownPart(p).into());
        }
        if !assembly.is_active(p) {
            return Err(ModelError::Inactive(p).into());
        }
        if query.parts[..k].contains(&p) {
            return Err(QueryError::Invalid(format!("part {p} listed twice")));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    scene: &Scene,
    from: Vec<RigidState>,
    action: &JointAction,
    params: &PlannerParams,
    visited: &mut VisitedSet,
    stats: &mut SearchStats,
    start: Instant,
    t_max: Duration,
) -> Rollout {
    let mut segment = Vec::new();
    let mut s = from;
    for _ in 0..params.rollout_cap {
        if start.elapsed() > t_max {
            return Rollout::Timeout;
        }
        stats.sim_calls += 1;
        if let Err(e) = scene.simulate(&mut s, action, params.step_time, &params.sim) {
            log::warn!("rollout dropped: {e}");
            break;
        }
        if !scene.is_valid(&s, params.penetration) {
            break;
        }
        if scene.is_disassembled(&s) {
            segment.push(s);
            return Rollout::Disassembled(segment);
        }
        if visited.contains_similar(&s) {
            break;
        }
        visited.insert(&s);
        segment.push(s.clone());
    }
    Rollout::Stopped(segment)
}

fn backtrack(
    nodes: &[Node],
    leaf: usize,
    actions: &[JointAction],
    query: &PathQuery,
    last_action: &JointAction,
    last_segment: Vec<Vec<RigidState>>,
) -> DisassemblyPath {
    let mut chain = Vec::new();
    let mut cur = Some(leaf);
    while let Some(i) = cur {
        chain.push(i);
        cur = nodes[i].parent;
    }
    chain.reverse();
    let mut states = nodes[chain[0]].segment.clone();
    let mut acts = Vec::new();
    for &i in &chain[1..] {
        let a = &actions[nodes[i].action.expect("non-root node has an action")];
        for s in &nodes[i].segment {
            states.push(s.clone());
            acts.push(a.clone());
        }
    }
    for s in last_segment {
        states.push(s);
        acts.push(last_action.clone());
    }
    DisassemblyPath { parts: query.parts.clone(), mode: query.mode, states, actions: acts }
}

/// Result of checking a path against the assembly's validity rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCheck {
    pub waypoints: usize,
    pub violations: usize,
    pub worst_excess: f64,
    pub ends_disassembled: bool,
}

impl PathCheck {
    pub fn is_ok(&self) -> bool {
        self.violations == 0 && self.ends_disassembled
    }
}

/// Checks every waypoint's penetration against its threshold and that the path ends disassembled.
pub fn check_path(assembly: &Assembly, path: &DisassemblyPath, penetration: f64) -> PathCheck {
    let scene = Scene::new(assembly, &path.parts);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for s in &path.states {
        let e = scene.penetration_excess(s, penetration);
        worst_excess = worst_excess.max(e);
        if e > 0.0 {
            violations += 1;
        }
    }
    PathCheck {
        waypoints: path.states.len(),
        violations,
        worst_excess,
        ends_disassembled: !path.is_empty() && scene.is_disassembled(path.last()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::ActionKind;
    use crate::pipeline::fixtures::{fixture_assembly, FixtureKind};

    fn query(a: &Assembly, name: &str, d_max: Option<usize>, mode: ActionMode) -> PathQuery {
        PathQuery::single(a.find(name).unwrap(), Duration::from_secs(60), d_max, mode)
    }

    #[test]
    fn action_space_sizes() {
        let t = action_space(ActionMode::Translation, 100.0);
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|a| a.kind == ActionKind::Force && (a.direction.norm() - 1.0).abs() < 1e-15));
        assert_eq!(t[0].direction, Vector3::x());
        assert_eq!(t[5].direction, -Vector3::z());
        let r = action_space(ActionMode::TranslationRotation, 100.0);
        assert_eq!(r.len(), 12);
        assert_eq!(r.iter().filter(|a| a.kind == ActionKind::Torque).count(), 6);
        assert!(r.iter().all(|a| a.magnitude == 100.0));
    }

    #[test]
    fn joint_action_space_excludes_all_hold() {
        assert_eq!(joint_action_space(1, ActionMode::Translation, 100.0).len(), 6);
        let j = joint_action_space(2, ActionMode::TranslationRotation, 100.0);
        assert_eq!(j.len(), 13 * 13 - 1);
        assert!(j.iter().all(|t| t.len() == 2 && t.iter().any(Option::is_some)));
        assert_eq!(joint_action_space(3, ActionMode::Translation, 100.0).len(), 7 * 7 * 7 - 1);
        assert!(j[..12].iter().all(|t| t[0].is_some() && t[0] == t[1]));
        assert_ne!(j[12][0], j[12][1]);
    }

    #[test]
    fn rejects_bad_queries() {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let p = PlannerParams::default();
        let mut q = query(&a, "peg", Some(1), ActionMode::Translation);
        q.d_max = Some(0);
        assert!(plan_disassembly_path(&a, &q, &p).is_err());
        q.d_max = None;
        q.parts = vec![PartId(7)];
        assert!(plan_disassembly_path(&a, &q, &p).is_err());
    }

    #[test]
    fn peg_leaves_along_z_in_one_segment() {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let p = PlannerParams::default();
        let out = plan_disassembly_path(&a, &query(&a, "peg", None, ActionMode::Translation), &p).unwrap();
        let path = out.result.expect("peg path");
        assert_eq!(path.depth(), 1);
        assert!(path.actions.iter().all(|j| j[0] == Some(Action::force(Vector3::z(), 100.0))));
        let z: Vec<f64> = path.states.iter().map(|s| s[0].translation.z).collect();
        assert!(z.windows(2).all(|w| w[1] > w[0]));
        assert!(path.replays_exactly(&a, &p));
        assert!(check_path(&a, &path, p.penetration).is_ok());
    }

    #[test]
    fn l_channel_needs_two_segments() {
        let a = fixture_assembly(FixtureKind::LChannel);
        let p = PlannerParams::default();
        let shallow = plan_disassembly_path(&a, &query(&a, "block", Some(1), ActionMode::Translation), &p).unwrap();
        assert_eq!(shallow.result.unwrap_err(), FailureKind::Depth);
        let deep = plan_disassembly_path(&a, &query(&a, "block", Some(2), ActionMode::Translation), &p).unwrap();
        let path = deep.result.expect("L-channel path");
        assert_eq!(path.depth(), 2);
        assert!(check_path(&a, &path, p.penetration).is_ok());
        assert!(path.replays_exactly(&a, &p));
    }

    #[test]
    fn last_part_is_trivially_free() {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let only = a.with_active(&[PartId(1)]);
        let out = plan_disassembly_path(&only, &query(&a, "plate", Some(1), ActionMode::Translation), &PlannerParams::default()).unwrap();
        let path = out.result.unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(out.stats.sim_calls, 0);
    }

    #[test]
    fn visited_states_are_pairwise_dissimilar() {
        let mut v = VisitedSet::new(0.05, 0.5);
        let mut accepted = Vec::new();
        for i in 0..400 {
            let x = (i as f64 * 0.0137).sin() * 0.4;
            let y = (i as f64 * 0.031).cos() * 0.4;
            let s = vec![RigidState::translated(Vector3::new(x, y, 0.0))];
            if !v.contains_similar(&s) {
                v.insert(&s);
                accepted.push(s);
            }
        }
        for (i, a) in accepted.iter().enumerate() {
            for b in &accepted[i + 1..] {
                assert!(!is_similar(&a[0], &b[0], 0.05, 0.5));
            }
        }
    }
}
