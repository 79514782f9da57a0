//! Sampling-based baselines for single-part disassembly: a goal-directed RRT, a T-RRT
//! variant that grows toward the outside of the assembly bounds, the same with a
//! straight-line motion-vector phase first, and an RRT that expands by simulated actions.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{Unit, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometric::{metric, states_to_path, steer, Checker, GeomFailure, GeomOutcome, GeomPlannerConfig, GeomStats, Sampler, Tree};
use crate::model::{Assembly, PartId};
use crate::path::{action_space, ActionMode, DisassemblyPath, PlannerParams};
use crate::physics::{Action, RigidState};

/// Goal samples drawn before giving up.
pub const GOAL_ATTEMPTS: usize = 1000;
/// Straight-line directions tried before falling back to the tree search.
pub const MAX_DIRECTIONS: usize = 64;
const DIRECTION_MERGE_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Rrt,
    TRrt,
    MvTRrt,
    BkRrt,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Rrt, Baseline::TRrt, Baseline::MvTRrt, Baseline::BkRrt];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Rrt => "rrt",
            Baseline::TRrt => "trrt",
            Baseline::MvTRrt => "mv-trrt",
            Baseline::BkRrt => "bk-rrt",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Baseline::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| format!("unknown planner '{s}'"))
    }
}

/// Runs one baseline on `part` against the other active parts.
pub fn run_baseline(
    kind: Baseline,
    assembly: &Assembly,
    part: PartId,
    mode: ActionMode,
    cfg: &GeomPlannerConfig,
    params: &PlannerParams,
    t_max: Duration,
) -> GeomOutcome {
    match kind {
        Baseline::Rrt => rrt_plan(assembly, part, None, mode, cfg, t_max),
        Baseline::TRrt => trrt_plan(assembly, part, mode, cfg, t_max),
        Baseline::MvTRrt => mv_trrt_plan(assembly, part, mode, cfg, t_max),
        Baseline::BkRrt => bk_rrt_plan(assembly, part, mode, cfg, params, t_max),
    }
}

struct Run<'a> {
    checker: Checker<'a>,
    sampler: Sampler,
    rng: ChaCha8Rng,
    start: Instant,
    t_max: Duration,
    stats: GeomStats,
    mode: ActionMode,
}

impl<'a> Run<'a> {
    fn new(assembly: &'a Assembly, part: PartId, mode: ActionMode, cfg: &GeomPlannerConfig, t_max: Duration) -> Self {
        let bounds = assembly.bounds(&assembly.active_ids()).expect("part is active");
        let com = assembly.geometry(part).props.com;
        Self {
            checker: Checker::new(assembly, part, cfg.max_penetration, cfg.step),
            sampler: Sampler::new(&bounds, com, mode),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            start: Instant::now(),
            t_max,
            stats: GeomStats::default(),
            mode,
        }
    }

    fn out_of_time(&self) -> bool {
        self.start.elapsed() >= self.t_max
    }

    fn finish(mut self, result: Result<Vec<RigidState>, GeomFailure>) -> GeomOutcome {
        self.stats.elapsed = self.start.elapsed().as_secs_f64();
        let (part, mode) = (self.checker.part(), self.mode);
        GeomOutcome { result: result.map(|s| states_to_path(part, mode, s)), stats: self.stats }
    }

    /// Trivial outcomes shared by every planner.
    fn precheck(&self) -> Option<Result<Vec<RigidState>, GeomFailure>> {
        let root = RigidState::identity();
        if !self.checker.valid(&root) {
            Some(Err(GeomFailure::InvalidEndpoint))
        } else if self.checker.disassembled(&root) {
            Some(Ok(vec![root]))
        } else {
            None
        }
    }

    fn sample_goal(&mut self) -> Option<RigidState> {
        (0..GOAL_ATTEMPTS).find_map(|_| {
            let s = self.sampler.sample(&mut self.rng);
            (self.checker.valid(&s) && self.checker.disassembled(&s)).then_some(s)
        })
    }

    /// Nearest state (keeping the rotation) whose hull bounds clear the bounds of the other parts.
    fn outside_target(&self, s: &RigidState) -> RigidState {
        let Some(others) = self.checker.scene.others_bounds() else { return *s };
        let b = self.checker.scene.world_hull_bounds(self.checker.part(), s);
        let margin = self.checker.step;
        let mut best = (f64::INFINITY, Vector3::zeros());
        for a in 0..3 {
            for (shift, sign) in [(others.max[a] - b.min[a] + margin, 1.0), (b.max[a] - others.min[a] + margin, -1.0)] {
                if shift < best.0 {
                    let mut d = Vector3::zeros();
                    d[a] = sign * shift.max(0.0);
                    best = (shift, d);
                }
            }
        }
        RigidState::at(s.translation + best.1, s.rotation)
    }

    /// Tree search from the assembled pose, growing toward random states or, with the goal
    /// probability, from a random node toward its nearest outside state.
    fn trrt(&mut self, cfg: &GeomPlannerConfig) -> Result<Vec<RigidState>, GeomFailure> {
        let mut tree = Tree::with_root(RigidState::identity());
        let result = loop {
            if self.out_of_time() {
                break Err(GeomFailure::Timeout);
            }
            self.stats.iterations += 1;
            let (near, target) = if self.rng.gen::<f64>() < cfg.goal_probability {
                let n = self.rng.gen_range(0..tree.len());
                (n, self.outside_target(tree.state(n)))
            } else {
                let t = self.sampler.sample(&mut self.rng);
                (tree.nearest(&t), t)
            };
            let from = *tree.state(near);
            let new = steer(&from, &target, cfg.step);
            if metric(&from, &new) == 0.0 || !self.checker.edge_valid(&from, &new) {
                continue;
            }
            let id = tree.add(new, Some(near));
            if self.checker.disassembled(&new) {
                break Ok(tree.branch(id));
            }
        };
        self.stats.nodes = tree.len();
        result
    }
}

/// Goal-directed RRT toward a disassembled goal state, sampled when not given.
pub fn rrt_plan(
    assembly: &Assembly,
    part: PartId,
    goal: Option<RigidState>,
    mode: ActionMode,
    cfg: &GeomPlannerConfig,
    t_max: Duration,
) -> GeomOutcome {
    let mut run = Run::new(assembly, part, mode, cfg, t_max);
    if let Some(r) = run.precheck() {
        return run.finish(r);
    }
    let goal = match goal.or_else(|| run.sample_goal()) {
        Some(g) if run.checker.valid(&g) => g,
        Some(_) => return run.finish(Err(GeomFailure::InvalidEndpoint)),
        None => return run.finish(Err(GeomFailure::NoGoal)),
    };
    let mut tree = Tree::with_root(RigidState::identity());
    let result = loop {
        if run.out_of_time() {
            break Err(GeomFailure::Timeout);
        }
        run.stats.iterations += 1;
        let target = if run.rng.gen::<f64>() < cfg.goal_probability { goal } else { run.sampler.sample(&mut run.rng) };
        let near = tree.nearest(&target);
        let from = *tree.state(near);
        let new = steer(&from, &target, cfg.step);
        if metric(&from, &new) == 0.0 || !run.checker.edge_valid(&from, &new) {
            continue;
        }
        let id = tree.add(new, Some(near));
        if metric(&new, &goal) <= 1e-12 {
            break Ok(tree.branch(id));
        }
    };
    run.stats.nodes = tree.len();
    run.finish(result)
}

pub fn trrt_plan(assembly: &Assembly, part: PartId, mode: ActionMode, cfg: &GeomPlannerConfig, t_max: Duration) -> GeomOutcome {
    let mut run = Run::new(assembly, part, mode, cfg, t_max);
    if let Some(r) = run.precheck() {
        return run.finish(r);
    }
    let result = run.trrt(cfg);
    run.finish(result)
}

/// Straight-line removal along candidate directions, then [`trrt_plan`] with the time left.
pub fn mv_trrt_plan(assembly: &Assembly, part: PartId, mode: ActionMode, cfg: &GeomPlannerConfig, t_max: Duration) -> GeomOutcome {
    let mut run = Run::new(assembly, part, mode, cfg, t_max);
    if let Some(r) = run.precheck() {
        return run.finish(r);
    }
    let reach = (run.sampler.hi - run.sampler.lo).norm();
    let steps = (reach / cfg.step).ceil() as usize;
    for dir in motion_directions(&run.checker, 2.0 * cfg.step) {
        if run.out_of_time() {
            return run.finish(Err(GeomFailure::Timeout));
        }
        let mut states = vec![RigidState::identity()];
        for k in 1..=steps {
            run.stats.iterations += 1;
            let s = RigidState::translated(dir.into_inner() * (k as f64 * cfg.step));
            if !run.checker.valid(&s) {
                break;
            }
            states.push(s);
            if run.checker.disassembled(&s) {
                return run.finish(Ok(states));
            }
        }
    }
    let result = run.trrt(cfg);
    run.finish(result)
}

/// Face normals of the moving part and reversed normals of faces touching it, merged
/// within one degree and ordered by total area.
pub fn motion_directions(checker: &Checker, touch: f64) -> Vec<Unit<Vector3<f64>>> {
    let scene = &checker.scene;
    let g = scene.geometry(checker.part());
    // Unnormalized normals: their length is twice the face area.
    let mut normals: Vec<Vector3<f64>> = (0..g.mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = g.mesh.triangle(t);
            (b - a).cross(&(c - a))
        })
        .collect();
    for &o in &scene.fixed {
        let og = scene.geometry(o);
        for t in 0..og.mesh.triangles.len() {
            let [a, b, c] = og.mesh.triangle(t);
            let centroid = a + ((b - a) + (c - a)) / 3.0;
            if g.sdf.distance(&centroid).abs() <= touch {
                normals.push(-(b - a).cross(&(c - a)));
            }
        }
    }
    let cos_merge = DIRECTION_MERGE_DEG.to_radians().cos();
    let mut clusters: Vec<(Unit<Vector3<f64>>, f64)> = Vec::new();
    for n in normals {
        let area = n.norm() / 2.0;
        let Some(dir) = Unit::try_new(n, 1e-12) else { continue };
        match clusters.iter_mut().find(|(c, _)| c.dot(&dir) >= cos_merge) {
            Some((_, total)) => *total += area,
            None => clusters.push((dir, area)),
        }
    }
    clusters.sort_by(|a, b| b.1.total_cmp(&a.1));
    clusters.truncate(MAX_DIRECTIONS);
    clusters.into_iter().map(|(d, _)| d).collect()
}

/// RRT whose edges are simulated actions from the nearest node toward a random state.
pub fn bk_rrt_plan(
    assembly: &Assembly,
    part: PartId,
    mode: ActionMode,
    cfg: &GeomPlannerConfig,
    params: &PlannerParams,
    t_max: Duration,
) -> GeomOutcome {
    let mut run = Run::new(assembly, part, mode, cfg, t_max);
    if let Some(r) = run.precheck() {
        return run.finish(r);
    }
    let actions = action_space(mode, params.magnitude);
    let mut tree = Tree::with_root(RigidState::identity());
    let mut applied: Vec<Option<Action>> = vec![None];
    let found = loop {
        if run.out_of_time() {
            break None;
        }
        run.stats.iterations += 1;
        let target = run.sampler.sample(&mut run.rng);
        let near = tree.nearest(&target);
        let action = actions[run.rng.gen_range(0..actions.len())];
        let mut s = [tree.state(near).at_rest()];
        run.stats.sim_calls += 1;
        if run.checker.scene.simulate(&mut s, &[Some(action)], params.step_time, &params.sim).is_err() || !run.checker.valid(&s[0]) {
            continue;
        }
        let id = tree.add(s[0], Some(near));
        applied.push(Some(action));
        if run.checker.disassembled(&s[0]) {
            break Some(id);
        }
    };
    run.stats.nodes = tree.len();
    let Some(leaf) = found else { return run.finish(Err(GeomFailure::Timeout)) };
    let mut ids = vec![leaf];
    while let Some(p) = tree.parents[*ids.last().expect("nonempty")] {
        ids.push(p);
    }
    ids.reverse();
    let path = DisassemblyPath {
        parts: vec![part],
        mode,
        states: ids.iter().map(|&i| vec![*tree.state(i)]).collect(),
        actions: ids[1..].iter().map(|&i| vec![applied[i]]).collect(),
    };
    run.stats.elapsed = run.start.elapsed().as_secs_f64();
    GeomOutcome { result: Ok(path), stats: run.stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::check_path;
    use crate::pipeline::fixtures::{fixture_assembly, FixtureKind};

    fn peg() -> (Assembly, PartId) {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let p = a.find("peg").unwrap();
        (a, p)
    }

    #[test]
    fn names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
        assert!("prm".parse::<Baseline>().is_err());
    }

    #[test]
    fn straight_line_phase_frees_the_peg() {
        let (a, p) = peg();
        let out = mv_trrt_plan(&a, p, ActionMode::Translation, &GeomPlannerConfig::default(), Duration::from_secs(30));
        let path = out.result.expect("peg slides out of the hole");
        assert_eq!(out.stats.nodes, 0);
        let t = path.last()[0].translation;
        assert!(t.z.abs() > 0.0 && t.x == 0.0 && t.y == 0.0, "{t:?}");
        assert!(check_path(&a, &path, 0.01).is_ok());
    }

    #[test]
    fn direction_candidates_are_unit_and_capped() {
        let (a, p) = peg();
        let checker = Checker::new(&a, p, 0.01, 0.01);
        let dirs = motion_directions(&checker, 0.02);
        assert!(!dirs.is_empty() && dirs.len() <= MAX_DIRECTIONS);
        assert!(dirs.iter().any(|d| d.z > 0.999));
        for (i, x) in dirs.iter().enumerate() {
            for y in &dirs[i + 1..] {
                assert!(x.dot(y) < DIRECTION_MERGE_DEG.to_radians().cos());
            }
        }
    }

    #[test]
    fn trrt_and_bk_rrt_free_the_last_cube() {
        let a = fixture_assembly(FixtureKind::FreeCubes);
        let cube = a.find("cube-0").unwrap();
        let cfg = GeomPlannerConfig { seed: 4, ..Default::default() };
        for kind in [Baseline::TRrt, Baseline::BkRrt] {
            let out = run_baseline(kind, &a, cube, ActionMode::Translation, &cfg, &PlannerParams::default(), Duration::from_secs(60));
            let path = out.result.unwrap_or_else(|e| panic!("{kind}: {e}"));
            assert!(check_path(&a, &path, 0.01).is_ok(), "{kind}");
        }
    }

    #[test]
    fn same_seed_same_tree() {
        let a = fixture_assembly(FixtureKind::FreeCubes);
        let cube = a.find("cube-1").unwrap();
        let cfg = GeomPlannerConfig { seed: 9, ..Default::default() };
        let run = || trrt_plan(&a, cube, ActionMode::TranslationRotation, &cfg, Duration::from_secs(60));
        let (x, y) = (run(), run());
        assert_eq!(x.stats.nodes, y.stats.nodes);
        assert_eq!(x.result.unwrap().states, y.result.unwrap().states);
    }

    #[test]
    fn rrt_reaches_a_given_goal() {
        let (a, p) = peg();
        let goal = RigidState::translated(Vector3::new(0.0, 0.0, 4.0));
        assert!(a.is_disassembled(p, &goal));
        let cfg = GeomPlannerConfig { goal_probability: 0.5, seed: 1, ..Default::default() };
        let out = rrt_plan(&a, p, Some(goal), ActionMode::Translation, &cfg, Duration::from_secs(120));
        let path = out.result.expect("narrow but straight passage");
        assert!(metric(&path.last()[0], &goal) < 1e-12);
        assert!(check_path(&a, &path, 0.01).is_ok());
    }
}
