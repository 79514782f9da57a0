//! Assembly plans from disassembly sequences: parts are inserted in reverse removal order
//! along their reversed removal paths, each reached from its start state by a free-space
//! path planned around the parts already placed.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometric::{metric, steer, Checker, GeomFailure, GeomPlannerConfig, GeomStats, Sampler, Tree};
use crate::model::{is_similar, Assembly, PartId, Scene};
use crate::path::ActionMode;
use crate::physics::RigidState;
use crate::sequence::{plan_multi_part_disassembly, DisassemblySequence, SequenceConfig, SequenceError};

/// Bidirectional RRT between two disassembled states of `part`, avoiding the other active parts.
/// Consecutive waypoints of the result are at most `cfg.step` apart in the state metric.
pub fn connect_free_space(
    assembly: &Assembly,
    part: PartId,
    from: &RigidState,
    to: &RigidState,
    mode: ActionMode,
    cfg: &GeomPlannerConfig,
    t_max: Duration,
) -> (Result<Vec<RigidState>, GeomFailure>, GeomStats) {
    let start = Instant::now();
    let mut stats = GeomStats::default();
    let checker = Checker::new(assembly, part, cfg.max_penetration, cfg.step);
    let (from, to) = (from.at_rest(), to.at_rest());
    if mode == ActionMode::Translation && metric(&RigidState::at(to.translation, from.rotation), &to) > 1e-12 {
        // Rotation cannot change in a translation-only space.
        return (Err(GeomFailure::InvalidEndpoint), stats);
    }
    if ![from, to].iter().all(|s| checker.valid(s) && checker.disassembled(s)) {
        return (Err(GeomFailure::InvalidEndpoint), stats);
    }
    let mut bounds = checker.scene.world_hull_bounds(part, &from).union(&checker.scene.world_hull_bounds(part, &to));
    if let Some(b) = assembly.bounds(&assembly.active_ids()) {
        bounds = bounds.union(&b);
    }
    let sampler = Sampler::new(&bounds, assembly.geometry(part).props.com, mode);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out_of_time = || start.elapsed() >= t_max;

    // Both trees hold the rotation of `to` when only translations are allowed.
    let fix = |s: RigidState| if mode == ActionMode::Translation { RigidState::at(s.translation, to.rotation) } else { s };
    let extend = |tree: &mut Tree, target: &RigidState| -> Option<usize> {
        let near = tree.nearest(target);
        let from = *tree.state(near);
        let new = steer(&from, target, cfg.step);
        (metric(&from, &new) > 0.0 && checker.edge_valid(&from, &new)).then(|| tree.add(new, Some(near)))
    };

    let mut trees = [Tree::with_root(from), Tree::with_root(to)];
    let result = loop {
        if out_of_time() {
            break Err(GeomFailure::Timeout);
        }
        stats.iterations += 1;
        let target = fix(sampler.sample(&mut rng));
        // trees[0] grows toward the sample, trees[1] then greedily toward the new node.
        let Some(a) = extend(&mut trees[0], &target) else {
            trees.swap(0, 1);
            continue;
        };
        let goal = *trees[0].state(a);
        let mut b = trees[1].nearest(&goal);
        let joined = loop {
            if metric(trees[1].state(b), &goal) <= 1e-12 {
                break true;
            }
            if out_of_time() {
                break false;
            }
            match extend(&mut trees[1], &goal) {
                Some(n) => b = n,
                None => break false,
            }
        };
        if joined {
            let mut path = trees[0].branch(a);
            let mut back = trees[1].branch(b);
            back.pop();
            path.extend(back.into_iter().rev());
            if metric(&path[0], &from) > 0.0 {
                path.reverse();
            }
            break Ok(path);
        }
        trees.swap(0, 1);
    };
    stats.nodes = trees[0].len() + trees[1].len();
    stats.elapsed = start.elapsed().as_secs_f64();
    (result, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyStep {
    pub parts: Vec<PartId>,
    /// Waypoints; the last `insertion_len` of them are the reversed removal path.
    pub states: Vec<Vec<RigidState>>,
    pub insertion_len: usize,
    /// False when no free-space approach was found (or none was asked for); the step
    /// then starts at the removal path's end state.
    pub connected: bool,
    pub stats: GeomStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyPlan {
    /// In assembly order.
    pub steps: Vec<AssemblyStep>,
    pub elapsed: f64,
}

impl AssemblyPlan {
    pub fn order(&self) -> Vec<PartId> {
        self.steps.iter().flat_map(|s| s.parts.iter().copied()).collect()
    }
}

/// Assembly plan from a disassembly sequence. `initial` gives start states of single-part
/// steps; parts without one (and group steps) are placed by their insertion path alone.
pub fn assembly_from_sequence(
    assembly: &Assembly,
    seq: &DisassemblySequence,
    initial: &HashMap<PartId, RigidState>,
    cfg: &GeomPlannerConfig,
    t_connect: Duration,
) -> AssemblyPlan {
    let start = Instant::now();
    let steps = seq
        .steps
        .iter()
        .rev()
        .map(|step| {
            let path = &step.path;
            let insertion: Vec<Vec<RigidState>> = path.states.iter().rev().cloned().collect();
            let mut out = AssemblyStep {
                parts: path.parts.clone(),
                insertion_len: insertion.len(),
                states: insertion,
                connected: false,
                stats: GeomStats::default(),
            };
            let (&[part], Some(init)) = (path.parts.as_slice(), path.parts.first().and_then(|p| initial.get(p))) else {
                return out;
            };
            let scene = assembly.with_active(&step.present);
            let (result, stats) = connect_free_space(&scene, part, init, &path.last()[0], path.mode, cfg, t_connect);
            out.stats = stats;
            match result {
                Ok(mut approach) => {
                    // The junction state is the first insertion state.
                    approach.pop();
                    let mut states: Vec<Vec<RigidState>> = approach.into_iter().map(|s| vec![s]).collect();
                    states.append(&mut out.states);
                    out.states = states;
                    out.connected = true;
                }
                Err(e) => log::warn!("no free-space approach for part {}: {e}", part.0),
            }
            out
        })
        .collect();
    AssemblyPlan { steps, elapsed: start.elapsed().as_secs_f64() }
}

/// Plans a disassembly sequence (up to `m` parts at once) and reverses it.
pub fn plan_assembly(
    assembly: &Assembly,
    m: usize,
    seq_cfg: &SequenceConfig,
    initial: &HashMap<PartId, RigidState>,
    cfg: &GeomPlannerConfig,
    t_connect: Duration,
) -> Result<(DisassemblySequence, AssemblyPlan), SequenceError> {
    let seq = plan_multi_part_disassembly(assembly, m, seq_cfg)?;
    let plan = assembly_from_sequence(assembly, &seq, initial, cfg, t_connect);
    Ok((seq, plan))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyCheck {
    pub waypoints: usize,
    pub violations: usize,
    /// Every step ends exactly in the assembled pose.
    pub final_poses: bool,
    /// Every insertion equals the reversed removal path of the same parts.
    pub reversal_exact: bool,
    /// Parts go in exactly in reverse removal order.
    pub order_reversed: bool,
}

impl AssemblyCheck {
    pub fn is_ok(&self) -> bool {
        self.violations == 0 && self.final_poses && self.reversal_exact && self.order_reversed
    }
}

/// Replays the plan: each step against the parts placed before it.
pub fn check_assembly_plan(assembly: &Assembly, seq: &DisassemblySequence, plan: &AssemblyPlan, penetration: f64) -> AssemblyCheck {
    let mut placed: Vec<PartId> = Vec::new();
    let mut check = AssemblyCheck { waypoints: 0, violations: 0, final_poses: true, reversal_exact: true, order_reversed: true };
    let mut removal = seq.order();
    removal.reverse();
    check.order_reversed = plan.order() == removal && plan.steps.len() == seq.steps.len();
    for (step, removed) in plan.steps.iter().zip(seq.steps.iter().rev()) {
        let present: Vec<PartId> = placed.iter().chain(&step.parts).copied().collect();
        let active = assembly.with_active(&present);
        let scene = Scene::new(&active, &step.parts);
        for s in &step.states {
            check.waypoints += 1;
            if !scene.is_valid(s, penetration) {
                check.violations += 1;
            }
        }
        let identity = RigidState::identity();
        check.final_poses &= step.states.last().is_some_and(|s| s.iter().all(|x| is_similar(x, &identity, 1e-9, 1e-9)));
        let tail = &step.states[step.states.len().saturating_sub(step.insertion_len)..];
        check.reversal_exact &= tail.len() == removed.path.states.len() && tail.iter().eq(removed.path.states.iter().rev());
        placed.extend(&step.parts);
    }
    check
}
