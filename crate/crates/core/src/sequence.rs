//! Disassembly sequence planning by repeated part removal.
//!
//! In progressive mode every pass tries each remaining part with a depth cap, removes
//! the parts that come free and raises the cap by one for the next pass. Full mode
//! searches without a cap from the start. With a group size above one, part subsets are
//! also tried, each member getting its own action (or holding still).

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Assembly, PartId, Scene};
use crate::path::{
    check_path, plan_disassembly_path, ActionMode, DisassemblyPath, FailureKind, PathCheck, PathQuery, PlannerParams, QueryError,
    SearchStats,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceConfig {
    /// Budget of one path attempt.
    pub t_max: Duration,
    /// Budget of the whole sequence.
    pub total: Duration,
    pub progressive: bool,
    pub mode: ActionMode,
    /// Largest subset of parts moved together.
    pub group_size: usize,
    pub params: PlannerParams,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            t_max: Duration::from_secs(120),
            total: Duration::from_secs(7200),
            progressive: true,
            mode: ActionMode::Translation,
            group_size: 1,
            params: PlannerParams::default(),
        }
    }
}

/// One call of the path planner made while sequencing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub parts: Vec<PartId>,
    pub pass: usize,
    pub d_max: Option<usize>,
    /// `None` on success.
    pub failure: Option<FailureKind>,
    pub stats: SearchStats,
    /// True when the outcome was reused from an identical earlier attempt.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep {
    pub path: DisassemblyPath,
    pub pass: usize,
    pub d_max: Option<usize>,
    pub stats: SearchStats,
    /// Parts present (including the moving ones) when the path was planned.
    pub present: Vec<PartId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisassemblySequence {
    pub steps: Vec<SequenceStep>,
    pub attempts: Vec<Attempt>,
    pub elapsed: f64,
}

impl DisassemblySequence {
    /// Removal order; parts of a group step appear in id order.
    pub fn order(&self) -> Vec<PartId> {
        self.steps.iter().flat_map(|s| s.path.parts.iter().copied()).collect()
    }

    pub fn total_sim_calls(&self) -> u64 {
        self.attempts.iter().map(|a| a.stats.sim_calls).sum()
    }

    /// Simulate calls spent on attempts that moved `part`.
    pub fn sim_calls_for(&self, part: PartId) -> u64 {
        self.attempts.iter().filter(|a| a.parts.contains(&part)).map(|a| a.stats.sim_calls).sum()
    }
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("sequence budget exceeded after removing {} parts", partial.steps.len())]
    Timeout { partial: Box<DisassemblySequence> },
    #[error("no remaining part can be removed ({} removed)", partial.steps.len())]
    Stuck { partial: Box<DisassemblySequence> },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl SequenceError {
    pub fn partial(&self) -> Option<&DisassemblySequence> {
        match self {
            SequenceError::Timeout { partial } | SequenceError::Stuck { partial } => Some(partial),
            _ => None,
        }
    }
}

/// Single-part sequence planning.
pub fn plan_disassembly_sequence(assembly: &Assembly, cfg: &SequenceConfig) -> Result<DisassemblySequence, SequenceError> {
    plan_sequence(assembly, &SequenceConfig { group_size: 1, ..*cfg })
}

/// Sequence planning where up to `m` parts may move simultaneously.
pub fn plan_multi_part_disassembly(assembly: &Assembly, m: usize, cfg: &SequenceConfig) -> Result<DisassemblySequence, SequenceError> {
    plan_sequence(assembly, &SequenceConfig { group_size: m, ..*cfg })
}

/// Subsets of `ids` of size 1..=m, by size and then lexicographically.
pub fn candidate_subsets(ids: &[PartId], m: usize) -> Vec<Vec<PartId>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<usize>> = (0..ids.len()).map(|i| vec![i]).collect();
    for _ in 0..m.min(ids.len()) {
        out.extend(layer.iter().map(|ix| ix.iter().map(|&i| ids[i]).collect::<Vec<_>>()));
        layer = layer
            .iter()
            .flat_map(|ix| {
                let last = *ix.last().expect("nonempty");
                (last + 1..ids.len()).map(move |j| [ix.as_slice(), &[j]].concat())
            })
            .collect();
    }
    out
}

fn plan_sequence(assembly: &Assembly, cfg: &SequenceConfig) -> Result<DisassemblySequence, SequenceError> {
    if cfg.group_size == 0 {
        return Err(SequenceError::Config("group size must be at least 1".into()));
    }
    if cfg.t_max.is_zero() || cfg.total.is_zero() {
        return Err(SequenceError::Config("timeouts must be positive".into()));
    }
    let start = Instant::now();
    let mut current = assembly.clone();
    let mut seq = DisassemblySequence::default();
    // Exhausted searches do not depend on the depth cap, so they are only repeated
    // once the set of present parts has changed.
    let mut exhausted: HashMap<Vec<PartId>, Vec<PartId>> = HashMap::new();
    let mut d_max = cfg.progressive.then_some(1usize);
    let mut pass = 0;

    while current.active_count() > 0 {
        pass += 1;
        let mut removed_any = false;
        let mut depth_limited = false;
        for subset in candidate_subsets(&current.active_ids(), cfg.group_size) {
            if subset.iter().any(|&p| !current.is_active(p)) {
                continue;
            }
            let present = current.active_ids();
            let remaining = cfg.total.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                seq.elapsed = start.elapsed().as_secs_f64();
                return Err(SequenceError::Timeout { partial: Box::new(seq) });
            }
            if exhausted.get(&subset) == Some(&present) {
                seq.attempts.push(Attempt {
                    parts: subset,
                    pass,
                    d_max,
                    failure: Some(FailureKind::Exhausted),
                    stats: SearchStats::default(),
                    reused: true,
                });
                continue;
            }
            let query = PathQuery { parts: subset.clone(), t_max: cfg.t_max.min(remaining), d_max, mode: cfg.mode };
            let outcome = plan_disassembly_path(&current, &query, &cfg.params)?;
            let failure = outcome.result.as_ref().err().copied();
            log::info!("pass {pass} d_max {d_max:?} parts {subset:?}: {}", failure.map_or("removed".to_string(), |f| f.to_string()));
            seq.attempts.push(Attempt { parts: subset.clone(), pass, d_max, failure, stats: outcome.stats, reused: false });
            match outcome.result {
                Ok(path) => {
                    for &p in &subset {
                        current.remove(p);
                    }
                    seq.steps.push(SequenceStep { path, pass, d_max, stats: outcome.stats, present });
                    removed_any = true;
                }
                Err(FailureKind::Depth) => depth_limited = true,
                Err(FailureKind::Exhausted) => {
                    exhausted.insert(subset, present);
                }
                Err(FailureKind::Timeout) => {}
            }
        }
        if !removed_any && !depth_limited {
            seq.elapsed = start.elapsed().as_secs_f64();
            return Err(SequenceError::Stuck { partial: Box::new(seq) });
        }
        if let Some(d) = d_max.as_mut() {
            *d += 1;
        }
    }
    seq.elapsed = start.elapsed().as_secs_f64();
    Ok(seq)
}

/// Validity of a whole sequence replayed against the parts present at each removal.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceCheck {
    pub steps: Vec<PathCheck>,
    /// Every part removed exactly once and each step planned against the parts left.
    pub order_consistent: bool,
}

impl SequenceCheck {
    pub fn is_ok(&self) -> bool {
        self.order_consistent && self.steps.iter().all(PathCheck::is_ok)
    }
}

pub fn check_sequence(assembly: &Assembly, seq: &DisassemblySequence, penetration: f64) -> SequenceCheck {
    let mut current = assembly.clone();
    let mut steps = Vec::new();
    let mut order_consistent = true;
    for step in &seq.steps {
        let present = current.active_ids();
        if present != step.present || step.path.parts.iter().any(|&p| !current.is_active(p)) {
            order_consistent = false;
        }
        steps.push(check_path(&current, &step.path, penetration));
        for &p in &step.path.parts {
            current.remove(p);
        }
    }
    order_consistent &= current.active_count() == 0;
    SequenceCheck { steps, order_consistent }
}

/// True if no moving part of `path` overlaps any part present beyond its threshold.
pub fn path_is_valid_in(assembly: &Assembly, path: &DisassemblyPath, penetration: f64) -> bool {
    let scene = Scene::new(assembly, &path.parts);
    path.states.iter().all(|s| scene.is_valid(s, penetration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::fixtures::{fixture_assembly, FixtureKind};

    #[test]
    fn subsets_come_by_size_then_lexicographic() {
        let ids: Vec<PartId> = (0..3).map(PartId).collect();
        let s = candidate_subsets(&ids, 2);
        let raw: Vec<Vec<usize>> = s.iter().map(|v| v.iter().map(|p| p.0).collect()).collect();
        assert_eq!(raw, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(candidate_subsets(&ids, 5).len(), 7);
    }

    #[test]
    fn free_cubes_come_off_in_one_pass() {
        let a = fixture_assembly(FixtureKind::FreeCubes);
        let seq = plan_disassembly_sequence(&a, &SequenceConfig::default()).unwrap();
        assert_eq!(seq.steps.len(), 4);
        assert!(seq.steps.iter().all(|s| s.pass == 1));
        assert!(check_sequence(&a, &seq, 0.01).is_ok());
    }

    #[test]
    fn covered_channel_needs_two_passes() {
        let a = fixture_assembly(FixtureKind::CoveredChannel);
        let seq = plan_disassembly_sequence(&a, &SequenceConfig::default()).unwrap();
        let names: Vec<&str> = seq.order().iter().map(|&p| a.part(p).name.as_str()).collect();
        assert_eq!(names, ["cover", "block", "channel"]);
        assert_eq!((seq.steps[0].pass, seq.steps[0].d_max), (1, Some(1)));
        assert_eq!((seq.steps[1].pass, seq.steps[1].d_max), (2, Some(2)));
        assert!(check_sequence(&a, &seq, 0.01).is_ok());
    }

    #[test]
    fn sealed_box_gets_stuck() {
        let a = fixture_assembly(FixtureKind::ClosedBox);
        let cfg = SequenceConfig { progressive: false, t_max: Duration::from_secs(30), ..Default::default() };
        let err = plan_disassembly_sequence(&a, &cfg).unwrap_err();
        assert!(matches!(err, SequenceError::Stuck { .. }), "{err}");
    }

    #[test]
    fn zero_group_size_is_rejected() {
        let a = fixture_assembly(FixtureKind::FreeCubes);
        assert!(plan_multi_part_disassembly(&a, 0, &SequenceConfig::default()).is_err());
    }
}
