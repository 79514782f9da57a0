//! Benchmark runs: every (assembly, seed) pair of a corpus is disassembled completely by one
//! planner under wall-clock budgets, and the outcomes are tabulated per size category.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_baseline, Baseline};
use crate::config::Settings;
use crate::geometry::SdfCache;
use crate::io::{corpus_entries, load_assembly_dir, IoError};
use crate::model::{Assembly, PartId};
use crate::part::MassModel;
use crate::path::ActionMode;
use crate::sequence::{plan_multi_part_disassembly, DisassemblySequence, SequenceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PlannerKind {
    /// Physics-based search with progressive depth caps.
    Ours,
    /// The same search without depth caps.
    OursFullBfs,
    Baseline(Baseline),
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 6] = [
        PlannerKind::Ours,
        PlannerKind::OursFullBfs,
        PlannerKind::Baseline(Baseline::Rrt),
        PlannerKind::Baseline(Baseline::TRrt),
        PlannerKind::Baseline(Baseline::MvTRrt),
        PlannerKind::Baseline(Baseline::BkRrt),
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Ours => "ours",
            PlannerKind::OursFullBfs => "ours-full-bfs",
            PlannerKind::Baseline(b) => b.name(),
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlannerKind::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown planner '{s}'"))
    }
}

impl From<PlannerKind> for String {
    fn from(p: PlannerKind) -> String {
        p.name().to_string()
    }
}

impl TryFrom<String> for PlannerKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("corpus {0} holds no assemblies")]
    EmptyCorpus(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub planner: PlannerKind,
    pub mode: ActionMode,
    /// Budget per path attempt.
    pub t_max: Duration,
    /// Budget per assembly.
    pub total: Duration,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub settings: Settings,
}

impl BenchConfig {
    /// Defaults from `settings`: the two-part budget for the mode and the path seed count.
    pub fn from_settings(planner: PlannerKind, mode: ActionMode, settings: Settings) -> Self {
        Self {
            planner,
            mode,
            t_max: settings.path_budget(mode),
            total: Duration::from_secs_f64(settings.total_t_max),
            seeds: (0..settings.path_seeds).collect(),
            workers: settings.workers,
            settings,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.seeds.is_empty() {
            return Err(BenchError::Config("at least one seed is required".into()));
        }
        if self.t_max.is_zero() || self.total.is_zero() {
            return Err(BenchError::Config("timeouts must be positive".into()));
        }
        if self.workers == 0 {
            return Err(BenchError::Config("at least one worker is required".into()));
        }
        self.settings.validate().map_err(|e| BenchError::Config(e.to_string()))
    }
}

/// Size category of an assembly by part count.
pub fn category(parts: usize) -> &'static str {
    match parts {
        0..=1 => "single",
        2 => "two-part",
        3..=9 => "small",
        10..=49 => "medium",
        _ => "large",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub assembly: String,
    pub category: String,
    pub parts: usize,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<String>,
    pub wall_time: f64,
    pub sim_calls: u64,
    /// Waypoints over all removal paths.
    pub path_length: usize,
    pub parts_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Over successful runs; `None` without any.
    pub mean_time_per_part: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub planner: PlannerKind,
    pub mode: ActionMode,
    pub rows: Vec<BenchRow>,
    pub categories: Vec<CategorySummary>,
    pub overall: CategorySummary,
}

fn summarize(name: &str, rows: &[&BenchRow]) -> CategorySummary {
    let successes: Vec<&&BenchRow> = rows.iter().filter(|r| r.success).collect();
    let parts: usize = successes.iter().map(|r| r.parts).sum();
    CategorySummary {
        category: name.to_string(),
        runs: rows.len(),
        successes: successes.len(),
        success_rate: if rows.is_empty() { 0.0 } else { successes.len() as f64 / rows.len() as f64 },
        mean_time_per_part: (parts > 0).then(|| successes.iter().map(|r| r.wall_time).sum::<f64>() / parts as f64),
    }
}

impl BenchReport {
    pub fn from_rows(planner: PlannerKind, mode: ActionMode, rows: Vec<BenchRow>) -> Self {
        let mut names: Vec<&str> = rows.iter().map(|r| r.category.as_str()).collect();
        names.sort_by_key(|n| ["single", "two-part", "small", "medium", "large"].iter().position(|c| c == n));
        names.dedup();
        let categories = names.iter().map(|n| summarize(n, &rows.iter().filter(|r| r.category == *n).collect::<Vec<_>>())).collect();
        let overall = summarize("overall", &rows.iter().collect::<Vec<_>>());
        Self { planner, mode, rows, categories, overall }
    }

    /// (assembly, seed, success) per run, without any timing.
    pub fn success_matrix(&self) -> Vec<(String, u64, bool)> {
        self.rows.iter().map(|r| (r.assembly.clone(), r.seed, r.success)).collect()
    }

    /// True when the stored summaries agree with the rows.
    pub fn aggregates_consistent(&self) -> bool {
        let again = Self::from_rows(self.planner, self.mode, self.rows.clone());
        again.categories == self.categories && again.overall == self.overall
    }

    pub fn table(&self) -> String {
        let mut out = format!("planner {} mode {}\n", self.planner, self.mode);
        out.push_str(&format!("{:<24} {:>5} {:>8} {:>10} {:>10} {:>8}  {}\n", "assembly", "seed", "success", "time_s", "sim_calls", "length", "failure"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>5} {:>8} {:>10.3} {:>10} {:>8}  {}\n",
                r.assembly,
                r.seed,
                r.success,
                r.wall_time,
                r.sim_calls,
                r.path_length,
                r.failure.as_deref().unwrap_or("-")
            ));
        }
        out.push_str(&format!("\n{:<10} {:>5} {:>9} {:>9} {:>14}\n", "category", "runs", "successes", "rate_%", "time_per_part"));
        for c in self.categories.iter().chain(std::iter::once(&self.overall)) {
            let t = c.mean_time_per_part.map_or("-".to_string(), |t| format!("{t:.3}"));
            out.push_str(&format!("{:<10} {:>5} {:>9} {:>9.1} {:>14}\n", c.category, c.runs, c.successes, 100.0 * c.success_rate, t));
        }
        out
    }
}

/// Outcome of disassembling one assembly completely.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub failure: Option<String>,
    pub sim_calls: u64,
    pub path_length: usize,
    pub parts_removed: usize,
}

fn from_sequence(result: Result<DisassemblySequence, SequenceError>) -> RunOutcome {
    let (seq, failure) = match &result {
        Ok(seq) => (Some(seq), None),
        Err(e) => (
            e.partial(),
            Some(match e {
                SequenceError::Timeout { .. } => "timeout".to_string(),
                SequenceError::Stuck { .. } => "stuck".to_string(),
                other => other.to_string(),
            }),
        ),
    };
    RunOutcome {
        failure,
        sim_calls: seq.map_or(0, DisassemblySequence::total_sim_calls),
        path_length: seq.map_or(0, |s| s.steps.iter().map(|st| st.path.len()).sum()),
        parts_removed: seq.map_or(0, |s| s.order().len()),
    }
}

/// Stream of per-attempt seeds, fixed by the run seed, the pass and the part.
fn attempt_seed(seed: u64, pass: usize, part: PartId) -> u64 {
    let mut x = seed ^ ((pass as u64) << 40) ^ ((part.0 as u64) << 8);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Repeated passes over the remaining parts with a geometric or kinodynamic baseline.
fn baseline_sequence(assembly: &Assembly, kind: Baseline, cfg: &BenchConfig, seed: u64) -> RunOutcome {
    let start = Instant::now();
    let mut current = assembly.clone();
    let mut out = RunOutcome { failure: None, sim_calls: 0, path_length: 0, parts_removed: 0 };
    let params = cfg.settings.planner_params();
    let mut pass = 0;
    while current.active_count() > 0 {
        pass += 1;
        let mut removed = false;
        for part in current.active_ids() {
            let left = cfg.total.saturating_sub(start.elapsed());
            if left.is_zero() {
                out.failure = Some("timeout".into());
                return out;
            }
            let geom = cfg.settings.geom_config(attempt_seed(seed, pass, part));
            let outcome = run_baseline(kind, &current, part, cfg.mode, &geom, &params, cfg.t_max.min(left));
            out.sim_calls += outcome.stats.sim_calls;
            if let Ok(path) = outcome.result {
                out.path_length += path.len();
                out.parts_removed += 1;
                current.remove(part);
                removed = true;
            }
        }
        if !removed {
            out.failure = Some("stuck".into());
            return out;
        }
    }
    out
}

/// Disassembles `assembly` with the configured planner.
pub fn run_one(assembly: &Assembly, cfg: &BenchConfig, seed: u64) -> RunOutcome {
    match cfg.planner {
        PlannerKind::Ours | PlannerKind::OursFullBfs => {
            let mut seq_cfg = cfg.settings.sequence_config(cfg.mode, cfg.planner == PlannerKind::Ours);
            seq_cfg.t_max = cfg.t_max;
            seq_cfg.total = cfg.total;
            from_sequence(plan_multi_part_disassembly(assembly, cfg.settings.group_size, &seq_cfg))
        }
        PlannerKind::Baseline(b) => baseline_sequence(assembly, b, cfg, seed),
    }
}

fn row(name: &str, parts: usize, seed: u64, wall_time: f64, outcome: RunOutcome) -> BenchRow {
    BenchRow {
        assembly: name.to_string(),
        category: category(parts).to_string(),
        parts,
        seed,
        success: outcome.failure.is_none(),
        failure: outcome.failure,
        wall_time,
        sim_calls: outcome.sim_calls,
        path_length: outcome.path_length,
        parts_removed: outcome.parts_removed,
    }
}

/// Benchmark over already built assemblies; rows come in (assembly, seed) order.
pub fn run_benchmark_on(cfg: &BenchConfig, assemblies: &[(String, Assembly)]) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let tasks: Vec<(usize, u64)> = (0..assemblies.len()).flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| BenchError::Config(e.to_string()))?;
    let rows = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(a, seed)| {
                let (name, assembly) = &assemblies[a];
                let start = Instant::now();
                let outcome = catch_unwind(AssertUnwindSafe(|| run_one(assembly, cfg, seed))).unwrap_or_else(|_| RunOutcome {
                    failure: Some("crash".into()),
                    sim_calls: 0,
                    path_length: 0,
                    parts_removed: 0,
                });
                log::info!("{name} seed {seed}: {}", outcome.failure.as_deref().unwrap_or("success"));
                row(name, assembly.len(), seed, start.elapsed().as_secs_f64(), outcome)
            })
            .collect()
    });
    Ok(BenchReport::from_rows(cfg.planner, cfg.mode, rows))
}

/// Benchmark over every assembly directory in `corpus`. Assemblies that fail to load
/// count as failed runs.
pub fn run_benchmark(cfg: &BenchConfig, corpus: &Path) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let entries = corpus_entries(corpus)?;
    if entries.is_empty() {
        return Err(BenchError::EmptyCorpus(corpus.display().to_string()));
    }
    let cache = SdfCache::new(corpus.join(".sdf-cache"));
    let mut loaded = Vec::new();
    let mut broken = Vec::new();
    for dir in &entries {
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let built = load_assembly_dir(dir)
            .map_err(|e| e.to_string())
            .and_then(|raw| Assembly::from_meshes(raw.into_meshes(), &MassModel::default(), Some(&cache)).map_err(|e| e.to_string()));
        match built {
            Ok(a) => loaded.push((name, a)),
            Err(e) => {
                log::warn!("{name}: {e}");
                broken.push(name);
            }
        }
    }
    let mut report = run_benchmark_on(cfg, &loaded)?;
    for name in broken {
        for &seed in &cfg.seeds {
            let outcome = RunOutcome { failure: Some("load".into()), sim_calls: 0, path_length: 0, parts_removed: 0 };
            report.rows.push(row(&name, 0, seed, 0.0, outcome));
        }
    }
    report.rows.sort_by(|a, b| a.assembly.cmp(&b.assembly).then(a.seed.cmp(&b.seed)));
    Ok(BenchReport::from_rows(report.planner, report.mode, report.rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_assembly_dir;
    use crate::pipeline::fixtures::{fixture_assembly, fixture_meshes, FixtureKind};

    fn quick(planner: PlannerKind, seeds: Vec<u64>, t_max: f64) -> BenchConfig {
        BenchConfig {
            t_max: Duration::from_secs_f64(t_max),
            total: Duration::from_secs_f64(4.0 * t_max),
            seeds,
            ..BenchConfig::from_settings(planner, ActionMode::TranslationRotation, Settings::default())
        }
    }

    #[test]
    fn planner_names_round_trip() {
        for p in PlannerKind::ALL {
            assert_eq!(p.name().parse::<PlannerKind>().unwrap(), p);
        }
        let names: Vec<&str> = PlannerKind::ALL.iter().map(|p| p.name()).collect();
        assert_eq!(names, ["ours", "ours-full-bfs", "rrt", "trrt", "mv-trrt", "bk-rrt"]);
    }

    #[test]
    fn zero_seeds_and_empty_corpus_are_rejected() {
        let cfg = quick(PlannerKind::Ours, vec![], 1.0);
        assert!(matches!(cfg.validate(), Err(BenchError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(PlannerKind::Ours, vec![0], 1.0);
        assert!(matches!(run_benchmark(&cfg, dir.path()), Err(BenchError::EmptyCorpus(_))));
    }

    #[test]
    fn categories_by_size() {
        assert_eq!([2, 3, 9, 10, 49, 50].map(category), ["two-part", "small", "small", "medium", "medium", "large"]);
    }

    #[test]
    fn corpus_run_is_reproducible_and_consistent() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [FixtureKind::PegPlate, FixtureKind::LChannel] {
            write_assembly_dir(&dir.path().join(kind.name()), &fixture_meshes(kind)).unwrap();
        }
        std::fs::create_dir(dir.path().join("not-an-assembly")).unwrap();
        let cfg = quick(PlannerKind::Ours, vec![0, 1], 10.0);
        let a = run_benchmark(&cfg, dir.path()).unwrap();
        let b = run_benchmark(&cfg, dir.path()).unwrap();
        assert_eq!(a.success_matrix(), b.success_matrix());
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.iter().all(|r| r.success && r.parts_removed == 2));
        assert!(a.aggregates_consistent());
        assert_eq!(a.overall.success_rate, 1.0);
        assert!(a.table().contains("peg-plate"));
    }

    #[test]
    fn tampered_aggregates_are_detected() {
        let a = fixture_assembly(FixtureKind::PegPlate);
        let cfg = quick(PlannerKind::Ours, vec![0], 10.0);
        let mut report = run_benchmark_on(&cfg, &[("peg".into(), a)]).unwrap();
        assert!(report.aggregates_consistent());
        report.overall.successes += 1;
        assert!(!report.aggregates_consistent());
    }

    #[test]
    fn attempts_respect_the_budget() {
        // Full search on the sealed box never finishes inside the budget.
        let a = fixture_assembly(FixtureKind::ClosedBox);
        let cfg = BenchConfig { total: Duration::from_secs(1), ..quick(PlannerKind::OursFullBfs, vec![0], 1.0) };
        let start = Instant::now();
        let report = run_benchmark_on(&cfg, &[("box".into(), a)]).unwrap();
        assert!(!report.rows[0].success);
        // One simulate call of slack.
        assert!(start.elapsed() < Duration::from_millis(1500), "{:?}", start.elapsed());
    }
}
