use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use asmplan::assembly_plan::{check_assembly_plan, plan_assembly};
use asmplan::baselines::run_baseline;
use asmplan::bench::{run_benchmark, BenchConfig, PlannerKind};
use asmplan::config::Settings;
use asmplan::geometry::SdfCache;
use asmplan::io::{corpus_entries, export_path, import_path, load_assembly_dir, read_json, write_assembly_dir, write_json, PathFile, PathMeta, PlanFile};
use asmplan::model::Assembly;
use asmplan::part::MassModel;
use asmplan::path::{check_path, plan_disassembly_path, ActionMode, PathQuery};
use asmplan::physics::RigidState;
use asmplan::pipeline::fixtures::{fixture_assembly, fixture_meshes, FixtureKind};
use asmplan::pipeline::{preprocess_many, RawAssembly};
use asmplan::sequence::{check_sequence, plan_multi_part_disassembly};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] asmplan::config::ConfigError),
    #[error(transparent)]
    Io(#[from] asmplan::io::IoError),
    #[error(transparent)]
    Bench(#[from] asmplan::bench::BenchError),
    #[error(transparent)]
    Model(#[from] asmplan::model::ModelError),
    #[error(transparent)]
    Query(#[from] asmplan::path::QueryError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser)]
#[command(name = "asmplan", version, about = "Physics-based assembly and disassembly planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Settings file (flat TOML table).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Setting override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a corpus of raw assemblies and write the planner-ready copies.
    Preprocess {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in test assemblies as a corpus.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        /// Only these fixtures (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
    /// Remove one part (or several, moving together).
    PlanPath {
        #[command(flatten)]
        run: RunArgs,
        /// Part names, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        part: Vec<String>,
        /// Depth cap for the physics search.
        #[arg(long)]
        d_max: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Disassemble the whole assembly.
    PlanSequence {
        #[command(flatten)]
        run: RunArgs,
        /// Largest number of parts moved together.
        #[arg(long)]
        group: Option<usize>,
    },
    /// Disassemble, then plan insertion from staged start poses.
    PlanAssembly {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        group: Option<usize>,
        /// Start offset of every part, `x,y,z` (default: 1.5 heights above).
        #[arg(long, value_delimiter = ',', num_args = 3)]
        start: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a planner over every assembly of a corpus.
    Benchmark {
        corpus: PathBuf,
        #[arg(long, default_value = "ours")]
        planner: PlannerKind,
        #[arg(long, value_enum, default_value_t = Mode::Trans)]
        mode: Mode,
        #[arg(long = "t-max")]
        t_max: Option<f64>,
        #[arg(long = "T-max")]
        total: Option<f64>,
        /// Count (`6`), list (`0,4,9`) or range (`2..5`).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        /// Report JSON; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a plan file through the validator.
    Validate {
        /// Assembly directory or `fixture:<name>`.
        assembly: String,
        plan: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Assembly directory or `fixture:<name>`.
    assembly: String,
    #[arg(long, default_value = "ours")]
    planner: PlannerKind,
    #[arg(long, value_enum, default_value_t = Mode::Trans)]
    mode: Mode,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long = "T-max")]
    total: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Trans,
    TransRot,
}

impl From<Mode> for ActionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Trans => ActionMode::Translation,
            Mode::TransRot => ActionMode::TranslationRotation,
        }
    }
}

fn seconds(v: f64, flag: &str) -> Result<Duration, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(Duration::from_secs_f64(v))
    } else {
        Err(CliError::Usage(format!("{flag} must be positive, got {v}")))
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("bad seed list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = s.parse().map_err(|_| bad())?;
    Ok((0..n).collect())
}

fn load_assembly(spec: &str) -> Result<Assembly, CliError> {
    if let Some(name) = spec.strip_prefix("fixture:") {
        let kind = FixtureKind::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown fixture '{name}'")))?;
        return Ok(fixture_assembly(kind));
    }
    let dir = Path::new(spec);
    let raw = load_assembly_dir(dir)?;
    let cache = SdfCache::new(dir.parent().unwrap_or(dir).join(".sdf-cache"));
    Ok(Assembly::from_meshes(raw.into_meshes(), &MassModel::default(), Some(&cache))?)
}

fn save_plan(out: Option<&Path>, plan: &PlanFile) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, plan)?,
        None => println!("{}", serde_json::to_string_pretty(plan).expect("plan serializes")),
    }
    Ok(())
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|source| asmplan::config::ConfigError::Io { path: p.display().to_string(), source })?,
        None => String::new(),
    };
    Ok(Settings::parse(&text, &cli.overrides)?)
}

fn plan_path(s: &Settings, run: &RunArgs, part: &[String], d_max: Option<usize>, seed: u64) -> Result<(), CliError> {
    let assembly = load_assembly(&run.assembly)?;
    let mode = ActionMode::from(run.mode);
    let parts = part
        .iter()
        .map(|n| assembly.find(n).ok_or_else(|| CliError::Usage(format!("no part named '{n}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let t_max = run.t_max.map_or(Ok(s.path_budget(mode)), |v| seconds(v, "--t-max"))?;
    let start = Instant::now();
    let (result, sim_calls, dt) = match run.planner {
        PlannerKind::Ours | PlannerKind::OursFullBfs => {
            let query = PathQuery { parts, t_max, d_max, mode };
            let outcome = plan_disassembly_path(&assembly, &query, &s.planner_params())?;
            (outcome.result.map_err(|f| f.to_string()), outcome.stats.sim_calls, s.path_time_step)
        }
        PlannerKind::Baseline(b) => {
            let [p] = parts[..] else {
                return Err(CliError::Usage(format!("{b} moves a single part")));
            };
            let outcome = run_baseline(b, &assembly, p, mode, &s.geom_config(seed), &s.planner_params(), t_max);
            let dt = if matches!(b, asmplan::baselines::Baseline::BkRrt) { s.path_time_step } else { 0.0 };
            (outcome.result.map_err(|f| f.to_string()), outcome.stats.sim_calls, dt)
        }
    };
    let meta = PathMeta { wall_time: start.elapsed().as_secs_f64(), sim_calls };
    match result {
        Ok(path) => {
            let check = check_path(&assembly, &path, s.penetration_threshold);
            eprintln!("solved: {} states, {} sim calls, {:.2} s, valid {}", path.len(), sim_calls, meta.wall_time, check.is_ok());
            let file = PathFile::new(&assembly, &path, run.planner.name(), dt, meta)?;
            match &run.out {
                Some(p) => export_path(p, &file)?,
                None => save_plan(None, &PlanFile::Path { path: file })?,
            }
        }
        Err(f) => eprintln!("failed: {f} after {:.2} s, {} sim calls", meta.wall_time, sim_calls),
    }
    Ok(())
}

fn ours_only(planner: PlannerKind) -> Result<bool, CliError> {
    match planner {
        PlannerKind::Ours => Ok(true),
        PlannerKind::OursFullBfs => Ok(false),
        PlannerKind::Baseline(b) => Err(CliError::Usage(format!("sequence planning uses ours or ours-full-bfs, not {b}"))),
    }
}

fn sequence_config(s: &Settings, run: &RunArgs) -> Result<asmplan::sequence::SequenceConfig, CliError> {
    let mut cfg = s.sequence_config(run.mode.into(), ours_only(run.planner)?);
    if let Some(v) = run.t_max {
        cfg.t_max = seconds(v, "--t-max")?;
    }
    if let Some(v) = run.total {
        cfg.total = seconds(v, "--T-max")?;
    }
    Ok(cfg)
}

fn plan_sequence(s: &Settings, run: &RunArgs, group: Option<usize>) -> Result<(), CliError> {
    let assembly = load_assembly(&run.assembly)?;
    let cfg = sequence_config(s, run)?;
    match plan_multi_part_disassembly(&assembly, group.unwrap_or(s.group_size), &cfg) {
        Ok(seq) => {
            let names: Vec<&str> = seq.order().iter().map(|&p| assembly.part(p).name.as_str()).collect();
            eprintln!("solved: order [{}], {} sim calls, {:.2} s", names.join(", "), seq.total_sim_calls(), seq.elapsed);
            save_plan(run.out.as_deref(), &PlanFile::Sequence { sequence: seq })?;
        }
        Err(e) => eprintln!("failed: {e}"),
    }
    Ok(())
}

fn plan_assembly_cmd(s: &Settings, run: &RunArgs, group: Option<usize>, start: Option<&[f64]>, seed: u64) -> Result<(), CliError> {
    let assembly = load_assembly(&run.assembly)?;
    let cfg = sequence_config(s, run)?;
    let offset = match start {
        Some(v) => Vector3::new(v[0], v[1], v[2]),
        None => {
            let b = assembly.bounds(&assembly.active_ids()).ok_or_else(|| CliError::Usage("assembly is empty".into()))?;
            Vector3::new(0.0, 0.0, 1.5 * (b.max.z - b.min.z))
        }
    };
    let initial: HashMap<_, _> = assembly.active_ids().into_iter().map(|p| (p, RigidState::translated(offset))).collect();
    let t_connect = seconds(s.t_connect, "t_connect")?;
    match plan_assembly(&assembly, group.unwrap_or(s.group_size), &cfg, &initial, &s.geom_config(seed), t_connect) {
        Ok((sequence, plan)) => {
            let names: Vec<&str> = plan.order().iter().map(|&p| assembly.part(p).name.as_str()).collect();
            let connected = plan.steps.iter().filter(|st| st.connected).count();
            eprintln!("solved: insertion order [{}], {connected}/{} approaches connected", names.join(", "), plan.steps.len());
            save_plan(run.out.as_deref(), &PlanFile::Assembly { sequence, plan })?;
        }
        Err(e) => eprintln!("failed: {e}"),
    }
    Ok(())
}

fn validate(s: &Settings, assembly: &str, plan: &Path) -> Result<bool, CliError> {
    let assembly = load_assembly(assembly)?;
    // Exported paths are stored bare, without the plan wrapper.
    let file = match read_json::<PlanFile>(plan) {
        Ok(f) => f,
        Err(e) => PlanFile::Path { path: import_path(plan).map_err(|_| e)? },
    };
    let pen = s.penetration_threshold;
    let ok = match file {
        PlanFile::Path { path } => {
            let c = check_path(&assembly, &path.to_path(&assembly)?, pen);
            println!("path: {} waypoints, {} violations, ends disassembled {}", c.waypoints, c.violations, c.ends_disassembled);
            c.is_ok()
        }
        PlanFile::Sequence { sequence } => {
            let c = check_sequence(&assembly, &sequence, pen);
            let violations: usize = c.steps.iter().map(|p| p.violations).sum();
            println!("sequence: {} steps, {violations} violations, order consistent {}", c.steps.len(), c.order_consistent);
            c.is_ok()
        }
        PlanFile::Assembly { sequence, plan } => {
            let c = check_assembly_plan(&assembly, &sequence, &plan, pen);
            println!(
                "assembly: {} waypoints, {} violations, final poses {}, reversal exact {}, order reversed {}",
                c.waypoints, c.violations, c.final_poses, c.reversal_exact, c.order_reversed
            );
            c.is_ok() && check_sequence(&assembly, &sequence, pen).is_ok()
        }
    };
    println!("{}", if ok { "valid" } else { "INVALID" });
    Ok(ok)
}

fn preprocess(corpus: &Path, out: &Path) -> Result<(), CliError> {
    let entries = corpus_entries(corpus)?;
    if entries.is_empty() {
        return Err(CliError::Usage(format!("corpus {} holds no assemblies", corpus.display())));
    }
    let raws = entries.iter().map(|d| load_assembly_dir(d)).collect::<Result<Vec<RawAssembly>, _>>()?;
    let cache = SdfCache::new(out.join(".sdf-cache"));
    let mut reports = Vec::new();
    for result in preprocess_many(raws) {
        let (clean, mut report) = match result {
            Ok(r) => r,
            Err(e) => {
                eprintln!("dropped: {e}");
                continue;
            }
        };
        let name = clean.source.clone();
        let meshes = clean.into_meshes();
        write_assembly_dir(&out.join(&name), &meshes)?;
        let built = Assembly::from_meshes(meshes, &MassModel::default(), Some(&cache))?;
        report.record_penetrations(&built);
        if report.needs_review {
            std::fs::write(out.join(format!("{name}.review")), "disassemblability not verified\n")
                .map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
        }
        eprintln!("{name}: {} -> {} parts", report.input_parts, report.final_parts.len());
        reports.push(report);
    }
    write_json(&out.join("preprocess-report.json"), &reports)?;
    Ok(())
}

fn fixtures(out: &Path, only: &[String]) -> Result<(), CliError> {
    let kinds = if only.is_empty() {
        FixtureKind::ALL.to_vec()
    } else {
        only.iter().map(|n| FixtureKind::from_name(n).ok_or_else(|| CliError::Usage(format!("unknown fixture '{n}'")))).collect::<Result<_, _>>()?
    };
    for k in kinds {
        write_assembly_dir(&out.join(k.name()), &fixture_meshes(k))?;
        eprintln!("wrote {}", k.name());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn benchmark(
    s: Settings,
    corpus: &Path,
    planner: PlannerKind,
    mode: Mode,
    t_max: Option<f64>,
    total: Option<f64>,
    seeds: Option<&str>,
    workers: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = BenchConfig::from_settings(planner, mode.into(), s);
    if let Some(v) = t_max {
        cfg.t_max = seconds(v, "--t-max")?;
    }
    if let Some(v) = total {
        cfg.total = seconds(v, "--T-max")?;
    }
    if let Some(v) = seeds {
        cfg.seeds = parse_seeds(v)?;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let report = run_benchmark(&cfg, corpus)?;
    print!("{}", report.table());
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let s = settings(&cli)?;
    match cli.command {
        Command::Preprocess { corpus, out } => preprocess(&corpus, &out)?,
        Command::Fixtures { out, only } => fixtures(&out, &only)?,
        Command::PlanPath { run, part, d_max, seed } => plan_path(&s, &run, &part, d_max, seed)?,
        Command::PlanSequence { run, group } => plan_sequence(&s, &run, group)?,
        Command::PlanAssembly { run, group, start, seed } => plan_assembly_cmd(&s, &run, group, start.as_deref(), seed)?,
        Command::Benchmark { corpus, planner, mode, t_max, total, seeds, workers, out } => {
            benchmark(s, &corpus, planner, mode, t_max, total, seeds.as_deref(), workers, out.as_deref())?
        }
        Command::Validate { assembly, plan } => return validate(&s, &assembly, &plan),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), [0, 1, 2]);
        assert_eq!(parse_seeds("4,9").unwrap(), [4, 9]);
        assert_eq!(parse_seeds("2..5").unwrap(), [2, 3, 4]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("0").unwrap().is_empty());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["asmplan", "benchmark", "c", "--planner", "mv-trrt", "--mode", "trans-rot", "--T-max", "30", "--set", "delta_t=0.1"]).unwrap();
        assert_eq!(cli.overrides, ["delta_t=0.1"]);
        match cli.command {
            Command::Benchmark { planner, total, .. } => {
                assert_eq!(planner.name(), "mv-trrt");
                assert_eq!(total, Some(30.0));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["asmplan", "benchmark", "c", "--planner", "prm"]).is_err());
    }
}
