//! Command-line driver: pattern mining, graph prediction, single missions,
//! the three-way comparative study, and the missing-semantics ablation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ssgplan_core::error::Error as CoreError;
use ssgplan_core::mining::{build_hierarchy_mode, MiningMode};
use ssgplan_core::predict::{expand_candidate, predict, PredictedVertex, PredictionCandidate};
use ssgplan_core::ssg::{load_graph, save_graph};
use ssgplan_core::world::{generate_tank, MissingLong, Side, TankSpec};
use ssgplan_core::{
    run_mission, MissionMetrics, MissionMode, PlannerSettings, RobotConfiguration, ScenarioConfig,
};

#[derive(Parser)]
#[command(
    name = "ssgplan",
    version,
    about = "Scene-graph pattern mining, structure prediction, and predictive inspection planning in a deterministic voxel simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliMission {
    Baseline,
    PpAe,
    PpOi,
}

impl From<CliMission> for MissionMode {
    fn from(m: CliMission) -> Self {
        match m {
            CliMission::Baseline => MissionMode::Baseline,
            CliMission::PpAe => MissionMode::PpAe,
            CliMission::PpOi => MissionMode::PpOi,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliMining {
    Modified,
    Legacy,
}

impl From<CliMining> for MiningMode {
    fn from(m: CliMining) -> Self {
        match m {
            CliMining::Modified => MiningMode::Modified,
            CliMining::Legacy => MiningMode::Legacy,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Mine the repeating-pattern hierarchy of a scene-graph JSON file
    Mine {
        /// Scene-graph JSON input
        #[arg(long)]
        graph: PathBuf,
        /// Scenario file supplying mining parameters (defaults otherwise)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Hierarchy JSON output
        #[arg(long)]
        out: PathBuf,
        /// Instance regrouping rule
        #[arg(long, value_enum, default_value_t = CliMining::Modified)]
        mode: CliMining,
        /// Maximum hierarchy depth
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
    /// Predict structure at loose entry vertices of a mined hierarchy
    Predict {
        /// Hierarchy JSON input (from `mine`)
        #[arg(long)]
        hierarchy: PathBuf,
        /// Candidate JSON output
        #[arg(long)]
        out: PathBuf,
        /// Entry vertex classes
        #[arg(long, default_value = "manhole")]
        entry: Vec<String>,
        /// Fraction of candidates kept, by score
        #[arg(long, default_value_t = 1.0)]
        phi: f64,
        /// Overlap fraction that counts as confirmation
        #[arg(long, default_value_t = 0.5)]
        kappa: f64,
    },
    /// Run one inspection mission and write its artifacts
    Run {
        /// Scenario JSON (tank, planner, mission, seed, quota)
        #[arg(long)]
        scenario: PathBuf,
        /// Planner settings JSON overriding the scenario's
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mission mode override
        #[arg(long, value_enum)]
        mode: Option<CliMission>,
        /// Seed override
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Replay the mission and fail unless metrics are byte-identical
        #[arg(long)]
        check: bool,
    },
    /// Run baseline, pp-ae, and pp-oi over several seeds and tabulate means
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Planner settings JSON overriding the scenario's
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seeds (repeat the flag; at least 3)
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparative study under missing semantics: k compartments each lose
    /// one longitudinal; also contrasts the two mining regrouping rules
    Ablate {
        #[arg(long)]
        scenario: PathBuf,
        /// Planner settings JSON overriding the scenario's
        #[arg(long)]
        config: Option<PathBuf>,
        /// Values of k (repeat the flag); default 0..=min(5, compartments)
        #[arg(long = "k")]
        ks: Vec<usize>,
        /// Seeds (repeat the flag)
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scenario JSON file
    GenScenario {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        compartments: usize,
        #[arg(long, default_value_t = 5.0)]
        compartment_size: f64,
        #[arg(long, value_enum, default_value_t = CliMission::Baseline)]
        mission: CliMission,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Compartments to finish; 0 means all
        #[arg(long, default_value_t = 0)]
        quota: usize,
        /// Remove a longitudinal: COMPARTMENT:SIDE:INDEX, e.g. 2:-y:1
        #[arg(long = "missing")]
        missing: Vec<String>,
        /// Leave the end walls unpierced
        #[arg(long)]
        no_exterior_manholes: bool,
        /// Also write the tank's ground-truth scene graph here
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let stuck = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::MissionStuck)));
            if stuck {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Serializes, re-parses (schema self-check), and writes.
fn write_json<T: Serialize + DeserializeOwned>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    serde_json::from_str::<T>(&text).context("serialized output failed schema re-parse")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_scenario(
    scenario: &Path,
    config: Option<&Path>,
    mode: Option<CliMission>,
    seed: Option<u64>,
) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_path(scenario)
        .with_context(|| format!("loading scenario {}", scenario.display()))?;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("loading planner config {}", path.display()))?;
        cfg.planner = serde_json::from_str::<PlannerSettings>(&text)
            .with_context(|| format!("parsing planner config {}", path.display()))?;
    }
    if let Some(m) = mode {
        cfg.mission = m.into();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mission_name(m: MissionMode) -> &'static str {
    match m {
        MissionMode::Baseline => "baseline",
        MissionMode::PpAe => "pp-ae",
        MissionMode::PpOi => "pp-oi",
    }
}

struct RunOutput {
    metrics: MissionMetrics,
    report: ssgplan_core::MissionReport,
}

/// Runs the scenario's mission on a fresh world and summarizes it.
fn run_once(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let (mut world, gt) = generate_tank(&cfg.tank)?;
    let start = RobotConfiguration::new(cfg.start_position(), cfg.start_yaw);
    let clock = Instant::now();
    let report = run_mission(
        &mut world,
        &gt,
        start,
        &cfg.planner,
        cfg.mission,
        cfg.effective_quota(),
        cfg.seed,
    )?;
    let compute_ms = clock.elapsed().as_millis() as u64;
    let metrics = MissionMetrics::from_mission(&report, &world, &gt, cfg.mission, cfg.seed, compute_ms);
    Ok(RunOutput { metrics, report })
}

#[derive(Serialize, Deserialize)]
struct CandidateOut {
    #[serde(flatten)]
    candidate: PredictionCandidate,
    /// Base-level vertices implied by the placement.
    expanded: Vec<PredictedVertex>,
}

#[derive(Serialize, Deserialize, Clone)]
struct MethodRow {
    method: String,
    seeds: usize,
    mean_time_per_compartment_s: f64,
    mean_coverage_pct: f64,
    mean_path_length_m: f64,
    mean_compute_ms: f64,
    /// Mean inspection-time reduction relative to baseline, percent.
    time_improvement_pct: f64,
}

#[derive(Serialize, Deserialize)]
struct CompareOutput {
    rows: Vec<MethodRow>,
    runs: Vec<MissionMetrics>,
}

#[derive(Serialize, Deserialize)]
struct MiningRow {
    mode: String,
    levels: usize,
    pattern_vertices: usize,
    pattern_edges: usize,
    instances: usize,
}

#[derive(Serialize, Deserialize)]
struct AblationEntry {
    k: usize,
    missing: Vec<MissingLong>,
    mining: Vec<MiningRow>,
    rows: Vec<MethodRow>,
}

#[derive(Serialize, Deserialize)]
struct AblateOutput {
    entries: Vec<AblationEntry>,
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Mine { graph, config, out, mode, levels } => cmd_mine(&graph, config.as_deref(), &out, mode, levels),
        Command::Predict { hierarchy, out, entry, phi, kappa } => {
            cmd_predict(&hierarchy, &out, &entry, phi, kappa)
        }
        Command::Run { scenario, config, mode, seed, out, check } => {
            let cfg = load_scenario(&scenario, config.as_deref(), mode, seed)?;
            cmd_run(&cfg, &out, check)
        }
        Command::Compare { scenario, config, seeds, out } => {
            let cfg = load_scenario(&scenario, config.as_deref(), None, None)?;
            cmd_compare(&cfg, &seeds, &out)
        }
        Command::Ablate { scenario, config, ks, seeds, out } => {
            let cfg = load_scenario(&scenario, config.as_deref(), None, None)?;
            cmd_ablate(&cfg, &ks, &seeds, &out)
        }
        Command::GenScenario {
            out,
            compartments,
            compartment_size,
            mission,
            seed,
            quota,
            missing,
            no_exterior_manholes,
            graph_out,
        } => cmd_gen_scenario(
            &out,
            compartments,
            compartment_size,
            mission,
            seed,
            quota,
            &missing,
            no_exterior_manholes,
            graph_out.as_deref(),
        ),
    }
}

fn cmd_mine(
    graph: &Path,
    config: Option<&Path>,
    out: &Path,
    mode: CliMining,
    levels: usize,
) -> Result<()> {
    let g = load_graph(graph)?;
    let params = match config {
        Some(path) => load_scenario(path, None, None, None)?.planner.mining,
        None => Default::default(),
    };
    let hierarchy = build_hierarchy_mode(&g, &params, levels, mode.into())?;
    for (i, lvl) in hierarchy.levels.iter().enumerate() {
        println!(
            "level {}: pattern {}v/{}e, {} instances, compression {:.4}",
            i + 1,
            lvl.substructure.pattern.vertex_count(),
            lvl.substructure.pattern.edge_count(),
            lvl.substructure.instances.len(),
            lvl.substructure.compression,
        );
    }
    if hierarchy.is_empty() {
        println!("no compressive pattern found");
    }
    write_json(out, &hierarchy)?;
    println!("hierarchy written to {}", out.display());
    Ok(())
}

fn cmd_predict(hierarchy: &Path, out: &Path, entry: &[String], phi: f64, kappa: f64) -> Result<()> {
    let text = std::fs::read_to_string(hierarchy)
        .with_context(|| format!("loading hierarchy {}", hierarchy.display()))?;
    let h: ssgplan_core::compress::Hierarchy = serde_json::from_str(&text)?;
    let candidates = predict(&h, entry, phi, kappa)?;
    let outputs: Vec<CandidateOut> = candidates
        .into_iter()
        .map(|candidate| {
            let expanded = expand_candidate(&h, &candidate);
            CandidateOut { candidate, expanded }
        })
        .collect();
    for c in &outputs {
        println!(
            "anchor {} (level {}): score {}, {} predicted vertices",
            c.candidate.anchor,
            c.candidate.level,
            c.candidate.overlap_score,
            c.candidate.predicted_vertices.len(),
        );
    }
    if outputs.is_empty() {
        println!("no prediction candidates");
    }
    write_json(out, &outputs)?;
    println!("candidates written to {}", out.display());
    Ok(())
}

fn cmd_run(cfg: &ScenarioConfig, out: &Path, check: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let RunOutput { metrics, report } = run_once(cfg)?;
    if check {
        let replay = run_once(cfg)?;
        if metrics.canonical_json() != replay.metrics.canonical_json() {
            bail!("replay diverged: metrics are not byte-identical");
        }
        println!("determinism check: ok");
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    std::fs::write(out.join("metrics.csv"), metrics.to_csv())?;
    save_graph(&report.published, &out.join("ssg.json"))?;
    let hierarchy = build_hierarchy_mode(
        &report.published,
        &cfg.planner.mining,
        cfg.planner.max_levels,
        MiningMode::Modified,
    )?;
    write_json(&out.join("hierarchy.json"), &hierarchy)?;
    write_json(&out.join("trace.json"), &report.trace)?;
    let prediction_log = serde_json::to_value(&report.predictions)?;
    std::fs::write(
        out.join("predictions.json"),
        serde_json::to_string_pretty(&prediction_log)?,
    )?;
    println!(
        "{}: {} compartments, {:.1} s, {:.1} m, coverage {:.1}%",
        mission_name(cfg.mission),
        metrics.compartments.len(),
        metrics.total_time_s,
        metrics.total_path_length_m,
        metrics.coverage_pct,
    );
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn summarize(method: MissionMode, runs: &[MissionMetrics], baseline_time: Option<f64>) -> MethodRow {
    let n = runs.len().max(1) as f64;
    let time_pc = |m: &MissionMetrics| m.total_time_s / m.compartments.len().max(1) as f64;
    let mean_time = runs.iter().map(time_pc).sum::<f64>() / n;
    let row_time = mean_time;
    MethodRow {
        method: mission_name(method).to_string(),
        seeds: runs.len(),
        mean_time_per_compartment_s: mean_time,
        mean_coverage_pct: runs.iter().map(|m| m.coverage_pct).sum::<f64>() / n,
        mean_path_length_m: runs.iter().map(|m| m.total_path_length_m).sum::<f64>() / n,
        mean_compute_ms: runs.iter().map(|m| m.compute_ms as f64).sum::<f64>() / n,
        time_improvement_pct: match baseline_time {
            Some(b) if b > 0.0 => 100.0 * (b - row_time) / b,
            _ => 0.0,
        },
    }
}

fn rows_to_csv(rows: &[MethodRow]) -> String {
    let mut out = String::from(
        "method,seeds,time_per_compartment_s,coverage_pct,path_length_m,compute_ms,time_improvement_pct\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.3},{:.3},{:.3},{:.1},{:.2}\n",
            r.method,
            r.seeds,
            r.mean_time_per_compartment_s,
            r.mean_coverage_pct,
            r.mean_path_length_m,
            r.mean_compute_ms,
            r.time_improvement_pct
        ));
    }
    out
}

const STUDY_MODES: [MissionMode; 3] = [MissionMode::Baseline, MissionMode::PpAe, MissionMode::PpOi];

fn study_rows(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<(Vec<MethodRow>, Vec<MissionMetrics>)> {
    let mut all_runs = Vec::new();
    let mut per_mode: Vec<Vec<MissionMetrics>> = vec![Vec::new(); STUDY_MODES.len()];
    for (i, mode) in STUDY_MODES.iter().enumerate() {
        for &seed in seeds {
            let run_cfg = ScenarioConfig { mission: *mode, seed, ..cfg.clone() };
            let metrics = run_once(&run_cfg)?.metrics;
            per_mode[i].push(metrics.clone());
            all_runs.push(metrics);
        }
    }
    let baseline = summarize(STUDY_MODES[0], &per_mode[0], None);
    let baseline_time = baseline.mean_time_per_compartment_s;
    let mut rows = vec![baseline];
    for (i, mode) in STUDY_MODES.iter().enumerate().skip(1) {
        rows.push(summarize(*mode, &per_mode[i], Some(baseline_time)));
    }
    Ok((rows, all_runs))
}

fn cmd_compare(cfg: &ScenarioConfig, seeds: &[u64], out: &Path) -> Result<()> {
    let seeds: Vec<u64> = if seeds.is_empty() { vec![0, 1, 2] } else { seeds.to_vec() };
    if seeds.len() < 3 {
        bail!("compare needs at least 3 seeds, got {}", seeds.len());
    }
    std::fs::create_dir_all(out)?;
    let (rows, runs) = study_rows(cfg, &seeds)?;
    for r in &rows {
        println!(
            "{:<9} {:>8.1} s/compartment, coverage {:>6.2}%, improvement {:>6.2}%",
            r.method, r.mean_time_per_compartment_s, r.mean_coverage_pct, r.time_improvement_pct,
        );
    }
    std::fs::write(out.join("compare.csv"), rows_to_csv(&rows))?;
    write_json(&out.join("compare.json"), &CompareOutput { rows, runs })?;
    println!("study written to {}", out.display());
    Ok(())
}

/// The ablation's removal pattern: compartments 1..=k each lose one
/// longitudinal from the -y wall, cycling through wall positions.
fn ablation_missing(k: usize, spec: &TankSpec) -> Vec<MissingLong> {
    let per_wall = (spec.longs_per_compartment / 2).max(1);
    (1..=k)
        .map(|j| MissingLong { compartment: j, side: Side::MinusY, index: (j - 1) % per_wall })
        .collect()
}

fn mining_comparison(tank: &TankSpec, planner: &PlannerSettings) -> Result<Vec<MiningRow>> {
    let (_, gt) = generate_tank(tank)?;
    let mut rows = Vec::new();
    for (name, mode) in [("modified", MiningMode::Modified), ("legacy", MiningMode::Legacy)] {
        let h = build_hierarchy_mode(&gt, &planner.mining, planner.max_levels, mode)?;
        let row = match h.levels.last() {
            Some(lvl) => MiningRow {
                mode: name.to_string(),
                levels: h.levels.len(),
                pattern_vertices: lvl.substructure.pattern.vertex_count(),
                pattern_edges: lvl.substructure.pattern.edge_count(),
                instances: lvl.substructure.instances.len(),
            },
            None => MiningRow {
                mode: name.to_string(),
                levels: 0,
                pattern_vertices: 0,
                pattern_edges: 0,
                instances: 0,
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

fn cmd_ablate(cfg: &ScenarioConfig, ks: &[usize], seeds: &[u64], out: &Path) -> Result<()> {
    let ks: Vec<usize> = if ks.is_empty() {
        (0..=cfg.tank.compartments.min(5)).collect()
    } else {
        ks.to_vec()
    };
    if let Some(bad) = ks.iter().find(|k| **k > cfg.tank.compartments) {
        bail!("k = {bad} exceeds the {}-compartment tank", cfg.tank.compartments);
    }
    let seeds: Vec<u64> = if seeds.is_empty() { vec![0] } else { seeds.to_vec() };
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    for &k in &ks {
        let missing = ablation_missing(k, &cfg.tank);
        let tank = TankSpec { missing: missing.clone(), ..cfg.tank.clone() };
        let mining = mining_comparison(&tank, &cfg.planner)?;
        for row in &mining {
            println!(
                "k={k} mining {}: {} levels, pattern {}v/{}e, {} instances",
                row.mode, row.levels, row.pattern_vertices, row.pattern_edges, row.instances
            );
        }
        let run_cfg = ScenarioConfig { tank, ..cfg.clone() };
        let (rows, _) = study_rows(&run_cfg, &seeds)?;
        for r in &rows {
            println!(
                "k={k} {:<9} {:>8.1} s/compartment, coverage {:>6.2}%",
                r.method, r.mean_time_per_compartment_s, r.mean_coverage_pct
            );
        }
        entries.push(AblationEntry { k, missing, mining, rows });
    }
    let mut csv = String::from(
        "k,method,seeds,time_per_compartment_s,coverage_pct,path_length_m,compute_ms,time_improvement_pct\n",
    );
    for e in &entries {
        for line in rows_to_csv(&e.rows).lines().skip(1) {
            csv.push_str(&format!("{},{line}\n", e.k));
        }
    }
    std::fs::write(out.join("ablate.csv"), csv)?;
    write_json(&out.join("ablate.json"), &AblateOutput { entries })?;
    println!("ablation written to {}", out.display());
    Ok(())
}

fn parse_missing(text: &str) -> Result<MissingLong> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--missing expects COMPARTMENT:SIDE:INDEX, got {text:?}");
    }
    let compartment: usize = parts[0].parse().context("compartment index")?;
    let side = match parts[1] {
        "-y" => Side::MinusY,
        "+y" => Side::PlusY,
        other => bail!("side must be -y or +y, got {other:?}"),
    };
    let index: usize = parts[2].parse().context("longitudinal index")?;
    Ok(MissingLong { compartment, side, index })
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_scenario(
    out: &Path,
    compartments: usize,
    compartment_size: f64,
    mission: CliMission,
    seed: u64,
    quota: usize,
    missing: &[String],
    no_exterior_manholes: bool,
    graph_out: Option<&Path>,
) -> Result<()> {
    let missing: Vec<MissingLong> = missing.iter().map(|m| parse_missing(m)).collect::<Result<_>>()?;
    let cfg = ScenarioConfig {
        tank: TankSpec {
            compartments,
            compartment_size,
            missing,
            exterior_manholes: !no_exterior_manholes,
            ..TankSpec::default()
        },
        mission: mission.into(),
        seed,
        quota,
        ..ScenarioConfig::default()
    };
    cfg.validate()?;
    cfg.to_path(out)?;
    println!("scenario written to {}", out.display());
    if let Some(path) = graph_out {
        let (_, gt) = generate_tank(&cfg.tank)?;
        save_graph(&gt, path)?;
        println!("ground-truth scene graph written to {}", path.display());
    }
    Ok(())
}
