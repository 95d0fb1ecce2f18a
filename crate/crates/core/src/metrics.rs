//! Mission outcome summaries: per-compartment timing, coverage, and the
//! serialized forms used for reporting and reproducibility checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::planner::{MissionMode, MissionReport, Mode};
use crate::ssg::SceneGraph;
use crate::world::{VoxelWorld, EDGE_BOUNDS, EDGE_MOUNTED_ON};

/// One compartment's share of the mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentMetrics {
    pub sequence: usize,
    pub compartment: Option<u64>,
    /// Behaviors used, in first-activation order.
    pub modes: Vec<Mode>,
    /// Entered under an active structure prediction.
    pub predictive: bool,
    /// Travel plus sensing-dwell time, seconds.
    pub time_s: f64,
    pub path_length_m: f64,
    pub ticks: usize,
    /// Semantic surface coverage of this compartment, percent.
    pub coverage_pct: Option<f64>,
}

/// Whole-mission summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionMetrics {
    pub mission: MissionMode,
    pub seed: u64,
    pub compartments: Vec<CompartmentMetrics>,
    pub total_time_s: f64,
    pub total_path_length_m: f64,
    /// Global semantic surface coverage, percent.
    pub coverage_pct: f64,
    pub ticks: usize,
    pub published_vertices: usize,
    pub published_edges: usize,
    /// Inspection targets abandoned after their exploration budget.
    pub skipped_targets: Vec<u64>,
    /// Wall-clock planning cost; excluded from reproducibility comparisons.
    pub compute_ms: u64,
}

/// Maps each ground-truth longitudinal to the compartment whose wall it is
/// mounted on.
fn long_to_compartment(gt: &SceneGraph) -> BTreeMap<u64, u64> {
    let wall_to_comp: BTreeMap<u64, u64> = gt
        .edges()
        .iter()
        .filter(|e| e.label == EDGE_BOUNDS)
        .map(|e| (e.src, e.dst))
        .collect();
    gt.edges()
        .iter()
        .filter(|e| e.label == EDGE_MOUNTED_ON)
        .filter_map(|e| wall_to_comp.get(&e.dst).map(|c| (e.src, *c)))
        .collect()
}

/// Semantic coverage percent per compartment, from the world's voxel tallies
/// and the ground-truth mounting structure.
pub fn coverage_by_compartment(world: &VoxelWorld, gt: &SceneGraph) -> BTreeMap<u64, f64> {
    let owner_comp = long_to_compartment(gt);
    let objects = world.objects();
    let mut agg: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (obj, (total, seen)) in world.semantic_tallies() {
        let Some(comp) = owner_comp.get(&objects[obj].vertex_id) else { continue };
        let entry = agg.entry(*comp).or_insert((0, 0));
        entry.0 += total;
        entry.1 += seen;
    }
    agg.into_iter()
        .map(|(c, (total, seen))| {
            let pct = if total == 0 { 100.0 } else { 100.0 * seen as f64 / total as f64 };
            (c, pct)
        })
        .collect()
}

impl MissionMetrics {
    pub fn from_mission(
        report: &MissionReport,
        world: &VoxelWorld,
        gt: &SceneGraph,
        mission: MissionMode,
        seed: u64,
        compute_ms: u64,
    ) -> Self {
        let per_comp = coverage_by_compartment(world, gt);
        let compartments = report
            .segments
            .iter()
            .map(|s| CompartmentMetrics {
                sequence: s.sequence,
                compartment: s.compartment,
                modes: s.modes.clone(),
                predictive: s.predictive,
                time_s: s.time,
                path_length_m: s.path_length,
                ticks: s.ticks,
                coverage_pct: s.compartment.and_then(|c| per_comp.get(&c).copied()),
            })
            .collect();
        Self {
            mission,
            seed,
            compartments,
            total_time_s: report.total_time,
            total_path_length_m: report.total_path_length,
            coverage_pct: report.coverage,
            ticks: report.ticks,
            published_vertices: report.published.vertex_count(),
            published_edges: report.published.edge_count(),
            skipped_targets: report.skipped_targets.clone(),
            compute_ms,
        }
    }

    /// Canonical byte form for reproducibility comparison: identical runs
    /// must produce identical text, so the wall-clock field is zeroed.
    pub fn canonical_json(&self) -> String {
        let mut clone = self.clone();
        clone.compute_ms = 0;
        serde_json::to_string(&clone).expect("metrics serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Per-compartment table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sequence,compartment,predictive,modes,time_s,path_length_m,ticks,coverage_pct\n",
        );
        for c in &self.compartments {
            let comp = c.compartment.map(|v| v.to_string()).unwrap_or_default();
            let modes: Vec<&str> = c.modes.iter().map(|m| mode_name(*m)).collect();
            let cov = c.coverage_pct.map(|v| format!("{v:.3}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:.3},{:.3},{},{}\n",
                c.sequence,
                comp,
                c.predictive,
                modes.join("|"),
                c.time_s,
                c.path_length_m,
                c.ticks,
                cov
            ));
        }
        out
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Ve => "ve",
        Mode::Si => "si",
        Mode::PpAe => "pp-ae",
        Mode::PpOi => "pp-oi",
        Mode::TraverseManhole => "traverse-manhole",
        Mode::Done => "done",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_tank, RobotConfiguration, SensorModel, TankSpec};

    #[test]
    fn compartment_coverage_tracks_camera_views() {
        let spec = TankSpec { compartments: 2, ..TankSpec::default() };
        let (mut world, gt) = generate_tank(&spec).unwrap();
        let by_comp = coverage_by_compartment(&world, &gt);
        assert_eq!(by_comp.len(), 2);
        assert!(by_comp.values().all(|v| *v == 0.0));

        // Aim the camera at the first compartment's -y wall.
        let center = spec.compartment_center(1);
        let xi = RobotConfiguration::new(center, -std::f64::consts::FRAC_PI_2);
        world.sense_camera(&xi, &SensorModel::default_camera());
        let by_comp = coverage_by_compartment(&world, &gt);
        let comps: Vec<u64> = by_comp.keys().copied().collect();
        assert!(by_comp[&comps[0]] > 0.0);
        assert_eq!(by_comp[&comps[1]], 0.0);

        // Every semantic voxel belongs to exactly one compartment, so the
        // global figure is the tally-weighted combination.
        let total = world.semantic_total() as f64;
        let seen = world.semantic_seen() as f64;
        assert!((world.coverage() - 100.0 * seen / total).abs() < 1e-12);
    }

    #[test]
    fn canonical_form_ignores_compute_time() {
        let m = MissionMetrics {
            mission: MissionMode::Baseline,
            seed: 3,
            compartments: vec![],
            total_time_s: 10.0,
            total_path_length_m: 5.0,
            coverage_pct: 99.0,
            ticks: 4,
            published_vertices: 0,
            published_edges: 0,
            skipped_targets: vec![],
            compute_ms: 1234,
        };
        let mut same_but_slower = m.clone();
        same_but_slower.compute_ms = 99999;
        assert_eq!(m.canonical_json(), same_but_slower.canonical_json());
        let mut different = m.clone();
        different.total_time_s += 0.001;
        assert_ne!(m.canonical_json(), different.canonical_json());
    }

    #[test]
    fn csv_has_one_row_per_compartment() {
        let m = MissionMetrics {
            mission: MissionMode::PpOi,
            seed: 0,
            compartments: vec![
                CompartmentMetrics {
                    sequence: 0,
                    compartment: Some(7),
                    modes: vec![Mode::Ve, Mode::Si],
                    predictive: false,
                    time_s: 12.5,
                    path_length_m: 20.0,
                    ticks: 9,
                    coverage_pct: Some(97.5),
                },
                CompartmentMetrics {
                    sequence: 1,
                    compartment: None,
                    modes: vec![Mode::TraverseManhole, Mode::PpOi],
                    predictive: true,
                    time_s: 8.0,
                    path_length_m: 11.0,
                    ticks: 5,
                    coverage_pct: None,
                },
            ],
            total_time_s: 20.5,
            total_path_length_m: 31.0,
            coverage_pct: 96.0,
            ticks: 14,
            published_vertices: 10,
            published_edges: 12,
            skipped_targets: vec![42],
            compute_ms: 1,
        };
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,7,false,ve|si,12.500,20.000,9,97.500"));
        assert!(lines[2].starts_with("1,,true,traverse-manhole|pp-oi,8.000,11.000,5,"));
    }

    #[test]
    fn longitudinal_mapping_covers_every_member() {
        let spec = TankSpec { compartments: 3, ..TankSpec::default() };
        let (_, gt) = generate_tank(&spec).unwrap();
        let map = long_to_compartment(&gt);
        assert_eq!(map.len(), 3 * 8);
    }
}
