//! Mission state machine and the four planning behaviors: volumetric
//! exploration, semantic inspection, prediction-assisted exploration, and
//! opportunistic inspection along a transformed prior tour.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{overlap_test, Aabb};
use crate::mining::{build_hierarchy, MiningParams};
use crate::perception::DetectionTracker;
use crate::predict::{expand_candidate, predict, PredictionCandidate};
use crate::ssg::{SceneGraph, Vertex};
use crate::world::{
    PathPoint, RobotConfiguration, SensorModel, VoxelWorld, EDGE_BOUNDS, EDGE_MOUNTED_ON,
    LABEL_COMPARTMENT, LABEL_LONGITUDINAL, LABEL_MANHOLE,
};

/// Gain and switching parameters for the exploration/inspection behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainParams {
    /// Distance decay of accumulated exploration gain.
    pub mu: f64,
    /// Decay on deviation from the current exploration direction.
    pub zeta: f64,
    /// Bias toward predicted structure, added to the semantic-gain weight.
    pub delta: f64,
    /// Overlap ratio at which assisted exploration hands over to inspection.
    pub alpha_thr: f64,
    /// Bounding-box overlap fraction for counting a prediction as matched.
    pub kappa: f64,
    /// Exploration ends when every candidate sees fewer unknown voxels.
    pub upsilon_ve_min: usize,
    /// Viewpoint displacement that forces an inspection re-plan, meters.
    pub replan_displacement: f64,
    /// Exploration steps granted per undetected opportunistic target.
    pub max_oi_explore_steps: usize,
}

impl Default for GainParams {
    fn default() -> Self {
        Self {
            mu: 0.05,
            zeta: 0.01,
            delta: 0.2,
            alpha_thr: 0.9,
            kappa: 0.5,
            upsilon_ve_min: 50,
            replan_displacement: 0.3,
            max_oi_explore_steps: 3,
        }
    }
}

impl GainParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.mu, self.zeta, self.delta, self.alpha_thr, self.kappa, self.replan_displacement];
        if nonneg.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidSpec("gain parameters must be non-negative".into()));
        }
        if self.alpha_thr > 1.0 {
            return Err(Error::InvalidSpec("alpha_thr must not exceed 1".into()));
        }
        Ok(())
    }
}

/// Everything the planning behaviors need besides the world itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSettings {
    pub gain: GainParams,
    pub robot_radius: f64,
    pub v_max: f64,
    /// Seconds of travel between sensing stops.
    pub sense_period: f64,
    /// Seconds charged per sensing stop on top of travel time.
    pub dwell: f64,
    pub depth: SensorModel,
    pub camera: SensorModel,
    /// Vertices sampled for one exploration step.
    pub local_samples: usize,
    /// Extent of the local sampling box around the robot, meters.
    pub local_box: [f64; 3],
    /// Neighbors tried per vertex when wiring the local graph.
    pub k_nearest: usize,
    /// Cap on roadmap augmentation samples for inspection tours.
    pub roadmap_samples: usize,
    /// Vertex classes that admit passage between spaces.
    pub entry_classes: Vec<String>,
    /// Fraction of prediction candidates retained, by score.
    pub phi: f64,
    /// Pattern-mining depth.
    pub max_levels: usize,
    pub mining: MiningParams,
    pub detection: DetectionParams,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            gain: GainParams::default(),
            robot_radius: 0.3,
            v_max: 2.0,
            sense_period: 0.5,
            dwell: 0.5,
            depth: SensorModel::default_depth(),
            camera: SensorModel::default_camera(),
            local_samples: 200,
            local_box: [12.0, 12.0, 6.0],
            k_nearest: 10,
            roadmap_samples: 500,
            entry_classes: vec![LABEL_MANHOLE.to_string()],
            phi: 1.0,
            max_levels: 2,
            mining: MiningParams::default(),
            detection: DetectionParams::default(),
        }
    }
}

/// Semantic-detection thresholds the mission hands to its tracker.
///
/// `h_min` is the key lever for scenario design: it sets how many rays of one
/// scan must land on an object before the scan counts as an observation.
/// Nearby structure collects hundreds of rays per sweep, while objects glimpsed
/// through a manhole opening from the neighboring space catch only a handful,
/// so raising `h_min` keeps the published graph limited to compartments the
/// robot has actually entered without slowing legitimate detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    /// Rays on an object for one scan to count as an observation.
    pub h_min: usize,
    /// Observations before an object is published.
    pub publish_threshold: usize,
    /// Std-dev of per-observation position noise, meters.
    pub sigma_pose: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self { h_min: 5, publish_threshold: 3, sigma_pose: 0.0 }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.h_min == 0 || self.publish_threshold == 0 {
            return Err(Error::InvalidSpec("detection thresholds must be at least 1".into()));
        }
        if !self.sigma_pose.is_finite() || self.sigma_pose < 0.0 {
            return Err(Error::InvalidSpec("pose noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Which planner drives the mission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissionMode {
    /// Explore + inspect every compartment from scratch.
    Baseline,
    /// Prediction-assisted exploration after the first prediction.
    PpAe,
    /// Opportunistic inspection along the transformed prior tour.
    PpOi,
}

/// Behavior the mission is currently executing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ve,
    Si,
    PpAe,
    PpOi,
    TraverseManhole,
    Done,
}

/// Result of one planning step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Path(Vec<PathPoint>),
    ExplorationComplete,
    SwitchToSi,
    CompartmentDone,
}

/// Blended exploration gain: a semantic term weighted up by the overlap
/// ratio plus the prediction bias, and a volumetric term weighted down as
/// the prediction confirms.
pub fn ae_gain(upsilon_ve: f64, upsilon_s: f64, alpha: f64, delta: f64) -> f64 {
    (alpha + delta) * upsilon_s + (1.0 - alpha) * upsilon_ve
}

/// Longitudinal length one camera viewpoint covers at its required offset.
pub fn viewpoint_spacing(r_c: f64, h_fov: f64) -> f64 {
    2.0 * r_c * (h_fov / 2.0).sin()
}

/// Wall standoff of an inspection viewpoint.
pub fn viewpoint_offset(r_c: f64, h_fov: f64) -> f64 {
    r_c * (h_fov / 2.0).cos()
}

/// Sampled collision-free graph around the robot; vertex 0 is the robot.
#[derive(Debug, Clone)]
pub struct LocalGraph {
    pub nodes: Vec<RobotConfiguration>,
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub gains: Vec<f64>,
}

#[derive(PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64)>], start: usize) -> (Vec<f64>, Vec<usize>) {
    let n = adjacency.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push((Reverse(Cost(0.0)), start));
    while let Some((Reverse(Cost(d)), u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adjacency[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = u;
                heap.push((Reverse(Cost(nd)), v));
            }
        }
    }
    (dist, parent)
}

fn tree_path(parent: &[usize], goal: usize) -> Vec<usize> {
    let mut path = vec![goal];
    let mut cur = goal;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Oriented no-fly box around a published entry opening. Ordinary navigation
/// never pierces one: passage between spaces is reserved for the deliberate
/// traversal maneuver, which flies its crossing segment directly.
#[derive(Debug, Clone)]
pub struct EntryAperture {
    pub center: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub half_extents: Vector3<f64>,
}

/// No-fly boxes for every published entry-class vertex, inflated by the
/// robot radius so a grazing pass counts as a crossing.
pub fn entry_apertures(published: &SceneGraph, settings: &PlannerSettings) -> Vec<EntryAperture> {
    published
        .vertices()
        .iter()
        .filter(|v| settings.entry_classes.iter().any(|c| *c == v.label))
        .map(|v| EntryAperture {
            center: v.pose.position,
            rotation: v.pose.rotation,
            half_extents: v.half_extents + Vector3::repeat(settings.robot_radius),
        })
        .collect()
}

/// Segment/oriented-box intersection by the slab test in the box frame.
fn segment_hits_box(a: &Vector3<f64>, b: &Vector3<f64>, aperture: &EntryAperture) -> bool {
    let la = aperture.rotation.transpose() * (a - aperture.center);
    let lb = aperture.rotation.transpose() * (b - aperture.center);
    let d = lb - la;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..3 {
        if d[axis].abs() < 1e-12 {
            if la[axis].abs() > aperture.half_extents[axis] {
                return false;
            }
        } else {
            let inv = 1.0 / d[axis];
            let mut lo = (-aperture.half_extents[axis] - la[axis]) * inv;
            let mut hi = (aperture.half_extents[axis] - la[axis]) * inv;
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn crosses_aperture(blocked: &[EntryAperture], a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    blocked.iter().any(|ap| segment_hits_box(a, b, ap))
}

/// Samples the collision-free exploration graph: the robot plus up to
/// `local_samples` known-free positions in the local box, wired by
/// collision-free edges to their nearest neighbors. Edges that would thread a
/// published entry opening are rejected.
pub fn build_local_graph(
    world: &VoxelWorld,
    xi: &RobotConfiguration,
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
) -> Result<LocalGraph> {
    let r = settings.robot_radius;
    let bounds = world.bounds();
    let (bmin, bmax) = (bounds.min(), bounds.max());
    let mut lo = Vector3::zeros();
    let mut hi = Vector3::zeros();
    for a in 0..3 {
        lo[a] = (xi.position[a] - settings.local_box[a] / 2.0).max(bmin[a]);
        hi[a] = (xi.position[a] + settings.local_box[a] / 2.0).min(bmax[a]);
        if hi[a] - lo[a] < 1e-6 {
            hi[a] = lo[a] + 1e-6;
        }
    }
    let mut nodes = vec![*xi];
    let attempts = settings.local_samples * 30;
    for _ in 0..attempts {
        if nodes.len() > settings.local_samples {
            break;
        }
        let p = Vector3::new(
            rng.gen_range(lo.x..hi.x),
            rng.gen_range(lo.y..hi.y),
            rng.gen_range(lo.z..hi.z),
        );
        if world.known_free_point(&p, r, false) {
            nodes.push(RobotConfiguration::new(p, 0.0));
        }
    }
    if nodes.len() == 1 {
        return Err(Error::NoGraph);
    }
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for i in 0..nodes.len() {
        let mut order: Vec<usize> = (0..nodes.len()).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            let da = (nodes[a].position - nodes[i].position).norm();
            let db = (nodes[b].position - nodes[i].position).norm();
            da.total_cmp(&db)
        });
        for &j in order.iter().take(settings.k_nearest) {
            if adjacency[i].iter().any(|&(k, _)| k == j) {
                continue;
            }
            let d = (nodes[j].position - nodes[i].position).norm();
            if !crosses_aperture(blocked, &nodes[i].position, &nodes[j].position)
                && world.known_free_segment(&nodes[i].position, &nodes[j].position, r, false)
            {
                adjacency[i].push((j, d));
                adjacency[j].push((i, d));
            }
        }
    }
    let gains = vec![0.0; nodes.len()];
    Ok(LocalGraph { nodes, adjacency, gains })
}

/// Mean distance between the path's vertices and the points at matching arc
/// length on the straight reference ray from the path start.
fn path_deviation(
    nodes: &[RobotConfiguration],
    path: &[usize],
    dist: &[f64],
    reference_dir: &Vector3<f64>,
) -> f64 {
    if path.len() < 2 {
        return 0.0;
    }
    let start = nodes[path[0]].position;
    let sum: f64 = path[1..]
        .iter()
        .map(|&i| (nodes[i].position - (start + reference_dir * dist[i])).norm())
        .sum();
    sum / (path.len() - 1) as f64
}

/// Scores every shortest path out of vertex 0 by its accumulated
/// distance-discounted gain, damped by deviation from the reference
/// direction, and returns the best path's vertex indices. `None` when no
/// other vertex is reachable.
pub fn select_exploration_path(
    graph: &LocalGraph,
    reference_dir: &Vector3<f64>,
    params: &GainParams,
) -> Option<Vec<usize>> {
    let (dist, parent) = dijkstra(&graph.adjacency, 0);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for j in 1..graph.nodes.len() {
        if !dist[j].is_finite() {
            continue;
        }
        let path = tree_path(&parent, j);
        let accumulated: f64 = path
            .iter()
            .map(|&i| graph.gains[i] * (-params.mu * dist[i]).exp())
            .sum();
        let z = path_deviation(&graph.nodes, &path, &dist, reference_dir);
        let score = (-params.zeta * z).exp() * accumulated;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, path));
        }
    }
    best.map(|(_, p)| p)
}

fn nodes_to_path(points: &[Vector3<f64>], start_yaw: f64, final_heading: Option<f64>) -> Vec<PathPoint> {
    let mut out = Vec::with_capacity(points.len());
    let mut prev_yaw = start_yaw;
    for i in 0..points.len() {
        let yaw = if i + 1 < points.len() {
            let d = points[i + 1] - points[i];
            if d.xy().norm() > 1e-9 {
                d.y.atan2(d.x)
            } else {
                prev_yaw
            }
        } else {
            final_heading.unwrap_or(prev_yaw)
        };
        prev_yaw = yaw;
        out.push(PathPoint { position: points[i], yaw });
    }
    out
}

/// Gain model for one exploration step.
#[derive(Debug, Clone, Copy)]
pub enum GainKind {
    /// Unknown voxels visible to the depth sensor.
    Volume,
    /// Blend of predicted-structure gain and volumetric gain.
    Predictive { alpha: f64 },
}

/// Axis-aligned enclosures of the aperture boxes, for clipping gain rays.
fn aperture_stops(blocked: &[EntryAperture]) -> Vec<Aabb> {
    blocked
        .iter()
        .map(|ap| {
            let mut he = Vector3::zeros();
            for a in 0..3 {
                he[a] = (0..3).map(|b| ap.rotation[(a, b)].abs() * ap.half_extents[b]).sum();
            }
            Aabb::new(ap.center, he)
        })
        .collect()
}

fn fill_gains(
    world: &VoxelWorld,
    graph: &mut LocalGraph,
    kind: GainKind,
    settings: &PlannerSettings,
    stops: &[Aabb],
) {
    for i in 0..graph.nodes.len() {
        let (unknown, predicted) = world.gain_counts(&graph.nodes[i], &settings.depth, stops);
        graph.gains[i] = match kind {
            GainKind::Volume => unknown as f64,
            GainKind::Predictive { alpha } => {
                ae_gain(unknown as f64, predicted as f64, alpha, settings.gain.delta)
            }
        };
    }
}

/// One exploration step: sample, score, and pick the best local path.
pub fn explore_step(
    world: &VoxelWorld,
    xi: &RobotConfiguration,
    reference_dir: &Vector3<f64>,
    kind: GainKind,
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let mut graph = build_local_graph(world, xi, settings, blocked, rng)?;
    fill_gains(world, &mut graph, kind, settings, &aperture_stops(blocked));
    // Only vertices the robot can actually reach count toward the stopping
    // test; samples stranded behind an entry opening would otherwise hold
    // exploration hostage with gain it can never collect.
    let (dist, _) = dijkstra(&graph.adjacency, 0);
    let exhausted = graph
        .gains
        .iter()
        .enumerate()
        .all(|(i, g)| !dist[i].is_finite() || *g < settings.gain.upsilon_ve_min as f64);
    if exhausted {
        return Ok(StepOutcome::ExplorationComplete);
    }
    let Some(path) = select_exploration_path(&graph, reference_dir, &settings.gain) else {
        return Err(Error::NoGraph);
    };
    let points: Vec<Vector3<f64>> = path.iter().map(|&i| graph.nodes[i].position).collect();
    Ok(StepOutcome::Path(nodes_to_path(&points, xi.yaw, None)))
}

/// Volumetric exploration step.
pub fn ve_step(
    world: &VoxelWorld,
    xi: &RobotConfiguration,
    explore_dir: &Vector3<f64>,
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    explore_step(world, xi, explore_dir, GainKind::Volume, settings, blocked, rng)
}

/// Prediction-assisted exploration step; hands over to inspection once the
/// overlap ratio crosses its threshold.
pub fn ae_step(
    world: &VoxelWorld,
    xi: &RobotConfiguration,
    explore_dir: &Vector3<f64>,
    alpha: f64,
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    if alpha >= settings.gain.alpha_thr {
        return Ok(StepOutcome::SwitchToSi);
    }
    explore_step(world, xi, explore_dir, GainKind::Predictive { alpha }, settings, blocked, rng)
}

/// Fraction of predicted boxes matched by a detected box at overlap `kappa`.
pub fn overlap_ratio(detected: &[Aabb], predicted: &[Aabb], kappa: f64) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let matched = predicted
        .iter()
        .filter(|p| detected.iter().any(|d| overlap_test(d, p, kappa)))
        .count();
    matched as f64 / predicted.len() as f64
}

/// A camera stop covering one section of a longitudinal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: Vector3<f64>,
    /// Camera yaw, pointing at the target wall.
    pub heading: f64,
    /// Longitudinal this viewpoint inspects.
    pub target: u64,
    /// Which equally-spaced section along the target it covers.
    pub section: usize,
}

impl Viewpoint {
    pub fn config(&self) -> RobotConfiguration {
        RobotConfiguration::new(self.position, self.heading)
    }
}

/// Unit normal pointing from the longitudinal's mounting wall into open
/// space, assuming side-mounted members in a world centered on its y-midline.
pub fn inward_normal(world: &VoxelWorld, long: &Vertex) -> Vector3<f64> {
    let mid = world.bounds().center.y;
    if long.pose.position.y <= mid {
        Vector3::y()
    } else {
        -Vector3::y()
    }
}

/// Places the camera stops for one longitudinal: the member is split into
/// the minimal number of sections one camera footprint covers, and each
/// section gets a centered viewpoint at the standoff offset, facing the wall.
pub fn place_viewpoints(long: &Vertex, camera: &SensorModel, inward: &Vector3<f64>) -> Vec<Viewpoint> {
    let he = long.half_extents;
    let axis = if he.x >= he.y && he.x >= he.z {
        0
    } else if he.y >= he.z {
        1
    } else {
        2
    };
    let mut axis_dir = Vector3::zeros();
    axis_dir[axis] = 1.0;
    let d_l = long.pose.rotation * axis_dir;
    let length = 2.0 * he[axis];
    let lv = viewpoint_spacing(camera.range, camera.h_fov);
    let n = (length / lv).ceil().max(1.0) as usize;
    let offset = viewpoint_offset(camera.range, camera.h_fov);
    let start = long.pose.position - d_l * he[axis];
    let heading = (-inward.y).atan2(-inward.x);
    (1..=n)
        .map(|i| Viewpoint {
            position: start + d_l * ((2 * i - 1) as f64 * length / (2.0 * n as f64)) + inward * offset,
            heading,
            target: long.id,
            section: i - 1,
        })
        .collect()
}

/// Placement plus feasibility: viewpoints in collision get nudged away from
/// the wall in 0.1 m increments up to 0.5 m, else dropped.
pub fn feasible_viewpoints(
    long: &Vertex,
    world: &VoxelWorld,
    settings: &PlannerSettings,
) -> Vec<Viewpoint> {
    let inward = inward_normal(world, long);
    place_viewpoints(long, &settings.camera, &inward)
        .into_iter()
        .filter_map(|mut vp| {
            for step in 0..=5 {
                let p = vp.position + inward * (0.1 * step as f64);
                if world.known_free_point(&p, settings.robot_radius, false) {
                    vp.position = p;
                    return Some(vp);
                }
            }
            None
        })
        .collect()
}

/// Inspection stops for one longitudinal that still have something to show.
pub fn compute_viewpoints(long: &Vertex, world: &VoxelWorld, settings: &PlannerSettings) -> Vec<Viewpoint> {
    feasible_viewpoints(long, world, settings)
        .into_iter()
        .filter(|vp| !world.visible_unseen_semantic(&vp.config(), &settings.camera).is_empty())
        .collect()
}

/// An inspection tour: viewpoints in visiting order and the collision-free
/// leg to each from its predecessor.
#[derive(Debug, Clone)]
pub struct SiPlan {
    pub order: Vec<Viewpoint>,
    pub legs: Vec<Vec<PathPoint>>,
    pub cost: f64,
}

struct Roadmap {
    nodes: Vec<Vector3<f64>>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Roadmap {
    fn connect(
        &mut self,
        world: &VoxelWorld,
        i: usize,
        k: usize,
        r: f64,
        blocked: &[EntryAperture],
        allow_unknown: bool,
    ) {
        let mut order: Vec<usize> = (0..self.nodes.len()).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            let da = (self.nodes[a] - self.nodes[i]).norm();
            let db = (self.nodes[b] - self.nodes[i]).norm();
            da.total_cmp(&db)
        });
        for &j in order.iter().take(k) {
            if self.adjacency[i].iter().any(|&(m, _)| m == j) {
                continue;
            }
            if !crosses_aperture(blocked, &self.nodes[i], &self.nodes[j])
                && world.known_free_segment(&self.nodes[i], &self.nodes[j], r, allow_unknown)
            {
                let d = (self.nodes[j] - self.nodes[i]).norm();
                self.adjacency[i].push((j, d));
                self.adjacency[j].push((i, d));
            }
        }
    }
}

/// Builds a roadmap over the terminals, first with direct edges, then by
/// sprinkling uniform free-space samples (up to the cap) until every
/// terminal joins terminal 0's component or the budget runs out.
fn build_roadmap(
    world: &VoxelWorld,
    terminals: &[Vector3<f64>],
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
    allow_unknown: bool,
) -> Roadmap {
    let r = settings.robot_radius;
    let mut map = Roadmap {
        nodes: terminals.to_vec(),
        adjacency: vec![Vec::new(); terminals.len()],
    };
    for i in 0..terminals.len() {
        for j in i + 1..terminals.len() {
            if !crosses_aperture(blocked, &terminals[i], &terminals[j])
                && world.known_free_segment(&terminals[i], &terminals[j], r, allow_unknown)
            {
                let d = (terminals[j] - terminals[i]).norm();
                map.adjacency[i].push((j, d));
                map.adjacency[j].push((i, d));
            }
        }
    }
    let connected = |map: &Roadmap| {
        let (dist, _) = dijkstra(&map.adjacency, 0);
        (0..terminals.len()).all(|t| dist[t].is_finite())
    };
    if connected(&map) {
        return map;
    }
    let bounds = world.bounds();
    let (bmin, bmax) = (bounds.min(), bounds.max());
    let mut lo = Vector3::zeros();
    let mut hi = Vector3::zeros();
    for a in 0..3 {
        let t_lo = terminals.iter().map(|t| t[a]).fold(f64::INFINITY, f64::min);
        let t_hi = terminals.iter().map(|t| t[a]).fold(f64::NEG_INFINITY, f64::max);
        lo[a] = (t_lo - 2.0).max(bmin[a]);
        hi[a] = (t_hi + 2.0).min(bmax[a]);
        if hi[a] - lo[a] < 1e-6 {
            hi[a] = lo[a] + 1e-6;
        }
    }
    let mut added = 0;
    while added < settings.roadmap_samples {
        for _ in 0..50 {
            if added >= settings.roadmap_samples {
                break;
            }
            let p = Vector3::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            );
            added += 1;
            if !world.known_free_point(&p, r, allow_unknown) {
                continue;
            }
            map.nodes.push(p);
            map.adjacency.push(Vec::new());
            let idx = map.nodes.len() - 1;
            map.connect(world, idx, settings.k_nearest, r, blocked, allow_unknown);
        }
        if connected(&map) {
            break;
        }
    }
    map
}

/// Open-tour order over the cost matrix: nearest-neighbor construction from
/// the start (index 0) improved by 2-opt segment reversals to a local
/// optimum. Returns visit order over matrix indices, starting with 0.
fn open_tour(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    let mut tour = vec![0usize];
    let mut left: BTreeSet<usize> = (1..n).collect();
    while !left.is_empty() {
        let cur = *tour.last().unwrap();
        let next = *left
            .iter()
            .min_by(|&&a, &&b| costs[cur][a].total_cmp(&costs[cur][b]))
            .unwrap();
        left.remove(&next);
        tour.push(next);
    }
    let m = tour.len() - 1;
    loop {
        let mut improved = false;
        for i in 1..=m {
            for j in i + 1..=m {
                let mut delta = costs[tour[i - 1]][tour[j]] - costs[tour[i - 1]][tour[i]];
                if j < m {
                    delta += costs[tour[i]][tour[j + 1]] - costs[tour[j]][tour[j + 1]];
                }
                if delta < -1e-12 {
                    tour[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    tour
}

/// Plans the inspection tour over the viewpoints from the robot's position:
/// roadmap construction, pairwise shortest-path costs, nearest-neighbor +
/// 2-opt visiting order, and the concrete leg paths. Viewpoints the roadmap
/// cannot reach are dropped.
pub fn si_plan(
    viewpoints: &[Viewpoint],
    world: &VoxelWorld,
    xi: &RobotConfiguration,
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
) -> Result<SiPlan> {
    if viewpoints.is_empty() {
        return Err(Error::NoViewpoints);
    }
    let mut terminals = vec![xi.position];
    terminals.extend(viewpoints.iter().map(|v| v.position));
    let map = build_roadmap(world, &terminals, settings, blocked, rng, false);
    let mut searches = Vec::with_capacity(terminals.len());
    for t in 0..terminals.len() {
        searches.push(dijkstra(&map.adjacency, t));
    }
    let reachable: Vec<usize> = (1..terminals.len())
        .filter(|&t| searches[0].0[t].is_finite())
        .collect();
    if reachable.is_empty() {
        return Err(Error::NoViewpoints);
    }
    // Cost matrix over [robot] + reachable viewpoints.
    let ids: Vec<usize> = std::iter::once(0).chain(reachable.iter().copied()).collect();
    let costs: Vec<Vec<f64>> = ids
        .iter()
        .map(|&a| ids.iter().map(|&b| searches[a].0[b]).collect())
        .collect();
    let tour = open_tour(&costs);
    let mut order = Vec::new();
    let mut legs = Vec::new();
    let mut cost = 0.0;
    for w in tour.windows(2) {
        let (from, to) = (ids[w[0]], ids[w[1]]);
        cost += searches[from].0[to];
        let node_path = tree_path(&searches[from].1, to);
        let points: Vec<Vector3<f64>> = node_path.iter().map(|&i| map.nodes[i]).collect();
        let vp = viewpoints[to - 1].clone();
        legs.push(nodes_to_path(&points, xi.yaw, Some(vp.heading)));
        order.push(vp);
    }
    Ok(SiPlan { order, legs, cost })
}

/// Shortest collision-free path between two points: direct when the straight
/// segment is clear, otherwise via a sampled roadmap.
pub fn point_to_point(
    world: &VoxelWorld,
    from: &Vector3<f64>,
    to: &Vector3<f64>,
    start_yaw: f64,
    final_heading: Option<f64>,
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
    allow_unknown: bool,
) -> Result<Vec<PathPoint>> {
    if !crosses_aperture(blocked, from, to)
        && world.known_free_segment(from, to, settings.robot_radius, allow_unknown)
    {
        return Ok(nodes_to_path(&[*from, *to], start_yaw, final_heading));
    }
    let map = build_roadmap(world, &[*from, *to], settings, blocked, rng, allow_unknown);
    let (dist, parent) = dijkstra(&map.adjacency, 0);
    if !dist[1].is_finite() {
        return Err(Error::NoGraph);
    }
    let node_path = tree_path(&parent, 1);
    let points: Vec<Vector3<f64>> = node_path.iter().map(|&i| map.nodes[i]).collect();
    Ok(nodes_to_path(&points, start_yaw, final_heading))
}

/// One stop of an opportunistic tour: the transformed viewpoint and the
/// predicted box its target should occupy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OiStop {
    pub viewpoint: Viewpoint,
    pub target_box: Aabb,
}

/// Progress through an opportunistic-inspection tour.
#[derive(Debug, Clone, Default)]
pub struct OiState {
    pub tour: Vec<OiStop>,
    pub index: usize,
    pub explore_steps_used: usize,
    pub skipped: Vec<u64>,
}

/// Advances the opportunistic tour: plan straight to the next viewpoint when
/// its target is already detected where predicted; otherwise spend bounded
/// goal-directed exploration steps, then skip the target for good.
pub fn oi_step(
    world: &VoxelWorld,
    oi: &mut OiState,
    xi: &RobotConfiguration,
    detected: &[Aabb],
    settings: &PlannerSettings,
    blocked: &[EntryAperture],
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    loop {
        let Some(stop) = oi.tour.get(oi.index) else {
            return Ok(StepOutcome::CompartmentDone);
        };
        let found = detected.iter().any(|d| overlap_test(d, &stop.target_box, settings.gain.kappa));
        if found {
            let path = point_to_point(
                world,
                &xi.position,
                &stop.viewpoint.position,
                xi.yaw,
                Some(stop.viewpoint.heading),
                settings,
                blocked,
                rng,
                false,
            )?;
            oi.index += 1;
            oi.explore_steps_used = 0;
            return Ok(StepOutcome::Path(path));
        }
        if oi.explore_steps_used < settings.gain.max_oi_explore_steps {
            oi.explore_steps_used += 1;
            let delta = stop.viewpoint.position - xi.position;
            let dir = if delta.norm() > 1e-9 { delta.normalize() } else { Vector3::x() };
            match explore_step(world, xi, &dir, GainKind::Volume, settings, blocked, rng)? {
                StepOutcome::Path(p) => return Ok(StepOutcome::Path(p)),
                // Nothing left to explore toward this target: fall through to
                // the skip below.
                _ => {}
            }
        }
        oi.skipped.push(stop.viewpoint.target);
        oi.index += 1;
        oi.explore_steps_used = 0;
    }
}

/// A viewpoint actually visited, with its target's box at visit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredStop {
    pub viewpoint: Viewpoint,
    pub target_box: Aabb,
}

/// Prediction currently steering the mission.
#[derive(Debug, Clone)]
pub struct ActivePrediction {
    pub candidate: PredictionCandidate,
    /// Predicted longitudinal boxes, for the overlap ratio and gain mask.
    pub predicted_longs: Vec<Aabb>,
}

/// A prediction the mission committed to, for the run log.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionRecord {
    pub tick: usize,
    /// Segment the prediction steered (the compartment being entered).
    pub segment: usize,
    pub candidate: PredictionCandidate,
}

/// Per-compartment slice of the mission record.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentRecord {
    pub sequence: usize,
    pub compartment: Option<u64>,
    /// Behaviors used, in first-activation order.
    pub modes: Vec<Mode>,
    /// Whether the segment was entered under an active prediction.
    pub predictive: bool,
    /// Travel plus sensing-dwell time, seconds.
    pub time: f64,
    pub path_length: f64,
    pub ticks: usize,
}

/// In-flight inspection tour.
#[derive(Debug, Clone)]
pub struct SiExec {
    pub remaining: Vec<Viewpoint>,
    pub legs: Vec<Vec<PathPoint>>,
}

/// Everything the mission loop mutates.
pub struct MissionState {
    pub mode: Mode,
    pub robot: RobotConfiguration,
    pub explore_dir: Vector3<f64>,
    pub published: SceneGraph,
    pub tracker: DetectionTracker,
    pub rng: ChaCha8Rng,
    pub traversed: BTreeSet<u64>,
    pub tours: BTreeMap<u64, Vec<StoredStop>>,
    pub current_tour: Vec<StoredStop>,
    pub si: Option<SiExec>,
    pub oi: Option<OiState>,
    pub prediction: Option<ActivePrediction>,
    pub segments: Vec<SegmentRecord>,
    /// Compartments already wrapped up; quota counts distinct entries.
    pub completed_comps: BTreeSet<u64>,
    pub quota: usize,
    pub mission_mode: MissionMode,
    pub ticks: usize,
    pub skipped_targets: Vec<u64>,
    pub trace: Vec<PathPoint>,
    pub predictions: Vec<PredictionRecord>,
}

impl MissionState {
    pub fn new(
        start: RobotConfiguration,
        num_objects: usize,
        seed: u64,
        quota: usize,
        mission_mode: MissionMode,
        detection: &DetectionParams,
    ) -> Self {
        Self {
            mode: Mode::Ve,
            robot: start,
            explore_dir: Vector3::x(),
            published: SceneGraph::new(),
            tracker: DetectionTracker::new(num_objects, seed ^ 0x5eed)
                .with_h_min(detection.h_min)
                .with_default_threshold(detection.publish_threshold)
                .with_jitter(detection.sigma_pose),
            rng: ChaCha8Rng::seed_from_u64(seed),
            traversed: BTreeSet::new(),
            tours: BTreeMap::new(),
            current_tour: Vec::new(),
            si: None,
            oi: None,
            prediction: None,
            segments: vec![SegmentRecord {
                sequence: 0,
                compartment: None,
                modes: Vec::new(),
                predictive: false,
                time: 0.0,
                path_length: 0.0,
                ticks: 0,
            }],
            completed_comps: BTreeSet::new(),
            quota,
            mission_mode,
            ticks: 0,
            skipped_targets: Vec::new(),
            trace: Vec::new(),
            predictions: Vec::new(),
        }
    }
}

/// Published compartment whose box contains the robot.
pub fn current_compartment(published: &SceneGraph, robot: &RobotConfiguration) -> Option<u64> {
    published
        .vertices()
        .iter()
        .find(|v| {
            v.label == LABEL_COMPARTMENT && {
                let d = robot.position - v.pose.position;
                (0..3).all(|a| d[a].abs() <= v.half_extents[a] + 1e-9)
            }
        })
        .map(|v| v.id)
}

/// Published longitudinals mounted on walls bounding the compartment.
fn compartment_longs(published: &SceneGraph, comp: u64) -> Vec<u64> {
    let walls: BTreeSet<u64> = published
        .edges()
        .iter()
        .filter(|e| e.label == EDGE_BOUNDS && e.dst == comp)
        .map(|e| e.src)
        .collect();
    published
        .edges()
        .iter()
        .filter(|e| e.label == EDGE_MOUNTED_ON && walls.contains(&e.dst))
        .map(|e| e.src)
        .filter(|id| published.vertex(*id).is_some_and(|v| v.label == LABEL_LONGITUDINAL))
        .collect()
}

fn published_long_boxes(published: &SceneGraph) -> Vec<Aabb> {
    published
        .vertices()
        .iter()
        .filter(|v| v.label == LABEL_LONGITUDINAL)
        .map(|v| v.bbox())
        .collect()
}

/// Viewpoint set for the compartment with redundancy pruning: stops already
/// in the tour keep their order (with refreshed placements), new placements
/// append after, and each stop must claim at least one unseen semantic voxel
/// not claimed by an earlier stop to survive.
fn surviving_viewpoints(
    world: &VoxelWorld,
    published: &SceneGraph,
    comp: u64,
    tour_first: &[Viewpoint],
    settings: &PlannerSettings,
) -> Vec<Viewpoint> {
    let mut candidates = Vec::new();
    for long_id in compartment_longs(published, comp) {
        if let Some(v) = published.vertex(long_id) {
            candidates.extend(feasible_viewpoints(v, world, settings));
        }
    }
    let mut ordered: Vec<Viewpoint> = Vec::new();
    for vp in tour_first {
        if let Some(c) = candidates.iter().find(|c| c.target == vp.target && c.section == vp.section) {
            ordered.push(c.clone());
        }
    }
    for c in candidates {
        if !ordered.iter().any(|v| v.target == c.target && v.section == c.section) {
            ordered.push(c);
        }
    }
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    ordered.retain(|vp| {
        let fresh: Vec<usize> = world
            .visible_unseen_semantic(&vp.config(), &settings.camera)
            .into_iter()
            .filter(|i| !claimed.contains(i))
            .collect();
        if fresh.is_empty() {
            false
        } else {
            claimed.extend(fresh);
            true
        }
    });
    ordered
}

fn path_length(path: &[PathPoint]) -> f64 {
    path.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum()
}

fn note_mode(state: &mut MissionState, mode: Mode) {
    let seg = state.segments.last_mut().expect("segment exists");
    if seg.modes.last() != Some(&mode) {
        seg.modes.push(mode);
    }
}

/// Flies a path, folds every sensing stop into the published graph, and
/// charges travel plus dwell to the current segment.
fn execute(
    world: &mut VoxelWorld,
    gt: &SceneGraph,
    state: &mut MissionState,
    settings: &PlannerSettings,
    path: &[PathPoint],
) -> Result<()> {
    let (end, travel, events) = world.execute_path(
        path,
        settings.v_max,
        settings.sense_period,
        &settings.depth,
        &settings.camera,
        settings.robot_radius,
    )?;
    for ev in &events {
        state
            .tracker
            .update_detections(&ev.hits, world.objects(), gt, &mut state.published)?;
    }
    state.robot = end;
    let seg = state.segments.last_mut().expect("segment exists");
    seg.time += travel + events.len() as f64 * settings.dwell;
    seg.path_length += path_length(path);
    for p in path {
        if state.trace.last() != Some(p) {
            state.trace.push(*p);
        }
    }
    Ok(())
}

fn update_explore_dir(state: &mut MissionState, path: &[PathPoint]) {
    if let (Some(first), Some(last)) = (path.first(), path.last()) {
        let d = last.position - first.position;
        if d.norm() > 1e-9 {
            state.explore_dir = d.normalize();
        }
    }
}

/// Approach and exit waypoints for passing through a manhole, 0.6 m out on
/// each side along its degenerate (thickness) axis.
pub fn traversal_waypoints(manhole: &Vertex, from: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let he = manhole.half_extents;
    let axis = if he.x <= he.y && he.x <= he.z {
        0
    } else if he.y <= he.z {
        1
    } else {
        2
    };
    let mut dir = Vector3::zeros();
    dir[axis] = 1.0;
    let dir = manhole.pose.rotation * dir;
    let side = if (from - manhole.pose.position).dot(&dir) >= 0.0 { 1.0 } else { -1.0 };
    let near = manhole.pose.position + dir * (0.6 * side);
    let far = manhole.pose.position - dir * (0.6 * side);
    (near, far)
}

/// Plans the approach leg and the crossing leg through a manhole, or fails
/// when either is out of bounds, blocked, or unreachable.
fn plan_traversal(
    world: &VoxelWorld,
    state: &mut MissionState,
    settings: &PlannerSettings,
    manhole: &Vertex,
) -> Result<(Vec<PathPoint>, Vec<PathPoint>)> {
    let (near, far) = traversal_waypoints(manhole, &state.robot.position);
    let r = settings.robot_radius;
    if !world.known_free_point(&near, r, false) || !world.known_free_point(&far, r, true) {
        return Err(Error::NoGraph);
    }
    if !world.known_free_segment(&near, &far, r, true) {
        return Err(Error::NoGraph);
    }
    let crossing_yaw = {
        let d = far - near;
        if d.xy().norm() > 1e-9 { d.y.atan2(d.x) } else { state.robot.yaw }
    };
    let blocked = entry_apertures(&state.published, settings);
    let approach = point_to_point(
        world,
        &state.robot.position,
        &near,
        state.robot.yaw,
        Some(crossing_yaw),
        settings,
        &blocked,
        &mut state.rng,
        false,
    )?;
    let crossing = nodes_to_path(&[near, far], crossing_yaw, Some(crossing_yaw));
    Ok((approach, crossing))
}

fn mine_and_predict(
    state: &MissionState,
    settings: &PlannerSettings,
) -> Result<Option<(crate::compress::Hierarchy, Vec<PredictionCandidate>)>> {
    let hierarchy = build_hierarchy(&state.published, &settings.mining, settings.max_levels)?;
    if hierarchy.is_empty() {
        return Ok(None);
    }
    let candidates = predict(&hierarchy, &settings.entry_classes, settings.phi, settings.gain.kappa)?;
    if candidates.is_empty() {
        return Ok(None);
    }
    Ok(Some((hierarchy, candidates)))
}

fn start_segment(state: &mut MissionState) {
    let sequence = state.segments.len();
    state.segments.push(SegmentRecord {
        sequence,
        compartment: None,
        modes: Vec::new(),
        predictive: false,
        time: 0.0,
        path_length: 0.0,
        ticks: 0,
    });
    state.current_tour = Vec::new();
}

/// Wraps up the current compartment: file its record and tour, stop at the
/// quota, otherwise pick the next manhole (prediction-first for predictive
/// missions) and fly through it.
fn complete_compartment(
    world: &mut VoxelWorld,
    gt: &SceneGraph,
    state: &mut MissionState,
    settings: &PlannerSettings,
) -> Result<()> {
    let comp = current_compartment(&state.published, &state.robot);
    {
        let seg = state.segments.last_mut().expect("segment exists");
        seg.compartment = comp;
    }
    if let Some(c) = comp {
        // A compartment revisited through a second opening on an already
        // crossed bulkhead counts once; its first tour stays authoritative.
        if state.completed_comps.insert(c) {
            let tour = std::mem::take(&mut state.current_tour);
            if !tour.is_empty() {
                state.tours.insert(c, tour);
            }
        } else {
            state.current_tour.clear();
        }
    }
    if state.completed_comps.len() >= state.quota {
        state.mode = Mode::Done;
        return Ok(());
    }

    // Prediction-guided traversal first, for predictive missions.
    if state.mission_mode != MissionMode::Baseline {
        if let Some((hierarchy, candidates)) = mine_and_predict(state, settings)? {
            for cand in &candidates {
                let Some(manhole) = state.published.vertex(cand.anchor_source) else { continue };
                if manhole.label != LABEL_MANHOLE || state.traversed.contains(&manhole.id) {
                    continue;
                }
                let manhole = manhole.clone();
                let Ok((approach, crossing)) = plan_traversal(world, state, settings, &manhole) else {
                    continue;
                };
                let expanded = expand_candidate(&hierarchy, cand);
                let long_boxes: Vec<Aabb> = expanded
                    .iter()
                    .filter(|p| p.label == LABEL_LONGITUDINAL)
                    .map(|p| p.bbox)
                    .collect();
                let rep_comp = expanded
                    .iter()
                    .find(|p| p.label == LABEL_COMPARTMENT)
                    .map(|p| p.source);
                start_segment(state);
                state.segments.last_mut().unwrap().predictive = true;
                state.predictions.push(PredictionRecord {
                    tick: state.ticks,
                    segment: state.segments.len() - 1,
                    candidate: cand.clone(),
                });
                note_mode(state, Mode::TraverseManhole);
                execute(world, gt, state, settings, &approach)?;
                execute(world, gt, state, settings, &crossing)?;
                state.traversed.insert(manhole.id);
                world.set_predicted(&long_boxes);
                let stored = rep_comp.and_then(|c| state.tours.get(&c));
                if state.mission_mode == MissionMode::PpOi {
                    if let Some(stops) = stored {
                        let t = &cand.transform;
                        let tour: Vec<OiStop> = stops
                            .iter()
                            .map(|s| {
                                let heading_vec = Vector3::new(
                                    s.viewpoint.heading.cos(),
                                    s.viewpoint.heading.sin(),
                                    0.0,
                                );
                                let rotated = t.rotation * heading_vec;
                                OiStop {
                                    viewpoint: Viewpoint {
                                        position: t.apply(&s.viewpoint.position),
                                        heading: rotated.y.atan2(rotated.x),
                                        target: s.viewpoint.target,
                                        section: s.viewpoint.section,
                                    },
                                    target_box: t.apply_aabb(&s.target_box),
                                }
                            })
                            .collect();
                        state.oi = Some(OiState { tour, ..OiState::default() });
                        state.mode = Mode::PpOi;
                    } else {
                        // No prior tour to transform: fall back to assisted
                        // exploration in the new compartment.
                        state.mode = Mode::PpAe;
                    }
                } else {
                    state.mode = Mode::PpAe;
                }
                state.prediction = Some(ActivePrediction {
                    candidate: cand.clone(),
                    predicted_longs: long_boxes,
                });
                return Ok(());
            }
        }
    }

    // Fallback: closest untraversed manhole, plain exploration beyond it.
    // Openings whose far side lands in a compartment that is already wrapped
    // up would only lead the robot back over finished ground, so they are
    // passed over.
    let mut manholes: Vec<Vertex> = state
        .published
        .vertices()
        .iter()
        .filter(|v| v.label == LABEL_MANHOLE && !state.traversed.contains(&v.id))
        .filter(|v| {
            let (_, far) = traversal_waypoints(v, &state.robot.position);
            current_compartment(&state.published, &RobotConfiguration::new(far, 0.0))
                .is_none_or(|c| !state.completed_comps.contains(&c))
        })
        .cloned()
        .collect();
    manholes.sort_by(|a, b| {
        let da = (a.pose.position - state.robot.position).norm();
        let db = (b.pose.position - state.robot.position).norm();
        da.total_cmp(&db).then(a.id.cmp(&b.id))
    });
    for manhole in manholes {
        let Ok((approach, crossing)) = plan_traversal(world, state, settings, &manhole) else {
            continue;
        };
        start_segment(state);
        note_mode(state, Mode::TraverseManhole);
        execute(world, gt, state, settings, &approach)?;
        execute(world, gt, state, settings, &crossing)?;
        state.traversed.insert(manhole.id);
        world.set_predicted(&[]);
        state.prediction = None;
        state.mode = Mode::Ve;
        return Ok(());
    }
    Err(Error::MissionStuck)
}

/// Switches to inspection of the current compartment; completes the
/// compartment immediately when nothing needs viewing.
fn enter_si(
    world: &mut VoxelWorld,
    gt: &SceneGraph,
    state: &mut MissionState,
    settings: &PlannerSettings,
) -> Result<()> {
    let Some(comp) = current_compartment(&state.published, &state.robot) else {
        return complete_compartment(world, gt, state, settings);
    };
    let vps = surviving_viewpoints(world, &state.published, comp, &[], settings);
    if vps.is_empty() {
        return complete_compartment(world, gt, state, settings);
    }
    let blocked = entry_apertures(&state.published, settings);
    let plan = si_plan(&vps, world, &state.robot, settings, &blocked, &mut state.rng)?;
    state.si = Some(SiExec { remaining: plan.order, legs: plan.legs });
    state.mode = Mode::Si;
    Ok(())
}

const TICK_LIMIT: usize = 5000;

/// Advances the mission by one action. Returns true when the mission is done.
pub fn mission_tick(
    world: &mut VoxelWorld,
    gt: &SceneGraph,
    state: &mut MissionState,
    settings: &PlannerSettings,
) -> Result<bool> {
    state.ticks += 1;
    state.segments.last_mut().expect("segment exists").ticks += 1;
    if state.ticks > TICK_LIMIT {
        return Err(Error::MissionStuck);
    }
    if std::env::var_os("SSGPLAN_TRACE_TICKS").is_some() {
        eprintln!(
            "DEBUG tick {} mode {:?} robot ({:.2},{:.2},{:.2}) published {}v segs {}",
            state.ticks,
            state.mode,
            state.robot.position.x,
            state.robot.position.y,
            state.robot.position.z,
            state.published.vertices().len(),
            state.segments.len()
        );
    }
    if state.mode != Mode::Done {
        note_mode(state, state.mode);
    }
    match state.mode {
        Mode::Done => return Ok(true),
        Mode::Ve => {
            let blocked = entry_apertures(&state.published, settings);
            match ve_step(world, &state.robot, &state.explore_dir, settings, &blocked, &mut state.rng)? {
                StepOutcome::Path(p) => {
                    execute(world, gt, state, settings, &p)?;
                    update_explore_dir(state, &p);
                }
                _ => enter_si(world, gt, state, settings)?,
            }
        }
        Mode::PpAe => {
            let alpha = state
                .prediction
                .as_ref()
                .map(|p| overlap_ratio(&published_long_boxes(&state.published), &p.predicted_longs, settings.gain.kappa))
                .unwrap_or(0.0);
            let blocked = entry_apertures(&state.published, settings);
            match ae_step(world, &state.robot, &state.explore_dir, alpha, settings, &blocked, &mut state.rng)? {
                StepOutcome::Path(p) => {
                    execute(world, gt, state, settings, &p)?;
                    update_explore_dir(state, &p);
                }
                _ => enter_si(world, gt, state, settings)?,
            }
        }
        Mode::Si => {
            let mut si = state.si.take().unwrap_or(SiExec { remaining: vec![], legs: vec![] });
            if si.remaining.is_empty() {
                complete_compartment(world, gt, state, settings)?;
            } else {
                let vp = si.remaining.remove(0);
                let leg = si.legs.remove(0);
                execute(world, gt, state, settings, &leg)?;
                if let Some(v) = state.published.vertex(vp.target) {
                    state.current_tour.push(StoredStop { viewpoint: vp.clone(), target_box: v.bbox() });
                }
                if let Some(comp) = current_compartment(&state.published, &state.robot) {
                    let fresh = surviving_viewpoints(world, &state.published, comp, &si.remaining, settings);
                    let unchanged = fresh.len() == si.remaining.len()
                        && fresh.iter().zip(&si.remaining).all(|(a, b)| {
                            a.target == b.target
                                && a.section == b.section
                                && (a.position - b.position).norm() <= settings.gain.replan_displacement
                        });
                    if !unchanged {
                        if fresh.is_empty() {
                            si = SiExec { remaining: vec![], legs: vec![] };
                        } else {
                            let blocked = entry_apertures(&state.published, settings);
                            let plan =
                                si_plan(&fresh, world, &state.robot, settings, &blocked, &mut state.rng)?;
                            si = SiExec { remaining: plan.order, legs: plan.legs };
                        }
                    }
                }
                state.si = Some(si);
            }
        }
        Mode::PpOi => {
            let mut oi = state.oi.take().unwrap_or_default();
            let detected = published_long_boxes(&state.published);
            let before = oi.index;
            let blocked = entry_apertures(&state.published, settings);
            let outcome =
                oi_step(world, &mut oi, &state.robot, &detected, settings, &blocked, &mut state.rng)?;
            match outcome {
                StepOutcome::Path(p) => {
                    execute(world, gt, state, settings, &p)?;
                    update_explore_dir(state, &p);
                    if oi.index > before {
                        // The executed path was a tour leg, not exploration.
                        let stop = oi.tour[oi.index - 1].clone();
                        state
                            .current_tour
                            .push(StoredStop { viewpoint: stop.viewpoint, target_box: stop.target_box });
                    }
                    state.oi = Some(oi);
                }
                StepOutcome::CompartmentDone => {
                    state.skipped_targets.extend(oi.skipped.iter().copied());
                    state.oi = None;
                    complete_compartment(world, gt, state, settings)?;
                }
                _ => unreachable!("opportunistic step returns paths or completion"),
            }
        }
        Mode::TraverseManhole => {
            // Traversal happens inside compartment completion; reaching this
            // arm means the state was constructed inconsistently.
            return Err(Error::MissionStuck);
        }
    }
    Ok(state.mode == Mode::Done)
}

/// Final mission record.
#[derive(Debug)]
pub struct MissionReport {
    pub segments: Vec<SegmentRecord>,
    pub total_time: f64,
    pub total_path_length: f64,
    pub coverage: f64,
    pub ticks: usize,
    pub published: SceneGraph,
    pub skipped_targets: Vec<u64>,
    pub trace: Vec<PathPoint>,
    pub predictions: Vec<PredictionRecord>,
}

/// Runs a full mission from `start` until the compartment quota is met.
pub fn run_mission(
    world: &mut VoxelWorld,
    gt: &SceneGraph,
    start: RobotConfiguration,
    settings: &PlannerSettings,
    mission_mode: MissionMode,
    quota: usize,
    seed: u64,
) -> Result<MissionReport> {
    settings.gain.validate()?;
    settings.detection.validate()?;
    if quota == 0 {
        return Err(Error::InvalidSpec("compartment quota must be positive".into()));
    }
    let mut state =
        MissionState::new(start, world.objects().len(), seed, quota, mission_mode, &settings.detection);
    // Stationary sweeps from the start pose before any planning: enough scans
    // for nearby structure (openings in particular) to cross the publication
    // threshold, so the first plan already knows where the no-fly zones are.
    for _ in 0..settings.detection.publish_threshold {
        execute(world, gt, &mut state, settings, &[PathPoint { position: start.position, yaw: start.yaw }])?;
    }
    loop {
        if mission_tick(world, gt, &mut state, settings)? {
            break;
        }
    }
    // The final segment may have never resolved its compartment (early Done).
    if let Some(seg) = state.segments.last_mut() {
        if seg.compartment.is_none() {
            seg.compartment = current_compartment(&state.published, &state.robot);
        }
    }
    Ok(MissionReport {
        total_time: state.segments.iter().map(|s| s.time).sum(),
        total_path_length: state.segments.iter().map(|s| s.path_length).sum(),
        coverage: world.coverage(),
        ticks: state.ticks,
        segments: state.segments,
        published: state.published,
        skipped_targets: state.skipped_targets,
        trace: state.trace,
        predictions: state.predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::world::{generate_tank, CellState, TankSpec};

    fn fast_settings() -> PlannerSettings {
        PlannerSettings {
            depth: SensorModel {
                angular_res: 6.0_f64.to_radians(),
                ..SensorModel::default_depth()
            },
            local_samples: 60,
            ..PlannerSettings::default()
        }
    }

    #[test]
    fn gain_params_reject_out_of_range() {
        assert!(GainParams::default().validate().is_ok());
        assert!(GainParams { alpha_thr: 1.5, ..GainParams::default() }.validate().is_err());
        assert!(GainParams { mu: -0.1, ..GainParams::default() }.validate().is_err());
    }

    #[test]
    fn blended_gain_identities() {
        let cases = [(120.0, 30.0), (0.0, 0.0), (77.0, 77.0), (5.0, 1.0)];
        for (ve, s) in cases {
            assert_eq!(ae_gain(ve, s, 0.0, 0.2), ve + 0.2 * s);
            assert_eq!(ae_gain(ve, s, 1.0, 0.2), 1.2 * s);
        }
    }

    #[test]
    fn viewpoint_formula_quantities() {
        let lv = viewpoint_spacing(3.0, std::f64::consts::FRAC_PI_2);
        let off = viewpoint_offset(3.0, std::f64::consts::FRAC_PI_2);
        let s45 = std::f64::consts::FRAC_PI_4;
        assert!((lv - 6.0 * s45.sin()).abs() < 1e-12);
        assert!((off - 3.0 * s45.cos()).abs() < 1e-12);
    }

    #[test]
    fn short_member_gets_one_centered_viewpoint() {
        let long = Vertex::new(
            1,
            LABEL_LONGITUDINAL,
            Pose::at(Vector3::new(5.0, 1.0, 2.0)),
            Vector3::new(2.0, 0.2, 0.2),
        );
        let cam = SensorModel::default_camera();
        let vps = place_viewpoints(&long, &cam, &Vector3::y());
        assert_eq!(vps.len(), 1);
        let expect = Vector3::new(5.0, 1.0 + viewpoint_offset(3.0, cam.h_fov), 2.0);
        assert!((vps[0].position - expect).norm() < 1e-12);
        assert!((vps[0].heading - (-std::f64::consts::FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn ten_meter_member_gets_three_sections() {
        let long = Vertex::new(
            1,
            LABEL_LONGITUDINAL,
            Pose::at(Vector3::new(5.0, 1.0, 2.0)),
            Vector3::new(5.0, 0.2, 0.2),
        );
        let cam = SensorModel::default_camera();
        let vps = place_viewpoints(&long, &cam, &Vector3::y());
        assert_eq!(vps.len(), 3);
        // Centered sections: x at ell/6, ell/2, 5 ell/6 from the near end.
        for (i, vp) in vps.iter().enumerate() {
            let x = (2 * (i + 1) - 1) as f64 * 10.0 / 6.0;
            assert!((vp.position.x - x).abs() < 1e-12);
            assert_eq!(vp.section, i);
        }
        let gap = vps[1].position.x - vps[0].position.x;
        assert!((gap - 10.0 / 3.0).abs() < 1e-12);
    }

    fn two_branch_graph(gain_a: f64, gain_b: f64) -> LocalGraph {
        let node = |x: f64, y: f64| RobotConfiguration::new(Vector3::new(x, y, 0.0), 0.0);
        LocalGraph {
            nodes: vec![node(0.0, 0.0), node(2.0, 0.0), node(0.0, 2.0)],
            adjacency: vec![
                vec![(1, 2.0), (2, 2.0)],
                vec![(0, 2.0)],
                vec![(0, 2.0)],
            ],
            gains: vec![0.0, gain_a, gain_b],
        }
    }

    #[test]
    fn aligned_path_wins_ties() {
        let g = two_branch_graph(100.0, 100.0);
        let p = select_exploration_path(&g, &Vector3::x(), &GainParams::default()).unwrap();
        assert_eq!(p, vec![0, 1]);
        // With the reference rotated to +y, the other branch wins.
        let p = select_exploration_path(&g, &Vector3::y(), &GainParams::default()).unwrap();
        assert_eq!(p, vec![0, 2]);
    }

    #[test]
    fn path_choice_is_scale_invariant() {
        let params = GainParams::default();
        let base = two_branch_graph(80.0, 95.0);
        let pick = select_exploration_path(&base, &Vector3::x(), &params).unwrap();
        let mut scaled = base.clone();
        for g in &mut scaled.gains {
            *g *= 37.5;
        }
        assert_eq!(select_exploration_path(&scaled, &Vector3::x(), &params).unwrap(), pick);
    }

    #[test]
    fn fully_known_world_completes_exploration() {
        let mut w = VoxelWorld::walled_room(Vector3::new(6.0, 6.0, 4.0), 0.2);
        w.mark_all_free();
        let xi = RobotConfiguration::new(Vector3::new(3.0, 3.0, 2.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = ve_step(&w, &xi, &Vector3::x(), &fast_settings(), &[], &mut rng).unwrap();
        assert!(matches!(out, StepOutcome::ExplorationComplete));
    }

    #[test]
    fn corridor_steps_head_into_the_unknown() {
        for seed in 0..50 {
            let mut w = VoxelWorld::walled_room(Vector3::new(12.0, 3.0, 3.0), 0.2);
            let xi = RobotConfiguration::new(Vector3::new(1.5, 1.5, 1.5), 0.0);
            let depth = SensorModel {
                range: 4.0,
                angular_res: 6.0_f64.to_radians(),
                ..SensorModel::default_depth()
            };
            w.sense_depth(&xi, &depth);
            let settings = PlannerSettings { depth, ..fast_settings() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut graph = build_local_graph(&w, &xi, &settings, &[], &mut rng).unwrap();
            fill_gains(&w, &mut graph, GainKind::Volume, &settings, &[]);
            let path = select_exploration_path(&graph, &Vector3::x(), &settings.gain).unwrap();
            let terminal = *path.last().unwrap();
            // The chosen terminal out-gains the median sampled vertex and
            // sits in the unexplored +x half.
            let mut sorted = graph.gains.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            assert!(graph.gains[terminal] >= median, "seed {seed}");
            assert!(
                graph.nodes[terminal].position.x > xi.position.x,
                "seed {seed}: terminal {:?}",
                graph.nodes[terminal].position
            );
        }
    }

    #[test]
    fn overlap_ratio_counts_matches() {
        let unit = |x: f64| Aabb::new(Vector3::new(x, 0.0, 0.0), Vector3::new(0.5, 0.5, 0.5));
        let predicted: Vec<Aabb> = (0..8).map(|i| unit(10.0 * i as f64)).collect();
        assert_eq!(overlap_ratio(&[], &predicted, 0.5), 0.0);
        let detected: Vec<Aabb> = (0..3).map(|i| unit(10.0 * i as f64)).collect();
        assert!((overlap_ratio(&detected, &predicted, 0.5) - 0.375).abs() < 1e-12);
        let all: Vec<Aabb> = (0..8).map(|i| unit(10.0 * i as f64)).collect();
        assert_eq!(overlap_ratio(&all, &predicted, 0.5), 1.0);
    }

    #[test]
    fn ae_switches_at_threshold_without_planning() {
        let w = VoxelWorld::empty(Vector3::new(2.0, 2.0, 2.0), 0.2);
        let xi = RobotConfiguration::new(Vector3::new(1.0, 1.0, 1.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = ae_step(&w, &xi, &Vector3::x(), 0.9, &fast_settings(), &[], &mut rng).unwrap();
        assert!(matches!(out, StepOutcome::SwitchToSi));
    }

    #[test]
    fn small_tours_match_exhaustive_search() {
        for seed in 0..5 {
            let mut w = VoxelWorld::walled_room(Vector3::new(10.0, 10.0, 4.0), 0.2);
            w.mark_all_free();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let xi = RobotConfiguration::new(Vector3::new(5.0, 5.0, 2.0), 0.0);
            let vps: Vec<Viewpoint> = (0..8)
                .map(|i| Viewpoint {
                    position: Vector3::new(
                        rng.gen_range(1.0..9.0),
                        rng.gen_range(1.0..9.0),
                        rng.gen_range(1.0..3.0),
                    ),
                    heading: 0.0,
                    target: i,
                    section: 0,
                })
                .collect();
            let plan = si_plan(&vps, &w, &xi, &fast_settings(), &[], &mut rng).unwrap();
            // Exhaustive open-tour oracle over straight-line distances (all
            // segments are collision-free in an open room).
            let pts: Vec<Vector3<f64>> = vps.iter().map(|v| v.position).collect();
            let mut best = f64::INFINITY;
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            permute(&mut idx, 0, &mut |perm| {
                let mut c = (pts[perm[0]] - xi.position).norm();
                for w2 in perm.windows(2) {
                    c += (pts[w2[1]] - pts[w2[0]]).norm();
                }
                if c < best {
                    best = c;
                }
            });
            assert!(
                plan.cost <= best * 1.05 + 1e-9,
                "seed {seed}: tour {} vs optimal {best}",
                plan.cost
            );
        }
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn collinear_viewpoints_visited_in_order() {
        let mut w = VoxelWorld::walled_room(Vector3::new(12.0, 4.0, 4.0), 0.2);
        w.mark_all_free();
        let xi = RobotConfiguration::new(Vector3::new(1.0, 2.0, 2.0), 0.0);
        let vps: Vec<Viewpoint> = (0..5)
            .map(|i| Viewpoint {
                position: Vector3::new(2.0 + 2.0 * i as f64, 2.0, 2.0),
                heading: 0.0,
                target: i,
                section: 0,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = si_plan(&vps, &w, &xi, &fast_settings(), &[], &mut rng).unwrap();
        let xs: Vec<f64> = plan.order.iter().map(|v| v.position.x).collect();
        for pair in xs.windows(2) {
            assert!(pair[0] < pair[1], "order not monotone: {xs:?}");
        }
    }

    #[test]
    fn undetected_target_gets_three_steps_then_skip() {
        let mut w = VoxelWorld::walled_room(Vector3::new(10.0, 4.0, 4.0), 0.2);
        let xi = RobotConfiguration::new(Vector3::new(2.0, 2.0, 2.0), 0.0);
        let depth = SensorModel {
            range: 4.0,
            angular_res: 6.0_f64.to_radians(),
            ..SensorModel::default_depth()
        };
        w.sense_depth(&xi, &depth);
        let settings = PlannerSettings { depth, ..fast_settings() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut oi = OiState {
            tour: vec![OiStop {
                viewpoint: Viewpoint {
                    position: Vector3::new(8.0, 2.0, 2.0),
                    heading: 0.0,
                    target: 42,
                    section: 0,
                },
                target_box: Aabb::new(Vector3::new(8.5, 2.0, 2.0), Vector3::new(0.5, 0.2, 0.2)),
            }],
            ..OiState::default()
        };
        let mut paths = 0;
        loop {
            match oi_step(&w, &mut oi, &xi, &[], &settings, &[], &mut rng).unwrap() {
                StepOutcome::Path(_) => paths += 1,
                StepOutcome::CompartmentDone => break,
                _ => unreachable!(),
            }
        }
        assert_eq!(paths, 3);
        assert_eq!(oi.skipped, vec![42]);
    }

    #[test]
    fn detected_target_is_approached_directly() {
        let mut w = VoxelWorld::walled_room(Vector3::new(10.0, 4.0, 4.0), 0.2);
        w.mark_all_free();
        let xi = RobotConfiguration::new(Vector3::new(2.0, 2.0, 2.0), 0.0);
        let target_box = Aabb::new(Vector3::new(8.5, 2.0, 2.0), Vector3::new(0.5, 0.2, 0.2));
        let mut oi = OiState {
            tour: vec![OiStop {
                viewpoint: Viewpoint {
                    position: Vector3::new(8.0, 2.0, 2.0),
                    heading: 1.0,
                    target: 42,
                    section: 0,
                },
                target_box,
            }],
            ..OiState::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let detected = [target_box];
        match oi_step(&w, &mut oi, &xi, &detected, &fast_settings(), &[], &mut rng).unwrap() {
            StepOutcome::Path(p) => {
                assert!((p.last().unwrap().position - Vector3::new(8.0, 2.0, 2.0)).norm() < 1e-9);
                assert!((p.last().unwrap().yaw - 1.0).abs() < 1e-9);
            }
            _ => panic!("expected a path"),
        }
        assert_eq!(oi.index, 1);
        assert!(matches!(
            oi_step(&w, &mut oi, &xi, &detected, &fast_settings(), &[], &mut rng).unwrap(),
            StepOutcome::CompartmentDone
        ));
    }

    #[test]
    fn traversal_waypoints_straddle_the_opening() {
        let m = Vertex::new(
            9,
            LABEL_MANHOLE,
            Pose::at(Vector3::new(5.6, 3.8, 1.5)),
            Vector3::new(0.0, 0.6, 0.5),
        );
        let (near, far) = traversal_waypoints(&m, &Vector3::new(2.0, 2.0, 2.0));
        assert!((near - Vector3::new(5.0, 3.8, 1.5)).norm() < 1e-12);
        assert!((far - Vector3::new(6.2, 3.8, 1.5)).norm() < 1e-12);
        // From the other side the roles flip.
        let (near2, far2) = traversal_waypoints(&m, &Vector3::new(9.0, 2.0, 2.0));
        assert!((near2 - far).norm() < 1e-12);
        assert!((far2 - near).norm() < 1e-12);
    }

    #[test]
    fn baseline_mission_covers_one_compartment() {
        let spec = TankSpec {
            compartments: 1,
            exterior_manholes: false,
            ..TankSpec::default()
        };
        let (mut world, gt) = generate_tank(&spec).unwrap();
        let start = RobotConfiguration::new(spec.compartment_center(1), 0.0);
        let settings = fast_settings();
        let report =
            run_mission(&mut world, &gt, start, &settings, MissionMode::Baseline, 1, 7).unwrap();
        assert_eq!(report.segments.len(), 1);
        let modes = &report.segments[0].modes;
        assert!(modes.contains(&Mode::Ve), "modes: {modes:?}");
        assert!(modes.contains(&Mode::Si), "modes: {modes:?}");
        assert!(report.coverage >= 95.0, "coverage {}", report.coverage);
        assert!(report.total_time > 0.0);
    }

    #[test]
    fn quota_beyond_reachable_compartments_reports_stuck() {
        let spec = TankSpec {
            compartments: 1,
            exterior_manholes: false,
            ..TankSpec::default()
        };
        let (mut world, gt) = generate_tank(&spec).unwrap();
        let start = RobotConfiguration::new(spec.compartment_center(1), 0.0);
        let err = run_mission(&mut world, &gt, start, &fast_settings(), MissionMode::Baseline, 2, 7)
            .unwrap_err();
        assert!(matches!(err, Error::MissionStuck));
    }

    #[test]
    fn volume_gain_matches_enumeration_in_small_cube() {
        let w = VoxelWorld::empty(Vector3::new(5.0, 5.0, 5.0), 0.2);
        let xi = RobotConfiguration::new(Vector3::new(2.5, 2.5, 2.5), 0.3);
        let depth = SensorModel::default_depth();
        let gain = w.volume_gain(&xi, &depth, &[]);
        // Independent enumeration: unknown voxels whose center lies in the
        // frustum (nothing is known yet, so nothing occludes). Boundaries are
        // inclusive with the same epsilon the world uses, which matters for
        // centers exactly on the 45-degree cone (Pythagorean offsets).
        let eps = 1e-9;
        let mut expected = 0;
        let dims = w.dims();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    if w.state_at([i, j, k]) != CellState::Unknown {
                        continue;
                    }
                    let d = w.cell_center([i, j, k]) - xi.position;
                    let n = d.norm();
                    if n < 1e-12 {
                        expected += 1;
                        continue;
                    }
                    if n <= depth.range + eps
                        && d.z.atan2(d.xy().norm()).abs() <= depth.v_fov / 2.0 + eps
                    {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(gain, expected);
    }

    #[test]
    fn near_wall_pose_gains_less_than_centered() {
        let w = VoxelWorld::walled_room(Vector3::new(10.0, 10.0, 10.0), 0.2);
        let depth = SensorModel::default_depth();
        let centered = RobotConfiguration::new(Vector3::new(5.0, 5.0, 5.0), 0.0);
        let near_wall = RobotConfiguration::new(Vector3::new(9.5, 5.0, 5.0), 0.0);
        assert!(w.volume_gain(&near_wall, &depth, &[]) < w.volume_gain(&centered, &depth, &[]));
    }
}
