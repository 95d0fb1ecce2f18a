//! Deterministic voxel-world simulation: ballast-tank scenario generation,
//! occupancy mapping via ray casting, depth/camera sensor models, and
//! kinematic path execution for a spherical robot.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Pose, GEOM_EPS};
use crate::ssg::{Edge, SceneGraph, Vertex};

pub const LABEL_COMPARTMENT: &str = "compartment";
pub const LABEL_WALL: &str = "wall";
pub const LABEL_LONGITUDINAL: &str = "longitudinal";
pub const LABEL_MANHOLE: &str = "manhole";
pub const EDGE_MOUNTED_ON: &str = "mounted_on";
pub const EDGE_BOUNDS: &str = "bounds";
pub const EDGE_CONNECTS: &str = "connects";

/// Robot state: position plus yaw. The camera follows yaw at zero pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotConfiguration {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl RobotConfiguration {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        Self { position, yaw }
    }
}

/// Frustum sensor: field of view, max range, and angular ray spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Horizontal field of view, radians, in (0, 2π].
    pub h_fov: f64,
    /// Vertical field of view, radians.
    pub v_fov: f64,
    /// Max range, meters.
    pub range: f64,
    /// Angular spacing between adjacent rays, radians.
    pub angular_res: f64,
}

impl SensorModel {
    /// 360°×90° depth sensor, 10 m range, ~2° rays.
    pub fn default_depth() -> Self {
        Self {
            h_fov: std::f64::consts::TAU,
            v_fov: std::f64::consts::FRAC_PI_2,
            range: 10.0,
            angular_res: 2.0_f64.to_radians(),
        }
    }

    /// 90°×60° camera with a 3 m required viewing distance.
    pub fn default_camera() -> Self {
        Self {
            h_fov: std::f64::consts::FRAC_PI_2,
            v_fov: std::f64::consts::FRAC_PI_3,
            range: 3.0,
            angular_res: 1.0_f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_fov > 0.0 && self.h_fov <= std::f64::consts::TAU + GEOM_EPS) {
            return Err(Error::InvalidSpec("horizontal FOV must be in (0, 2π]".into()));
        }
        if self.v_fov < 0.0 || self.range <= 0.0 || self.angular_res <= 0.0 {
            return Err(Error::InvalidSpec("sensor range/resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Occupancy knowledge about one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// One ground-truth scene object backing a scene-graph vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    /// Vertex id in the ground-truth scene graph.
    pub vertex_id: u64,
    pub label: String,
    pub pose: Pose,
    pub half_extents: Vector3<f64>,
}

/// Which side of a compartment a wall or longitudinal sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    MinusY,
    PlusY,
}

/// A longitudinal removed from the built tank (missing-semantics studies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingLong {
    /// 1-based compartment index.
    pub compartment: usize,
    pub side: Side,
    /// 0-based index on that wall, bottom to top.
    pub index: usize,
}

/// Ballast-tank scenario: a row of cubic compartments along +x separated by
/// manhole-pierced bulkheads, with wall-mounted longitudinals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TankSpec {
    pub compartments: usize,
    /// Inner edge length of each cubic compartment, meters.
    pub compartment_size: f64,
    /// Slab thickness of every wall and bulkhead, meters.
    pub wall_thickness: f64,
    /// Voxel edge length, meters.
    pub resolution: f64,
    /// Longitudinals per compartment, split evenly across the two side walls.
    pub longs_per_compartment: usize,
    /// Square cross-section edge of a longitudinal, meters.
    pub long_section: f64,
    /// Scene-graph wall vertices per compartment: 2 (sides), 4 (+ floor and
    /// ceiling) or 6 (+ bulkheads). The physical tank always has all six.
    pub walls_per_compartment: usize,
    /// Manholes per interior bulkhead: 1 or 2.
    pub manholes_per_bulkhead: usize,
    /// Whether the two end walls also carry (outward-facing) manholes.
    pub exterior_manholes: bool,
    pub missing: Vec<MissingLong>,
}

impl Default for TankSpec {
    fn default() -> Self {
        Self {
            compartments: 8,
            compartment_size: 5.0,
            wall_thickness: 0.4,
            resolution: 0.2,
            longs_per_compartment: 8,
            long_section: 0.4,
            walls_per_compartment: 6,
            manholes_per_bulkhead: 2,
            exterior_manholes: true,
            missing: Vec::new(),
        }
    }
}

impl TankSpec {
    /// Compartment pitch: inner size plus one slab.
    pub fn pitch(&self) -> f64 {
        self.compartment_size + self.wall_thickness
    }

    /// Outer dimensions of the tank box.
    pub fn outer_dims(&self) -> Vector3<f64> {
        let w = self.compartment_size + 2.0 * self.wall_thickness;
        Vector3::new(self.pitch() * self.compartments as f64 + self.wall_thickness, w, w)
    }

    /// Center of a compartment's interior cube (1-based index).
    pub fn compartment_center(&self, j: usize) -> Vector3<f64> {
        let half = self.compartment_size / 2.0;
        Vector3::new(
            self.wall_thickness + self.pitch() * (j as f64 - 1.0) + half,
            self.wall_thickness + half,
            self.wall_thickness + half,
        )
    }

    /// Height centers of the longitudinals on one side wall, bottom to top.
    /// Gaps widen by 0.2 m per step so that adjacent spacings differ.
    pub fn long_z_centers(&self) -> Vec<f64> {
        let n = self.longs_per_compartment / 2;
        let t = self.wall_thickness;
        let c = self.compartment_size;
        match n {
            0 => vec![],
            1 => vec![t + c / 2.0],
            _ => {
                let first = t + 0.4;
                let last = t + c - 0.4;
                let k = (n - 1) as f64;
                let base = (last - first) / k - 0.1 * (k - 1.0);
                let mut centers = vec![first];
                let mut gap = base;
                for _ in 1..n {
                    centers.push(centers.last().unwrap() + gap);
                    gap += 0.2;
                }
                centers
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.compartments == 0 {
            return fail("at least one compartment required");
        }
        if self.resolution <= 0.0 {
            return fail("resolution must be positive");
        }
        let aligned = |x: f64| ((x / self.resolution).round() * self.resolution - x).abs() < 1e-9;
        if !aligned(self.compartment_size) || !aligned(self.wall_thickness) || !aligned(self.long_section)
        {
            return fail("tank dimensions must be whole multiples of the resolution");
        }
        if self.wall_thickness < 2.0 * self.resolution {
            return fail("walls must be at least two voxels thick");
        }
        if !matches!(self.walls_per_compartment, 2 | 4 | 6) {
            return fail("walls_per_compartment must be 2, 4 or 6");
        }
        if !matches!(self.manholes_per_bulkhead, 1 | 2) {
            return fail("manholes_per_bulkhead must be 1 or 2");
        }
        if self.longs_per_compartment % 2 != 0 {
            return fail("longs_per_compartment must be even");
        }
        let has_manholes = self.compartments > 1 || self.exterior_manholes;
        if has_manholes && self.compartment_size < 4.0 {
            return fail("compartments must be at least 4 m for manhole openings to fit");
        }
        let zs = self.long_z_centers();
        for w in zs.windows(2) {
            if w[1] - w[0] < self.long_section {
                return fail("longitudinals overlap vertically");
            }
        }
        if let (Some(&lo), Some(&hi)) = (zs.first(), zs.last()) {
            let t = self.wall_thickness;
            let half = self.long_section / 2.0;
            if lo - half < t || hi + half > t + self.compartment_size {
                return fail("longitudinals extend outside the compartment");
            }
        }
        for m in &self.missing {
            if m.compartment == 0 || m.compartment > self.compartments || m.index >= self.longs_per_compartment / 2
            {
                return fail("missing-longitudinal reference out of range");
            }
        }
        Ok(())
    }
}

/// A waypoint with heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

/// One sensing stop during path execution.
#[derive(Debug, Clone)]
pub struct SenseEvent {
    pub config: RobotConfiguration,
    /// Travel time at which the event fired, seconds.
    pub time: f64,
    /// Depth-ray hits per ground-truth object index.
    pub hits: BTreeMap<usize, usize>,
    /// Semantic voxels first seen by the camera at this stop.
    pub newly_seen_semantic: Vec<usize>,
}

/// Dense voxel grid over the tank's outer box, origin at the world origin.
///
/// `solid`/`owner` describe immutable ground truth; `state` is what sensing
/// has revealed so far; `seen` flags camera-covered voxels; `semantic` flags
/// the coverage denominator (exposed longitudinal faces); `predicted` is the
/// currently active predicted-structure mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelWorld {
    resolution: f64,
    dims: [usize; 3],
    state: Vec<CellState>,
    solid: Vec<bool>,
    owner: Vec<u32>,
    seen: Vec<bool>,
    semantic: Vec<bool>,
    predicted: Vec<bool>,
    objects: Vec<GroundTruthObject>,
}

impl VoxelWorld {
    fn with_dims(dims: [usize; 3], resolution: f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            resolution,
            dims,
            state: vec![CellState::Unknown; n],
            solid: vec![false; n],
            owner: vec![0; n],
            seen: vec![false; n],
            semantic: vec![false; n],
            predicted: vec![false; n],
            objects: Vec::new(),
        }
    }

    /// Empty void of the given metric size: nothing solid anywhere.
    pub fn empty(extent: Vector3<f64>, resolution: f64) -> Self {
        let dims = [
            (extent.x / resolution).round().max(1.0) as usize,
            (extent.y / resolution).round().max(1.0) as usize,
            (extent.z / resolution).round().max(1.0) as usize,
        ];
        Self::with_dims(dims, resolution)
    }

    /// Box room with a one-voxel solid shell (no semantic objects).
    pub fn walled_room(extent: Vector3<f64>, resolution: f64) -> Self {
        let mut w = Self::empty(extent, resolution);
        for k in 0..w.dims[2] {
            for j in 0..w.dims[1] {
                for i in 0..w.dims[0] {
                    let shell = i == 0
                        || j == 0
                        || k == 0
                        || i == w.dims[0] - 1
                        || j == w.dims[1] - 1
                        || k == w.dims[2] - 1;
                    if shell {
                        let idx = w.idx([i, j, k]);
                        w.solid[idx] = true;
                    }
                }
            }
        }
        w
    }

    /// Declares every non-solid voxel known free and every solid voxel known
    /// occupied, as if the world had been exhaustively scanned.
    pub fn mark_all_free(&mut self) {
        for i in 0..self.state.len() {
            self.state[i] = if self.solid[i] { CellState::Occupied } else { CellState::Free };
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Outer bounds of the world as a box.
    pub fn bounds(&self) -> Aabb {
        let max = Vector3::new(
            self.dims[0] as f64 * self.resolution,
            self.dims[1] as f64 * self.resolution,
            self.dims[2] as f64 * self.resolution,
        );
        Aabb::from_min_max(Vector3::zeros(), max)
    }

    pub fn objects(&self) -> &[GroundTruthObject] {
        &self.objects
    }

    fn idx(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Grid cell containing a point, if inside the world.
    pub fn cell_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] / self.resolution).floor();
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            c[a] = f as usize;
        }
        Some(c)
    }

    /// Metric center of a cell.
    pub fn cell_center(&self, c: [usize; 3]) -> Vector3<f64> {
        Vector3::new(
            (c[0] as f64 + 0.5) * self.resolution,
            (c[1] as f64 + 0.5) * self.resolution,
            (c[2] as f64 + 0.5) * self.resolution,
        )
    }

    fn cell_of_index(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    /// Metric center of a cell given its linear index.
    pub fn index_center(&self, idx: usize) -> Vector3<f64> {
        self.cell_center(self.cell_of_index(idx))
    }

    pub fn state_at(&self, c: [usize; 3]) -> CellState {
        self.state[self.idx(c)]
    }

    pub fn is_solid(&self, c: [usize; 3]) -> bool {
        self.solid[self.idx(c)]
    }

    /// Ground-truth object index owning a cell, if any.
    pub fn owner_of(&self, c: [usize; 3]) -> Option<usize> {
        let o = self.owner[self.idx(c)];
        (o > 0).then(|| o as usize - 1)
    }

    pub fn unknown_count(&self) -> usize {
        self.state.iter().filter(|s| **s == CellState::Unknown).count()
    }

    pub fn semantic_total(&self) -> usize {
        self.semantic.iter().filter(|s| **s).count()
    }

    pub fn semantic_seen(&self) -> usize {
        self.semantic.iter().zip(&self.seen).filter(|(m, s)| **m && **s).count()
    }

    /// Per-object semantic voxel tallies as (total, seen), keyed by the
    /// owning object's index.
    pub fn semantic_tallies(&self) -> BTreeMap<usize, (usize, usize)> {
        let mut out: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for idx in 0..self.semantic.len() {
            if !self.semantic[idx] || self.owner[idx] == 0 {
                continue;
            }
            let entry = out.entry(self.owner[idx] as usize - 1).or_insert((0, 0));
            entry.0 += 1;
            if self.seen[idx] {
                entry.1 += 1;
            }
        }
        out
    }

    /// Percentage of semantic surface voxels covered by the camera.
    pub fn coverage(&self) -> f64 {
        let total = self.semantic_total();
        if total == 0 {
            return 100.0;
        }
        100.0 * self.semantic_seen() as f64 / total as f64
    }

    /// Replaces the predicted-structure mask with the voxels inside `boxes`.
    pub fn set_predicted(&mut self, boxes: &[Aabb]) {
        self.predicted.iter_mut().for_each(|p| *p = false);
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let c = self.cell_center([i, j, k]);
                    if boxes.iter().any(|b| {
                        let lo = b.min();
                        let hi = b.max();
                        (0..3).all(|a| c[a] > lo[a] - GEOM_EPS && c[a] < hi[a] + GEOM_EPS)
                    }) {
                        let idx = self.idx([i, j, k]);
                        self.predicted[idx] = true;
                    }
                }
            }
        }
    }

    pub fn predicted_count(&self) -> usize {
        self.predicted.iter().filter(|p| **p).count()
    }

    /// Core grid walk: visits cells along `origin + t·dir` for t ∈ [0, range]
    /// in traversal order (starting cell included) until the callback returns
    /// false, the ray leaves the grid, or the range is exhausted.
    fn walk(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, range: f64, mut f: impl FnMut(usize) -> bool) {
        let rho = self.resolution;
        let Some(mut cell) = self.cell_of(origin) else { return };
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if dir[a] > GEOM_EPS {
                step[a] = 1;
                t_max[a] = ((cell[a] as f64 + 1.0) * rho - origin[a]) / dir[a];
                t_delta[a] = rho / dir[a];
            } else if dir[a] < -GEOM_EPS {
                step[a] = -1;
                t_max[a] = (cell[a] as f64 * rho - origin[a]) / dir[a];
                t_delta[a] = rho / -dir[a];
            }
        }
        loop {
            if !f(self.idx(cell)) {
                return;
            }
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] > range {
                return;
            }
            let next = cell[a] as i64 + step[a];
            if next < 0 || next >= self.dims[a] as i64 {
                return;
            }
            cell[a] = next as usize;
            t_max[a] += t_delta[a];
        }
    }

    /// Walks toward the first solid cell. Non-solid traversed cells are
    /// appended to `out`; returns the solid cell hit, if any.
    fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, range: f64, out: &mut Vec<usize>) -> Option<usize> {
        out.clear();
        let mut hit = None;
        self.walk(origin, dir, range, |idx| {
            if self.solid[idx] {
                hit = Some(idx);
                false
            } else {
                out.push(idx);
                true
            }
        });
        hit
    }

    fn in_frustum(&self, xi: &RobotConfiguration, sensor: &SensorModel, target: &Vector3<f64>) -> bool {
        let delta = target - xi.position;
        let dist = delta.norm();
        if dist > sensor.range + GEOM_EPS {
            return false;
        }
        let horiz = delta.xy().norm();
        if horiz > GEOM_EPS || delta.z.abs() > GEOM_EPS {
            let elev = delta.z.atan2(horiz);
            if elev.abs() > sensor.v_fov / 2.0 + GEOM_EPS {
                return false;
            }
        }
        if sensor.h_fov < std::f64::consts::TAU - GEOM_EPS && horiz > GEOM_EPS {
            let az = delta.y.atan2(delta.x);
            if wrap_angle(az - xi.yaw).abs() > sensor.h_fov / 2.0 + GEOM_EPS {
                return false;
            }
        }
        true
    }

    /// Casts the depth-sensor ray fan: traversed voxels become free, hit
    /// voxels become occupied. Returns per-object ray-hit counts, where a ray
    /// either strikes an owned solid voxel or passes through an owned opening.
    pub fn sense_depth(&mut self, xi: &RobotConfiguration, sensor: &SensorModel) -> BTreeMap<usize, usize> {
        let mut hits: BTreeMap<usize, usize> = BTreeMap::new();
        let n_h = ((sensor.h_fov / sensor.angular_res).round() as usize).max(1);
        let n_v = if sensor.v_fov < GEOM_EPS {
            1
        } else {
            ((sensor.v_fov / sensor.angular_res).round() as usize).max(1) + 1
        };
        let mut buf: Vec<usize> = Vec::with_capacity(128);
        let mut through: Vec<u32> = Vec::with_capacity(4);
        for iv in 0..n_v {
            let elev = if n_v == 1 {
                0.0
            } else {
                -sensor.v_fov / 2.0 + sensor.v_fov * iv as f64 / (n_v - 1) as f64
            };
            for ih in 0..n_h {
                let az = xi.yaw - sensor.h_fov / 2.0 + sensor.h_fov * (ih as f64 + 0.5) / n_h as f64;
                let dir = Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
                let hit = self.trace(&xi.position, &dir, sensor.range, &mut buf);
                through.clear();
                for &idx in &buf {
                    self.state[idx] = CellState::Free;
                    let o = self.owner[idx];
                    if o > 0 && !through.contains(&o) {
                        through.push(o);
                    }
                }
                for &o in &through {
                    *hits.entry(o as usize - 1).or_default() += 1;
                }
                if let Some(idx) = hit {
                    self.state[idx] = CellState::Occupied;
                    let o = self.owner[idx];
                    if o > 0 {
                        *hits.entry(o as usize - 1).or_default() += 1;
                    }
                }
            }
        }
        hits
    }

    /// Solid cells visible to the camera from `xi`: inside the frustum,
    /// within range, with unobstructed line of sight. Ascending cell order.
    pub fn visible_cells(&self, xi: &RobotConfiguration, sensor: &SensorModel) -> Vec<usize> {
        let mut out = Vec::new();
        let r = sensor.range;
        let lo = xi.position.map(|v| v - r);
        let hi = xi.position.map(|v| v + r);
        let clamp = |v: f64, max: usize| (v / self.resolution).floor().clamp(0.0, max as f64 - 1.0) as usize;
        let (i0, i1) = (clamp(lo.x, self.dims[0]), clamp(hi.x, self.dims[0]));
        let (j0, j1) = (clamp(lo.y, self.dims[1]), clamp(hi.y, self.dims[1]));
        let (k0, k1) = (clamp(lo.z, self.dims[2]), clamp(hi.z, self.dims[2]));
        let mut scratch = Vec::with_capacity(64);
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let idx = self.idx([i, j, k]);
                    if !self.solid[idx] {
                        continue;
                    }
                    let c = self.cell_center([i, j, k]);
                    if !self.in_frustum(xi, sensor, &c) {
                        continue;
                    }
                    let delta = c - xi.position;
                    let dist = delta.norm();
                    if dist < GEOM_EPS {
                        continue;
                    }
                    let hit = self.trace(&xi.position, &(delta / dist), dist + self.resolution, &mut scratch);
                    if hit == Some(idx) {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    /// Marks everything the camera sees as known-occupied and camera-seen.
    /// Returns semantic voxels seen for the first time, ascending.
    pub fn sense_camera(&mut self, xi: &RobotConfiguration, sensor: &SensorModel) -> Vec<usize> {
        let visible = self.visible_cells(xi, sensor);
        let mut newly = Vec::new();
        for idx in visible {
            self.state[idx] = CellState::Occupied;
            if !self.seen[idx] {
                self.seen[idx] = true;
                if self.semantic[idx] {
                    newly.push(idx);
                }
            }
        }
        newly
    }

    /// Unseen semantic voxels the camera would cover from `xi`.
    pub fn visible_unseen_semantic(&self, xi: &RobotConfiguration, sensor: &SensorModel) -> Vec<usize> {
        self.visible_cells(xi, sensor)
            .into_iter()
            .filter(|&idx| self.semantic[idx] && !self.seen[idx])
            .collect()
    }

    /// Counts unknown voxels that the depth sensor would observe from `xi`:
    /// pierced by a sensor ray before it crosses a known-occupied voxel
    /// (unknown space is optimistically transparent), with the voxel center
    /// inside the analytic frustum. Returns `(all unknown, unknown ∧ predicted)`.
    pub fn gain_counts(
        &self,
        xi: &RobotConfiguration,
        sensor: &SensorModel,
        stops: &[Aabb],
    ) -> (usize, usize) {
        let mut visited = vec![false; self.state.len()];
        let mut unknown = 0usize;
        let mut predicted = 0usize;
        let n_h = ((sensor.h_fov / sensor.angular_res).round() as usize).max(1);
        let n_v = if sensor.v_fov < GEOM_EPS {
            1
        } else {
            ((sensor.v_fov / sensor.angular_res).round() as usize).max(1) + 1
        };
        for iv in 0..n_v {
            let elev = if n_v == 1 {
                0.0
            } else {
                -sensor.v_fov / 2.0 + sensor.v_fov * iv as f64 / (n_v - 1) as f64
            };
            for ih in 0..n_h {
                let az = xi.yaw - sensor.h_fov / 2.0 + sensor.h_fov * (ih as f64 + 0.5) / n_h as f64;
                let dir = Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin());
                self.walk(&xi.position, &dir, sensor.range, |idx| {
                    if self.state[idx] == CellState::Occupied {
                        return false;
                    }
                    // Rays contribute no gain past a stop region: volume seen
                    // only through an opening is not worth flying toward.
                    let center = self.index_center(idx);
                    if stops.iter().any(|s| {
                        (0..3).all(|a| (center[a] - s.center[a]).abs() <= s.half_extents[a])
                    }) {
                        return false;
                    }
                    if self.state[idx] == CellState::Unknown && !visited[idx] {
                        visited[idx] = true;
                        if self.in_frustum(xi, sensor, &center) {
                            unknown += 1;
                            if self.predicted[idx] {
                                predicted += 1;
                            }
                        }
                    }
                    true
                });
            }
        }
        (unknown, predicted)
    }

    /// Number of unknown voxels observable from `xi` (volume gain).
    pub fn volume_gain(&self, xi: &RobotConfiguration, sensor: &SensorModel, stops: &[Aabb]) -> usize {
        self.gain_counts(xi, sensor, stops).0
    }

    fn cells_within(&self, p: &Vector3<f64>, r: f64) -> impl Iterator<Item = [usize; 3]> + '_ {
        let lo = p.map(|v| v - r);
        let hi = p.map(|v| v + r);
        let clamp = |v: f64, max: usize| (v / self.resolution).floor().clamp(0.0, max as f64 - 1.0) as usize;
        let (i0, i1) = (clamp(lo.x, self.dims[0]), clamp(hi.x, self.dims[0]));
        let (j0, j1) = (clamp(lo.y, self.dims[1]), clamp(hi.y, self.dims[1]));
        let (k0, k1) = (clamp(lo.z, self.dims[2]), clamp(hi.z, self.dims[2]));
        let p = *p;
        let rho = self.resolution;
        (k0..=k1).flat_map(move |k| {
            (j0..=j1).flat_map(move |j| {
                (i0..=i1).filter_map(move |i| {
                    let c = Vector3::new(
                        (i as f64 + 0.5) * rho,
                        (j as f64 + 0.5) * rho,
                        (k as f64 + 0.5) * rho,
                    );
                    ((c - p).norm() < r).then_some([i, j, k])
                })
            })
        })
    }

    /// True when no ground-truth solid voxel center lies within `r` of `p`
    /// and `p` is inside the world.
    pub fn solid_clear_point(&self, p: &Vector3<f64>, r: f64) -> bool {
        if self.cell_of(p).is_none() {
            return false;
        }
        for c in self.cells_within(p, r) {
            if self.solid[self.idx(c)] {
                return false;
            }
        }
        true
    }

    /// True when every voxel center within `r` of `p` is known free (or
    /// unknown, when allowed) and `p` is inside the world.
    pub fn known_free_point(&self, p: &Vector3<f64>, r: f64, allow_unknown: bool) -> bool {
        if self.cell_of(p).is_none() {
            return false;
        }
        for c in self.cells_within(p, r) {
            match self.state[self.idx(c)] {
                CellState::Free => {}
                CellState::Unknown if allow_unknown => {}
                _ => return false,
            }
        }
        true
    }

    fn sample_segment(a: &Vector3<f64>, b: &Vector3<f64>, step: f64) -> Vec<Vector3<f64>> {
        let len = (b - a).norm();
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
    }

    /// Segment variant of [`known_free_point`], sampled at half-voxel steps.
    pub fn known_free_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>, r: f64, allow_unknown: bool) -> bool {
        Self::sample_segment(a, b, self.resolution / 2.0)
            .iter()
            .all(|p| self.known_free_point(p, r, allow_unknown))
    }

    /// Segment variant of [`solid_clear_point`], sampled at half-voxel steps.
    pub fn solid_clear_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> bool {
        Self::sample_segment(a, b, self.resolution / 2.0).iter().all(|p| self.solid_clear_point(p, r))
    }

    /// Flies the robot along `path` at `v_max`, firing both sensors at the
    /// start, every `sense_period` seconds of travel time, and at arrival.
    /// The whole path is validated against ground truth before moving.
    /// Returns the final configuration, the pure travel time, and the
    /// sensing events in firing order.
    pub fn execute_path(
        &mut self,
        path: &[PathPoint],
        v_max: f64,
        sense_period: f64,
        depth: &SensorModel,
        camera: &SensorModel,
        robot_radius: f64,
    ) -> Result<(RobotConfiguration, f64, Vec<SenseEvent>)> {
        if path.is_empty() {
            return Err(Error::InvalidSpec("empty path".into()));
        }
        if v_max <= 0.0 || sense_period <= 0.0 {
            return Err(Error::InvalidSpec("v_max and sense_period must be positive".into()));
        }
        depth.validate()?;
        camera.validate()?;
        if !self.solid_clear_point(&path[0].position, robot_radius) {
            return Err(Error::PathCollision { waypoint: 0 });
        }
        for (i, pair) in path.windows(2).enumerate() {
            if !self.solid_clear_segment(&pair[0].position, &pair[1].position, robot_radius) {
                return Err(Error::PathCollision { waypoint: i + 1 });
            }
        }
        let mut cum = vec![0.0];
        for pair in path.windows(2) {
            cum.push(cum.last().unwrap() + (pair[1].position - pair[0].position).norm());
        }
        let total_len = *cum.last().unwrap();
        let total_time = total_len / v_max;

        let mut times = Vec::new();
        let mut t = 0.0;
        while t < total_time - 1e-9 {
            times.push(t);
            t += sense_period;
        }
        times.push(total_time);

        let at = |time: f64| -> RobotConfiguration {
            let s = time * v_max;
            let mut seg = 0;
            while seg + 1 < cum.len() - 1 && cum[seg + 1] < s - 1e-12 {
                seg += 1;
            }
            let a = &path[seg];
            let b = &path[(seg + 1).min(path.len() - 1)];
            let seg_len = cum[seg + 1] - cum[seg];
            let frac = if seg_len > 1e-12 { ((s - cum[seg]) / seg_len).clamp(0.0, 1.0) } else { 1.0 };
            RobotConfiguration {
                position: a.position + (b.position - a.position) * frac,
                yaw: a.yaw + wrap_angle(b.yaw - a.yaw) * frac,
            }
        };

        let mut events = Vec::new();
        for time in times {
            let config = if path.len() == 1 {
                RobotConfiguration { position: path[0].position, yaw: path[0].yaw }
            } else {
                at(time)
            };
            let hits = self.sense_depth(&config, depth);
            let newly = self.sense_camera(&config, camera);
            events.push(SenseEvent { config, time, hits, newly_seen_semantic: newly });
        }
        let last = path.last().unwrap();
        Ok((RobotConfiguration { position: last.position, yaw: last.yaw }, total_time, events))
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % std::f64::consts::TAU;
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    } else if x <= -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    }
    x
}

/// Builds the ballast-tank world and its ground-truth scene graph.
///
/// Physical layout along +x: bulkhead slabs at every pitch boundary, floor
/// and ceiling slabs, side-wall slabs, and wall-mounted longitudinals inside
/// each compartment. Interior bulkheads appear in the scene graph as two
/// one-sided half-slab walls (one per adjacent compartment); the end walls
/// are single full slabs. Manholes are zero-thickness rectangles centered on
/// their slab's mid-plane; their openings are carved out of the voxel slab
/// and the opening voxels remain owned by the manhole so that depth rays
/// passing through register as detections.
pub fn generate_tank(spec: &TankSpec) -> Result<(VoxelWorld, SceneGraph)> {
    spec.validate()?;
    let t = spec.wall_thickness;
    let c = spec.compartment_size;
    let p = spec.pitch();
    let n = spec.compartments;
    let w = c + 2.0 * t;
    let outer = spec.outer_dims();
    let half_w = w / 2.0;
    let zs = spec.long_z_centers();

    let mut g = SceneGraph::new();
    let mut next_id = 0u64;
    let mut take = || {
        let id = next_id;
        next_id += 1;
        id
    };

    let mut comp_ids = Vec::with_capacity(n);
    // Wall vertex ids per compartment, keyed by role for voxel ownership.
    let mut floor_ids = vec![None; n + 1];
    let mut ceil_ids = vec![None; n + 1];
    let mut side_minus_ids = vec![None; n + 1];
    let mut side_plus_ids = vec![None; n + 1];
    let mut bwl_ids = vec![None; n + 1];
    let mut bwr_ids = vec![None; n + 1];
    let mut long_ids: BTreeMap<(usize, Side, usize), u64> = BTreeMap::new();

    let missing = |j: usize, side: Side, i: usize| {
        spec.missing.iter().any(|m| m.compartment == j && m.side == side && m.index == i)
    };

    for j in 1..=n {
        let center = spec.compartment_center(j);
        let comp = take();
        comp_ids.push(comp);
        g.add_vertex(Vertex::new(
            comp,
            LABEL_COMPARTMENT,
            Pose::at(center),
            Vector3::new(c / 2.0, c / 2.0, c / 2.0),
        ))?;

        let wall = |g: &mut SceneGraph,
                        take: &mut dyn FnMut() -> u64,
                        pos: Vector3<f64>,
                        he: Vector3<f64>|
         -> Result<u64> {
            let id = take();
            g.add_vertex(Vertex::new(id, LABEL_WALL, Pose::at(pos), he))?;
            g.add_edge(Edge::new(id, comp, EDGE_BOUNDS))?;
            Ok(id)
        };

        if spec.walls_per_compartment >= 4 {
            floor_ids[j] = Some(wall(
                &mut g,
                &mut take,
                Vector3::new(center.x, half_w, t / 2.0),
                Vector3::new(c / 2.0, half_w, t / 2.0),
            )?);
            ceil_ids[j] = Some(wall(
                &mut g,
                &mut take,
                Vector3::new(center.x, half_w, w - t / 2.0),
                Vector3::new(c / 2.0, half_w, t / 2.0),
            )?);
        }
        if spec.walls_per_compartment == 6 {
            let (bwl_x, bwl_he) = if j == 1 {
                (t / 2.0, t / 2.0)
            } else {
                (p * (j as f64 - 1.0) + 3.0 * t / 4.0, t / 4.0)
            };
            bwl_ids[j] = Some(wall(
                &mut g,
                &mut take,
                Vector3::new(bwl_x, half_w, half_w),
                Vector3::new(bwl_he, half_w, half_w),
            )?);
            let (bwr_x, bwr_he) = if j == n {
                (p * n as f64 + t / 2.0, t / 2.0)
            } else {
                (p * j as f64 + t / 4.0, t / 4.0)
            };
            bwr_ids[j] = Some(wall(
                &mut g,
                &mut take,
                Vector3::new(bwr_x, half_w, half_w),
                Vector3::new(bwr_he, half_w, half_w),
            )?);
        }
        side_minus_ids[j] = Some(wall(
            &mut g,
            &mut take,
            Vector3::new(center.x, t / 2.0, half_w),
            Vector3::new(c / 2.0, t / 2.0, c / 2.0),
        )?);
        side_plus_ids[j] = Some(wall(
            &mut g,
            &mut take,
            Vector3::new(center.x, w - t / 2.0, half_w),
            Vector3::new(c / 2.0, t / 2.0, c / 2.0),
        )?);

        for (side, wall_id, long_y) in [
            (Side::MinusY, side_minus_ids[j].unwrap(), t + spec.long_section / 2.0),
            (Side::PlusY, side_plus_ids[j].unwrap(), w - t - spec.long_section / 2.0),
        ] {
            for (i, &z) in zs.iter().enumerate() {
                if missing(j, side, i) {
                    continue;
                }
                let id = take();
                g.add_vertex(Vertex::new(
                    id,
                    LABEL_LONGITUDINAL,
                    Pose::at(Vector3::new(center.x, long_y, z)),
                    Vector3::new(c / 2.0, spec.long_section / 2.0, spec.long_section / 2.0),
                ))?;
                g.add_edge(Edge::new(id, wall_id, EDGE_MOUNTED_ON))?;
                long_ids.insert((j, side, i), id);
            }
        }
    }

    // Manholes, bulkhead by bulkhead. Type "a" opens high on +y, type "b"
    // low on −y; the offsets are deliberately asymmetric so that mirrored
    // placements do not alias under rigid alignment.
    let man_y = |kind: char| if kind == 'a' { t + 3.4 } else { t + 1.0 };
    let man_z = t + 1.1;
    let man_he = Vector3::new(0.0, 0.6, 0.5);
    struct Manhole {
        id: u64,
        slab: usize,
        kind: char,
    }
    let mut manholes: Vec<Manhole> = Vec::new();
    for slab in 0..=n {
        let x = p * slab as f64 + t / 2.0;
        let exterior = slab == 0 || slab == n;
        if exterior && !spec.exterior_manholes {
            continue;
        }
        let kinds: &[char] = if exterior {
            if slab == 0 {
                &['b']
            } else {
                &['a']
            }
        } else if spec.manholes_per_bulkhead == 2 {
            &['a', 'b']
        } else {
            &['a']
        };
        for &kind in kinds {
            let id = take();
            g.add_vertex(Vertex::new(
                id,
                LABEL_MANHOLE,
                Pose::at(Vector3::new(x, man_y(kind), man_z)),
                man_he,
            ))?;
            if slab > 0 {
                g.add_edge(Edge::new(id, comp_ids[slab - 1], EDGE_CONNECTS))?;
            }
            if slab < n {
                g.add_edge(Edge::new(id, comp_ids[slab], EDGE_CONNECTS))?;
            }
            manholes.push(Manhole { id, slab, kind });
        }
    }

    // Voxelization. Ownership at overlaps: manhole openings, then bulkheads,
    // then floor/ceiling, then side walls, then longitudinals.
    let dims = [
        (outer.x / spec.resolution).round() as usize,
        (outer.y / spec.resolution).round() as usize,
        (outer.z / spec.resolution).round() as usize,
    ];
    let mut world = VoxelWorld::with_dims(dims, spec.resolution);
    world.objects = g
        .vertices()
        .iter()
        .map(|v| GroundTruthObject {
            vertex_id: v.id,
            label: v.label.clone(),
            pose: v.pose,
            half_extents: v.half_extents,
        })
        .collect();
    let object_index: BTreeMap<u64, u32> = g
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id, i as u32 + 1))
        .collect();
    let owner_of = |id: Option<u64>| id.and_then(|id| object_index.get(&id).copied()).unwrap_or(0);

    let comp_of_x = |x: f64| -> Option<usize> {
        let j = ((x - t) / p).floor() as isize;
        if j < 0 || j as usize >= n {
            return None;
        }
        let j = j as usize + 1;
        let x0 = t + p * (j as f64 - 1.0);
        (x > x0 && x < x0 + c).then_some(j)
    };
    let slab_of_x = |x: f64| -> Option<usize> {
        let k = (x / p).floor() as isize;
        if k < 0 || k as usize > n {
            return None;
        }
        let k = k as usize;
        let x0 = p * k as f64;
        (x > x0 && x < x0 + t).then_some(k)
    };

    for kz in 0..dims[2] {
        for jy in 0..dims[1] {
            for ix in 0..dims[0] {
                let cell = [ix, jy, kz];
                let cc = world.cell_center(cell);
                let idx = world.idx(cell);
                if let Some(slab) = slab_of_x(cc.x) {
                    // Bulkhead column: solid unless a manhole opening carves it.
                    let opening = manholes.iter().find(|m| {
                        m.slab == slab
                            && (cc.y - man_y(m.kind)).abs() < man_he.y
                            && (cc.z - man_z).abs() < man_he.z
                    });
                    if let Some(m) = opening {
                        world.owner[idx] = owner_of(Some(m.id));
                        continue;
                    }
                    world.solid[idx] = true;
                    let plane = p * slab as f64 + t / 2.0;
                    let id = if slab == 0 {
                        bwl_ids[1]
                    } else if slab == n {
                        bwr_ids[n]
                    } else if cc.x < plane {
                        bwr_ids[slab]
                    } else {
                        bwl_ids[slab + 1]
                    };
                    world.owner[idx] = owner_of(id);
                    continue;
                }
                let Some(j) = comp_of_x(cc.x) else { continue };
                if cc.z < t || cc.z > w - t {
                    world.solid[idx] = true;
                    world.owner[idx] = owner_of(if cc.z < t { floor_ids[j] } else { ceil_ids[j] });
                    continue;
                }
                if cc.y < t || cc.y > w - t {
                    world.solid[idx] = true;
                    world.owner[idx] =
                        owner_of(if cc.y < t { side_minus_ids[j] } else { side_plus_ids[j] });
                    continue;
                }
                // Longitudinal beams on the side walls.
                let side = if cc.y < t + spec.long_section && cc.y > t {
                    Some(Side::MinusY)
                } else if cc.y > w - t - spec.long_section && cc.y < w - t {
                    Some(Side::PlusY)
                } else {
                    None
                };
                if let Some(side) = side {
                    let hit = zs
                        .iter()
                        .enumerate()
                        .find(|(_, &z)| (cc.z - z).abs() < spec.long_section / 2.0)
                        .map(|(i, _)| i);
                    if let Some(i) = hit {
                        if let Some(&id) = long_ids.get(&(j, side, i)) {
                            world.solid[idx] = true;
                            world.owner[idx] = owner_of(Some(id));
                        }
                    }
                }
            }
        }
    }

    // Semantic surface: longitudinal voxels whose neighbor toward the
    // compartment interior is open. Back rows pressed against the wall are
    // deliberately excluded — a yaw-locked camera can never see them.
    for kz in 0..dims[2] {
        for jy in 0..dims[1] {
            for ix in 0..dims[0] {
                let idx = world.idx([ix, jy, kz]);
                if !world.solid[idx] || world.owner[idx] == 0 {
                    continue;
                }
                let obj = &world.objects[world.owner[idx] as usize - 1];
                if obj.label != LABEL_LONGITUDINAL {
                    continue;
                }
                let inward: isize = if obj.pose.position.y < half_w { 1 } else { -1 };
                let nj = jy as isize + inward;
                if nj < 0 || nj as usize >= dims[1] {
                    continue;
                }
                let n_idx = world.idx([ix, nj as usize, kz]);
                if !world.solid[n_idx] {
                    world.semantic[idx] = true;
                }
            }
        }
    }

    Ok((world, g))
}
