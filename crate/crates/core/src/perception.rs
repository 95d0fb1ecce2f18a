//! Simulated semantic perception: turns depth-sensor object hits into
//! incremental scene-graph updates through per-class detection counting,
//! with optional Gaussian pose jitter refined by a running mean.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::ssg::{SceneGraph, Vertex};
use crate::world::{GroundTruthObject, EDGE_BOUNDS, LABEL_COMPARTMENT};

/// Tracks per-object detection evidence and publishes scene-graph vertices
/// once an object has been confidently observed in enough scans.
///
/// An object counts as observed in a scan when at least `h_min` rays strike
/// it; it publishes once observed in `threshold_for(label)` scans. Published
/// positions are the running mean of the per-scan position estimates
/// (ground truth plus optional Gaussian jitter) and keep refining as more
/// observations arrive. Compartments are empty space and are never hit
/// directly: one publishes as soon as all of its bounding walls have.
#[derive(Debug, Clone)]
pub struct DetectionTracker {
    h_min: usize,
    default_threshold: usize,
    thresholds: BTreeMap<String, usize>,
    sigma_pose: f64,
    rng: ChaCha8Rng,
    counts: Vec<usize>,
    sums: Vec<Vector3<f64>>,
    published: Vec<bool>,
}

impl DetectionTracker {
    /// Tracker over `num_objects` ground-truth objects. Defaults: 5 rays per
    /// observation, 3 observations per class to publish, no jitter.
    pub fn new(num_objects: usize, seed: u64) -> Self {
        Self {
            h_min: 5,
            default_threshold: 3,
            thresholds: BTreeMap::new(),
            sigma_pose: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counts: vec![0; num_objects],
            sums: vec![Vector3::zeros(); num_objects],
            published: vec![false; num_objects],
        }
    }

    /// Standard deviation, meters, of the per-observation position noise.
    pub fn with_jitter(mut self, sigma_pose: f64) -> Self {
        self.sigma_pose = sigma_pose;
        self
    }

    /// Minimum rays on an object for a scan to count as an observation.
    pub fn with_h_min(mut self, h_min: usize) -> Self {
        self.h_min = h_min.max(1);
        self
    }

    /// Observation count a class needs before publishing.
    pub fn with_threshold(mut self, label: &str, scans: usize) -> Self {
        self.thresholds.insert(label.to_string(), scans.max(1));
        self
    }

    /// Observation count for classes without a per-class override.
    pub fn with_default_threshold(mut self, scans: usize) -> Self {
        self.default_threshold = scans.max(1);
        self
    }

    pub fn threshold_for(&self, label: &str) -> usize {
        self.thresholds.get(label).copied().unwrap_or(self.default_threshold)
    }

    pub fn is_published(&self, object: usize) -> bool {
        self.published.get(object).copied().unwrap_or(false)
    }

    pub fn scan_count(&self, object: usize) -> usize {
        self.counts.get(object).copied().unwrap_or(0)
    }

    fn mean_pose(&self, object: usize, gt: &GroundTruthObject) -> Pose {
        if self.sigma_pose == 0.0 {
            // Every sample is the ground-truth position; averaging would only
            // add rounding error.
            return gt.pose;
        }
        Pose {
            position: self.sums[object] / self.counts[object] as f64,
            rotation: gt.pose.rotation,
        }
    }

    /// Folds one scan's ray-hit counts into the tracker and applies the
    /// resulting increments to `published`: new vertices for objects that
    /// crossed their class threshold, refreshed poses for ones already
    /// present, compartments whose walls are now all known, and every
    /// ground-truth edge whose endpoints both exist. Returns the ids of
    /// vertices published by this call.
    pub fn update_detections(
        &mut self,
        hits: &BTreeMap<usize, usize>,
        objects: &[GroundTruthObject],
        gt: &SceneGraph,
        published: &mut SceneGraph,
    ) -> Result<Vec<u64>> {
        if objects.len() != self.counts.len() {
            return Err(Error::InvalidSpec(format!(
                "tracker sized for {} objects, got {}",
                self.counts.len(),
                objects.len()
            )));
        }
        let mut newly = Vec::new();
        for (&obj, &rays) in hits {
            if rays < self.h_min || obj >= objects.len() {
                continue;
            }
            let o = &objects[obj];
            if o.label == LABEL_COMPARTMENT {
                continue;
            }
            self.counts[obj] += 1;
            let mut p = o.pose.position;
            if self.sigma_pose > 0.0 {
                let noise = Normal::new(0.0, self.sigma_pose)
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                for a in 0..3 {
                    p[a] += noise.sample(&mut self.rng);
                }
            }
            self.sums[obj] += p;
            if self.published[obj] {
                let pose = self.mean_pose(obj, o);
                if let Some(v) = published.vertex_mut(o.vertex_id) {
                    v.pose = pose;
                }
            } else if self.counts[obj] >= self.threshold_for(&o.label) {
                self.published[obj] = true;
                let pose = self.mean_pose(obj, o);
                published.add_vertex(Vertex::new(o.vertex_id, &o.label, pose, o.half_extents))?;
                newly.push(o.vertex_id);
            }
        }
        // A compartment is inferred, not struck: it publishes (at ground-truth
        // pose) once every wall that bounds it is published.
        for (i, o) in objects.iter().enumerate() {
            if o.label != LABEL_COMPARTMENT || self.published[i] {
                continue;
            }
            let mut walls = gt
                .edges()
                .iter()
                .filter(|e| e.label == EDGE_BOUNDS && e.dst == o.vertex_id)
                .map(|e| e.src)
                .peekable();
            if walls.peek().is_some() && walls.all(|w| published.contains_vertex(w)) {
                self.published[i] = true;
                published.add_vertex(Vertex::new(o.vertex_id, &o.label, o.pose, o.half_extents))?;
                newly.push(o.vertex_id);
            }
        }
        for e in gt.edges() {
            if published.contains_vertex(e.src) && published.contains_vertex(e.dst) {
                published.add_edge_dedup(e.clone())?;
            }
        }
        Ok(newly)
    }
}
