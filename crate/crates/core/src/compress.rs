use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssg::{Edge, SceneGraph, Vertex};

/// One concrete occurrence of a pattern in a host graph. `vertex_ids[k]`
/// corresponds to the pattern's k-th vertex; `edge_indices` point into the
/// host graph's edge list and mirror the pattern's edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub vertex_ids: Vec<u64>,
    pub edge_indices: Vec<usize>,
}

impl Instance {
    pub fn contains_vertex(&self, id: u64) -> bool {
        self.vertex_ids.contains(&id)
    }

    pub fn overlaps(&self, other: &Instance) -> bool {
        self.vertex_ids.iter().any(|v| other.vertex_ids.contains(v))
    }

    /// Materializes this instance as its own graph: vertices in instance
    /// order (so position k corresponds to the pattern's k-th vertex) and
    /// edges in instance edge order.
    pub fn subgraph(&self, g: &SceneGraph) -> Result<SceneGraph> {
        let mut out = SceneGraph::new();
        for &id in &self.vertex_ids {
            let v = g
                .vertex(id)
                .ok_or_else(|| Error::Parse(format!("instance references unknown vertex {id}")))?;
            out.add_vertex(v.clone())?;
        }
        for &ei in &self.edge_indices {
            let e = g
                .edges()
                .get(ei)
                .ok_or_else(|| Error::Parse(format!("instance references unknown edge {ei}")))?;
            out.add_edge(e.clone())?;
        }
        Ok(out)
    }
}

/// A recurring pattern: its representative subgraph (the first instance,
/// with that instance's poses), every occurrence found, and the compression
/// ratio it achieves on the host graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substructure {
    pub label: String,
    pub pattern: SceneGraph,
    pub instances: Vec<Instance>,
    pub compression: f64,
}

/// Replaces every instance of `sub` with a single fresh vertex labeled
/// `sub.label`. The replacement vertex sits at the centroid of the instance
/// positions with identity rotation; its box is the smallest centered box
/// covering all member boxes. Boundary edges are re-attached to the
/// replacement vertex; duplicates collapse to the first occurrence.
///
/// Returns the compressed graph and a map from each replacement vertex id to
/// the index of the instance it stands for.
pub fn compress(g: &SceneGraph, sub: &Substructure) -> Result<(SceneGraph, BTreeMap<u64, usize>)> {
    // Vertex-disjointness check + owner lookup.
    let mut owner: BTreeMap<u64, usize> = BTreeMap::new();
    for (idx, inst) in sub.instances.iter().enumerate() {
        for &v in &inst.vertex_ids {
            if owner.insert(v, idx).is_some() {
                return Err(Error::OverlappingInstances { vertex: v });
            }
        }
    }

    let mut out = SceneGraph::new();
    for v in g.vertices() {
        if !owner.contains_key(&v.id) {
            out.add_vertex(v.clone())?;
        }
    }

    let base_id = g.fresh_id();
    let mut replacements = BTreeMap::new();
    for (idx, inst) in sub.instances.iter().enumerate() {
        let members: Vec<&Vertex> = inst
            .vertex_ids
            .iter()
            .map(|&id| g.vertex(id).ok_or_else(|| Error::Parse(format!("instance references unknown vertex {id}"))))
            .collect::<Result<_>>()?;
        let centroid = members.iter().map(|v| v.pose.position).sum::<Vector3<f64>>()
            / members.len() as f64;
        let union = members
            .iter()
            .map(|v| v.bbox())
            .reduce(|a, b| a.union(&b))
            .expect("instance is non-empty");
        // Smallest box centered on the centroid that still covers the union.
        let mut he = Vector3::zeros();
        for k in 0..3 {
            he[k] = (centroid[k] - union.min()[k]).max(union.max()[k] - centroid[k]).max(0.0);
        }
        let id = base_id + idx as u64;
        out.add_vertex(Vertex {
            id,
            label: sub.label.clone(),
            pose: crate::geom::Pose { position: centroid, rotation: Matrix3::identity() },
            half_extents: he,
        })?;
        replacements.insert(id, idx);
    }

    for e in g.edges() {
        let src_owner = owner.get(&e.src).copied();
        let dst_owner = owner.get(&e.dst).copied();
        match (src_owner, dst_owner) {
            // Internal to one instance: absorbed into the replacement vertex.
            (Some(a), Some(b)) if a == b => {}
            _ => {
                let src = src_owner.map_or(e.src, |i| base_id + i as u64);
                let dst = dst_owner.map_or(e.dst, |i| base_id + i as u64);
                out.add_edge_dedup(Edge { src, dst, label: e.label.clone() })?;
            }
        }
    }

    Ok((out, replacements))
}

/// One mined level: the graph the pattern was discovered on, the pattern,
/// and the compressed result (the next level's graph).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyLevel {
    pub graph: SceneGraph,
    pub substructure: Substructure,
    pub compressed: SceneGraph,
    pub replacements: BTreeMap<u64, usize>,
}

/// Stack of mined levels; `levels[i].compressed` is `levels[i+1].graph`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub levels: Vec<HierarchyLevel>,
}

impl Hierarchy {
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Expands a vertex of `levels[level].graph` down to the vertices of the
    /// original (level-0) graph it stands for. Replacement vertices unfold
    /// into their instance members; ordinary vertices pass through.
    pub fn expand_to_base(&self, level: usize, vid: u64) -> Vec<&Vertex> {
        if level == 0 {
            return self.levels[0].graph.vertex(vid).into_iter().collect();
        }
        let below = &self.levels[level - 1];
        if let Some(&inst_idx) = below.replacements.get(&vid) {
            below.substructure.instances[inst_idx]
                .vertex_ids
                .iter()
                .flat_map(|&member| self.expand_to_base(level - 1, member))
                .collect()
        } else {
            self.expand_to_base(level - 1, vid)
        }
    }
}
