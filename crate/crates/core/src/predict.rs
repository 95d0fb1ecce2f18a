//! Structure prediction at entry vertices.
//!
//! Mined patterns describe recurring structure; when an entry-class vertex
//! (e.g. a manhole) is observed without the structure that usually surrounds
//! it, the pattern can be anchored there to hypothesize what lies beyond.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::compress::{Hierarchy, Substructure};
use crate::error::{Error, Result};
use crate::geom::{overlap_test, positive_volume_overlap, Aabb, Pose, RigidTransform};
use crate::ssg::{Edge, SceneGraph, Vertex};

/// Relation label linking an entry vertex to its complementary twin.
pub const COMPLEMENT_LABEL: &str = "complement";

/// A level graph augmented with complementary entry vertices.
///
/// Entry vertices shared between neighboring structures play two roles at
/// once (exit of one, entrance of the next). Splitting each into the
/// original plus a same-pose twin lets every pattern instance own a full
/// set of entry slots while unclaimed twins become anchors for prediction.
#[derive(Debug, Clone)]
pub struct ModifiedGraph {
    pub graph: SceneGraph,
    /// Complementary twin id → the entry vertex it mirrors.
    pub partners: BTreeMap<u64, u64>,
    /// Instance memberships after modification, in instance order.
    pub instances: Vec<Vec<u64>>,
}

impl ModifiedGraph {
    pub fn is_complementary(&self, id: u64) -> bool {
        self.partners.contains_key(&id)
    }
}

/// Splits entry vertices into original/twin pairs around the instances of
/// `sub` inside `level`:
///
/// 1. every entry vertex inside an instance gains a twin outside it; edges
///    leaving the instance move to the twin and a `complement` link ties the
///    pair together;
/// 2. every outside entry vertex adjacent to an instance is mirrored by a
///    twin inside that instance the same way;
/// 3. outside twins whose connection into an instance runs through a
///    non-entry vertex are absorbed as members of that instance.
pub fn modify_graph(
    level: &SceneGraph,
    sub: &Substructure,
    entry_classes: &[String],
) -> Result<ModifiedGraph> {
    let is_entry = |label: &str| entry_classes.iter().any(|c| c == label);
    let mut graph = level.clone();
    let mut instances: Vec<Vec<u64>> =
        sub.instances.iter().map(|i| i.vertex_ids.clone()).collect();
    let mut partners: BTreeMap<u64, u64> = BTreeMap::new();

    // Step 1: mirror in-instance entry vertices outward.
    for members in &instances {
        let inside: BTreeSet<u64> = members.iter().copied().collect();
        for &vid in members {
            let v = graph
                .vertex(vid)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("instance references unknown vertex {vid}")))?;
            if !is_entry(&v.label) {
                continue;
            }
            let twin = graph.fresh_id();
            graph.add_vertex(Vertex::new(twin, v.label.clone(), v.pose, v.half_extents))?;
            graph.rehome_edges(vid, twin, |other| !inside.contains(&other))?;
            graph.add_edge(Edge::new(vid, twin, COMPLEMENT_LABEL))?;
            partners.insert(twin, vid);
        }
    }

    // Step 2: mirror adjacent outside entry vertices inward.
    for ii in 0..instances.len() {
        let inside: BTreeSet<u64> = instances[ii].iter().copied().collect();
        let mut adjacent: Vec<u64> = Vec::new();
        for e in graph.edges() {
            let (outer, inner) = match (inside.contains(&e.src), inside.contains(&e.dst)) {
                (false, true) => (e.src, e.dst),
                (true, false) => (e.dst, e.src),
                _ => continue,
            };
            // Twins reaching into the instance are step-3 material; an inner
            // twin means this outer vertex was already mirrored here.
            if partners.contains_key(&outer) || partners.contains_key(&inner) {
                continue;
            }
            let outer_label = &graph.vertex(outer).expect("edge endpoint exists").label;
            if is_entry(outer_label) && !adjacent.contains(&outer) {
                adjacent.push(outer);
            }
        }
        for outer in adjacent {
            let v = graph.vertex(outer).cloned().expect("edge endpoint exists");
            let twin = graph.fresh_id();
            graph.add_vertex(Vertex::new(twin, v.label.clone(), v.pose, v.half_extents))?;
            graph.rehome_edges(outer, twin, |other| inside.contains(&other))?;
            graph.add_edge(Edge::new(outer, twin, COMPLEMENT_LABEL))?;
            partners.insert(twin, outer);
            instances[ii].push(twin);
        }
    }

    // Step 3: absorb outside twins tied to an instance through non-entry
    // vertices. A twin linked to its own partner inside the instance stays
    // out: it is that instance's outward mirror.
    for ii in 0..instances.len() {
        let claimed: BTreeSet<u64> = instances.iter().flatten().copied().collect();
        let inside: BTreeSet<u64> = instances[ii].iter().copied().collect();
        let mut absorb: Vec<u64> = Vec::new();
        for e in graph.edges() {
            let (outer, inner) = match (inside.contains(&e.src), inside.contains(&e.dst)) {
                (false, true) => (e.src, e.dst),
                (true, false) => (e.dst, e.src),
                _ => continue,
            };
            if !partners.contains_key(&outer) || claimed.contains(&outer) {
                continue;
            }
            let inner_label = &graph.vertex(inner).expect("edge endpoint exists").label;
            if is_entry(inner_label) && !partners.contains_key(&inner) {
                continue;
            }
            if !absorb.contains(&outer) {
                absorb.push(outer);
            }
        }
        instances[ii].extend(absorb);
    }

    Ok(ModifiedGraph { graph, partners, instances })
}

/// One hypothesized vertex of a placed pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictedVertex {
    /// Level-graph vertex this was transformed from (twins resolve to their
    /// partner, so the id is always expandable down the hierarchy).
    pub source: u64,
    pub label: String,
    pub pose: Pose,
    pub bbox: Aabb,
}

/// A pattern placement anchored at a loose entry vertex.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionCandidate {
    /// Hierarchy level the placement was computed on.
    pub level: usize,
    /// Loose entry vertex the pattern was anchored at.
    pub anchor: u64,
    /// The anchor as a real graph vertex: complementary anchors resolve to
    /// the entry vertex they mirror, real anchors to themselves.
    pub anchor_source: u64,
    /// Entry slot of the representative instance mapped onto the anchor.
    pub pattern_entry: u64,
    /// Rigid motion carrying the representative instance onto the anchor.
    pub transform: RigidTransform,
    /// Number of pattern vertices confirmed by same-label overlaps.
    pub overlap_score: usize,
    /// Unconfirmed pattern vertices: the actual prediction.
    pub predicted_vertices: Vec<PredictedVertex>,
}

/// Anchors the representative instance of every entry-bearing level at each
/// loose entry vertex and keeps the placements that do not contradict the
/// observed scene. Candidates are ordered by descending overlap score, then
/// ascending anchor id; only the top `phi` fraction of scores is returned
/// (ties kept). `kappa` is the minimum overlap fraction for counting an
/// existing vertex as confirmation.
pub fn predict(
    h: &Hierarchy,
    entry_classes: &[String],
    phi: f64,
    kappa: f64,
) -> Result<Vec<PredictionCandidate>> {
    let is_entry = |label: &str| entry_classes.iter().any(|c| c == label);
    let mut all: Vec<PredictionCandidate> = Vec::new();
    for (li, lvl) in h.levels.iter().enumerate() {
        if !lvl.substructure.pattern.vertices().iter().any(|v| is_entry(&v.label)) {
            continue;
        }
        let mg = modify_graph(&lvl.graph, &lvl.substructure, entry_classes)?;
        let claimed: BTreeSet<u64> = mg.instances.iter().flatten().copied().collect();
        let loose: Vec<u64> = mg
            .graph
            .vertices()
            .iter()
            .filter(|v| is_entry(&v.label) && !claimed.contains(&v.id))
            .map(|v| v.id)
            .collect();
        if loose.is_empty() {
            continue;
        }
        let entry_slots = |members: &[u64]| -> Vec<u64> {
            members
                .iter()
                .copied()
                .filter(|&m| is_entry(&mg.graph.vertex(m).expect("member exists").label))
                .collect()
        };
        // Representative: the instance with the most entry slots, first on
        // ties. More slots means more distinct ways to hang the pattern off
        // an anchor.
        let mut rep: Option<&Vec<u64>> = None;
        for members in &mg.instances {
            if rep.is_none_or(|r| entry_slots(members).len() > entry_slots(r).len()) {
                rep = Some(members);
            }
        }
        let Some(rep) = rep else { continue };
        let slots = entry_slots(rep);
        for &anchor in &loose {
            let anchor_pose = mg.graph.vertex(anchor).expect("loose vertex exists").pose;
            let mut best: Option<PredictionCandidate> = None;
            for &slot in &slots {
                let slot_pose = mg.graph.vertex(slot).expect("slot exists").pose;
                let t = RigidTransform::aligning(&slot_pose, &anchor_pose);
                let Some(cand) = place(li, &mg, &claimed, rep, anchor, slot, t, &is_entry, kappa)
                else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| cand.overlap_score > b.overlap_score) {
                    best = Some(cand);
                }
            }
            if let Some(b) = best {
                all.push(b);
            }
        }
    }
    all.sort_by(|a, b| b.overlap_score.cmp(&a.overlap_score).then(a.anchor.cmp(&b.anchor)));
    if all.is_empty() || phi >= 1.0 {
        return Ok(all);
    }
    let keep = ((phi * all.len() as f64).ceil() as usize).clamp(1, all.len());
    let cutoff = all[keep - 1].overlap_score;
    Ok(all.into_iter().filter(|c| c.overlap_score >= cutoff).collect())
}

/// Transforms the representative members by `t` and scores the placement,
/// or rejects it. A placement is contradicted when a transformed box eats
/// into the volume of a different-label vertex, or into an instance member
/// while the transformed vertex is not itself entry-class (entry vertices
/// legitimately land on instance boundaries they are shared with).
#[allow(clippy::too_many_arguments)]
fn place(
    level: usize,
    mg: &ModifiedGraph,
    claimed: &BTreeSet<u64>,
    rep: &[u64],
    anchor: u64,
    slot: u64,
    t: RigidTransform,
    is_entry: &impl Fn(&str) -> bool,
    kappa: f64,
) -> Option<PredictionCandidate> {
    let mut score = 0usize;
    let mut predicted = Vec::new();
    for &m in rep {
        let v = mg.graph.vertex(m).expect("member exists");
        let pose = t.apply_pose(&v.pose);
        let bbox = t.apply_aabb(&v.bbox());
        let mut confirmed = false;
        for w in mg.graph.vertices() {
            let wb = w.bbox();
            if positive_volume_overlap(&bbox, &wb) {
                if w.label != v.label {
                    return None;
                }
                if claimed.contains(&w.id) && !is_entry(&v.label) {
                    return None;
                }
            }
            if w.label == v.label && overlap_test(&bbox, &wb, kappa) {
                confirmed = true;
            }
        }
        if confirmed {
            score += 1;
        } else {
            let source = mg.partners.get(&m).copied().unwrap_or(m);
            predicted.push(PredictedVertex { source, label: v.label.clone(), pose, bbox });
        }
    }
    Some(PredictionCandidate {
        level,
        anchor,
        anchor_source: mg.partners.get(&anchor).copied().unwrap_or(anchor),
        pattern_entry: slot,
        transform: t,
        overlap_score: score,
        predicted_vertices: predicted,
    })
}

/// Expands a candidate's predicted vertices down to original-graph objects,
/// carried into the predicted frame. Confirmed pattern vertices are not
/// expanded; they already exist in the scene.
pub fn expand_candidate(h: &Hierarchy, c: &PredictionCandidate) -> Vec<PredictedVertex> {
    let mut out = Vec::new();
    for pv in &c.predicted_vertices {
        for base in h.expand_to_base(c.level, pv.source) {
            out.push(PredictedVertex {
                source: base.id,
                label: base.label.clone(),
                pose: c.transform.apply_pose(&base.pose),
                bbox: c.transform.apply_aabb(&base.bbox()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{compress, HierarchyLevel, Instance};
    use nalgebra::Vector3;

    fn cell(id: u64, x: f64) -> Vertex {
        Vertex::new(id, "cell", Pose::at(Vector3::new(x, 0.0, 0.0)), Vector3::new(4.0, 4.0, 4.0))
    }

    fn door(id: u64, x: f64) -> Vertex {
        Vertex::new(id, "door", Pose::at(Vector3::new(x, 0.0, 0.0)), Vector3::new(0.0, 0.5, 0.5))
    }

    /// Two explored cells in a row. Doors sit on the cell faces: dL caps the
    /// row on the left, d0 is shared between the cells, d1 hangs loose on
    /// the right face of c1. Instances claim each cell with its left door.
    fn row_of_cells() -> (SceneGraph, Substructure) {
        let mut g = SceneGraph::new();
        g.add_vertex(cell(0, 0.0)).unwrap();
        g.add_vertex(cell(1, 10.0)).unwrap();
        g.add_vertex(door(2, -5.0)).unwrap();
        g.add_vertex(door(3, 5.0)).unwrap();
        g.add_vertex(door(4, 15.0)).unwrap();
        g.add_edge(Edge::new(2, 0, "opens")).unwrap();
        g.add_edge(Edge::new(3, 0, "opens")).unwrap();
        g.add_edge(Edge::new(3, 1, "opens")).unwrap();
        g.add_edge(Edge::new(4, 1, "opens")).unwrap();
        let pattern = Instance { vertex_ids: vec![0, 2], edge_indices: vec![0] }
            .subgraph(&g)
            .unwrap();
        let sub = Substructure {
            label: "p1".into(),
            pattern,
            instances: vec![
                Instance { vertex_ids: vec![0, 2], edge_indices: vec![0] },
                Instance { vertex_ids: vec![1, 3], edge_indices: vec![2] },
            ],
            compression: 0.5,
        };
        (g, sub)
    }

    fn entry() -> Vec<String> {
        vec!["door".to_string()]
    }

    #[test]
    fn modify_mirrors_rehomes_and_absorbs() {
        let (g, sub) = row_of_cells();
        let mg = modify_graph(&g, &sub, &entry()).unwrap();

        // One twin per in-instance door (dL, d0) plus one for the loose d1
        // mirrored into the second instance.
        assert_eq!(mg.partners.len(), 3);
        let twin_of = |orig: u64| {
            *mg.partners
                .iter()
                .find(|(_, &o)| o == orig)
                .map(|(t, _)| t)
                .expect("twin exists")
        };
        let (t_dl, t_d0, t_d1) = (twin_of(2), twin_of(3), twin_of(4));

        // Twins share label and pose with their partner.
        for (&twin, &orig) in &mg.partners {
            let tv = mg.graph.vertex(twin).unwrap();
            let ov = mg.graph.vertex(orig).unwrap();
            assert_eq!(tv.label, ov.label);
            assert_eq!(tv.pose.position, ov.pose.position);
        }

        // d0's edge out of its instance moved to the twin; the in-instance
        // edge stayed put.
        assert!(mg.graph.edges().iter().any(|e| e.src == t_d0 && e.dst == 0));
        assert!(mg.graph.edges().iter().any(|e| e.src == 3 && e.dst == 1));
        // The loose door's instance edge now runs from its inner twin.
        assert!(mg.graph.edges().iter().any(|e| e.src == t_d1 && e.dst == 1));
        assert!(!mg.graph.edges().iter().any(|e| e.src == 4 && e.dst == 1));
        // Each pair is tied by a complement link.
        for (&twin, &orig) in &mg.partners {
            assert!(mg
                .graph
                .edges()
                .iter()
                .any(|e| e.src == orig && e.dst == twin && e.label == COMPLEMENT_LABEL));
        }

        // First instance absorbed d0's outward twin; dL's twin stays loose
        // because its only tie is the complement link to dL itself.
        assert_eq!(mg.instances[0], vec![0, 2, t_d0]);
        assert_eq!(mg.instances[1], vec![1, 3, t_d1]);
        let claimed: BTreeSet<u64> = mg.instances.iter().flatten().copied().collect();
        assert!(!claimed.contains(&t_dl));
        assert!(!claimed.contains(&4));
    }

    #[test]
    fn predict_extends_the_row() {
        let (g, sub) = row_of_cells();
        let mut h = Hierarchy::default();
        let (compressed, replacements) = compress(&g, &sub).unwrap();
        h.levels.push(HierarchyLevel { graph: g, substructure: sub, compressed, replacements });

        let cands = predict(&h, &entry(), 1.0, 0.5).unwrap();
        assert!(!cands.is_empty());

        // The loose real door anchors the best placement: the pattern slides
        // one pitch to the right and hypothesizes a third cell at x = 20.
        let best = &cands[0];
        assert_eq!(best.anchor, 4);
        assert_eq!(best.pattern_entry, 2);
        assert_eq!(best.overlap_score, 1);
        assert!((best.transform.translation - Vector3::new(20.0, 0.0, 0.0)).norm() < 1e-12);
        let cells: Vec<_> =
            best.predicted_vertices.iter().filter(|p| p.label == "cell").collect();
        assert_eq!(cells.len(), 1);
        assert!((cells[0].pose.position - Vector3::new(20.0, 0.0, 0.0)).norm() < 1e-12);
        // The anchor door itself was confirmed, not re-predicted.
        assert!(best
            .predicted_vertices
            .iter()
            .all(|p| (p.pose.position - Vector3::new(15.0, 0.0, 0.0)).norm() > 1e-9));

        // No accepted placement may bite into a different-label vertex.
        for c in &cands {
            for p in &c.predicted_vertices {
                for v in h.levels[c.level].graph.vertices() {
                    if v.label != p.label {
                        assert!(!positive_volume_overlap(&p.bbox, &v.bbox()));
                    }
                }
            }
        }

        // Anchors are per-candidate unique and sorted by score then id.
        for w in cands.windows(2) {
            assert!(
                w[0].overlap_score > w[1].overlap_score
                    || (w[0].overlap_score == w[1].overlap_score && w[0].anchor < w[1].anchor)
            );
        }
    }

    #[test]
    fn identity_placements_are_rejected() {
        let (g, sub) = row_of_cells();
        let mut h = Hierarchy::default();
        let (compressed, replacements) = compress(&g, &sub).unwrap();
        h.levels.push(HierarchyLevel { graph: g, substructure: sub, compressed, replacements });
        let cands = predict(&h, &entry(), 1.0, 0.5).unwrap();
        // No candidate is allowed to sit on top of an explored cell.
        for c in &cands {
            for p in &c.predicted_vertices {
                if p.label == "cell" {
                    assert!(p.pose.position.x < -5.0 || p.pose.position.x > 15.0);
                }
            }
        }
    }

    #[test]
    fn expansion_carries_transform() {
        let (g, sub) = row_of_cells();
        let mut h = Hierarchy::default();
        let (compressed, replacements) = compress(&g, &sub).unwrap();
        h.levels.push(HierarchyLevel { graph: g, substructure: sub, compressed, replacements });
        let cands = predict(&h, &entry(), 1.0, 0.5).unwrap();
        let base = expand_candidate(&h, &cands[0]);
        // Level 0 expansion passes vertices through, moved by the transform.
        assert_eq!(base.len(), cands[0].predicted_vertices.len());
        let cell = base.iter().find(|p| p.label == "cell").unwrap();
        assert_eq!(cell.source, 0);
        assert!((cell.pose.position - Vector3::new(20.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn no_entry_pattern_yields_no_candidates() {
        let (g, sub) = row_of_cells();
        let mut h = Hierarchy::default();
        let (compressed, replacements) = compress(&g, &sub).unwrap();
        h.levels.push(HierarchyLevel { graph: g, substructure: sub, compressed, replacements });
        let cands = predict(&h, &["hatch".to_string()], 1.0, 0.5).unwrap();
        assert!(cands.is_empty());
    }
}
