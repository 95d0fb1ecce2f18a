use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::compress::{compress, Hierarchy, HierarchyLevel, Instance, Substructure};
use crate::error::{Error, Result};
use crate::matching::{match_cost_with, CostModel, Mapping, MatchConfig};
use crate::ssg::SceneGraph;

/// Beam search parameters for substructure discovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningParams {
    /// Beam width: how many queue entries are extended per round.
    pub beam_width: usize,
    /// Total budget of extension calls across the whole discovery.
    pub iteration_limit: usize,
    /// Two extended subgraphs group into one pattern when their match cost
    /// does not exceed this.
    pub t_thr: f64,
    pub match_config: MatchConfig,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            beam_width: 3,
            iteration_limit: 30,
            t_thr: 0.2,
            match_config: MatchConfig::default(),
        }
    }
}

/// Regrouping strategy used when collecting extended instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningMode {
    /// Per-instance extension sets; each group seeds from the first
    /// remaining subgraph and takes the minimum-cost member of every other
    /// set (full pose-aware cost model).
    Modified,
    /// One flat extension list; each group seeds from the head and accepts
    /// matches in list order, silently skipping any subgraph that shares a
    /// vertex with an already accepted member. Costs are structural only.
    Legacy,
}

/// Candidate substructures ordered by compression ratio (best first) with a
/// fixed capacity; ties keep their insertion order.
#[derive(Debug, Clone, Default)]
pub struct CandidateQueue {
    entries: Vec<Substructure>,
    capacity: usize,
}

impl CandidateQueue {
    pub fn new(capacity: usize) -> Self {
        CandidateQueue { entries: Vec::new(), capacity }
    }

    /// Replaces the contents: sorts ascending by compression ratio (stable)
    /// and truncates to capacity.
    pub fn fill(&mut self, mut subs: Vec<Substructure>) {
        subs.sort_by(|a, b| a.compression.total_cmp(&b.compression));
        subs.truncate(self.capacity);
        self.entries = subs;
    }

    pub fn best(&self) -> Option<&Substructure> {
        self.entries.first()
    }

    pub fn entries(&self) -> &[Substructure] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Compression ratio of `g` under `s`: (pattern size + compressed-graph
/// size) / original size, in description-length units (vertices + edges).
/// Edges that end up inside a single instance without being part of the
/// pattern are absorbed by the replacement vertex but still cost one unit
/// each — the replacement has to carry them.
pub fn evaluate(g: &SceneGraph, s: &Substructure) -> Result<f64> {
    let (compressed, _) = compress(g, s)?;
    let mut absorbed = 0usize;
    for inst in &s.instances {
        let members: BTreeSet<u64> = inst.vertex_ids.iter().copied().collect();
        let internal = g
            .edges()
            .iter()
            .filter(|e| members.contains(&e.src) && members.contains(&e.dst))
            .count();
        absorbed += internal - inst.edge_indices.len();
    }
    let dl = g.description_length();
    if dl == 0 {
        return Err(Error::NoGraph);
    }
    Ok((s.pattern.description_length() + compressed.description_length() + absorbed) as f64 / dl as f64)
}

/// One extension of one instance: the instance grown by a single edge (and
/// its far endpoint when that vertex is new), plus the grown subgraph.
#[derive(Debug, Clone)]
struct Extension {
    vertex_ids: Vec<u64>,
    edge_indices: Vec<usize>,
    graph: SceneGraph,
}

impl Extension {
    fn into_instance(self) -> Instance {
        Instance { vertex_ids: self.vertex_ids, edge_indices: self.edge_indices }
    }
}

fn enumerate_extensions(g: &SceneGraph, inst: &Instance) -> Vec<Extension> {
    let members: BTreeSet<u64> = inst.vertex_ids.iter().copied().collect();
    let mut out = Vec::new();
    for (ei, e) in g.edges().iter().enumerate() {
        if inst.edge_indices.contains(&ei) {
            continue;
        }
        let s_in = members.contains(&e.src);
        let d_in = members.contains(&e.dst);
        if !s_in && !d_in {
            continue;
        }
        let mut vertex_ids = inst.vertex_ids.clone();
        if !s_in {
            vertex_ids.push(e.src);
        } else if !d_in {
            vertex_ids.push(e.dst);
        }
        let mut edge_indices = inst.edge_indices.clone();
        edge_indices.push(ei);
        let candidate = Instance { vertex_ids, edge_indices };
        let graph = candidate.subgraph(g).expect("extension built from graph edges");
        out.push(Extension {
            vertex_ids: candidate.vertex_ids,
            edge_indices: candidate.edge_indices,
            graph,
        });
    }
    out
}

/// Reorders a matched member's vertices into pattern order using the
/// mapping; `None` when the mapping is not a full label-preserving
/// bijection (possible only under very loose thresholds).
fn aligned_instance(pattern_vids: &[u64], mapping: &Mapping, ext: &Extension) -> Option<Instance> {
    if ext.vertex_ids.len() != pattern_vids.len() {
        return None;
    }
    let lookup: BTreeMap<u64, Option<u64>> = mapping.pairs.iter().copied().collect();
    let mut vertex_ids = Vec::with_capacity(pattern_vids.len());
    for &pv in pattern_vids {
        vertex_ids.push((*lookup.get(&pv)?)?);
    }
    Some(Instance { vertex_ids, edge_indices: ext.edge_indices.clone() })
}

/// Grows every instance of `s` by each neighboring edge and regroups the
/// grown subgraphs into candidate substructures.
pub fn extend_substruct(
    g: &SceneGraph,
    s: &Substructure,
    params: &MiningParams,
    mode: MiningMode,
) -> Vec<Substructure> {
    let sets: Vec<VecDeque<Extension>> = s
        .instances
        .iter()
        .map(|inst| enumerate_extensions(g, inst).into())
        .collect();
    match mode {
        MiningMode::Modified => regroup_modified(sets, params, &s.label),
        MiningMode::Legacy => regroup_legacy(sets, params, &s.label),
    }
}

fn regroup_modified(
    mut sets: Vec<VecDeque<Extension>>,
    params: &MiningParams,
    label: &str,
) -> Vec<Substructure> {
    let mut groups = Vec::new();
    loop {
        let Some(first) = sets.iter().position(|s| !s.is_empty()) else { break };
        let seed = sets[first].pop_front().expect("non-empty by position check");
        let pattern_vids = seed.vertex_ids.clone();
        let pattern = seed.graph.clone();
        let mut instances = vec![seed.into_instance()];
        for (j, set) in sets.iter_mut().enumerate() {
            if j == first {
                continue;
            }
            let mut best: Option<(usize, f64, Mapping)> = None;
            for (k, cand) in set.iter().enumerate() {
                if cand.graph.vertex_count() != pattern.vertex_count() {
                    continue;
                }
                let m = match_cost_with(&pattern, &cand.graph, &params.match_config, CostModel::Scaled);
                if best.as_ref().is_none_or(|(_, c, _)| m.total_cost < *c) {
                    best = Some((k, m.total_cost, m));
                }
            }
            if let Some((k, cost, mapping)) = best {
                if cost <= params.t_thr {
                    if let Some(inst) = aligned_instance(&pattern_vids, &mapping, &set[k]) {
                        set.remove(k);
                        instances.push(inst);
                    }
                }
            }
        }
        groups.push(Substructure { label: label.to_string(), pattern, instances, compression: 0.0 });
    }
    groups
}

fn regroup_legacy(
    sets: Vec<VecDeque<Extension>>,
    params: &MiningParams,
    label: &str,
) -> Vec<Substructure> {
    let mut flat: VecDeque<Extension> = sets.into_iter().flatten().collect();
    let mut groups = Vec::new();
    while let Some(seed) = flat.pop_front() {
        let pattern_vids = seed.vertex_ids.clone();
        let pattern = seed.graph.clone();
        let mut claimed: BTreeSet<u64> = pattern_vids.iter().copied().collect();
        let mut instances = vec![seed.into_instance()];
        let mut rest = VecDeque::new();
        for cand in flat {
            // A subgraph touching an already accepted member is skipped
            // without being evaluated; it stays available for later groups.
            if cand.vertex_ids.iter().any(|v| claimed.contains(v)) {
                rest.push_back(cand);
                continue;
            }
            if cand.graph.vertex_count() == pattern.vertex_count() {
                let m = match_cost_with(&pattern, &cand.graph, &params.match_config, CostModel::Flat);
                if m.total_cost <= params.t_thr {
                    if let Some(inst) = aligned_instance(&pattern_vids, &m, &cand) {
                        claimed.extend(inst.vertex_ids.iter().copied());
                        instances.push(inst);
                        continue;
                    }
                }
            }
            rest.push_back(cand);
        }
        flat = rest;
        groups.push(Substructure { label: label.to_string(), pattern, instances, compression: 0.0 });
    }
    groups
}

/// Drops later instances that share vertices with earlier ones.
fn disjoint_filter(instances: &mut Vec<Instance>) {
    let mut taken: BTreeSet<u64> = BTreeSet::new();
    instances.retain(|inst| {
        if inst.vertex_ids.iter().any(|v| taken.contains(v)) {
            false
        } else {
            taken.extend(inst.vertex_ids.iter().copied());
            true
        }
    });
}

fn coverage_key(s: &Substructure) -> Vec<(Vec<u64>, Vec<usize>)> {
    let mut key: Vec<(Vec<u64>, Vec<usize>)> = s
        .instances
        .iter()
        .map(|i| {
            let mut v = i.vertex_ids.clone();
            v.sort_unstable();
            let mut e = i.edge_indices.clone();
            e.sort_unstable();
            (v, e)
        })
        .collect();
    key.sort();
    key
}

fn seeds(g: &SceneGraph) -> Vec<Substructure> {
    let mut by_label: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for v in g.vertices() {
        let slot = by_label.entry(&v.label).or_default();
        if slot.is_empty() {
            order.push(&v.label);
        }
        slot.push(v.id);
    }
    let mut out = Vec::new();
    for label in order {
        let ids = &by_label[label];
        // A label seen once can never repeat, so it never seeds.
        if ids.len() < 2 {
            continue;
        }
        let first = Instance { vertex_ids: vec![ids[0]], edge_indices: vec![] };
        let pattern = first.subgraph(g).expect("vertex taken from graph");
        let instances = ids
            .iter()
            .map(|&id| Instance { vertex_ids: vec![id], edge_indices: vec![] })
            .collect();
        out.push(Substructure { label: "p".into(), pattern, instances, compression: 0.0 });
    }
    out
}

/// Beam-searched discovery of the substructure that best compresses `g`.
pub fn discover(g: &SceneGraph, params: &MiningParams) -> Result<Substructure> {
    discover_mode(g, params, MiningMode::Modified)
}

pub fn discover_mode(g: &SceneGraph, params: &MiningParams, mode: MiningMode) -> Result<Substructure> {
    if g.is_empty() {
        return Err(Error::NoPattern { best_ratio: f64::INFINITY });
    }
    let mut seeded = seeds(g);
    for s in &mut seeded {
        s.compression = evaluate(g, s)?;
    }
    if seeded.is_empty() {
        return Err(Error::NoPattern { best_ratio: f64::INFINITY });
    }
    let mut queue = CandidateQueue::new(params.beam_width);
    queue.fill(seeded);
    let mut best = queue.best().expect("seeded queue").clone();
    let mut budget = params.iteration_limit;
    // The ratio is not monotone in pattern size (adding one member can hurt
    // before the next helps), so the search runs until the beam dies out or
    // the budget ends, not merely until a round fails to improve.
    'rounds: loop {
        let mut raw = Vec::new();
        for s in queue.entries() {
            if budget == 0 {
                break 'rounds;
            }
            budget -= 1;
            raw.extend(extend_substruct(g, s, params, mode));
        }
        let mut round = Vec::new();
        let mut seen: BTreeSet<Vec<(Vec<u64>, Vec<usize>)>> = BTreeSet::new();
        for mut cand in raw {
            disjoint_filter(&mut cand.instances);
            if !seen.insert(coverage_key(&cand)) {
                continue;
            }
            cand.compression = evaluate(g, &cand)?;
            round.push(cand);
        }
        if round.is_empty() {
            break;
        }
        queue.fill(round);
        if let Some(top) = queue.best() {
            if top.compression < best.compression {
                best = top.clone();
            }
        }
    }
    if best.compression >= 1.0 {
        return Err(Error::NoPattern { best_ratio: best.compression });
    }
    Ok(best)
}

/// Repeatedly discovers and compresses until nothing compresses anymore or
/// `max_levels` is reached. Level i+1's graph is level i's compressed graph;
/// replacement vertices are labeled p1, p2, ...
pub fn build_hierarchy(g: &SceneGraph, params: &MiningParams, max_levels: usize) -> Result<Hierarchy> {
    build_hierarchy_mode(g, params, max_levels, MiningMode::Modified)
}

pub fn build_hierarchy_mode(
    g: &SceneGraph,
    params: &MiningParams,
    max_levels: usize,
    mode: MiningMode,
) -> Result<Hierarchy> {
    let mut levels = Vec::new();
    let mut current = g.clone();
    for level in 1..=max_levels {
        let mut sub = match discover_mode(&current, params, mode) {
            Ok(s) => s,
            Err(Error::NoPattern { .. }) => break,
            Err(e) => return Err(e),
        };
        sub.label = format!("p{level}");
        let (compressed, replacements) = compress(&current, &sub)?;
        levels.push(HierarchyLevel {
            graph: current,
            substructure: sub,
            compressed: compressed.clone(),
            replacements,
        });
        current = compressed;
    }
    Ok(Hierarchy { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::ssg::{Edge, Vertex};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn vtx(id: u64, label: &str, p: [f64; 3]) -> Vertex {
        Vertex::new(
            id,
            label,
            Pose::at(Vector3::new(p[0], p[1], p[2])),
            Vector3::new(0.1, 0.1, 0.1),
        )
    }

    /// Two triangles with vertex labels a/b/c, optional bridge.
    fn triangles(bridge: bool) -> SceneGraph {
        let mut g = SceneGraph::new();
        let pos = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 1.0, 0.0],
            [10.0, 0.0, 0.0],
            [11.0, 0.0, 0.0],
            [10.5, 1.0, 0.0],
        ];
        for (i, p) in pos.iter().enumerate() {
            g.add_vertex(vtx(i as u64, ["a", "b", "c"][i % 3], *p)).unwrap();
        }
        for (s, d) in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)] {
            g.add_edge(Edge::new(s, d, "rel")).unwrap();
        }
        if bridge {
            g.add_edge(Edge::new(2, 3, "bridge")).unwrap();
        }
        g
    }

    fn triangle_sub(g: &SceneGraph) -> Substructure {
        let inst1 = Instance { vertex_ids: vec![0, 1, 2], edge_indices: vec![0, 1, 2] };
        let inst2 = Instance { vertex_ids: vec![3, 4, 5], edge_indices: vec![3, 4, 5] };
        Substructure {
            label: "p1".into(),
            pattern: inst1.subgraph(g).unwrap(),
            instances: vec![inst1, inst2],
            compression: 0.0,
        }
    }

    #[test]
    fn evaluate_triangle_ratio() {
        let g = triangles(true);
        let s = triangle_sub(&g);
        assert_relative_eq!(evaluate(&g, &s).unwrap(), 9.0 / 13.0, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_single_vertex_no_compression() {
        let mut g = SceneGraph::new();
        g.add_vertex(vtx(0, "a", [0.0; 3])).unwrap();
        let inst = Instance { vertex_ids: vec![0], edge_indices: vec![] };
        let s = Substructure {
            label: "p1".into(),
            pattern: inst.subgraph(&g).unwrap(),
            instances: vec![inst],
            compression: 0.0,
        };
        assert_relative_eq!(evaluate(&g, &s).unwrap(), 2.0);
    }

    #[test]
    fn evaluate_counts_absorbed_edges() {
        // Pattern = 2-edge path over a triangle's vertices: the closing edge
        // is absorbed but still costs one unit.
        let g = triangles(false);
        let inst1 = Instance { vertex_ids: vec![0, 1, 2], edge_indices: vec![0, 1] };
        let inst2 = Instance { vertex_ids: vec![3, 4, 5], edge_indices: vec![3, 4] };
        let s = Substructure {
            label: "p1".into(),
            pattern: inst1.subgraph(&g).unwrap(),
            instances: vec![inst1, inst2],
            compression: 0.0,
        };
        // DL(S)=5, compressed = 2 lone vertices, absorbed = 2, DL(G)=12.
        assert_relative_eq!(evaluate(&g, &s).unwrap(), 9.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn extend_groups_chain_extensions() {
        // a→b←a: both single-vertex instances extend into the same a-b shape.
        // Degenerate (2-point) alignments are translation-only, so the two
        // a→b offsets must agree within the distance clamp to group.
        let mut g = SceneGraph::new();
        g.add_vertex(vtx(0, "a", [0.0; 3])).unwrap();
        g.add_vertex(vtx(1, "b", [1.0, 0.0, 0.0])).unwrap();
        g.add_vertex(vtx(2, "a", [0.0, 0.3, 0.0])).unwrap();
        g.add_edge(Edge::new(0, 1, "rel")).unwrap();
        g.add_edge(Edge::new(2, 1, "rel")).unwrap();
        let seed = Substructure {
            label: "p".into(),
            pattern: Instance { vertex_ids: vec![0], edge_indices: vec![] }.subgraph(&g).unwrap(),
            instances: vec![
                Instance { vertex_ids: vec![0], edge_indices: vec![] },
                Instance { vertex_ids: vec![2], edge_indices: vec![] },
            ],
            compression: 0.0,
        };
        let groups = extend_substruct(&g, &seed, &MiningParams::default(), MiningMode::Modified);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].instances.len(), 2);
        assert_eq!(groups[0].instances[0].vertex_ids, vec![0, 1]);
        assert_eq!(groups[0].instances[1].vertex_ids, vec![2, 1]);
    }

    /// Three candidate extensions: A (the group seed), D (slightly displaced
    /// but within threshold, earlier in the extension order), E (exact
    /// isomorph, later, sharing a vertex with D). The two regrouping modes
    /// pick different partners.
    fn ambiguous_extension_graph() -> (SceneGraph, Substructure) {
        let mut g = SceneGraph::new();
        g.add_vertex(vtx(0, "a", [0.0, 0.0, 0.0])).unwrap();
        g.add_vertex(vtx(1, "b", [2.0, 0.0, 0.0])).unwrap();
        g.add_vertex(vtx(2, "a", [10.0, 0.0, 0.0])).unwrap();
        g.add_vertex(vtx(3, "b", [10.0, 2.3, 0.0])).unwrap();
        g.add_vertex(vtx(4, "b", [12.0, 0.0, 0.0])).unwrap();
        g.add_edge(Edge::new(0, 1, "rel")).unwrap();
        g.add_edge(Edge::new(2, 3, "rel")).unwrap();
        g.add_edge(Edge::new(2, 4, "rel")).unwrap();
        let seed = Substructure {
            label: "p".into(),
            pattern: Instance { vertex_ids: vec![0], edge_indices: vec![] }.subgraph(&g).unwrap(),
            instances: vec![
                Instance { vertex_ids: vec![0], edge_indices: vec![] },
                Instance { vertex_ids: vec![2], edge_indices: vec![] },
            ],
            compression: 0.0,
        };
        (g, seed)
    }

    #[test]
    fn modified_regrouping_prefers_minimum_cost() {
        let (g, seed) = ambiguous_extension_graph();
        let params = MiningParams {
            match_config: MatchConfig { d_min: 0.0, ..MatchConfig::default() },
            ..MiningParams::default()
        };
        let groups = extend_substruct(&g, &seed, &params, MiningMode::Modified);
        // The first group pairs the seed with the exact isomorph (vertex 4),
        // not the earlier displaced one (vertex 3).
        assert_eq!(groups[0].instances.len(), 2);
        assert_eq!(groups[0].instances[1].vertex_ids, vec![2, 4]);
    }

    #[test]
    fn legacy_regrouping_accepts_in_list_order() {
        let (g, seed) = ambiguous_extension_graph();
        let params = MiningParams {
            match_config: MatchConfig { d_min: 0.0, ..MatchConfig::default() },
            ..MiningParams::default()
        };
        let groups = extend_substruct(&g, &seed, &params, MiningMode::Legacy);
        // The displaced subgraph comes first in the flat list and is accepted;
        // the exact isomorph shares vertex 2 with it and is never evaluated.
        assert_eq!(groups[0].instances.len(), 2);
        assert_eq!(groups[0].instances[1].vertex_ids, vec![2, 3]);
    }

    #[test]
    fn discover_finds_triangle() {
        let g = triangles(false);
        let best = discover(&g, &MiningParams::default()).unwrap();
        assert_eq!(best.pattern.vertex_count(), 3);
        assert_eq!(best.pattern.edge_count(), 3);
        assert_eq!(best.instances.len(), 2);
        assert_relative_eq!(best.compression, 8.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn discover_reports_no_pattern_for_unique_labels() {
        let mut g = SceneGraph::new();
        for (i, l) in ["a", "b", "c"].iter().enumerate() {
            g.add_vertex(vtx(i as u64, l, [i as f64, 0.0, 0.0])).unwrap();
        }
        g.add_edge(Edge::new(0, 1, "rel")).unwrap();
        assert!(matches!(
            discover(&g, &MiningParams::default()),
            Err(Error::NoPattern { .. })
        ));
    }

    #[test]
    fn hierarchy_depth_on_triangles() {
        let g = triangles(false);
        let h = build_hierarchy(&g, &MiningParams::default(), 5).unwrap();
        assert_eq!(h.levels.len(), 1);
        assert_eq!(h.levels[0].substructure.label, "p1");
        assert_eq!(h.levels[0].compressed.vertex_count(), 2);
        assert_eq!(h.levels[0].compressed.edge_count(), 0);
        let empty = build_hierarchy(&SceneGraph::new(), &MiningParams::default(), 3).unwrap();
        assert!(empty.is_empty());
    }
}
