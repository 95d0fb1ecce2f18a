use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{clamp_distance, rigid_align};
use crate::ssg::SceneGraph;

/// Costs and thresholds for inexact graph matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub cost_vertex_add: f64,
    pub cost_vertex_del: f64,
    pub cost_edge_add: f64,
    pub cost_edge_del: f64,
    pub cost_vertex_label_sub: f64,
    pub cost_edge_label_sub: f64,
    /// Weight of the pose term.
    pub gamma_p: f64,
    /// Residual distances at or below this clamp to zero.
    pub d_min: f64,
    /// Residual distances at or above this clamp to `d_max`.
    pub d_max: f64,
    /// Maximum cost at which two subgraphs still count as the same pattern.
    pub t_thr: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            cost_vertex_add: 1.0,
            cost_vertex_del: 1.0,
            cost_edge_add: 1.0,
            cost_edge_del: 1.0,
            cost_vertex_label_sub: 4.0,
            cost_edge_label_sub: 1.0,
            gamma_p: 1.0,
            d_min: 0.5,
            d_max: 4.0,
            t_thr: 0.2,
        }
    }
}

/// Which cost terms participate in matching. `Scaled` is the full model
/// (degree-scaled edit costs plus the pose term); `Flat` drops both, leaving
/// unscaled structural edit costs only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CostModel {
    Scaled,
    Flat,
}

/// A vertex correspondence between two graphs. Every g1 vertex appears
/// exactly once (ascending id); `None` marks a vertex with no counterpart.
/// g2 vertices absent from the pairs are implicitly deleted.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub pairs: Vec<(u64, Option<u64>)>,
    pub total_cost: f64,
    pub pose_cost: f64,
    pub transform_cost: f64,
}

/// Pose term: aligns the matched g2 positions onto their g1 counterparts
/// with the optimal rigid transform, then sums clamped residual distances
/// normalized by `d_max` and weighted by `gamma_p`.
pub fn pose_cost(pairs: &[(u64, Option<u64>)], g1: &SceneGraph, g2: &SceneGraph, cfg: &MatchConfig) -> f64 {
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    for &(a, b) in pairs {
        if let Some(b) = b {
            let (Some(v1), Some(v2)) = (g1.vertex(a), g2.vertex(b)) else { continue };
            p1.push(v1.pose.position);
            p2.push(v2.pose.position);
        }
    }
    if p1.is_empty() {
        return 0.0;
    }
    let t = rigid_align(&p1, &p2);
    let mut sum = 0.0;
    for (a, b) in p1.iter().zip(&p2) {
        let d = (a - t.apply(b)).norm();
        sum += clamp_distance(d, cfg.d_min, cfg.d_max);
    }
    cfg.gamma_p * sum / cfg.d_max
}

/// Structural term: per vertex pair, sums the costs of the edit operations
/// needed to turn g2 into g1 (vertex add for unmatched g1 vertices, vertex
/// delete for unused g2 vertices, label substitutions, and edge add /
/// delete / substitution), each scaled by 1 + η/η_max where η is the larger
/// degree in the pair. Every edge operation is charged exactly once, to the
/// pair whose g1 endpoint has the higher id (for edges without g1 endpoints,
/// the higher-id unused g2 vertex).
pub fn transform_cost(pairs: &[(u64, Option<u64>)], g1: &SceneGraph, g2: &SceneGraph, cfg: &MatchConfig) -> f64 {
    evaluate_structure(pairs, g1, g2, cfg, CostModel::Scaled)
}

fn degree_scale(eta: usize, eta_max: usize, model: CostModel) -> f64 {
    match model {
        CostModel::Flat => 1.0,
        CostModel::Scaled => {
            if eta_max == 0 {
                1.0
            } else {
                1.0 + eta as f64 / eta_max as f64
            }
        }
    }
}

/// Cost of reconciling the multisets of edge labels on one directed vertex
/// pair: identical labels cancel, leftovers pair up as substitutions when
/// that is cheaper than an add plus a delete, and the rest are added
/// (missing in g2) or deleted (extra in g2).
fn bucket_cost(l1: &[&str], l2: &[&str], cfg: &MatchConfig) -> f64 {
    if l1.is_empty() && l2.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for &l in l1 {
        *counts.entry(l).or_default() += 1;
    }
    for &l in l2 {
        *counts.entry(l).or_default() -= 1;
    }
    let r1: i64 = counts.values().filter(|&&c| c > 0).sum();
    let r2: i64 = -counts.values().filter(|&&c| c < 0).sum::<i64>();
    let paired = r1.min(r2) as f64;
    let pair_cost = cfg.cost_edge_label_sub.min(cfg.cost_edge_add + cfg.cost_edge_del);
    paired * pair_cost
        + (r1 - r1.min(r2)) as f64 * cfg.cost_edge_add
        + (r2 - r1.min(r2)) as f64 * cfg.cost_edge_del
}

/// Directed edge-label lookup: (src id, dst id) → labels, plus per-vertex degree.
struct GraphView<'a> {
    buckets: BTreeMap<(u64, u64), Vec<&'a str>>,
    degrees: BTreeMap<u64, usize>,
    max_degree: usize,
}

impl<'a> GraphView<'a> {
    fn new(g: &'a SceneGraph) -> Self {
        let mut buckets: BTreeMap<(u64, u64), Vec<&str>> = BTreeMap::new();
        for e in g.edges() {
            buckets.entry((e.src, e.dst)).or_default().push(&e.label);
        }
        let degrees = g.vertices().iter().map(|v| (v.id, g.degree(v.id))).collect();
        GraphView { buckets, degrees, max_degree: g.max_degree() }
    }

    fn labels(&self, src: u64, dst: u64) -> &[&'a str] {
        self.buckets.get(&(src, dst)).map_or(&[], |v| v.as_slice())
    }
}

fn evaluate_structure(
    pairs: &[(u64, Option<u64>)],
    g1: &SceneGraph,
    g2: &SceneGraph,
    cfg: &MatchConfig,
    model: CostModel,
) -> f64 {
    let view1 = GraphView::new(g1);
    let view2 = GraphView::new(g2);
    let eta_max = view1.max_degree.max(view2.max_degree);
    // Process g1 vertices in ascending id order so that when a vertex is
    // reached, every edge bucket toward lower-id vertices is final.
    let mut ordered: Vec<(u64, Option<u64>)> = pairs.to_vec();
    ordered.sort_by_key(|&(a, _)| a);
    let mut total = 0.0;
    for (i, &(a, fa)) in ordered.iter().enumerate() {
        let mut raw = match fa {
            None => cfg.cost_vertex_add,
            Some(b) => {
                let (Some(v1), Some(v2)) = (g1.vertex(a), g2.vertex(b)) else { continue };
                if v1.label == v2.label { 0.0 } else { cfg.cost_vertex_label_sub }
            }
        };
        for &(w, fw) in &ordered[..i] {
            for (s1, d1, s2, d2) in [(a, w, fa, fw), (w, a, fw, fa)] {
                let l1 = view1.labels(s1, d1);
                let l2 = match (s2, d2) {
                    (Some(s2), Some(d2)) => view2.labels(s2, d2),
                    _ => &[],
                };
                raw += bucket_cost(l1, l2, cfg);
            }
        }
        let eta = view1.degrees.get(&a).copied().unwrap_or(0).max(
            fa.and_then(|b| view2.degrees.get(&b).copied()).unwrap_or(0),
        );
        total += degree_scale(eta, eta_max, model) * raw;
    }
    // Unused g2 vertices are deleted together with their remaining edges.
    let used: Vec<u64> = ordered.iter().filter_map(|&(_, b)| b).collect();
    let mut unused: Vec<u64> = g2
        .vertices()
        .iter()
        .map(|v| v.id)
        .filter(|id| !used.contains(id))
        .collect();
    unused.sort_unstable();
    for &b in &unused {
        let mut raw = cfg.cost_vertex_del;
        for e in g2.edges() {
            let s_un = unused.contains(&e.src);
            let d_un = unused.contains(&e.dst);
            let owner = match (s_un, d_un) {
                (true, true) => e.src.max(e.dst),
                (true, false) => e.src,
                (false, true) => e.dst,
                (false, false) => continue,
            };
            if owner == b {
                raw += cfg.cost_edge_del;
            }
        }
        let eta = view2.degrees.get(&b).copied().unwrap_or(0);
        total += degree_scale(eta, eta_max, model) * raw;
    }
    total
}

/// Finds a minimum-cost vertex mapping between two graphs by depth-first
/// branch and bound. Roles are swapped internally so the side with more
/// vertices plays g1; the returned pairs are always from the caller's g1
/// perspective. Branches are pruned once their accumulated structural cost
/// reaches the best complete mapping found so far or exceeds ten times
/// `t_thr`; if the cap prunes every branch, a greedy completion is returned
/// so the caller can still compare its cost against `t_thr`.
pub fn match_cost(g1: &SceneGraph, g2: &SceneGraph, cfg: &MatchConfig) -> Mapping {
    match_cost_with(g1, g2, cfg, CostModel::Scaled)
}

pub(crate) fn match_cost_with(g1: &SceneGraph, g2: &SceneGraph, cfg: &MatchConfig, model: CostModel) -> Mapping {
    if g1.vertex_count() >= g2.vertex_count() {
        search(g1, g2, cfg, model, false)
    } else {
        search(g2, g1, cfg, model, true)
    }
}

struct Search<'a> {
    ids1: Vec<u64>,
    ids2: Vec<u64>,
    pos1: Vec<Vector3<f64>>,
    pos2: Vec<Vector3<f64>>,
    labels_eq: Vec<Vec<bool>>,
    deg1: Vec<usize>,
    deg2: Vec<usize>,
    eta_max: usize,
    view1: GraphView<'a>,
    view2: GraphView<'a>,
    g2: &'a SceneGraph,
    cfg: &'a MatchConfig,
    model: CostModel,
    cap: f64,
    assign: Vec<Option<usize>>,
    used2: Vec<bool>,
    best: Option<(f64, f64, f64, Vec<Option<usize>>)>,
}

impl<'a> Search<'a> {
    /// Structural cost of assigning g1 vertex `k` to `choice`, given that
    /// vertices 0..k are already assigned. Ids ascend with depth, so vertex
    /// k owns every edge bucket between itself and earlier vertices.
    fn step_cost(&self, k: usize, choice: Option<usize>) -> f64 {
        let mut raw = match choice {
            None => self.cfg.cost_vertex_add,
            Some(j) => {
                if self.labels_eq[k][j] { 0.0 } else { self.cfg.cost_vertex_label_sub }
            }
        };
        for w in 0..k {
            let fw = self.assign[w];
            for (s1, d1, s2, d2) in [
                (self.ids1[k], self.ids1[w], choice, fw),
                (self.ids1[w], self.ids1[k], fw, choice),
            ] {
                let l1 = self.view1.labels(s1, d1);
                let l2 = match (s2, d2) {
                    (Some(s2), Some(d2)) => self.view2.labels(self.ids2[s2], self.ids2[d2]),
                    _ => &[],
                };
                raw += bucket_cost(l1, l2, self.cfg);
            }
        }
        let eta = self.deg1[k].max(choice.map_or(0, |j| self.deg2[j]));
        degree_scale(eta, self.eta_max, self.model) * raw
    }

    /// Deletion cost of all g2 vertices left unused by a complete assignment.
    fn leftover_cost(&self) -> f64 {
        let mut total = 0.0;
        let unused: Vec<u64> = (0..self.ids2.len())
            .filter(|&j| !self.used2[j])
            .map(|j| self.ids2[j])
            .collect();
        for &b in &unused {
            let mut raw = self.cfg.cost_vertex_del;
            for e in self.g2.edges() {
                let s_un = unused.contains(&e.src);
                let d_un = unused.contains(&e.dst);
                let owner = match (s_un, d_un) {
                    (true, true) => e.src.max(e.dst),
                    (true, false) => e.src,
                    (false, true) => e.dst,
                    (false, false) => continue,
                };
                if owner == b {
                    raw += self.cfg.cost_edge_del;
                }
            }
            let eta = self.ids2.iter().position(|&id| id == b).map_or(0, |j| self.deg2[j]);
            total += degree_scale(eta, self.eta_max, self.model) * raw;
        }
        total
    }

    fn leaf_pose_cost(&self) -> f64 {
        if self.model == CostModel::Flat {
            return 0.0;
        }
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        for (k, &choice) in self.assign.iter().enumerate() {
            if let Some(j) = choice {
                p1.push(self.pos1[k]);
                p2.push(self.pos2[j]);
            }
        }
        if p1.is_empty() {
            return 0.0;
        }
        let t = rigid_align(&p1, &p2);
        let mut sum = 0.0;
        for (a, b) in p1.iter().zip(&p2) {
            sum += clamp_distance((a - t.apply(b)).norm(), self.cfg.d_min, self.cfg.d_max);
        }
        self.cfg.gamma_p * sum / self.cfg.d_max
    }

    fn dfs(&mut self, k: usize, acc: f64) {
        if k == self.ids1.len() {
            let structural = acc + self.leftover_cost();
            let pose = self.leaf_pose_cost();
            let total = structural + pose;
            if self.best.as_ref().is_none_or(|(best, ..)| total < *best) {
                self.best = Some((total, pose, structural, self.assign.clone()));
            }
            return;
        }
        let options: Vec<Option<usize>> = (0..self.ids2.len())
            .filter(|&j| !self.used2[j])
            .map(Some)
            .chain([None])
            .collect();
        for choice in options {
            let cost = self.step_cost(k, choice);
            let next = acc + cost;
            let best_cap = self.best.as_ref().map_or(f64::INFINITY, |(b, ..)| *b);
            if next >= best_cap || next > self.cap {
                continue;
            }
            self.assign[k] = choice;
            if let Some(j) = choice {
                self.used2[j] = true;
            }
            self.dfs(k + 1, next);
            if let Some(j) = choice {
                self.used2[j] = false;
            }
            self.assign[k] = None;
        }
    }

    /// Cheapest-step completion, used when the cap pruned every branch.
    fn greedy(&mut self) -> (f64, f64, f64, Vec<Option<usize>>) {
        let mut acc = 0.0;
        for k in 0..self.ids1.len() {
            let mut best: (f64, Option<usize>) = (self.step_cost(k, None), None);
            for j in 0..self.ids2.len() {
                if self.used2[j] {
                    continue;
                }
                let c = self.step_cost(k, Some(j));
                if c < best.0 {
                    best = (c, Some(j));
                }
            }
            acc += best.0;
            self.assign[k] = best.1;
            if let Some(j) = best.1 {
                self.used2[j] = true;
            }
        }
        let structural = acc + self.leftover_cost();
        let pose = self.leaf_pose_cost();
        (structural + pose, pose, structural, self.assign.clone())
    }
}

fn search(g1: &SceneGraph, g2: &SceneGraph, cfg: &MatchConfig, model: CostModel, swapped: bool) -> Mapping {
    let ids1: Vec<u64> = g1.vertices().iter().map(|v| v.id).collect();
    let mut ids1 = ids1;
    ids1.sort_unstable();
    let ids2: Vec<u64> = g2.vertices().iter().map(|v| v.id).collect();
    let labels_eq = ids1
        .iter()
        .map(|&a| {
            let l1 = &g1.vertex(a).expect("id from graph").label;
            ids2.iter().map(|&b| *l1 == g2.vertex(b).expect("id from graph").label).collect()
        })
        .collect();
    let view1 = GraphView::new(g1);
    let view2 = GraphView::new(g2);
    let mut s = Search {
        pos1: ids1.iter().map(|&a| g1.vertex(a).expect("id from graph").pose.position).collect(),
        pos2: ids2.iter().map(|&b| g2.vertex(b).expect("id from graph").pose.position).collect(),
        deg1: ids1.iter().map(|&a| g1.degree(a)).collect(),
        deg2: ids2.iter().map(|&b| g2.degree(b)).collect(),
        eta_max: view1.max_degree.max(view2.max_degree),
        assign: vec![None; ids1.len()],
        used2: vec![false; ids2.len()],
        best: None,
        cap: cfg.t_thr * 10.0,
        ids1,
        ids2,
        labels_eq,
        view1,
        view2,
        g2,
        cfg,
        model,
    };
    s.dfs(0, 0.0);
    let (total, pose, structural, assign) = match s.best.take() {
        Some(found) => found,
        None => s.greedy(),
    };
    let mut pairs: Vec<(u64, Option<u64>)> = if swapped {
        // Solved with roles exchanged: express the correspondence from the
        // caller's g1 (our g2) side; its vertices missing from the image
        // have no counterpart.
        let mut inverse: BTreeMap<u64, u64> = BTreeMap::new();
        for (k, &choice) in assign.iter().enumerate() {
            if let Some(j) = choice {
                inverse.insert(s.ids2[j], s.ids1[k]);
            }
        }
        s.ids2.iter().map(|&b| (b, inverse.get(&b).copied())).collect()
    } else {
        assign
            .iter()
            .enumerate()
            .map(|(k, &choice)| (s.ids1[k], choice.map(|j| s.ids2[j])))
            .collect()
    };
    pairs.sort_by_key(|&(a, _)| a);
    Mapping { pairs, total_cost: total, pose_cost: pose, transform_cost: structural }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rot_z, Pose, RigidTransform};
    use crate::ssg::{Edge, Vertex};
    use approx::assert_relative_eq;

    fn vtx(id: u64, label: &str, p: [f64; 3]) -> Vertex {
        Vertex::new(id, label, Pose::at(Vector3::new(p[0], p[1], p[2])), Vector3::new(0.1, 0.1, 0.1))
    }

    fn graph(vs: &[(u64, &str, [f64; 3])], es: &[(u64, u64, &str)]) -> SceneGraph {
        let mut g = SceneGraph::new();
        for &(id, l, p) in vs {
            g.add_vertex(vtx(id, l, p)).unwrap();
        }
        for &(s, d, l) in es {
            g.add_edge(Edge::new(s, d, l)).unwrap();
        }
        g
    }

    fn loose() -> MatchConfig {
        MatchConfig { t_thr: 1e6, ..MatchConfig::default() }
    }

    #[test]
    fn self_match_is_zero() {
        let g = graph(
            &[(0, "a", [0.0, 0.0, 0.0]), (1, "b", [1.0, 0.0, 0.0]), (2, "c", [0.0, 2.0, 0.0])],
            &[(0, 1, "r"), (1, 2, "r"), (2, 0, "s")],
        );
        let m = match_cost(&g, &g, &loose());
        assert_eq!(m.total_cost, 0.0);
        assert_eq!(m.pairs, vec![(0, Some(0)), (1, Some(1)), (2, Some(2))]);
    }

    #[test]
    fn missing_leaf_costs_scaled_add() {
        let g1 = graph(&[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0])], &[(0, 1, "r")]);
        let g2 = graph(&[(0, "a", [0.0; 3])], &[]);
        let m = match_cost(&g1, &g2, &loose());
        // Vertex add + edge add, both on the degree-1 pair with η_max = 1.
        assert_relative_eq!(m.total_cost, 4.0);
        assert_eq!(m.pairs, vec![(0, Some(0)), (1, None)]);
        // Swapped arguments give the same optimal cost.
        let m2 = match_cost(&g2, &g1, &loose());
        assert_relative_eq!(m2.total_cost, 4.0, epsilon = 1e-9);
        assert_eq!(m2.pairs, vec![(0, Some(0))]);
    }

    #[test]
    fn leaf_label_substitution_in_paths() {
        let g1 = graph(
            &[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0]), (2, "c", [2.0, 0.0, 0.0])],
            &[(0, 1, "r"), (1, 2, "r")],
        );
        let g2 = graph(
            &[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0]), (2, "d", [2.0, 0.0, 0.0])],
            &[(0, 1, "r"), (1, 2, "r")],
        );
        let m = match_cost(&g1, &g2, &loose());
        // Label sub 4.0 on a degree-1 pair, η_max = 2 → (1 + 0.5) · 4.
        assert_relative_eq!(m.total_cost, 6.0);
    }

    #[test]
    fn direction_is_respected() {
        let g1 = graph(&[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0])], &[(0, 1, "r")]);
        let g2 = graph(&[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0])], &[(1, 0, "r")]);
        let m = match_cost(&g1, &g2, &loose());
        // Reversed edge: one add plus one delete on the id-1 pair, γ_d = 2.
        assert_relative_eq!(m.total_cost, 4.0);
    }

    #[test]
    fn delete_beats_label_substitution_for_isolated_vertices() {
        let g1 = graph(&[(0, "a", [0.0; 3])], &[]);
        let g2 = graph(&[(0, "x", [0.0; 3])], &[]);
        let m = match_cost(&g1, &g2, &loose());
        // Add the g1 vertex and delete the g2 vertex (2.0) rather than
        // substitute the label (4.0); η_max = 0 so scaling is 1.
        assert_relative_eq!(m.total_cost, 2.0);
        assert_eq!(m.pairs, vec![(0, None)]);
    }

    #[test]
    fn radial_displacement_pose_value() {
        // Four coplanar points; one pushed 2 m outward along its own axis.
        // The optimal alignment is analytically R = I, t = (-0.5, 0, 0),
        // leaving residuals 1.5, 0.5, 0.5, 0.5 → clamped 1.5, 0, 0, 0.
        let vs1 = [
            (0, "a", [10.0, 0.0, 0.0]),
            (1, "b", [-10.0, 0.0, 0.0]),
            (2, "c", [0.0, 10.0, 0.0]),
            (3, "d", [0.0, -10.0, 0.0]),
        ];
        let mut vs2 = vs1;
        vs2[0].2 = [12.0, 0.0, 0.0];
        let g1 = graph(&vs1, &[]);
        let g2 = graph(&vs2, &[]);
        let pairs: Vec<(u64, Option<u64>)> = (0..4).map(|i| (i, Some(i))).collect();
        let cp = pose_cost(&pairs, &g1, &g2, &MatchConfig::default());
        assert_relative_eq!(cp, 1.5 / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn rigid_invariance_and_breakdown_consistency() {
        let g1 = graph(
            &[
                (0, "a", [0.0, 0.0, 0.0]),
                (1, "b", [2.0, 0.0, 0.0]),
                (2, "c", [0.0, 3.0, 0.0]),
                (3, "a", [1.0, 1.0, 2.0]),
            ],
            &[(0, 1, "r"), (1, 2, "s"), (0, 3, "r")],
        );
        let mut g2 = g1.clone();
        let t = RigidTransform { rotation: rot_z(1.1), translation: Vector3::new(5.0, -2.0, 3.0) };
        for id in 0..4 {
            let v = g2.vertex_mut(id).unwrap();
            v.pose = t.apply_pose(&v.pose);
        }
        let m = match_cost(&g1, &g2, &loose());
        assert!(m.total_cost.abs() < 1e-6, "cost {} not invariant", m.total_cost);
        // Re-evaluating the returned mapping with the public cost functions
        // reproduces the breakdown.
        let cfg = loose();
        let cp = pose_cost(&m.pairs, &g1, &g2, &cfg);
        let cr = transform_cost(&m.pairs, &g1, &g2, &cfg);
        assert_relative_eq!(cp, m.pose_cost, epsilon = 1e-12);
        assert_relative_eq!(cr, m.transform_cost, epsilon = 1e-12);
        assert_relative_eq!(cp + cr, m.total_cost, epsilon = 1e-12);
    }

    #[test]
    fn extra_vertex_never_reduces_cost() {
        let g1 = graph(
            &[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0])],
            &[(0, 1, "r")],
        );
        let g2 = graph(
            &[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0]), (2, "c", [5.0, 5.0, 5.0])],
            &[(0, 1, "r")],
        );
        let base = match_cost(&g1, &g1, &loose()).total_cost;
        let grown = match_cost(&g2, &g1, &loose()).total_cost;
        assert!(grown >= base);
    }

    #[test]
    fn cap_exhaustion_falls_back_to_greedy() {
        let g1 = graph(&[(0, "a", [0.0; 3]), (1, "b", [1.0, 0.0, 0.0])], &[(0, 1, "r")]);
        let g2 = graph(&[(0, "x", [0.0; 3]), (1, "y", [1.0, 0.0, 0.0])], &[(0, 1, "z")]);
        let cfg = MatchConfig { t_thr: 0.01, ..MatchConfig::default() };
        let m = match_cost(&g1, &g2, &cfg);
        assert_eq!(m.pairs.len(), 2);
        assert!(m.total_cost > cfg.t_thr);
    }

    #[test]
    fn search_matches_exhaustive_enumeration_on_small_graphs() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let labels = ["a", "b", "c"];
        let edge_labels = ["r", "s"];
        let cfg = loose();
        for seed in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gs = Vec::new();
            for _ in 0..2 {
                let n = rng.gen_range(1..=4);
                let mut g = SceneGraph::new();
                for i in 0..n {
                    let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                    g.add_vertex(vtx(i, labels.choose(&mut rng).unwrap(), p)).unwrap();
                }
                for s in 0..n {
                    for d in 0..n {
                        if s != d && rng.gen_bool(0.4) {
                            g.add_edge(Edge::new(s, d, *edge_labels.choose(&mut rng).unwrap())).unwrap();
                        }
                    }
                }
                gs.push(g);
            }
            let (g1, g2) = (&gs[0], &gs[1]);
            let fast = match_cost(g1, g2, &cfg);
            let slow = exhaustive_min(g1, g2, &cfg);
            assert_relative_eq!(fast.total_cost, slow, epsilon = 1e-9);
        }
    }

    /// Plain enumeration over every injective mapping, evaluated with the
    /// public cost functions only.
    fn exhaustive_min(g1: &SceneGraph, g2: &SceneGraph, cfg: &MatchConfig) -> f64 {
        let (big, small, swap) = if g1.vertex_count() >= g2.vertex_count() {
            (g1, g2, false)
        } else {
            (g2, g1, true)
        };
        let ids1: Vec<u64> = big.vertices().iter().map(|v| v.id).collect();
        let ids2: Vec<u64> = small.vertices().iter().map(|v| v.id).collect();
        let mut best = f64::INFINITY;
        let mut assign = vec![None; ids1.len()];
        let mut used = vec![false; ids2.len()];
        fn rec(
            k: usize,
            ids1: &[u64],
            ids2: &[u64],
            assign: &mut Vec<Option<u64>>,
            used: &mut Vec<bool>,
            big: &SceneGraph,
            small: &SceneGraph,
            cfg: &MatchConfig,
            best: &mut f64,
        ) {
            if k == ids1.len() {
                let pairs: Vec<(u64, Option<u64>)> =
                    ids1.iter().copied().zip(assign.iter().copied()).collect();
                let c = pose_cost(&pairs, big, small, cfg) + transform_cost(&pairs, big, small, cfg);
                if c < *best {
                    *best = c;
                }
                return;
            }
            for j in 0..ids2.len() {
                if !used[j] {
                    used[j] = true;
                    assign[k] = Some(ids2[j]);
                    rec(k + 1, ids1, ids2, assign, used, big, small, cfg, best);
                    used[j] = false;
                }
            }
            assign[k] = None;
            rec(k + 1, ids1, ids2, assign, used, big, small, cfg, best);
        }
        rec(0, &ids1, &ids2, &mut assign, &mut used, big, small, cfg, &mut best);
        let _ = swap;
        best
    }
}
