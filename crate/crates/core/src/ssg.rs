use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Pose};

/// A semantic object: class label, pose, and an axis-aligned bounding box
/// centered on the position.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: u64,
    pub label: String,
    pub pose: Pose,
    pub half_extents: Vector3<f64>,
}

impl Vertex {
    pub fn new(id: u64, label: impl Into<String>, pose: Pose, half_extents: Vector3<f64>) -> Self {
        Self { id, label: label.into(), pose, half_extents }
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::new(self.pose.position, self.half_extents)
    }
}

/// Directed labeled relation between two vertices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: u64,
    pub dst: u64,
    pub label: String,
}

impl Edge {
    pub fn new(src: u64, dst: u64, label: impl Into<String>) -> Self {
        Self { src, dst, label: label.into() }
    }
}

/// Directed labeled scene graph. Vertex and edge insertion order is stable
/// and meaningful: iteration order drives deterministic tie-breaking in the
/// mining and prediction stages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    index: BTreeMap<u64, usize>,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, v: Vertex) -> Result<()> {
        if self.index.contains_key(&v.id) {
            return Err(Error::Parse(format!("duplicate vertex id {}", v.id)));
        }
        self.index.insert(v.id, self.vertices.len());
        self.vertices.push(v);
        Ok(())
    }

    pub fn add_edge(&mut self, e: Edge) -> Result<()> {
        if e.src == e.dst {
            return Err(Error::Parse(format!("self-loop on vertex {}", e.src)));
        }
        if !self.index.contains_key(&e.src) || !self.index.contains_key(&e.dst) {
            return Err(Error::Parse(format!("edge {} -> {} references unknown vertex", e.src, e.dst)));
        }
        if self.edges.iter().any(|x| x == &e) {
            return Err(Error::Parse(format!("duplicate edge {} -> {} ({})", e.src, e.dst, e.label)));
        }
        self.edges.push(e);
        Ok(())
    }

    /// Adds the edge unless an identical (src, dst, label) one exists.
    pub fn add_edge_dedup(&mut self, e: Edge) -> Result<bool> {
        if self.edges.iter().any(|x| x == &e) {
            return Ok(false);
        }
        self.add_edge(e)?;
        Ok(true)
    }

    pub fn vertex(&self, id: u64) -> Option<&Vertex> {
        self.index.get(&id).map(|&i| &self.vertices[i])
    }

    pub fn vertex_mut(&mut self, id: u64) -> Option<&mut Vertex> {
        let i = *self.index.get(&id)?;
        Some(&mut self.vertices[i])
    }

    pub fn contains_vertex(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Smallest id strictly greater than every existing vertex id.
    pub fn fresh_id(&self) -> u64 {
        self.index.keys().next_back().map_or(0, |m| m + 1)
    }

    /// Total degree (in + out) of a vertex.
    pub fn degree(&self, id: u64) -> usize {
        self.edges.iter().filter(|e| e.src == id || e.dst == id).count()
    }

    /// Maximum total degree over all vertices; 0 for an empty graph.
    pub fn max_degree(&self) -> usize {
        let mut deg: BTreeMap<u64, usize> = BTreeMap::new();
        for e in &self.edges {
            *deg.entry(e.src).or_default() += 1;
            *deg.entry(e.dst).or_default() += 1;
        }
        deg.values().copied().max().unwrap_or(0)
    }

    /// Indices of edges touching the given vertex, in edge order.
    pub fn edges_touching(&self, id: u64) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.src == id || e.dst == id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rewrites every edge touching `old` whose opposite endpoint satisfies
    /// `keep_other` so that it touches `new` instead, preserving direction and
    /// label. Returns the number of rewritten edges. Fails if a rewrite would
    /// duplicate an existing (src, dst, label) triple.
    pub fn rehome_edges(
        &mut self,
        old: u64,
        new: u64,
        mut keep_other: impl FnMut(u64) -> bool,
    ) -> Result<usize> {
        if !self.index.contains_key(&new) {
            return Err(Error::Parse(format!("rehome target {new} does not exist")));
        }
        let mut rewritten = 0;
        for i in 0..self.edges.len() {
            let e = &self.edges[i];
            let other = if e.src == old {
                e.dst
            } else if e.dst == old {
                e.src
            } else {
                continue;
            };
            if !keep_other(other) {
                continue;
            }
            let moved = Edge {
                src: if self.edges[i].src == old { new } else { self.edges[i].src },
                dst: if self.edges[i].dst == old { new } else { self.edges[i].dst },
                label: self.edges[i].label.clone(),
            };
            if self.edges.iter().enumerate().any(|(j, x)| j != i && *x == moved) {
                return Err(Error::Parse(format!(
                    "rehoming {} -> {} would duplicate edge {} -> {} ({})",
                    old, new, moved.src, moved.dst, moved.label
                )));
            }
            self.edges[i] = moved;
            rewritten += 1;
        }
        Ok(rewritten)
    }

    /// Vertex + edge count: the description length used by the compression
    /// objective.
    pub fn description_length(&self) -> usize {
        self.vertices.len() + self.edges.len()
    }
}

/// Description length of a graph: |V| + |E|.
pub fn description_length(g: &SceneGraph) -> usize {
    g.description_length()
}

#[derive(Serialize, Deserialize)]
struct VertexRepr {
    id: u64,
    label: String,
    position: [f64; 3],
    rotation: [f64; 9],
    half_extents: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct EdgeRepr {
    src: u64,
    dst: u64,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    vertices: Vec<VertexRepr>,
    edges: Vec<EdgeRepr>,
}

impl From<&SceneGraph> for GraphRepr {
    fn from(g: &SceneGraph) -> Self {
        let vertices = g
            .vertices
            .iter()
            .map(|v| {
                let r = &v.pose.rotation;
                VertexRepr {
                    id: v.id,
                    label: v.label.clone(),
                    position: [v.pose.position.x, v.pose.position.y, v.pose.position.z],
                    rotation: [
                        r[(0, 0)], r[(0, 1)], r[(0, 2)],
                        r[(1, 0)], r[(1, 1)], r[(1, 2)],
                        r[(2, 0)], r[(2, 1)], r[(2, 2)],
                    ],
                    half_extents: [v.half_extents.x, v.half_extents.y, v.half_extents.z],
                }
            })
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeRepr { src: e.src, dst: e.dst, label: e.label.clone() })
            .collect();
        GraphRepr { vertices, edges }
    }
}

impl TryFrom<GraphRepr> for SceneGraph {
    type Error = Error;

    fn try_from(repr: GraphRepr) -> Result<SceneGraph> {
        let mut g = SceneGraph::new();
        for v in repr.vertices {
            if v.label.is_empty() {
                return Err(Error::Parse(format!("vertex {} has an empty label", v.id)));
            }
            let he = Vector3::new(v.half_extents[0], v.half_extents[1], v.half_extents[2]);
            if he.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::Parse(format!("vertex {} has invalid half-extents", v.id)));
            }
            let rot = Matrix3::new(
                v.rotation[0], v.rotation[1], v.rotation[2],
                v.rotation[3], v.rotation[4], v.rotation[5],
                v.rotation[6], v.rotation[7], v.rotation[8],
            );
            let pose = Pose::new(Vector3::new(v.position[0], v.position[1], v.position[2]), rot);
            if !pose.position.iter().all(|x| x.is_finite()) {
                return Err(Error::Parse(format!("vertex {} has a non-finite position", v.id)));
            }
            if !pose.rotation_valid(1e-9) {
                return Err(Error::Parse(format!("vertex {} rotation is not orthonormal", v.id)));
            }
            g.add_vertex(Vertex { id: v.id, label: v.label, pose, half_extents: he })?;
        }
        for e in repr.edges {
            g.add_edge(Edge { src: e.src, dst: e.dst, label: e.label })?;
        }
        Ok(g)
    }
}

impl Serialize for SceneGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(d)?;
        SceneGraph::try_from(repr).map_err(serde::de::Error::custom)
    }
}

pub fn save_graph(g: &SceneGraph, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), g)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<SceneGraph> {
    let file = std::fs::File::open(path)?;
    let g = serde_json::from_reader(std::io::BufReader::new(file))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_graph() -> SceneGraph {
        let mut g = SceneGraph::new();
        for (i, label) in ["a", "b", "c"].iter().enumerate() {
            g.add_vertex(Vertex::new(
                i as u64,
                *label,
                Pose::at(Vector3::new(i as f64, 0.0, 0.0)),
                Vector3::new(0.5, 0.5, 0.5),
            ))
            .unwrap();
        }
        g.add_edge(Edge::new(0, 1, "rel")).unwrap();
        g.add_edge(Edge::new(1, 2, "rel")).unwrap();
        g.add_edge(Edge::new(2, 0, "rel")).unwrap();
        g
    }

    #[test]
    fn description_length_counts_vertices_and_edges() {
        assert_eq!(SceneGraph::new().description_length(), 0);
        let g = simple_graph();
        assert_eq!(g.description_length(), 6);
    }

    #[test]
    fn duplicate_edges_rejected() {
        let mut g = simple_graph();
        assert!(g.add_edge(Edge::new(0, 1, "rel")).is_err());
        assert!(g.add_edge(Edge::new(0, 1, "other")).is_ok());
        assert!(g.add_edge(Edge::new(0, 0, "rel")).is_err());
        assert!(g.add_edge(Edge::new(0, 99, "rel")).is_err());
    }

    #[test]
    fn degrees() {
        let g = simple_graph();
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.max_degree(), 2);
        assert_eq!(g.edges_touching(1), vec![0, 1]);
    }

    #[test]
    fn json_round_trip() {
        let g = simple_graph();
        let text = serde_json::to_string(&g).unwrap();
        let back: SceneGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn parse_errors_are_reported() {
        let missing: std::result::Result<SceneGraph, _> = serde_json::from_str(r#"{"edges":[]}"#);
        assert!(missing.is_err());
        let bad_edge: std::result::Result<SceneGraph, _> = serde_json::from_str(
            r#"{"vertices":[{"id":0,"label":"a","position":[0,0,0],
                "rotation":[1,0,0,0,1,0,0,0,1],"half_extents":[1,1,1]}],
               "edges":[{"src":0,"dst":7,"label":"rel"}]}"#,
        );
        assert!(bad_edge.is_err());
    }
}
