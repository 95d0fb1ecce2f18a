use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two substructure instances share a vertex; compression requires
    /// vertex-disjoint instances.
    #[error("substructure instances overlap (vertex {vertex} shared)")]
    OverlappingInstances { vertex: u64 },

    /// Discovery found no substructure that compresses the graph.
    #[error("no compressing substructure found (best ratio {best_ratio})")]
    NoPattern { best_ratio: f64 },

    /// Malformed graph/scenario/config input.
    #[error("parse error: {0}")]
    Parse(String),

    /// Scenario parameters are inconsistent or physically impossible.
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    /// Local-graph sampling produced no collision-free vertex.
    #[error("no collision-free local graph could be sampled")]
    NoGraph,

    /// Semantic inspection requested with no viewpoints.
    #[error("no viewpoints to inspect")]
    NoViewpoints,

    /// A commanded path intersects an obstacle.
    #[error("path collides with the world at waypoint {waypoint}")]
    PathCollision { waypoint: usize },

    /// No traversable manhole remains but compartments are outstanding.
    #[error("mission stuck: no traversable manhole")]
    MissionStuck,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
