//! Pose-graph data model and g2o text I/O.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{Matrix6, SymmetricEigen};

use crate::error::{Error, Result};
use crate::manifold::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v)
    }
}

/// Relative-pose measurement `measurement ~ from^-1 * to` weighted by an
/// information (inverse covariance) matrix in `(rho, theta)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub measurement: Pose,
    pub information: Matrix6<f64>,
}

impl Edge {
    pub fn new(from: NodeId, to: NodeId, measurement: Pose, information: Matrix6<f64>) -> Self {
        Self {
            from,
            to,
            measurement,
            information,
        }
    }

    /// The endpoint opposite `node`.
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.from == node {
            self.to
        } else {
            self.from
        }
    }
}

/// Checks symmetry and positive semi-definiteness (tolerances scaled by the
/// largest entry).
pub fn validate_information(info: &Matrix6<f64>) -> Result<()> {
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInformation("non-finite entry".into()));
    }
    let scale = info.abs().max().max(1.0);
    let asym = (info - info.transpose()).abs().max();
    if asym > 1e-9 * scale {
        return Err(Error::InvalidInformation(format!("asymmetric by {asym:e}")));
    }
    let sym = (info + info.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig < -1e-9 * scale {
        return Err(Error::InvalidInformation(format!(
            "minimum eigenvalue {min_eig:e}"
        )));
    }
    Ok(())
}

/// Nodes are kept sorted by id in contiguous storage. When the ids are
/// exactly `0..n` a node's slot is its id, otherwise it is found by binary
/// search.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    ids: Vec<NodeId>,
    poses: Vec<Pose>,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&self, id: NodeId) -> Option<usize> {
        let n = self.ids.len();
        if n > 0 && self.ids[n - 1].0 == n - 1 {
            return (id.0 < n).then_some(id.0);
        }
        self.ids.binary_search(&id).ok()
    }

    pub fn add_node(&mut self, id: NodeId, pose: Pose) -> Result<()> {
        match self.ids.binary_search(&id) {
            Ok(_) => Err(Error::DuplicateNode(id)),
            Err(pos) => {
                self.ids.insert(pos, id);
                self.poses.insert(pos, pose);
                self.adjacency.insert(pos, Vec::new());
                Ok(())
            }
        }
    }

    /// Appends an edge and returns its index.
    pub fn add_edge(&mut self, edge: Edge) -> Result<usize> {
        let mut slots = [0; 2];
        for (slot, end) in slots.iter_mut().zip([edge.from, edge.to]) {
            *slot = self.slot(end).ok_or(Error::MissingEndpoint(end))?;
        }
        if edge.from == edge.to {
            return Err(Error::SelfLoop {
                from: edge.from,
                to: edge.to,
            });
        }
        validate_information(&edge.information)?;
        let idx = self.edges.len();
        self.adjacency[slots[0]].push(idx);
        self.adjacency[slots[1]].push(idx);
        self.edges.push(edge);
        Ok(idx)
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.slot(id).is_some()
    }

    pub fn pose(&self, id: NodeId) -> Option<&Pose> {
        self.slot(id).map(|k| &self.poses[k])
    }

    /// Overwrites the pose of an existing node; returns false if absent.
    pub fn set_pose(&mut self, id: NodeId, pose: Pose) -> bool {
        match self.slot(id) {
            Some(k) => {
                self.poses[k] = pose;
                true
            }
            None => false,
        }
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl ExactSizeIterator<Item = (NodeId, &Pose)> + '_ {
        self.ids.iter().copied().zip(self.poses.iter())
    }

    pub fn node_ids(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        self.ids.iter().copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    /// Indices of edges incident to `id`, in insertion order.
    pub fn incident(&self, id: NodeId) -> &[usize] {
        self.slot(id)
            .map(|k| self.adjacency[k].as_slice())
            .unwrap_or(&[])
    }

    /// `(neighbor, edge index)` pairs, ignoring edge direction.
    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.incident(id)
            .iter()
            .map(move |&e| (self.edges[e].other(id), e))
    }

    /// Replaces the measurement and information of an existing edge.
    pub(crate) fn update_edge(&mut self, idx: usize, measurement: Pose, information: Matrix6<f64>) {
        let e = &mut self.edges[idx];
        e.measurement = measurement;
        e.information = information;
    }

    /// Verifies that the adjacency lists describe exactly the edge list.
    pub fn check_adjacency(&self) -> bool {
        let total: usize = self.adjacency.iter().map(Vec::len).sum();
        if total != 2 * self.edges.len() || self.adjacency.len() != self.ids.len() {
            return false;
        }
        self.edges.iter().enumerate().all(|(i, e)| {
            let has = |n: NodeId| self.slot(n).is_some_and(|k| self.adjacency[k].contains(&i));
            has(e.from) && has(e.to)
        })
    }
}

/// Result of parsing a g2o file.
#[derive(Clone, Debug)]
pub struct G2oParse {
    pub graph: PoseGraph,
    /// Non-empty lines with tags other than the two supported ones.
    pub skipped_lines: usize,
}

const VERTEX_TAG: &str = "VERTEX_SE3:QUAT";
const EDGE_TAG: &str = "EDGE_SE3:QUAT";

fn parse_numbers(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::MalformedLine {
                line,
                reason: format!("non-numeric token `{t}`"),
            })
        })
        .collect()
}

fn parse_id(token: &str, line: usize) -> Result<NodeId> {
    token
        .parse::<usize>()
        .map(NodeId)
        .map_err(|_| Error::MalformedLine {
            line,
            reason: format!("invalid node id `{token}`"),
        })
}

fn parse_pose(v: &[f64], line: usize) -> Result<Pose> {
    // file order: tx ty tz qx qy qz qw
    Pose::from_components([v[0], v[1], v[2]], [v[6], v[3], v[4], v[5]]).ok_or_else(|| {
        Error::MalformedLine {
            line,
            reason: "degenerate pose".into(),
        }
    })
}

/// Parses `VERTEX_SE3:QUAT` and `EDGE_SE3:QUAT` lines. Vertices may appear
/// anywhere in the file; edges are added in file order.
pub fn parse_g2o(text: &str) -> Result<G2oParse> {
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    let mut skipped_lines = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some((&tag, rest)) = tokens.split_first() else {
            continue;
        };
        if tag.starts_with('#') {
            continue;
        }
        match tag {
            VERTEX_TAG => {
                if rest.len() != 8 {
                    return Err(Error::MalformedLine {
                        line,
                        reason: format!("vertex expects 8 fields, found {}", rest.len()),
                    });
                }
                let id = parse_id(rest[0], line)?;
                let v = parse_numbers(&rest[1..], line)?;
                vertices.push((line, id, parse_pose(&v, line)?));
            }
            EDGE_TAG => {
                if rest.len() != 30 {
                    return Err(Error::MalformedLine {
                        line,
                        reason: format!("edge expects 30 fields, found {}", rest.len()),
                    });
                }
                let from = parse_id(rest[0], line)?;
                let to = parse_id(rest[1], line)?;
                let v = parse_numbers(&rest[2..], line)?;
                let measurement = parse_pose(&v[..7], line)?;
                let mut info = Matrix6::zeros();
                let mut k = 7;
                for r in 0..6 {
                    for c in r..6 {
                        info[(r, c)] = v[k];
                        info[(c, r)] = v[k];
                        k += 1;
                    }
                }
                edges.push((line, Edge::new(from, to, measurement, info)));
            }
            other => {
                log::warn!("line {line}: skipping unsupported tag `{other}`");
                skipped_lines += 1;
            }
        }
    }

    let mut graph = PoseGraph::new();
    for (line, id, pose) in vertices {
        graph.add_node(id, pose).map_err(|e| match e {
            Error::DuplicateNode(_) => Error::MalformedLine {
                line,
                reason: format!("duplicate vertex {id}"),
            },
            e => e,
        })?;
    }
    for (line, edge) in edges {
        graph.add_edge(edge).map_err(|e| match e {
            Error::InvalidInformation(reason) | Error::MalformedLine { reason, .. } => {
                Error::MalformedLine { line, reason }
            }
            Error::SelfLoop { from, .. } => Error::MalformedLine {
                line,
                reason: format!("self-loop on {from}"),
            },
            e => e,
        })?;
    }
    Ok(G2oParse {
        graph,
        skipped_lines,
    })
}

fn push_pose(out: &mut String, p: &Pose) {
    let t = p.translation();
    let q = p.rotation().quaternion();
    for v in [t.x, t.y, t.z, q.i, q.j, q.k, q.w] {
        let _ = write!(out, " {v:.16e}");
    }
}

/// Vertices in ascending id order, then edges in insertion order.
pub fn write_g2o(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for (id, pose) in graph.nodes() {
        let _ = write!(out, "{VERTEX_TAG} {id}");
        push_pose(&mut out, pose);
        out.push('\n');
    }
    for e in graph.edges() {
        let _ = write!(out, "{EDGE_TAG} {} {}", e.from, e.to);
        push_pose(&mut out, &e.measurement);
        for r in 0..6 {
            for c in r..6 {
                let _ = write!(out, " {:.16e}", e.information[(r, c)]);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn two_nodes() -> PoseGraph {
        let mut g = PoseGraph::new();
        g.add_node(NodeId(0), Pose::identity()).unwrap();
        g.add_node(NodeId(1), Pose::from_translation(Vector3::x()))
            .unwrap();
        g
    }

    #[test]
    fn add_nodes() {
        let mut g = PoseGraph::new();
        g.add_node(NodeId(4), Pose::identity()).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
        assert_eq!(
            g.add_node(NodeId(4), Pose::identity()),
            Err(Error::DuplicateNode(NodeId(4)))
        );
        for i in 5..1004 {
            g.add_node(NodeId(i), Pose::identity()).unwrap();
        }
        assert_eq!(g.node_count(), 1000);
    }

    #[test]
    fn add_edge_updates_adjacency() {
        let mut g = two_nodes();
        g.add_edge(Edge::new(
            NodeId(0),
            NodeId(1),
            Pose::identity(),
            Matrix6::identity(),
        ))
        .unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.incident(NodeId(0)), &[0]);
        assert_eq!(g.incident(NodeId(1)), &[0]);
        assert!(g.check_adjacency());
    }

    #[test]
    fn add_edge_errors() {
        let mut g = two_nodes();
        let missing = Edge::new(NodeId(0), NodeId(9), Pose::identity(), Matrix6::identity());
        assert_eq!(g.add_edge(missing), Err(Error::MissingEndpoint(NodeId(9))));

        let mut info = Matrix6::identity();
        info[(2, 2)] = -1.0;
        let bad = Edge::new(NodeId(0), NodeId(1), Pose::identity(), info);
        assert!(matches!(g.add_edge(bad), Err(Error::InvalidInformation(_))));

        let mut asym = Matrix6::identity();
        asym[(0, 1)] = 0.5;
        let bad = Edge::new(NodeId(0), NodeId(1), Pose::identity(), asym);
        assert!(matches!(g.add_edge(bad), Err(Error::InvalidInformation(_))));

        let self_loop = Edge::new(NodeId(1), NodeId(1), Pose::identity(), Matrix6::identity());
        assert!(matches!(g.add_edge(self_loop), Err(Error::SelfLoop { .. })));
        assert_eq!(g.edge_count(), 0);
        assert!(g.check_adjacency());
    }

    #[test]
    fn parse_empty_and_single_vertex() {
        let p = parse_g2o("").unwrap();
        assert!(p.graph.is_empty());
        let p = parse_g2o("VERTEX_SE3:QUAT 3 1.5 -2 0.25 0 0 0 1\n").unwrap();
        assert_eq!(p.graph.node_count(), 1);
        let pose = p.graph.pose(NodeId(3)).unwrap();
        assert_eq!(*pose.translation(), Vector3::new(1.5, -2.0, 0.25));
        assert_eq!(*pose.rotation(), nalgebra::UnitQuaternion::identity());
    }

    #[test]
    fn parse_renormalizes_and_skips_unknown_tags() {
        let text = "\
# comment
VERTEX_SE3:QUAT 0 0 0 0 0 0 0 2
VERTEX_SE2 1 0 0 0
FIX 0
";
        let p = parse_g2o(text).unwrap();
        assert_eq!(p.skipped_lines, 2);
        let q = p.graph.pose(NodeId(0)).unwrap().rotation();
        assert!((q.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_report_line_numbers() {
        let err =
            parse_g2o("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 0\n").unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
        let err = parse_g2o("VERTEX_SE3:QUAT 0 0 0 x 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 1, .. }));
        let mut edge =
            String::from("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nEDGE_SE3:QUAT 0 7 0 0 0 0 0 0 1");
        for r in 0..6 {
            for c in r..6 {
                edge.push_str(if r == c { " 1" } else { " 0" });
            }
        }
        assert_eq!(
            parse_g2o(&edge).unwrap_err(),
            Error::MissingEndpoint(NodeId(7))
        );
    }

    #[test]
    fn write_empty_and_single() {
        assert_eq!(write_g2o(&PoseGraph::new()), "");
        let mut g = PoseGraph::new();
        g.add_node(NodeId(0), Pose::identity()).unwrap();
        let text = write_g2o(&g);
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("VERTEX_SE3:QUAT 0 "));
    }
}
