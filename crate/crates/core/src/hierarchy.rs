//! Modularity-based grouping of pose-graph nodes and the level stack built
//! from it.
//!
//! Every level keeps its own partition, maintained incrementally as nodes
//! arrive. Group `g` at level `l` is node `NodeId(g)` at level `l + 1`; its
//! pose is the pose of the group's representative. When the top level grows
//! past the configured threshold a new level is stacked on top.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{validate_information, Edge, NodeId, PoseGraph};
use crate::manifold::Pose;

/// Lower bound on the quadratic form before inversion in [`edge_weight`].
pub const WEIGHT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GroupId(pub usize);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Inverse Mahalanobis length of an edge's measurement,
/// `1 / max(z^T Omega z, eps)` with `z = log(measurement)`.
pub fn edge_weight(edge: &Edge) -> f64 {
    let z = edge.measurement.log_clamped().to_vector();
    1.0 / z.dot(&(edge.information * z)).max(WEIGHT_EPS)
}

/// Undirected weighted adjacency of a pose graph. Parallel edges are summed.
#[derive(Clone, Debug, Default)]
pub struct WeightedView {
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
    degree: BTreeMap<NodeId, f64>,
    edge_weights: Vec<f64>,
    total: f64,
}

impl WeightedView {
    pub fn new(graph: &PoseGraph) -> Self {
        let mut view = Self::default();
        for id in graph.node_ids() {
            view.add_node(id);
        }
        for (idx, e) in graph.edges().iter().enumerate() {
            view.add_edge(idx, e.from, e.to, edge_weight(e));
        }
        view
    }

    fn add_node(&mut self, id: NodeId) {
        self.adjacency.entry(id).or_default();
        self.degree.entry(id).or_insert(0.0);
    }

    fn shift(&mut self, a: NodeId, b: NodeId, dw: f64) {
        *self.adjacency.entry(a).or_default().entry(b).or_insert(0.0) += dw;
        *self.adjacency.entry(b).or_default().entry(a).or_insert(0.0) += dw;
        *self.degree.entry(a).or_insert(0.0) += dw;
        *self.degree.entry(b).or_insert(0.0) += dw;
        self.total += dw;
    }

    /// Registers edge `idx`; indices must arrive in order.
    fn add_edge(&mut self, idx: usize, a: NodeId, b: NodeId, w: f64) {
        debug_assert_eq!(idx, self.edge_weights.len());
        self.edge_weights.push(w);
        self.shift(a, b, w);
    }

    fn set_weight(&mut self, idx: usize, a: NodeId, b: NodeId, w: f64) {
        let old = std::mem::replace(&mut self.edge_weights[idx], w);
        self.shift(a, b, w - old);
    }

    /// Total edge weight `m` (each undirected edge counted once).
    pub fn total_weight(&self) -> f64 {
        self.total
    }

    /// Weighted degree `k_i`.
    pub fn degree(&self, id: NodeId) -> f64 {
        self.degree.get(&id).copied().unwrap_or(0.0)
    }

    /// Summed weight `A_ij` of all edges between `a` and `b`.
    pub fn weight_between(&self, a: NodeId, b: NodeId) -> f64 {
        self.adjacency
            .get(&a)
            .and_then(|n| n.get(&b))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn edge_weight(&self, idx: usize) -> f64 {
        self.edge_weights[idx]
    }

    /// Neighbors with their summed weights, ascending by id.
    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjacency
            .get(&id)
            .into_iter()
            .flat_map(|n| n.iter().map(|(&k, &w)| (k, w)))
    }
}

/// Assignment of nodes to groups of bounded size.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    assignment: BTreeMap<NodeId, GroupId>,
    members: Vec<Vec<NodeId>>,
    capacity: usize,
}

impl Partition {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "group capacity must be positive");
        Self {
            assignment: BTreeMap::new(),
            members: Vec::new(),
            capacity,
        }
    }

    /// Builds a partition from explicit groups; group `k` of the input gets
    /// id `GroupId(k)`.
    pub fn from_groups(groups: &[Vec<NodeId>], capacity: usize) -> Self {
        let mut p = Self::new(capacity);
        for (k, group) in groups.iter().enumerate() {
            let mut sorted = group.clone();
            sorted.sort_unstable();
            for &n in &sorted {
                p.assignment.insert(n, GroupId(k));
            }
            p.members.push(sorted);
        }
        p
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn group_of(&self, id: NodeId) -> Option<GroupId> {
        self.assignment.get(&id).copied()
    }

    /// Members of `g` in ascending id order.
    pub fn members(&self, g: GroupId) -> &[NodeId] {
        self.members.get(g.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn group_count(&self) -> usize {
        self.members.len()
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &[NodeId])> + '_ {
        self.members
            .iter()
            .enumerate()
            .map(|(k, m)| (GroupId(k), m.as_slice()))
    }

    pub fn assignment(&self) -> impl Iterator<Item = (NodeId, GroupId)> + '_ {
        self.assignment.iter().map(|(&n, &g)| (n, g))
    }

    /// Checks that assignment and membership are mutually inverse and that
    /// every group size lies in `1..=capacity`.
    pub fn is_consistent(&self) -> bool {
        let sizes_ok = self
            .members
            .iter()
            .all(|m| !m.is_empty() && m.len() <= self.capacity);
        let inverse_ok = self
            .groups()
            .all(|(g, m)| m.iter().all(|n| self.assignment.get(n) == Some(&g)));
        let count: usize = self.members.iter().map(Vec::len).sum();
        sizes_ok && inverse_ok && count == self.assignment.len()
    }

    fn insert_member(&mut self, g: GroupId, n: NodeId) {
        let m = &mut self.members[g.0];
        let pos = m.partition_point(|&x| x < n);
        m.insert(pos, n);
        self.assignment.insert(n, g);
    }
}

/// Modularity `Q` of a partition, summed over ordered node pairs that share
/// a group.
pub fn modularity(view: &WeightedView, p: &Partition) -> Result<f64> {
    let m = view.total_weight();
    if !(m > 0.0) {
        return Err(Error::EmptyGraph);
    }
    let two_m = 2.0 * m;
    let mut q = 0.0;
    for (_, members) in p.groups() {
        for &i in members {
            for &j in members {
                q += view.weight_between(i, j) - view.degree(i) * view.degree(j) / two_m;
            }
        }
    }
    Ok(q / two_m)
}

/// Gain in modularity from moving the singleton `node` into `target`:
/// `sigma_in / m - sigma_group * k / (2 m^2)`, where `sigma_in` is the weight
/// of edges between `node` and the target's members.
pub fn modularity_gain(
    view: &WeightedView,
    node: NodeId,
    target: GroupId,
    p: &Partition,
) -> Result<f64> {
    let own = p.group_of(node).ok_or(Error::UnassignedNode(node))?;
    if p.members(own).len() > 1 {
        return Err(Error::NotSingleton(node));
    }
    let m = view.total_weight();
    if !(m > 0.0) {
        return Err(Error::EmptyGraph);
    }
    Ok(gain(view, node, p.members(target), m))
}

fn gain(view: &WeightedView, node: NodeId, target: &[NodeId], m: f64) -> f64 {
    let sigma_in: f64 = target.iter().map(|&j| view.weight_between(node, j)).sum();
    let sigma_group: f64 = target.iter().map(|&j| view.degree(j)).sum();
    // edge weights count once per direction in the pair sum of Q
    2.0 * sigma_in / (2.0 * m) - sigma_group * view.degree(node) / (2.0 * m * m)
}

/// One pass of greedy singleton moves over `new_nodes`, in the given order.
///
/// Each new node starts in its own group. A node still alone when visited
/// moves into the neighboring group of highest gain, provided that gain is
/// positive and the group has room. Previously assigned nodes never move.
/// Returns the groups that received new nodes.
pub fn build_hierarchy_increment(
    view: &WeightedView,
    p: &mut Partition,
    new_nodes: &[NodeId],
) -> Vec<GroupId> {
    let base = p.members.len();
    let fresh: Vec<NodeId> = new_nodes
        .iter()
        .copied()
        .filter(|n| !p.assignment.contains_key(n))
        .collect();
    for &n in &fresh {
        let g = GroupId(p.members.len());
        p.members.push(vec![n]);
        p.assignment.insert(n, g);
    }
    let m = view.total_weight();
    for &n in &fresh {
        let own = p.assignment[&n];
        if p.members[own.0].len() > 1 {
            continue;
        }
        let mut best: Option<(GroupId, f64)> = None;
        for (nb, _) in view.neighbors(n) {
            let Some(g) = p.group_of(nb) else { continue };
            if g == own || p.members[g.0].len() >= p.capacity {
                continue;
            }
            let dq = gain(view, n, &p.members[g.0], m);
            if best.is_none_or(|(_, b)| dq > b) {
                best = Some((g, dq));
            }
        }
        if let Some((g, dq)) = best {
            if dq > 0.0 {
                p.members[own.0].clear();
                p.insert_member(g, n);
            }
        }
    }
    // drop the fresh groups emptied by moves, keeping ids dense
    let mut remap = HashMap::new();
    let mut kept = base;
    for k in base..p.members.len() {
        if !p.members[k].is_empty() {
            remap.insert(k, kept);
            p.members.swap(k, kept);
            kept += 1;
        }
    }
    p.members.truncate(kept);
    for (&old, &new) in &remap {
        if old != new {
            for &n in &p.members[new] {
                p.assignment.insert(n, GroupId(new));
            }
        }
    }
    let mut touched: Vec<GroupId> = fresh.iter().map(|n| p.assignment[n]).collect();
    touched.sort_unstable();
    touched.dedup();
    touched
}

/// How next-level edge measurements are formed from the underlying edge
/// with the largest weight between two groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpperMeasurement {
    /// The underlying measurement chained with the current offsets of its
    /// endpoints from their representatives. Loop closures observed at the
    /// lower level carry over to the upper one.
    #[default]
    Composed,
    /// The current relative transform between the two representatives.
    RepresentativeRelative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    /// A new level is stacked once the top level has more nodes than this.
    pub level_threshold: usize,
    pub group_capacity: usize,
    pub upper_measurement: UpperMeasurement,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            level_threshold: 300,
            group_capacity: 3,
            upper_measurement: UpperMeasurement::default(),
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.level_threshold < 1 {
            return Err(Error::InvalidConfig(
                "level threshold must be at least 1".into(),
            ));
        }
        if self.group_capacity < 2 {
            return Err(Error::InvalidConfig(
                "group capacity must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Link {
    upper_edge: usize,
}

/// One level of the hierarchy: a pose graph, its weighted view and the
/// grouping of its nodes.
#[derive(Clone, Debug)]
pub struct HierarchyLevel {
    graph: PoseGraph,
    view: WeightedView,
    partition: Partition,
    representative: Vec<NodeId>,
    links: HashMap<(GroupId, GroupId), Link>,
}

impl HierarchyLevel {
    pub fn new(graph: PoseGraph, capacity: usize) -> Self {
        let view = WeightedView::new(&graph);
        Self {
            graph,
            view,
            partition: Partition::new(capacity),
            representative: Vec::new(),
            links: HashMap::new(),
        }
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub(crate) fn graph_mut(&mut self) -> &mut PoseGraph {
        &mut self.graph
    }

    pub fn view(&self) -> &WeightedView {
        &self.view
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Runs the grouping pass over `new_nodes` and refreshes the
    /// representatives of the affected groups.
    pub fn group_nodes(&mut self, new_nodes: &[NodeId]) -> Vec<GroupId> {
        let touched = build_hierarchy_increment(&self.view, &mut self.partition, new_nodes);
        self.refresh_representatives(touched.iter().copied());
        touched
    }

    fn refresh_representatives(&mut self, groups: impl Iterator<Item = GroupId>) {
        let count = self.partition.group_count();
        if self.representative.len() < count {
            self.representative.resize(count, NodeId(usize::MAX));
        }
        for g in groups {
            self.representative[g.0] = self.select_representative(g);
        }
    }

    pub fn representative(&self, g: GroupId) -> Option<NodeId> {
        self.representative.get(g.0).copied()
    }

    /// Next-level node standing for `id`'s group.
    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.partition.group_of(id).map(|g| NodeId(g.0))
    }

    /// Member with the largest weighted degree inside the group, lowest id
    /// on ties.
    pub fn select_representative(&self, g: GroupId) -> NodeId {
        let members = self.partition.members(g);
        let mut best = members[0];
        let mut best_deg = f64::NEG_INFINITY;
        for &i in members {
            let deg: f64 = members
                .iter()
                .map(|&j| self.view.weight_between(i, j))
                .sum();
            if deg > best_deg {
                best = i;
                best_deg = deg;
            }
        }
        best
    }

    /// Moves every group rigidly so that its representative lands on
    /// `target(group)`.
    pub(crate) fn move_groups(&mut self, target: impl Fn(GroupId) -> Pose) {
        for (k, members) in self.partition.members.iter().enumerate() {
            let rep = self.representative[k];
            let goal = target(GroupId(k));
            let old = *self.graph.pose(rep).expect("representative is a node");
            let delta = goal.compose(&old.inverse());
            for &n in members {
                let next = if n == rep {
                    goal
                } else {
                    delta.compose(self.graph.pose(n).expect("member is a node"))
                };
                self.graph.set_pose(n, next);
            }
        }
    }

    fn add_edge(&mut self, edge: Edge) -> Result<usize> {
        let w = edge_weight(&edge);
        let (a, b) = (edge.from, edge.to);
        let idx = self.graph.add_edge(edge)?;
        self.view.add_edge(idx, a, b, w);
        Ok(idx)
    }

    fn add_node(&mut self, id: NodeId, pose: Pose) -> Result<()> {
        self.graph.add_node(id, pose)?;
        self.view.add_node(id);
        Ok(())
    }

    fn rep_pose(&self, g: GroupId) -> Pose {
        *self
            .graph
            .pose(self.representative[g.0])
            .expect("representative is a node")
    }

    /// Measurement between groups `a` and `b` derived from edge `idx`.
    fn link_measurement(&self, idx: usize, a: GroupId, b: GroupId, mode: UpperMeasurement) -> Pose {
        let (ra, rb) = (self.rep_pose(a), self.rep_pose(b));
        match mode {
            UpperMeasurement::RepresentativeRelative => ra.between(&rb),
            UpperMeasurement::Composed => {
                let e = self.graph.edge(idx);
                let pose = |n| *self.graph.pose(n).expect("edge endpoint exists");
                let forward = self.partition.group_of(e.from) == Some(a);
                let (src, dst) = if forward { (ra, rb) } else { (rb, ra) };
                let z = src
                    .between(&pose(e.from))
                    .compose(&e.measurement)
                    .compose(&pose(e.to).between(&dst));
                if forward {
                    z
                } else {
                    z.inverse()
                }
            }
        }
    }
}

/// Writes the next-level edges incident to group `g`, one per neighboring
/// group, each derived from the heaviest underlying edge. Returns the
/// next-level nodes whose incident weights changed.
fn refresh_links(
    lower: &mut HierarchyLevel,
    upper: &mut HierarchyLevel,
    g: GroupId,
    mode: UpperMeasurement,
) -> Result<Vec<NodeId>> {
    let mut best: BTreeMap<GroupId, (f64, usize)> = BTreeMap::new();
    for &n in lower.partition.members(g) {
        for &idx in lower.graph.incident(n) {
            let other = lower.graph.edge(idx).other(n);
            let h = lower
                .partition
                .group_of(other)
                .ok_or(Error::UnassignedNode(other))?;
            if h == g {
                continue;
            }
            let w = lower.view.edge_weight(idx);
            let slot = best.entry(h).or_insert((w, idx));
            if w > slot.0 {
                *slot = (w, idx);
            }
        }
    }
    let mut changed = Vec::new();
    for (h, (_, idx)) in best {
        let key = (g.min(h), g.max(h));
        let z = lower.link_measurement(idx, key.0, key.1, mode);
        let info = lower.graph.edge(idx).information;
        let (a, b) = (NodeId(key.0 .0), NodeId(key.1 .0));
        match lower.links.get(&key) {
            Some(link) => {
                let upper_idx = link.upper_edge;
                let w = edge_weight(&Edge::new(a, b, z, info));
                upper.graph.update_edge(upper_idx, z, info);
                if w != upper.view.edge_weight(upper_idx) {
                    upper.view.set_weight(upper_idx, a, b, w);
                    changed.push(NodeId(h.0));
                }
            }
            None => {
                let upper_idx = upper.add_edge(Edge::new(a, b, z, info))?;
                lower.links.insert(
                    key,
                    Link {
                        upper_edge: upper_idx,
                    },
                );
                changed.push(NodeId(h.0));
            }
        }
    }
    Ok(changed)
}

/// Propagates a change in `dirty` groups of `lower` to `upper`: creates the
/// missing upper nodes, resets upper poses to the representatives' and
/// rewrites incident upper edges. Returns `(new upper nodes, touched upper nodes)`.
fn lift(
    lower: &mut HierarchyLevel,
    upper: &mut HierarchyLevel,
    dirty: &BTreeSet<GroupId>,
    mode: UpperMeasurement,
) -> Result<(Vec<NodeId>, BTreeSet<NodeId>)> {
    let mut fresh = Vec::new();
    let mut touched = BTreeSet::new();
    for &g in dirty {
        let u = NodeId(g.0);
        let pose = lower.rep_pose(g);
        if upper.graph.contains(u) {
            upper.graph.set_pose(u, pose);
        } else {
            upper.add_node(u, pose)?;
            fresh.push(u);
        }
        touched.insert(u);
    }
    for &g in dirty {
        touched.extend(refresh_links(lower, upper, g, mode)?);
    }
    Ok((fresh, touched))
}

/// Builds the level above `level`: one node per group posed at its
/// representative, and one edge per pair of adjacent groups.
pub fn build_next_level(
    level: &mut HierarchyLevel,
    cfg: &HierarchyConfig,
) -> Result<HierarchyLevel> {
    if let Some(n) = level
        .graph
        .node_ids()
        .find(|&n| level.partition.group_of(n).is_none())
    {
        return Err(Error::UnassignedNode(n));
    }
    let all: Vec<GroupId> = (0..level.partition.group_count()).map(GroupId).collect();
    level.refresh_representatives(all.iter().copied());
    level.links.clear();
    let mut upper = HierarchyLevel::new(PoseGraph::new(), cfg.group_capacity);
    let dirty: BTreeSet<GroupId> = all.into_iter().collect();
    lift(level, &mut upper, &dirty, cfg.upper_measurement)?;
    Ok(upper)
}

/// Stack of levels; level 0 is the original pose graph.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    levels: Vec<HierarchyLevel>,
    cfg: HierarchyConfig,
}

impl Hierarchy {
    pub fn new(cfg: HierarchyConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            levels: vec![HierarchyLevel::new(PoseGraph::new(), cfg.group_capacity)],
            cfg,
        })
    }

    /// Replays `graph` node by node in id order, each node arriving with the
    /// edges that connect it to nodes already inserted.
    pub fn from_graph(graph: &PoseGraph, cfg: HierarchyConfig) -> Result<Self> {
        let mut h = Self::new(cfg)?;
        for (id, pose) in graph.nodes() {
            let edges = graph
                .incident(id)
                .iter()
                .map(|&e| graph.edge(e))
                .filter(|e| e.other(id) < id)
                .cloned();
            h.add_pose(id, *pose, edges)?;
        }
        Ok(h)
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.cfg
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &HierarchyLevel {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[HierarchyLevel] {
        &self.levels
    }

    pub(crate) fn level_mut(&mut self, l: usize) -> &mut HierarchyLevel {
        &mut self.levels[l]
    }

    /// Overwrites the pose of node `id` at level `l`; returns false if absent.
    /// Nothing is propagated.
    pub fn set_level_pose(&mut self, l: usize, id: NodeId, pose: Pose) -> bool {
        self.levels[l].graph.set_pose(id, pose)
    }

    /// Level `upper - 1` mutably together with level `upper`.
    pub(crate) fn lower_and_upper(
        &mut self,
        upper: usize,
    ) -> (&mut HierarchyLevel, &HierarchyLevel) {
        let (below, above) = self.levels.split_at_mut(upper);
        (&mut below[upper - 1], &above[0])
    }

    pub fn base(&self) -> &PoseGraph {
        &self.levels[0].graph
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    /// Node counts per level, bottom first.
    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.graph.node_count()).collect()
    }

    /// `|level l| / |level l + 1|` for each adjacent pair of levels.
    pub fn reduction_rates(&self) -> Vec<f64> {
        self.sizes()
            .windows(2)
            .map(|w| w[0] as f64 / w[1] as f64)
            .collect()
    }

    /// The node standing for level-0 node `id` at level `l`.
    pub fn ancestor(&self, id: NodeId, l: usize) -> Option<NodeId> {
        let mut n = id;
        if !self.levels[0].graph.contains(n) {
            return None;
        }
        for level in &self.levels[..l] {
            n = level.parent_of(n)?;
        }
        Some(n)
    }

    /// Inserts a pose and its edges into level 0 and updates every level
    /// above it. Edges may point either way but must join existing nodes or
    /// the new one.
    pub fn add_pose(
        &mut self,
        id: NodeId,
        pose: Pose,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<()> {
        let edges: Vec<Edge> = edges.into_iter().collect();
        let base = &self.levels[0].graph;
        if base.contains(id) {
            return Err(Error::DuplicateNode(id));
        }
        for e in &edges {
            for n in [e.from, e.to] {
                if n != id && !base.contains(n) {
                    return Err(Error::MissingEndpoint(n));
                }
            }
            if e.from == e.to {
                return Err(Error::SelfLoop {
                    from: e.from,
                    to: e.to,
                });
            }
            validate_information(&e.information)?;
        }

        let mut touched: BTreeSet<NodeId> = BTreeSet::from([id]);
        let level0 = &mut self.levels[0];
        level0.add_node(id, pose)?;
        for e in edges {
            touched.insert(e.other(id));
            level0.add_edge(e)?;
        }
        let mut fresh = vec![id];
        let mode = self.cfg.upper_measurement;
        for l in 0..self.levels.len() {
            let (lower, rest) = self.levels[l..].split_first_mut().expect("level exists");
            lower.group_nodes(&fresh);
            let dirty: BTreeSet<GroupId> = touched
                .iter()
                .filter_map(|&n| lower.partition.group_of(n))
                .collect();
            lower.refresh_representatives(dirty.iter().copied());
            let Some(upper) = rest.first_mut() else { break };
            (fresh, touched) = lift(lower, upper, &dirty, mode)?;
        }

        let top = self.levels.last_mut().expect("at least one level");
        if top.graph.node_count() > self.cfg.level_threshold
            && top.partition.group_count() < top.graph.node_count()
        {
            let mut next = build_next_level(top, &self.cfg)?;
            let ids: Vec<NodeId> = next.graph.node_ids().collect();
            next.group_nodes(&ids);
            self.levels.push(next);
        }
        Ok(())
    }

    /// Resets every upper-level pose to its representative's pose, bottom up.
    pub fn refresh_upper_poses(&mut self) {
        for l in 1..self.levels.len() {
            let (below, above) = self.levels.split_at_mut(l);
            let lower = &below[l - 1];
            let upper = &mut above[0];
            for (g, _) in lower.partition.groups() {
                upper.graph.set_pose(NodeId(g.0), lower.rep_pose(g));
            }
        }
    }
}
