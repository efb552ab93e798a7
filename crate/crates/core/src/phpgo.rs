//! Partial hierarchical optimization.
//!
//! The top level is optimized in full and its correction pushed down.
//! Every lower level then re-optimizes only the `P` nodes nearest (in hops)
//! to the newest pose's ancestor, with the ring of nodes around them held
//! fixed, before pushing its own correction further down.

use std::collections::{BTreeSet, VecDeque};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::graph::{NodeId, PoseGraph};
use crate::hierarchy::Hierarchy;
use crate::optimizer::{optimize, optimize_subset, OptConfig, OptReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// Plain optimization of the original graph.
    Full,
    /// Full optimization of the top level only, propagated down.
    TopOnly,
    #[default]
    Partial,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "top" => Ok(Mode::TopOnly),
            "partial" => Ok(Mode::Partial),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::TopOnly => "top",
            Mode::Partial => "partial",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhpgoConfig {
    /// Number of free nodes per level in partial runs.
    pub subgraph_size: usize,
    pub mode: Mode,
    pub optimizer: OptConfig,
}

impl Default for PhpgoConfig {
    fn default() -> Self {
        Self {
            subgraph_size: 100,
            mode: Mode::Partial,
            optimizer: OptConfig::default(),
        }
    }
}

impl PhpgoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subgraph_size < 2 {
            return Err(Error::InvalidConfig(
                "subgraph size must be at least 2".into(),
            ));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Selection {
    pub interior: BTreeSet<NodeId>,
    pub border: BTreeSet<NodeId>,
}

/// Report of one optimization run inside a schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelReport {
    pub level: usize,
    pub free_nodes: usize,
    pub report: OptReport,
}

/// The first `p` nodes reached by breadth-first search from `seed`,
/// expanding neighbors in ascending id, and the nodes adjacent to them.
pub fn bfs_select(g: &PoseGraph, seed: NodeId, p: usize) -> Result<Selection> {
    if !g.contains(seed) {
        return Err(Error::MissingSeed(seed));
    }
    let mut interior = BTreeSet::from([seed]);
    let mut queue = VecDeque::from([seed]);
    let mut order = Vec::new();
    'search: while let Some(n) = queue.pop_front() {
        order.clear();
        order.extend(g.neighbors(n).map(|(m, _)| m));
        order.sort_unstable();
        order.dedup();
        for &m in &order {
            if interior.len() >= p {
                break 'search;
            }
            if interior.insert(m) {
                queue.push_back(m);
            }
        }
    }
    let border = interior
        .iter()
        .flat_map(|&n| g.neighbors(n).map(|(m, _)| m))
        .filter(|m| !interior.contains(m))
        .collect();
    Ok(Selection { interior, border })
}

/// Moves every group at level `upper - 1` rigidly with its representative,
/// so that each representative lands exactly on its upper node's pose.
pub fn propagate_down(h: &mut Hierarchy, upper: usize) {
    assert!(
        upper >= 1 && upper < h.level_count(),
        "no level below {upper}"
    );
    let (lower, up) = h.lower_and_upper(upper);
    let up = up.graph();
    lower.move_groups(|g| *up.pose(NodeId(g.0)).expect("every group has an upper node"));
}

/// Optimizes the selection around `seed`: interior free, border fixed. With
/// an empty border the seed itself is held fixed.
pub fn optimize_selection(
    graph: &mut PoseGraph,
    seed: NodeId,
    p: usize,
    opt: &OptConfig,
) -> Result<(Selection, OptReport)> {
    let sel = bfs_select(graph, seed, p)?;
    let mut cfg = opt.clone();
    cfg.fixed_nodes = if sel.border.is_empty() {
        BTreeSet::from([seed])
    } else {
        sel.border.clone()
    };
    let free: Vec<NodeId> = sel
        .interior
        .iter()
        .copied()
        .filter(|n| !cfg.fixed_nodes.contains(n))
        .collect();
    let report = optimize_subset(graph, &free, &cfg)?;
    Ok((sel, report))
}

/// Number of nodes a selection solve leaves free.
fn free_count(sel: &Selection) -> usize {
    if sel.border.is_empty() {
        sel.interior.len() - 1
    } else {
        sel.interior.len()
    }
}

pub fn optimize_partial(
    h: &mut Hierarchy,
    last: NodeId,
    cfg: &PhpgoConfig,
) -> Result<Vec<LevelReport>> {
    cfg.validate()?;
    if !h.base().contains(last) {
        return Err(Error::MissingSeed(last));
    }
    let top = h.top();
    let mut reports = Vec::with_capacity(top + 1);
    if top == 0 {
        let (sel, report) = optimize_selection(
            h.level_mut(0).graph_mut(),
            last,
            cfg.subgraph_size,
            &cfg.optimizer,
        )?;
        reports.push(LevelReport {
            level: 0,
            free_nodes: free_count(&sel),
            report,
        });
        return Ok(reports);
    }
    h.refresh_upper_poses();
    let report = optimize(
        h.level_mut(top).graph_mut(),
        &cfg.optimizer.clone().with_fixed([]),
    )?;
    reports.push(level_report(h, top, report));
    propagate_down(h, top);
    for l in (0..top).rev() {
        let seed = h.ancestor(last, l).ok_or(Error::MissingSeed(last))?;
        let (sel, report) = optimize_selection(
            h.level_mut(l).graph_mut(),
            seed,
            cfg.subgraph_size,
            &cfg.optimizer,
        )?;
        reports.push(LevelReport {
            level: l,
            free_nodes: free_count(&sel),
            report,
        });
        if l > 0 {
            propagate_down(h, l);
        }
    }
    Ok(reports)
}

fn level_report(h: &Hierarchy, level: usize, report: OptReport) -> LevelReport {
    LevelReport {
        level,
        free_nodes: h.level(level).graph().node_count(),
        report,
    }
}

/// Runs one of the three schedules. `last` seeds the partial schedule and
/// is ignored by the others.
pub fn optimize_mode(
    h: &mut Hierarchy,
    last: NodeId,
    cfg: &PhpgoConfig,
) -> Result<Vec<LevelReport>> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Partial => optimize_partial(h, last, cfg),
        Mode::Full => {
            let report = optimize(h.level_mut(0).graph_mut(), &cfg.optimizer)?;
            h.refresh_upper_poses();
            Ok(vec![level_report(h, 0, report)])
        }
        Mode::TopOnly => {
            let top = h.top();
            if top == 0 {
                let report = optimize(h.level_mut(0).graph_mut(), &cfg.optimizer)?;
                return Ok(vec![level_report(h, 0, report)]);
            }
            h.refresh_upper_poses();
            let report = optimize(
                h.level_mut(top).graph_mut(),
                &cfg.optimizer.clone().with_fixed([]),
            )?;
            let out = vec![level_report(h, top, report)];
            for l in (1..=top).rev() {
                propagate_down(h, l);
            }
            Ok(out)
        }
    }
}

/// Timed wrapper: wall time of the whole schedule in milliseconds.
pub fn timed_optimize_mode(
    h: &mut Hierarchy,
    last: NodeId,
    cfg: &PhpgoConfig,
) -> Result<(Vec<LevelReport>, f64)> {
    let start = Instant::now();
    let reports = optimize_mode(h, last, cfg)?;
    Ok((reports, start.elapsed().as_secs_f64() * 1e3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::hierarchy::HierarchyConfig;
    use crate::manifold::Pose;
    use crate::simulate::{simulate, SimConfig};
    use nalgebra::{Matrix6, Vector3};

    fn id(i: usize) -> NodeId {
        NodeId(i)
    }

    fn edge(a: usize, b: usize) -> Edge {
        Edge::new(
            id(a),
            id(b),
            Pose::from_translation(Vector3::x()),
            Matrix6::identity(),
        )
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> PoseGraph {
        let mut g = PoseGraph::new();
        for i in 0..n {
            g.add_node(
                id(i),
                Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
            )
            .unwrap();
        }
        for &(a, b) in edges {
            g.add_edge(edge(a, b)).unwrap();
        }
        g
    }

    fn set(ids: &[usize]) -> BTreeSet<NodeId> {
        ids.iter().map(|&i| id(i)).collect()
    }

    #[test]
    fn bfs_on_chain_and_star() {
        let chain: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
        let g = graph(10, &chain);
        let s = bfs_select(&g, id(0), 3).unwrap();
        assert_eq!((s.interior, s.border), (set(&[0, 1, 2]), set(&[3])));

        let g = graph(6, &[(0, 5), (0, 3), (0, 1), (0, 4), (0, 2)]);
        let s = bfs_select(&g, id(0), 3).unwrap();
        assert_eq!((s.interior, s.border), (set(&[0, 1, 2]), set(&[3, 4, 5])));

        let s = bfs_select(&g, id(0), 50).unwrap();
        assert_eq!(s.interior.len(), 6);
        assert!(s.border.is_empty());

        assert_eq!(bfs_select(&g, id(9), 3), Err(Error::MissingSeed(id(9))));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Full, Mode::TopOnly, Mode::Partial] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    fn small_hierarchy() -> Hierarchy {
        let cfg = HierarchyConfig {
            level_threshold: 30,
            ..Default::default()
        };
        let (g, _) = simulate(&SimConfig::new(300, 4)).unwrap();
        Hierarchy::from_graph(&g, cfg).unwrap()
    }

    #[test]
    fn propagation_of_unchanged_level_is_identity() {
        let mut h = small_hierarchy();
        assert!(h.level_count() >= 3);
        let before = h.base().clone();
        h.refresh_upper_poses();
        propagate_down(&mut h, 1);
        for ((_, a), (_, b)) in h.base().nodes().zip(before.nodes()) {
            assert!(a.max_abs_diff(b) <= 1e-12);
        }
    }

    #[test]
    fn propagation_translates_groups_rigidly() {
        let mut h = small_hierarchy();
        let shift = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let before = h.base().clone();
        let ups: Vec<_> = h
            .level(1)
            .graph()
            .nodes()
            .map(|(n, p)| (n, shift.compose(p)))
            .collect();
        for (n, p) in ups {
            h.level_mut(1).graph_mut().set_pose(n, p);
        }
        propagate_down(&mut h, 1);
        for (n, p) in before.nodes() {
            let moved = h.base().pose(n).unwrap();
            assert!((moved.translation() - p.translation() - Vector3::x()).amax() <= 1e-12);
        }
    }

    #[test]
    fn single_level_partial_is_one_local_solve() {
        let (g, _) = simulate(&SimConfig::new(200, 5)).unwrap();
        let mut h = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
        assert_eq!(h.level_count(), 1);
        let reports = optimize_partial(&mut h, id(199), &PhpgoConfig::default()).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].level, 0);
        // nodes far from the seed are untouched
        assert_eq!(h.base().pose(id(0)), g.pose(id(0)));
    }

    #[test]
    fn noise_free_hierarchy_is_a_fixed_point() {
        let cfg = SimConfig {
            trans_noise_sigma: 0.0,
            rot_noise_sigma: 0.0,
            ..SimConfig::new(400, 6)
        };
        let (g, _) = simulate(&cfg).unwrap();
        let hcfg = HierarchyConfig {
            level_threshold: 40,
            ..Default::default()
        };
        let mut h = Hierarchy::from_graph(&g, hcfg).unwrap();
        assert!(h.level_count() >= 3);
        let reports = optimize_partial(&mut h, id(399), &PhpgoConfig::default()).unwrap();
        assert!(reports.iter().all(|r| r.report.chi2_initial <= 1e-12));
        for ((_, a), (_, b)) in h.base().nodes().zip(g.nodes()) {
            assert!(a.max_abs_diff(b) <= 1e-9);
        }
    }

    #[test]
    fn full_mode_matches_plain_optimization() {
        let (g, _) = simulate(&SimConfig::new(150, 7)).unwrap();
        let mut h = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
        let mut plain = g.clone();
        optimize(&mut plain, &OptConfig::default()).unwrap();
        let cfg = PhpgoConfig {
            mode: Mode::Full,
            ..Default::default()
        };
        optimize_mode(&mut h, id(149), &cfg).unwrap();
        assert_eq!(h.base(), &plain);

        let mut top = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
        let cfg = PhpgoConfig {
            mode: Mode::TopOnly,
            ..Default::default()
        };
        optimize_mode(&mut top, id(149), &cfg).unwrap();
        assert_eq!(top.base(), &plain);
    }

    #[test]
    fn partial_borders_do_not_move() {
        let (g, _) = simulate(&SimConfig::new(600, 8)).unwrap();
        let hcfg = HierarchyConfig {
            level_threshold: 60,
            ..Default::default()
        };
        let mut h = Hierarchy::from_graph(&g, hcfg).unwrap();
        let cfg = PhpgoConfig {
            subgraph_size: 40,
            ..Default::default()
        };
        let sel = bfs_select(h.base(), id(599), 40).unwrap();
        let mut level0 = h.base().clone();
        optimize_selection(&mut level0, id(599), 40, &cfg.optimizer).unwrap();
        for n in &sel.border {
            assert_eq!(level0.pose(*n), h.base().pose(*n));
        }
        let reports = optimize_partial(&mut h, id(599), &cfg).unwrap();
        assert_eq!(reports.len(), h.level_count());
        assert_eq!(reports.last().unwrap().level, 0);
    }
}
