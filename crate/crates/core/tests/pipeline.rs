//! End-to-end runs through the public API on simulated trajectories.

use hpgo::metrics::default_segment_lengths;
use hpgo::optimizer::chi2;
use hpgo::phpgo::optimize_mode;
use hpgo::{
    optimize, optimize_partial, parse_g2o, relative_errors, simulate, write_g2o, Error, Hierarchy,
    HierarchyConfig, Mode, NodeId, OptConfig, PhpgoConfig, PoseGraph, SimConfig, Trajectory,
};

fn sim(n: usize, seed: u64) -> (PoseGraph, Trajectory) {
    simulate(&SimConfig::new(n, seed)).unwrap()
}

fn last(g: &PoseGraph) -> NodeId {
    g.node_ids().last().unwrap()
}

#[test]
fn g2o_text_round_trips_a_simulated_graph() {
    let (g, _) = sim(500, 1);
    let parsed = parse_g2o(&write_g2o(&g)).unwrap();
    assert_eq!(parsed.skipped_lines, 0);
    let back = parsed.graph;
    assert_eq!(back.node_count(), g.node_count());
    for (id, pose) in g.nodes() {
        assert!(
            back.pose(id).unwrap().max_abs_diff(pose) <= 1e-12,
            "node {id:?}"
        );
    }
    assert_eq!(back.edge_count(), g.edge_count());
    for (a, b) in g.edges().iter().zip(back.edges()) {
        assert_eq!((a.from, a.to), (b.from, b.to));
        assert!(a.measurement.max_abs_diff(&b.measurement) <= 1e-12);
        assert!((a.information - b.information).amax() <= 1e-9 * a.information.amax());
    }
}

#[test]
fn full_optimization_beats_dead_reckoning() {
    let (mut g, truth) = sim(1000, 2);
    let lengths = default_segment_lengths(truth.path_length());
    let before = relative_errors(&Trajectory::from_graph(&g), &truth, &lengths).unwrap();
    let chi2_before = chi2(&g).unwrap();
    let report = optimize(&mut g, &OptConfig::default()).unwrap();
    assert!(report.converged);
    assert!(chi2(&g).unwrap() < chi2_before);
    let after = relative_errors(&Trajectory::from_graph(&g), &truth, &lengths).unwrap();
    assert!(after.ate < before.ate, "{} vs {}", after.ate, before.ate);
}

#[test]
fn streamed_hierarchy_keeps_levels_linked() {
    let (g, _) = sim(2000, 3);
    let h = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
    assert!(h.level_count() >= 2);
    assert_eq!(h.sizes()[0], 2000);
    for (l, r) in h.reduction_rates().into_iter().enumerate() {
        assert!((1.0..=3.0).contains(&r), "level {l} rate {r}");
    }
    for id in g.node_ids() {
        for l in 0..h.level_count() {
            let a = h.ancestor(id, l).unwrap();
            assert!(h.level(l).graph().contains(a));
        }
    }
    let top = h.level(h.top()).graph();
    assert!(top.node_count() <= h.config().level_threshold * 3);
}

#[test]
fn every_mode_lowers_the_base_cost() {
    let (g, _) = sim(1500, 4);
    let built = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
    let start = chi2(built.base()).unwrap();
    for mode in [Mode::Full, Mode::TopOnly, Mode::Partial] {
        let mut h = built.clone();
        let cfg = PhpgoConfig {
            mode,
            ..Default::default()
        };
        let reports = optimize_mode(&mut h, last(&g), &cfg).unwrap();
        assert!(!reports.is_empty());
        let end = chi2(h.base()).unwrap();
        assert!(end < start, "{mode}: {end} >= {start}");
    }
}

#[test]
fn partial_runs_visit_every_level_top_down() {
    let (g, _) = sim(1500, 5);
    let mut h = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
    let cfg = PhpgoConfig::default();
    let reports = optimize_partial(&mut h, last(&g), &cfg).unwrap();
    let levels: Vec<usize> = reports.iter().map(|r| r.level).collect();
    let expected: Vec<usize> = (0..h.level_count()).rev().collect();
    assert_eq!(levels, expected);
    for r in &reports[1..] {
        assert!(r.free_nodes <= cfg.subgraph_size);
    }
}

#[test]
fn partial_run_rejects_unknown_seed() {
    let (g, _) = sim(200, 6);
    let mut h = Hierarchy::from_graph(&g, HierarchyConfig::default()).unwrap();
    let missing = NodeId(10_000);
    match optimize_partial(&mut h, missing, &PhpgoConfig::default()) {
        Err(Error::MissingSeed(id)) => assert_eq!(id, missing),
        other => panic!("expected a missing seed error, got {other:?}"),
    }
}
