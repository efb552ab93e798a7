//! Synthetic planar trajectories on a square lattice with noisy odometry and
//! loop closures.

use std::collections::HashMap;

use nalgebra::{Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId, PoseGraph};
use crate::manifold::{Pose, Twist};
use crate::metrics::Trajectory;

/// Closures are only made to poses at least this many steps back.
const MIN_LOOP_GAP: usize = 10;

/// The walk is confined to a square window of this half-width (in cells)
/// whose center advances along +x by `ARENA_DRIFT` cells per step, so places
/// are revisited for a while and then left behind.
const ARENA_HALF: i64 = 10;
const ARENA_DRIFT: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub step_length: f64,
    /// Chance that a pose revisiting a known place closes a loop.
    pub loop_closure_prob: f64,
    /// Chance of a 90 degree turn at each step.
    pub turn_prob: f64,
    pub trans_noise_sigma: f64,
    pub rot_noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_nodes: 1000,
            step_length: 1.0,
            loop_closure_prob: 0.1,
            turn_prob: 0.2,
            trans_noise_sigma: 0.05,
            rot_noise_sigma: 0.005,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn new(n_nodes: usize, rng_seed: u64) -> Self {
        Self {
            n_nodes,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_nodes < 2 {
            return Err(Error::InvalidConfig("at least 2 nodes are needed".into()));
        }
        if !(self.step_length > 0.0) {
            return Err(Error::InvalidConfig("step length must be positive".into()));
        }
        if !prob(self.loop_closure_prob) || !prob(self.turn_prob) {
            return Err(Error::InvalidConfig(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if !(self.trans_noise_sigma >= 0.0 && self.rot_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise sigmas must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn information(&self) -> Matrix6<f64> {
        let inv = |s: f64| if s > 0.0 { 1.0 / (s * s) } else { 1.0 };
        let t = inv(self.trans_noise_sigma);
        let r = inv(self.rot_noise_sigma);
        Matrix6::from_diagonal(&nalgebra::Vector6::new(t, t, t, r, r, r))
    }
}

/// Ground truth walks a lattice inside a slowly advancing window, turning
/// at random and at the window's edges. Returns the graph initialized from
/// integrated noisy odometry and the true trajectory.
pub fn simulate(cfg: &SimConfig) -> Result<(PoseGraph, Trajectory)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = cfg.n_nodes;

    // ground truth on integer cells, heading in quarter turns
    let mut cells = Vec::with_capacity(n);
    let (mut cell, mut heading) = ((0i64, 0i64), 0i64);
    cells.push((cell, heading));
    for i in 1..n {
        if rng.random_bool(cfg.turn_prob) {
            heading += if rng.random_bool(0.5) { 1 } else { -1 };
        }
        let lo = (i as f64 * ARENA_DRIFT).floor() as i64 - ARENA_HALF;
        let inside =
            |(x, y): (i64, i64)| x >= lo && x <= lo + 2 * ARENA_HALF && y.abs() <= ARENA_HALF;
        let mut turns = 0;
        while !inside(advance(cell, heading)) && turns < 4 {
            heading += 1;
            turns += 1;
        }
        if turns == 4 {
            // left behind by the window: head east to catch up
            heading -= heading.rem_euclid(4);
        }
        cell = advance(cell, heading);
        cells.push((cell, heading));
    }
    let gt: Vec<Pose> = cells
        .iter()
        .map(|&((x, y), h)| {
            let t = Vector3::new(x as f64, y as f64, 0.0) * cfg.step_length;
            Pose::from_yaw(h.rem_euclid(4) as f64 * std::f64::consts::FRAC_PI_2, t)
        })
        .collect();

    let trans = Normal::new(0.0, cfg.trans_noise_sigma).expect("sigma validated");
    let rot = Normal::new(0.0, cfg.rot_noise_sigma).expect("sigma validated");
    let info = cfg.information();
    let noisy = |rng: &mut ChaCha8Rng, z: Pose| {
        let d = Twist::new(
            Vector3::from_fn(|_, _| trans.sample(rng)),
            Vector3::from_fn(|_, _| rot.sample(rng)),
        );
        z.compose(&Pose::exp(&d))
    };

    let mut graph = PoseGraph::new();
    let mut visits: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut pose = gt[0];
    graph.add_node(NodeId(0), pose)?;
    visits.entry(cells[0].0).or_default().push(0);
    for i in 1..n {
        let z = noisy(&mut rng, gt[i - 1].between(&gt[i]));
        pose = pose.compose(&z);
        graph.add_node(NodeId(i), pose)?;
        graph.add_edge(Edge::new(NodeId(i - 1), NodeId(i), z, info))?;

        let (x, y) = cells[i].0;
        let mut candidates: Vec<usize> = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .filter_map(|(dx, dy)| visits.get(&(x + dx, y + dy)))
            .flatten()
            .copied()
            .filter(|&j| j + MIN_LOOP_GAP < i)
            .collect();
        if !candidates.is_empty() && rng.random_bool(cfg.loop_closure_prob) {
            candidates.sort_unstable();
            let j = candidates[rng.random_range(0..candidates.len())];
            let z = noisy(&mut rng, gt[j].between(&gt[i]));
            graph.add_edge(Edge::new(NodeId(j), NodeId(i), z, info))?;
        }
        visits.entry(cells[i].0).or_default().push(i);
    }
    let truth = Trajectory::new(
        gt.into_iter()
            .enumerate()
            .map(|(i, p)| (NodeId(i), p))
            .collect(),
    )?;
    Ok((graph, truth))
}

fn advance((x, y): (i64, i64), heading: i64) -> (i64, i64) {
    match heading.rem_euclid(4) {
        0 => (x + 1, y),
        1 => (x, y + 1),
        2 => (x - 1, y),
        _ => (x, y - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{default_segment_lengths, relative_errors};
    use crate::optimizer::{chi2, optimize, OptConfig};

    #[test]
    fn zero_noise_truth_has_zero_chi2() {
        let cfg = SimConfig {
            trans_noise_sigma: 0.0,
            rot_noise_sigma: 0.0,
            ..SimConfig::new(500, 1)
        };
        let (mut g, gt) = simulate(&cfg).unwrap();
        for (id, p) in gt.poses() {
            g.set_pose(*id, *p);
        }
        assert!(chi2(&g).unwrap() <= 1e-18);
        assert!(g.edge_count() > 499, "expected loop closures");
    }

    #[test]
    fn same_seed_same_graph() {
        let cfg = SimConfig::new(300, 7);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = SimConfig::new(300, 8);
        assert_ne!(simulate(&cfg).unwrap().0, simulate(&other).unwrap().0);
    }

    #[test]
    fn loop_closure_share_is_near_the_configured_rate() {
        let (g, _) = simulate(&SimConfig::new(3000, 2)).unwrap();
        let closures = g.edge_count() - 2999;
        assert!((100..=400).contains(&closures), "{closures} closures");
    }

    #[test]
    fn optimization_beats_dead_reckoning() {
        let cfg = SimConfig {
            trans_noise_sigma: 0.1,
            ..SimConfig::new(1000, 3)
        };
        let (mut g, gt) = simulate(&cfg).unwrap();
        let lengths = default_segment_lengths(gt.path_length());
        let before = relative_errors(&Trajectory::from_graph(&g), &gt, &lengths).unwrap();
        optimize(&mut g, &OptConfig::default()).unwrap();
        let after = relative_errors(&Trajectory::from_graph(&g), &gt, &lengths).unwrap();
        assert!(after.ate < before.ate, "{after:?} vs {before:?}");
    }

    #[test]
    fn rejects_bad_config() {
        assert!(simulate(&SimConfig::new(1, 0)).is_err());
        let cfg = SimConfig {
            loop_closure_prob: 1.5,
            ..SimConfig::new(10, 0)
        };
        assert!(simulate(&cfg).is_err());
    }
}
