//! Levenberg–Marquardt pose-graph optimization over a free subset of nodes.
//!
//! Nodes outside the free set are held constant; edges with no free endpoint
//! do not participate. Only edges incident to free nodes are visited, so the
//! cost of a solve depends on the size of the free set, not of the graph.

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use nalgebra::{DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId, PoseGraph};
use crate::manifold::{error_jacobians, relative_error, Pose, Twist};
use crate::sparse::{BlockMatrix, Symbolic};

/// Increments smaller than this (max-abs over all coordinates) end the run.
const STEP_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers chi2 by less than this fraction.
    pub convergence_tol: f64,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    /// Nodes held constant. When empty, the lowest id of every connected
    /// component is held instead.
    pub fixed_nodes: BTreeSet<NodeId>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_tol: 1e-6,
            initial_lambda: 1e-4,
            lambda_factor: 10.0,
            fixed_nodes: BTreeSet::new(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.initial_lambda >= 0.0) {
            return Err(Error::InvalidConfig(
                "initial_lambda must be non-negative".into(),
            ));
        }
        if !(self.lambda_factor > 1.0) {
            return Err(Error::InvalidConfig("lambda_factor must exceed 1".into()));
        }
        Ok(())
    }

    pub fn with_fixed(mut self, fixed: impl IntoIterator<Item = NodeId>) -> Self {
        self.fixed_nodes = fixed.into_iter().collect();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptReport {
    pub iterations_run: usize,
    /// Objective over the participating edges before the first step.
    pub chi2_initial: f64,
    pub chi2_final: f64,
    pub converged: bool,
    pub wall_time: Duration,
}

/// Normal equations `H dx = -b` in 6x6 blocks, one block row per free node
/// in the order of `free`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub free: Vec<NodeId>,
    pub h: BlockMatrix,
    pub b: DVector<f64>,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

pub fn edge_error(xi: &Pose, xj: &Pose, zij: &Pose) -> Result<Twist> {
    relative_error(xi, xj, zij)
}

fn edge_terms(graph: &PoseGraph, edge: &Edge) -> Result<(Vector6<f64>, f64)> {
    let xi = graph
        .pose(edge.from)
        .ok_or(Error::MissingEndpoint(edge.from))?;
    let xj = graph.pose(edge.to).ok_or(Error::MissingEndpoint(edge.to))?;
    let e = relative_error(xi, xj, &edge.measurement)?.to_vector();
    let chi2 = e.dot(&(edge.information * e));
    Ok((e, chi2))
}

/// Sum of `e^T Omega e` over every edge.
pub fn chi2(graph: &PoseGraph) -> Result<f64> {
    graph
        .edges()
        .iter()
        .map(|e| edge_terms(graph, e).map(|(_, c)| c))
        .sum()
}

/// Precomputed layout of one optimization problem: free-node indexing, the
/// participating edges and where their Jacobian products land in `H`.
struct Problem {
    free: Vec<NodeId>,
    edges: Vec<usize>,
    /// Per participating edge: block index of `from` and `to` when free, and
    /// the off-diagonal slot when both are.
    slots: Vec<(Option<usize>, Option<usize>, Option<usize>)>,
    pairs: Vec<(usize, usize)>,
    symbolic: Symbolic,
}

impl Problem {
    fn new(graph: &PoseGraph, free: &[NodeId]) -> Result<Self> {
        let mut index = HashMap::with_capacity(free.len());
        for (k, &id) in free.iter().enumerate() {
            if !graph.contains(id) {
                return Err(Error::MissingEndpoint(id));
            }
            index.insert(id, k);
        }
        let mut edges: Vec<usize> = free
            .iter()
            .flat_map(|&id| graph.incident(id).iter().copied())
            .collect();
        edges.sort_unstable();
        edges.dedup();

        let mut pair_slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut pairs = Vec::new();
        let slots = edges
            .iter()
            .map(|&ei| {
                let e = graph.edge(ei);
                let i = index.get(&e.from).copied();
                let j = index.get(&e.to).copied();
                let pair = match (i, j) {
                    (Some(a), Some(b)) => {
                        let key = (a.min(b), a.max(b));
                        Some(*pair_slot.entry(key).or_insert_with(|| {
                            pairs.push(key);
                            pairs.len() - 1
                        }))
                    }
                    _ => None,
                };
                (i, j, pair)
            })
            .collect();
        let symbolic = Symbolic::analyze(free.len(), &pairs);
        Ok(Self {
            free: free.to_vec(),
            edges,
            slots,
            pairs,
            symbolic,
        })
    }

    fn chi2(&self, graph: &PoseGraph) -> Result<f64> {
        self.edges
            .iter()
            .map(|&ei| edge_terms(graph, graph.edge(ei)).map(|(_, c)| c))
            .sum()
    }

    fn assemble(&self, graph: &PoseGraph) -> Result<(LinearSystem, f64)> {
        let n = self.free.len();
        let mut h = BlockMatrix {
            diag: vec![Matrix6::zeros(); n],
            pairs: self.pairs.clone(),
            off: vec![Matrix6::zeros(); self.pairs.len()],
        };
        let mut b = DVector::zeros(6 * n);
        let mut total = 0.0;
        for (&ei, &(si, sj, sp)) in self.edges.iter().zip(&self.slots) {
            let edge = graph.edge(ei);
            let xi = graph
                .pose(edge.from)
                .ok_or(Error::MissingEndpoint(edge.from))?;
            let xj = graph.pose(edge.to).ok_or(Error::MissingEndpoint(edge.to))?;
            let e = relative_error(xi, xj, &edge.measurement)?.to_vector();
            let (ji, jj) = error_jacobians(xi, xj, &edge.measurement)?;
            let omega = &edge.information;
            let omega_e = omega * e;
            total += e.dot(&omega_e);

            let ji_t_omega = si.map(|_| ji.transpose() * omega);
            let jj_t_omega = sj.map(|_| jj.transpose() * omega);
            if let (Some(i), Some(a)) = (si, &ji_t_omega) {
                h.diag[i] += a * ji;
                let mut seg = b.fixed_rows_mut::<6>(6 * i);
                seg += ji.transpose() * omega_e;
            }
            if let (Some(j), Some(a)) = (sj, &jj_t_omega) {
                h.diag[j] += a * jj;
                let mut seg = b.fixed_rows_mut::<6>(6 * j);
                seg += jj.transpose() * omega_e;
            }
            if let (Some(i), Some(j), Some(p)) = (si, sj, sp) {
                // off[p] is block (min, max)
                let block = if i < j {
                    ji_t_omega.unwrap() * jj
                } else {
                    jj_t_omega.unwrap() * ji
                };
                h.off[p] += block;
            }
        }
        Ok((
            LinearSystem {
                free: self.free.clone(),
                h,
                b,
            },
            total,
        ))
    }
}

/// Assembles `H = sum J^T Omega J` and `b = sum J^T Omega e` over the edges
/// incident to `free`. Nodes outside `free` contribute only as constants.
pub fn build_system(graph: &PoseGraph, free: &[NodeId]) -> Result<LinearSystem> {
    let problem = Problem::new(graph, free)?;
    Ok(problem.assemble(graph)?.0)
}

/// Solves `(H + lambda * diag(H)) dx = -b`.
pub fn solve_system(system: &LinearSystem, lambda: f64) -> Result<DVector<f64>> {
    let symbolic = Symbolic::analyze(system.h.block_count(), &system.h.pairs);
    let factor = symbolic.factor(&system.h, lambda)?;
    Ok(factor.solve(&-&system.b))
}

/// `pose_i <- pose_i * exp(dx_i)` for every free node.
pub fn apply_increment(graph: &mut PoseGraph, free: &[NodeId], dx: &DVector<f64>) {
    assert_eq!(dx.len(), 6 * free.len(), "increment dimension mismatch");
    for (k, &id) in free.iter().enumerate() {
        let delta = Twist::from_vector(&dx.fixed_rows::<6>(6 * k).into_owned());
        if let Some(p) = graph.pose(id) {
            let next = p.compose(&Pose::exp(&delta));
            graph.set_pose(id, next);
        }
    }
}

/// Connected components of the whole graph, each as its node list.
fn components(graph: &PoseGraph) -> Vec<Vec<NodeId>> {
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut out = Vec::new();
    for id in graph.node_ids() {
        if !seen.insert(id) {
            continue;
        }
        let mut comp = vec![id];
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for (m, _) in graph.neighbors(n) {
                if seen.insert(m) {
                    comp.push(m);
                    stack.push(m);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Every component of the free subgraph must touch a node outside the free
/// set, otherwise the gauge is unconstrained.
fn check_gauge(graph: &PoseGraph, free: &[NodeId]) -> Result<()> {
    let free_set: BTreeSet<NodeId> = free.iter().copied().collect();
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    for &start in free {
        if !seen.insert(start) {
            continue;
        }
        let mut lowest = start;
        let mut anchored = false;
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            lowest = lowest.min(n);
            for (m, _) in graph.neighbors(n) {
                if !free_set.contains(&m) {
                    anchored = true;
                } else if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        if !anchored {
            return Err(Error::NoFixedGauge(lowest));
        }
    }
    Ok(())
}

/// Optimizes every node not in `cfg.fixed_nodes`. With no fixed nodes, the
/// lowest id of each connected component is anchored.
pub fn optimize(graph: &mut PoseGraph, cfg: &OptConfig) -> Result<OptReport> {
    let fixed: BTreeSet<NodeId> = if cfg.fixed_nodes.is_empty() {
        components(graph)
            .into_iter()
            .filter_map(|c| c.into_iter().min())
            .collect()
    } else {
        cfg.fixed_nodes.clone()
    };
    let free: Vec<NodeId> = graph.node_ids().filter(|id| !fixed.contains(id)).collect();
    optimize_subset(graph, &free, cfg)
}

/// Optimizes the nodes in `free`; everything else is held constant.
pub fn optimize_subset(
    graph: &mut PoseGraph,
    free: &[NodeId],
    cfg: &OptConfig,
) -> Result<OptReport> {
    cfg.validate()?;
    let start = Instant::now();
    let free: Vec<NodeId> = free
        .iter()
        .copied()
        .filter(|id| !cfg.fixed_nodes.contains(id))
        .collect();
    check_gauge(graph, &free)?;
    let problem = Problem::new(graph, &free)?;
    let (mut system, mut current) = problem.assemble(graph)?;
    let chi2_initial = current;

    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;
    let mut converged = free.is_empty() || current == 0.0;
    let mut backup: Vec<Pose> = Vec::with_capacity(free.len());

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let dx = match problem.symbolic.factor(&system.h, lambda) {
            Ok(f) => f.solve(&-&system.b),
            Err(Error::NotPositiveDefinite) => {
                lambda = raise(lambda, cfg.lambda_factor);
                continue;
            }
            Err(e) => return Err(e),
        };
        if dx.amax() <= STEP_TOL {
            converged = true;
            break;
        }
        backup.clear();
        backup.extend(free.iter().map(|id| *graph.pose(*id).unwrap()));
        apply_increment(graph, &free, &dx);
        match problem.chi2(graph) {
            Ok(trial) if trial < current => {
                log::debug!("iteration {iterations}: chi2 {current:.6e} -> {trial:.6e}, lambda {lambda:.1e}");
                let decrease = (current - trial) / current;
                current = trial;
                lambda /= cfg.lambda_factor;
                if decrease < cfg.convergence_tol {
                    converged = true;
                    break;
                }
                let (next, _) = problem.assemble(graph)?;
                system = next;
            }
            rejected => {
                log::debug!(
                    "iteration {iterations}: step rejected ({rejected:?}), lambda {lambda:.1e}"
                );
                for (id, pose) in free.iter().zip(&backup) {
                    graph.set_pose(*id, *pose);
                }
                lambda = raise(lambda, cfg.lambda_factor);
            }
        }
    }

    Ok(OptReport {
        iterations_run: iterations,
        chi2_initial,
        chi2_final: current,
        converged,
        wall_time: start.elapsed(),
    })
}

fn raise(lambda: f64, factor: f64) -> f64 {
    if lambda > 0.0 {
        lambda * factor
    } else {
        1e-6
    }
}
