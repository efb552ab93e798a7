//! Cost of one optimizer iteration against graph size on simulated
//! trajectories with a fixed share of loop closures. The log-log slope must
//! stay near 1 (linear in nodes plus edges).

use std::process::ExitCode;
use std::time::Instant;

use hpgo::optimizer::{optimize, OptConfig};
use hpgo::simulate::{simulate, SimConfig};

/// Allowance over a slope of exactly 1 for cache effects and timer noise.
const SLOPE_LIMIT: f64 = 1.2;

fn main() -> ExitCode {
    let cfg = OptConfig {
        max_iterations: 3,
        convergence_tol: 0.0,
        ..Default::default()
    };
    let mut points = Vec::new();
    for n in [1000usize, 3000, 9000, 27000] {
        let mut best = f64::INFINITY;
        let mut size = 0;
        for seed in 0..3 {
            let (mut g, _) =
                simulate(&SimConfig::new(n, 600 + seed)).expect("valid simulation config");
            size = g.node_count() + g.edge_count();
            let start = Instant::now();
            let r = optimize(&mut g, &cfg).expect("simulated graphs optimize");
            let per_iter = start.elapsed().as_secs_f64() / r.iterations_run.max(1) as f64;
            best = best.min(per_iter);
        }
        println!(
            "{n:>6} nodes, |V|+|N| = {size:>6}: {:.2} ms per iteration",
            best * 1e3
        );
        points.push(((size as f64).ln(), best.ln()));
    }
    let k = points.len() as f64;
    let (mx, my) = (
        points.iter().map(|p| p.0).sum::<f64>() / k,
        points.iter().map(|p| p.1).sum::<f64>() / k,
    );
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if slope <= SLOPE_LIMIT {
        println!("PASS iteration cost scaling: log-log slope {slope:.3}");
        ExitCode::SUCCESS
    } else {
        println!("FAIL iteration cost scaling: log-log slope {slope:.3} exceeds {SLOPE_LIMIT}");
        ExitCode::FAILURE
    }
}
