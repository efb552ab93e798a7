//! `hpgo` command-line driver.
//!
//! Exit codes: 0 on success, 1 for unreadable or malformed input and bad
//! arguments, 2 when an optimization fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hpgo::graph::{parse_g2o, write_g2o, PoseGraph};
use hpgo::hierarchy::{Hierarchy, HierarchyConfig};
use hpgo::metrics::{default_segment_lengths, parse_tum, relative_errors, write_tum, Trajectory};
use hpgo::optimizer::{chi2, OptConfig};
use hpgo::phpgo::{optimize_mode, Mode, PhpgoConfig};
use hpgo::simulate::{simulate, SimConfig};

#[derive(Parser)]
#[command(name = "hpgo", version, about = "Hierarchical pose-graph optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a g2o graph and print a CSV run report.
    Optimize {
        input: PathBuf,
        /// Where to write the optimized graph.
        #[arg(short = 'o')]
        output: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Time all modes on simulated graphs of increasing size.
    Bench {
        /// Comma-separated node counts.
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 3000, 9000, 27000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Segment-relative errors of a TUM trajectory against ground truth.
    Metrics {
        estimate: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Write a simulated noisy graph and its ground truth.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        loop_closure_prob: f64,
        #[arg(long, default_value_t = 0.05)]
        trans_sigma: f64,
        #[arg(long, default_value_t = 0.005)]
        rot_sigma: f64,
        /// Output g2o graph.
        #[arg(short = 'o')]
        output: PathBuf,
        /// Output TUM ground-truth trajectory.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "partial")]
    mode: Mode,
    /// Free nodes per level in partial runs.
    #[arg(long, default_value_t = 100)]
    p: usize,
    /// Node count of the top level that triggers a new level.
    #[arg(long, default_value_t = 300)]
    t: usize,
    /// Largest group size.
    #[arg(long, default_value_t = 3)]
    kcap: usize,
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
}

impl RunArgs {
    fn configs(&self) -> hpgo::Result<(HierarchyConfig, PhpgoConfig)> {
        let h = HierarchyConfig {
            level_threshold: self.t,
            group_capacity: self.kcap,
            ..Default::default()
        };
        let p = PhpgoConfig {
            subgraph_size: self.p,
            mode: self.mode,
            optimizer: OptConfig {
                max_iterations: self.max_iters,
                ..Default::default()
            },
        };
        h.validate()?;
        p.validate()?;
        Ok((h, p))
    }
}

enum Failure {
    Input(anyhow::Error),
    Optimize(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn optimization<T>(r: hpgo::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Optimize(anyhow!(e).context("optimization failed")))
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn run_modes(graph: &PoseGraph, h: &mut Hierarchy, cfg: &PhpgoConfig) -> Result<f64, Failure> {
    let last = graph
        .node_ids()
        .last()
        .ok_or_else(|| anyhow!("graph has no nodes"))?;
    let start = Instant::now();
    optimization(optimize_mode(h, last, cfg))?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn cmd_optimize(input: &Path, output: Option<&Path>, run: &RunArgs) -> Result<(), Failure> {
    let (hcfg, pcfg) = run.configs()?;
    let parsed =
        parse_g2o(&read(input)?).with_context(|| format!("cannot parse {}", input.display()))?;
    if parsed.skipped_lines > 0 {
        log::warn!("skipped {} unsupported lines", parsed.skipped_lines);
    }
    let graph = parsed.graph;
    let chi2_initial = optimization(chi2(&graph))?;
    let mut h = Hierarchy::from_graph(&graph, hcfg)?;
    let wall_ms = run_modes(&graph, &mut h, &pcfg)?;
    let chi2_final = optimization(chi2(h.base()))?;
    if let Some(path) = output {
        write(path, &write_g2o(h.base()))?;
    }
    println!("mode,nodes,edges,levels,chi2_initial,chi2_final,wall_ms");
    println!(
        "{},{},{},{},{chi2_initial:e},{chi2_final:e},{wall_ms:.3}",
        pcfg.mode,
        graph.node_count(),
        graph.edge_count(),
        h.level_count()
    );
    Ok(())
}

fn cmd_bench(sizes: &[usize], seed: u64, run: &RunArgs) -> Result<(), Failure> {
    let (hcfg, pcfg) = run.configs()?;
    println!("n_nodes,mode,wall_ms,chi2_final,ate,are,levels,reduction_rates");
    for &n in sizes {
        let (graph, truth) = simulate(&SimConfig::new(n, seed))?;
        let lengths = default_segment_lengths(truth.path_length());
        let built = Hierarchy::from_graph(&graph, hcfg.clone())?;
        let rates = built
            .reduction_rates()
            .iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(";");
        for mode in [Mode::Full, Mode::TopOnly, Mode::Partial] {
            let mut h = built.clone();
            let cfg = PhpgoConfig {
                mode,
                ..pcfg.clone()
            };
            let wall_ms = run_modes(&graph, &mut h, &cfg)?;
            let chi2_final = optimization(chi2(h.base()))?;
            let m = relative_errors(&Trajectory::from_graph(h.base()), &truth, &lengths)?;
            println!(
                "{n},{mode},{wall_ms:.3},{chi2_final:e},{:e},{:e},{},{rates}",
                m.ate,
                m.are,
                h.level_count()
            );
        }
    }
    Ok(())
}

fn cmd_metrics(estimate: &Path, gt: &Path) -> Result<(), Failure> {
    let est = parse_tum(&read(estimate)?)
        .with_context(|| format!("cannot parse {}", estimate.display()))?;
    let truth = parse_tum(&read(gt)?).with_context(|| format!("cannot parse {}", gt.display()))?;
    let m = relative_errors(&est, &truth, &default_segment_lengths(truth.path_length()))?;
    println!("ate,are,n_pairs");
    println!("{},{},{}", decimal(m.ate), decimal(m.are), m.n_pairs);
    Ok(())
}

/// Fixed twelve decimals with trailing zeros dropped, so round-off below
/// 5e-13 prints as `0`.
fn decimal(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn cmd_simulate(cfg: &SimConfig, output: &Path, gt: Option<&Path>) -> Result<(), Failure> {
    let (graph, truth) = simulate(cfg)?;
    write(output, &write_g2o(&graph))?;
    if let Some(path) = gt {
        write(path, &write_tum(&truth))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Optimize { input, output, run } => cmd_optimize(input, output.as_deref(), run),
        Command::Bench { sizes, seed, run } => cmd_bench(sizes, *seed, run),
        Command::Metrics { estimate, gt } => cmd_metrics(estimate, gt),
        Command::Simulate {
            nodes,
            seed,
            loop_closure_prob,
            trans_sigma,
            rot_sigma,
            output,
            gt,
        } => {
            let cfg = SimConfig {
                loop_closure_prob: *loop_closure_prob,
                trans_noise_sigma: *trans_sigma,
                rot_noise_sigma: *rot_sigma,
                ..SimConfig::new(*nodes, *seed)
            };
            cmd_simulate(&cfg, output, gt.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Optimize(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
