//! Pose-graph SLAM backend: SE(3) pose-graph optimization, incremental
//! modularity-based hierarchies over the pose graph, and partial
//! hierarchical optimization that only touches a bounded neighborhood of the
//! newest pose on every level.

pub mod error;
pub mod graph;
pub mod hierarchy;
pub mod manifold;
pub mod metrics;
pub mod optimizer;
pub mod phpgo;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
pub use graph::{parse_g2o, write_g2o, Edge, NodeId, PoseGraph};
pub use hierarchy::{Hierarchy, HierarchyConfig};
pub use manifold::{Pose, Twist};
pub use metrics::{relative_errors, MetricReport, Trajectory};
pub use optimizer::{optimize, optimize_subset, OptConfig, OptReport};
pub use phpgo::{optimize_mode, optimize_partial, Mode, PhpgoConfig};
pub use simulate::{simulate, SimConfig};
