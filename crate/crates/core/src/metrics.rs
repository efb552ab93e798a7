//! Segment-relative trajectory errors and TUM trajectory files.
//!
//! For every start pose and every segment length `L`, the pose roughly `L`
//! meters further along the ground-truth path is located, and the error of
//! the estimated relative motion against the true one is accumulated per
//! meter. Global rigid offsets of either trajectory cancel out.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{NodeId, PoseGraph};
use crate::manifold::Pose;

/// Poses ordered by strictly increasing id.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    poses: Vec<(NodeId, Pose)>,
}

impl Trajectory {
    /// Sorts by id; repeated ids are rejected.
    pub fn new(mut poses: Vec<(NodeId, Pose)>) -> Result<Self> {
        poses.sort_by_key(|(id, _)| *id);
        if let Some(w) = poses.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateNode(w[0].0));
        }
        Ok(Self { poses })
    }

    pub fn from_graph(graph: &PoseGraph) -> Self {
        Self {
            poses: graph.nodes().map(|(id, p)| (id, *p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[(NodeId, Pose)] {
        &self.poses
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.poses.iter().map(|(id, _)| *id)
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &Pose) -> Self {
        Self {
            poses: self
                .poses
                .iter()
                .map(|(id, p)| (*id, t.compose(p)))
                .collect(),
        }
    }

    /// Length of the polyline through the translations.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    /// Mean translation error per meter of path.
    pub ate: f64,
    /// Mean rotation error in radians per meter of path.
    pub are: f64,
    pub n_pairs: usize,
}

/// The 100..800 m ladder, shrunk so the longest segment spans at most half
/// of a shorter path.
pub fn default_segment_lengths(path_length: f64) -> Vec<f64> {
    let scale = (path_length / 1600.0).min(1.0);
    (1..=8).map(|k| 100.0 * k as f64 * scale).collect()
}

pub fn relative_errors(
    est: &Trajectory,
    gt: &Trajectory,
    segment_lengths: &[f64],
) -> Result<MetricReport> {
    if est.len() != gt.len() || est.ids().zip(gt.ids()).any(|(a, b)| a != b) {
        return Err(Error::MismatchedIds);
    }
    let mut dist = Vec::with_capacity(gt.len());
    let mut acc = 0.0;
    for (k, (_, p)) in gt.poses.iter().enumerate() {
        if k > 0 {
            acc += (p.translation() - gt.poses[k - 1].1.translation()).norm();
        }
        dist.push(acc);
    }
    let longest = segment_lengths.iter().copied().fold(0.0, f64::max);
    if segment_lengths.is_empty() || acc < longest || !(longest > 0.0) {
        return Err(Error::PathTooShort {
            length: acc,
            segment: longest,
        });
    }

    let (mut ate, mut are, mut n) = (0.0, 0.0, 0usize);
    for start in 0..dist.len() {
        for &len in segment_lengths {
            let target = dist[start] + len - 1e-9;
            let end = start + dist[start..].partition_point(|&d| d < target);
            if end >= dist.len() {
                continue;
            }
            n += 1;
            // identical poses must score exactly zero, round-off included
            if est.poses[start].1 == gt.poses[start].1 && est.poses[end].1 == gt.poses[end].1 {
                continue;
            }
            let rel_gt = gt.poses[start].1.between(&gt.poses[end].1);
            let rel_est = est.poses[start].1.between(&est.poses[end].1);
            let e = rel_gt.inverse().compose(&rel_est);
            ate += e.translation().norm() / len;
            are += e.rotation_angle() / len;
        }
    }
    Ok(MetricReport {
        ate: ate / n as f64,
        are: are / n as f64,
        n_pairs: n,
    })
}

/// One `id tx ty tz qx qy qz qw` line per pose.
pub fn write_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (id, p) in &traj.poses {
        let t = p.translation();
        let q = p.rotation().quaternion();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            id.0, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses TUM lines. Blank lines and `#` comments are skipped; the first
/// column must be a non-negative integer id.
pub fn parse_tum(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::MalformedLine {
            line: k + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", fields.len())));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| bad(format!("invalid id `{}`", fields[0])))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| bad(format!("invalid number `{f}`")))?;
            if !slot.is_finite() {
                return Err(bad(format!("non-finite value `{f}`")));
            }
        }
        let pose = Pose::from_components([v[0], v[1], v[2]], [v[6], v[3], v[4], v[5]])
            .ok_or_else(|| bad("zero quaternion".into()))?;
        poses.push((NodeId(id), pose));
    }
    Trajectory::new(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Twist;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize, scale: f64) -> Trajectory {
        let poses = (0..n)
            .map(|i| {
                (
                    NodeId(i),
                    Pose::from_translation(Vector3::new(scale * i as f64, 0.0, 0.0)),
                )
            })
            .collect();
        Trajectory::new(poses).unwrap()
    }

    fn wiggly(rng: &mut impl Rng, n: usize) -> Trajectory {
        let mut p = Pose::identity();
        let mut poses = Vec::new();
        for i in 0..n {
            poses.push((NodeId(i), p));
            let step = Twist::new(
                Vector3::new(1.0, rng.random_range(-0.1..0.1), 0.0),
                Vector3::new(0.0, 0.0, rng.random_range(-0.3..0.3)),
            );
            p = p.compose(&Pose::exp(&step));
        }
        Trajectory::new(poses).unwrap()
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gt = wiggly(&mut rng, 200);
        let r = relative_errors(&gt, &gt, &[10.0, 20.0]).unwrap();
        assert_eq!((r.ate, r.are), (0.0, 0.0));
        assert!(r.n_pairs > 0);
    }

    #[test]
    fn global_offset_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let gt = wiggly(&mut rng, 200);
        let t = Pose::from_yaw(1.1, Vector3::new(5.0, -3.0, 2.0));
        let r = relative_errors(&gt.transformed(&t), &gt, &[10.0, 50.0]).unwrap();
        assert!(r.ate < 1e-12 && r.are < 1e-12);
    }

    #[test]
    fn scaled_line_has_one_percent_error() {
        let gt = line(101, 1.0);
        let est = line(101, 1.01);
        let r = relative_errors(&est, &gt, &[20.0]).unwrap();
        assert!((r.ate - 0.01).abs() < 1e-9);
        assert_eq!(r.are, 0.0);
        assert_eq!(r.n_pairs, 81);
    }

    #[test]
    fn error_cases() {
        let gt = line(10, 1.0);
        let short = line(9, 1.0);
        assert_eq!(
            relative_errors(&short, &gt, &[2.0]),
            Err(Error::MismatchedIds)
        );
        assert!(matches!(
            relative_errors(&gt, &gt, &[20.0]),
            Err(Error::PathTooShort { .. })
        ));
    }

    #[test]
    fn default_lengths_fit_short_paths() {
        assert_eq!(default_segment_lengths(5000.0)[7], 800.0);
        let short = default_segment_lengths(400.0);
        assert!((short[7] - 200.0).abs() < 1e-12);
    }

    #[test]
    fn tum_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let traj = wiggly(&mut rng, 50);
        let back = parse_tum(&write_tum(&traj)).unwrap();
        for ((a, p), (b, q)) in traj.poses().iter().zip(back.poses()) {
            assert_eq!(a, b);
            assert!(p.max_abs_diff(q) <= 1e-12);
        }
    }

    #[test]
    fn tum_parse_errors() {
        assert!(matches!(
            parse_tum("0 1 2 3"),
            Err(Error::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_tum("# c\n0 0 0 0 0 0 0 0"),
            Err(Error::MalformedLine { line: 2, .. })
        ));
        assert_eq!(
            parse_tum("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1"),
            Err(Error::DuplicateNode(NodeId(1)))
        );
    }
}
