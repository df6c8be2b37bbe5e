//! Evaluation metrics: region overlap (dice score), cross-trial room
//! consistency, absolute trajectory error with closed-form SE(2) alignment,
//! distance-weighted ATE, and loop precision. Trajectories can be exchanged
//! in TUM text format with planar poses embedded.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Cell;
use crate::par;
use crate::se2::Se2;

/// Rasterized region on a common grid.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub resolution: f64,
    pub cells: HashSet<Cell>,
}

impl RegionMask {
    pub fn from_cells(cells: impl IntoIterator<Item = Cell>, resolution: f64) -> Self {
        RegionMask {
            resolution,
            cells: cells.into_iter().collect(),
        }
    }

    /// Rasterize a simple polygon: cells whose centers fall inside.
    pub fn from_polygon(polygon: &[[f64; 2]], resolution: f64) -> Self {
        let mut cells = HashSet::new();
        if polygon.len() >= 3 {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for p in polygon {
                x0 = x0.min(p[0]);
                y0 = y0.min(p[1]);
                x1 = x1.max(p[0]);
                y1 = y1.max(p[1]);
            }
            let c0 = crate::grid::cell_of([x0, y0], resolution);
            let c1 = crate::grid::cell_of([x1, y1], resolution);
            for iy in c0.1..=c1.1 {
                for ix in c0.0..=c1.0 {
                    let center = crate::grid::center_of((ix, iy), resolution);
                    if point_in_polygon(center, polygon) {
                        cells.insert((ix, iy));
                    }
                }
            }
        }
        RegionMask { resolution, cells }
    }

    pub fn area(&self) -> f64 {
        self.cells.len() as f64 * self.resolution * self.resolution
    }

    pub fn intersection_count(&self, other: &RegionMask) -> usize {
        let (small, large) = if self.cells.len() <= other.cells.len() {
            (&self.cells, &other.cells)
        } else {
            (&other.cells, &self.cells)
        };
        small.iter().filter(|c| large.contains(c)).count()
    }
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if ((a[1] > p[1]) != (b[1] > p[1]))
            && (p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0])
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Dice coefficient score 2·S(A∩B)/(S(A)+S(B)); 0 when both regions are
/// empty by convention.
pub fn dcs(a: &RegionMask, b: &RegionMask) -> Result<f64> {
    if (a.resolution - b.resolution).abs() > 1e-12 {
        return Err(Error::ResolutionMismatch(a.resolution, b.resolution));
    }
    let denom = a.cells.len() + b.cells.len();
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * a.intersection_count(b) as f64 / denom as f64)
}

/// Cross-trial segmentation consistency summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Mean room count over trials.
    pub n_room: f64,
    /// Population standard deviation of room counts.
    pub sigma_room: f64,
    /// Mean dice score over greedily matched room pairs across trial pairs;
    /// unmatched rooms contribute zero.
    pub dcs_mean: f64,
    /// Summed factor-graph optimization time, seconds (filled by the caller).
    pub t_fgo: f64,
}

/// Greedy maximum-overlap matching between two trials' room masks; returns
/// the matched dice total averaged over max(len_a, len_b) so unmatched
/// rooms count as zero.
fn pair_consistency(a: &[RegionMask], b: &[RegionMask]) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Ok(1.0);
    }
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let mut scores: Vec<(f64, usize, usize)> = Vec::new();
    for (i, ma) in a.iter().enumerate() {
        for (j, mb) in b.iter().enumerate() {
            let s = dcs(ma, mb)?;
            if s > 0.0 {
                scores.push((s, i, j));
            }
        }
    }
    scores.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut total = 0.0;
    for (s, i, j) in scores {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            total += s;
        }
    }
    Ok(total / a.len().max(b.len()) as f64)
}

/// Room-count and overlap consistency over repeated trials (≥ 2). Rooms are
/// matched across each trial pair by greedy maximum overlap; trial pairs are
/// scored in parallel under the `parallel` feature.
pub fn consistency(trial_rooms: &[Vec<RegionMask>]) -> Result<ConsistencyReport> {
    if trial_rooms.len() < 2 {
        return Err(Error::Pipeline(
            "consistency needs at least two trials".into(),
        ));
    }
    let counts: Vec<f64> = trial_rooms.iter().map(|t| t.len() as f64).collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;

    let mut pair_indices = Vec::new();
    for i in 0..trial_rooms.len() {
        for j in i + 1..trial_rooms.len() {
            pair_indices.push((i, j));
        }
    }
    let pair_scores = par::map_collect(&pair_indices, |&(i, j)| {
        pair_consistency(&trial_rooms[i], &trial_rooms[j])
    });
    let mut total = 0.0;
    for s in pair_scores {
        total += s?;
    }
    Ok(ConsistencyReport {
        n_room: mean,
        sigma_room: var.sqrt(),
        dcs_mean: total / pair_indices.len() as f64,
        t_fgo: 0.0,
    })
}

/// Timestamped planar pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Se2,
}

pub type Trajectory = Vec<TimedPose>;

const ASSOC_TOL: f64 = 0.05;

fn associate(estimated: &Trajectory, truth: &Trajectory) -> Vec<([f64; 2], [f64; 2])> {
    // Truth is sorted by time; nearest-timestamp association within tolerance.
    let mut pairs = Vec::new();
    for e in estimated {
        let idx = truth.partition_point(|g| g.t < e.t);
        let mut best: Option<(f64, usize)> = None;
        for cand in [idx.wrapping_sub(1), idx] {
            if let Some(g) = truth.get(cand) {
                let dt = (g.t - e.t).abs();
                if dt <= ASSOC_TOL && best.map_or(true, |(b, _)| dt < b) {
                    best = Some((dt, cand));
                }
            }
        }
        if let Some((_, gi)) = best {
            pairs.push(([e.pose.x, e.pose.y], [truth[gi].pose.x, truth[gi].pose.y]));
        }
    }
    pairs
}

/// Closed-form rigid SE(2) alignment of `est` onto `truth` minimizing the
/// squared translational error, returning (rotation, translation).
fn align_se2(pairs: &[([f64; 2], [f64; 2])]) -> (f64, [f64; 2]) {
    let n = pairs.len() as f64;
    let mut me = [0.0, 0.0];
    let mut mt = [0.0, 0.0];
    for (e, t) in pairs {
        me[0] += e[0];
        me[1] += e[1];
        mt[0] += t[0];
        mt[1] += t[1];
    }
    me[0] /= n;
    me[1] /= n;
    mt[0] /= n;
    mt[1] /= n;
    let (mut sxx, mut sxy, mut syx, mut syy) = (0.0, 0.0, 0.0, 0.0);
    for (e, t) in pairs {
        let de = [e[0] - me[0], e[1] - me[1]];
        let dt = [t[0] - mt[0], t[1] - mt[1]];
        sxx += dt[0] * de[0];
        sxy += dt[0] * de[1];
        syx += dt[1] * de[0];
        syy += dt[1] * de[1];
    }
    let theta = (syx - sxy).atan2(sxx + syy);
    let (s, c) = theta.sin_cos();
    let t = [
        mt[0] - (c * me[0] - s * me[1]),
        mt[1] - (s * me[0] + c * me[1]),
    ];
    (theta, t)
}

/// Absolute trajectory error: rigid SE(2) alignment (closed form) followed
/// by the RMSE of per-pose translational residuals. Poses are associated by
/// nearest timestamp within 0.05 s.
pub fn ate(estimated: &Trajectory, truth: &Trajectory) -> Result<f64> {
    let pairs = associate(estimated, truth);
    if pairs.len() < 2 {
        return Err(Error::TrajectoryMismatch(format!(
            "only {} associated poses",
            pairs.len()
        )));
    }
    let (theta, t) = align_se2(&pairs);
    let (s, c) = theta.sin_cos();
    let mut sum = 0.0;
    for (e, g) in &pairs {
        let ax = c * e[0] - s * e[1] + t[0];
        let ay = s * e[0] + c * e[1] + t[1];
        sum += (g[0] - ax).powi(2) + (g[1] - ay).powi(2);
    }
    Ok((sum / pairs.len() as f64).sqrt())
}

/// Distance-weighted ATE across sequences: Σ Dᵢ·ATEᵢ / Σ Dᵢ.
pub fn wate(ates: &[f64], distances: &[f64]) -> Result<f64> {
    if ates.len() != distances.len() || ates.is_empty() {
        return Err(Error::TrajectoryMismatch(
            "wate needs equal-length, non-empty inputs".into(),
        ));
    }
    if distances.iter().any(|d| *d <= 0.0) {
        return Err(Error::TrajectoryMismatch(
            "distances must be positive".into(),
        ));
    }
    let num: f64 = ates.iter().zip(distances).map(|(a, d)| a * d).sum();
    let den: f64 = distances.iter().sum();
    Ok(num / den)
}

/// Loop precision summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub pr_loop: f64,
    pub n_events: usize,
    /// Set when there were no events to score (pr_loop reported as 1.0).
    pub zero_support: bool,
}

/// Fraction of loop events whose keyframes' true positions lie within `tol`
/// of each other.
pub fn loop_precision(true_position_pairs: &[([f64; 2], [f64; 2])], tol: f64) -> PrecisionReport {
    if true_position_pairs.is_empty() {
        return PrecisionReport {
            pr_loop: 1.0,
            n_events: 0,
            zero_support: true,
        };
    }
    let good = true_position_pairs
        .iter()
        .filter(|(a, b)| {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            d <= tol
        })
        .count();
    PrecisionReport {
        pr_loop: good as f64 / true_position_pairs.len() as f64,
        n_events: true_position_pairs.len(),
        zero_support: false,
    }
}

/// Load a TUM-format trajectory: `t x y z qx qy qz qw` per line, `#`
/// comments allowed. Yaw is extracted from the quaternion.
pub fn load_tum(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Schema(format!("tum line {}: {e}", ln + 1)))?;
        if f.len() != 8 {
            return Err(Error::Schema(format!(
                "tum line {}: expected 8 fields, got {}",
                ln + 1,
                f.len()
            )));
        }
        let (qx, qy, qz, qw) = (f[4], f[5], f[6], f[7]);
        let yaw = (2.0 * (qw * qz + qx * qy)).atan2(1.0 - 2.0 * (qy * qy + qz * qz));
        out.push(TimedPose {
            t: f[0],
            pose: Se2::new(f[1], f[2], yaw),
        });
    }
    Ok(out)
}

/// Write a trajectory in TUM format with planar poses embedded (z = 0,
/// yaw-only quaternion).
pub fn save_tum(path: &Path, traj: &Trajectory) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in traj {
        let half = p.pose.theta / 2.0;
        writeln!(
            f,
            "{} {} {} 0 0 0 {} {}",
            p.t,
            p.pose.x,
            p.pose.y,
            half.sin(),
            half.cos()
        )?;
    }
    Ok(())
}

/// Render rows as an aligned-column text table.
pub fn aligned_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.len());
            }
        }
    }
    let fmt_row = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    let headers: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    out.push_str(&fmt_row(&headers, &widths));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len().max(1) - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row, &widths));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square_mask(x0: f64, y0: f64, side: f64) -> RegionMask {
        RegionMask::from_polygon(
            &[
                [x0, y0],
                [x0 + side, y0],
                [x0 + side, y0 + side],
                [x0, y0 + side],
            ],
            0.1,
        )
    }

    #[test]
    fn dcs_examples() {
        let a = square_mask(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(dcs(&a, &a).unwrap(), 1.0);
        let disjoint = square_mask(5.0, 5.0, 1.0);
        assert_abs_diff_eq!(dcs(&a, &disjoint).unwrap(), 0.0);
        let shifted = square_mask(0.5, 0.0, 1.0);
        assert_abs_diff_eq!(dcs(&a, &shifted).unwrap(), 0.5);
    }

    #[test]
    fn dcs_symmetric_and_bounded() {
        let a = square_mask(0.0, 0.0, 1.0);
        let b = square_mask(0.3, 0.2, 1.2);
        let ab = dcs(&a, &b).unwrap();
        assert_abs_diff_eq!(ab, dcs(&b, &a).unwrap());
        assert!((0.0..=1.0).contains(&ab));
        let empty = RegionMask::from_cells([], 0.1);
        assert_abs_diff_eq!(dcs(&empty, &empty).unwrap(), 0.0);
    }

    #[test]
    fn dcs_rejects_resolution_mismatch() {
        let a = square_mask(0.0, 0.0, 1.0);
        let b = RegionMask::from_cells([(0, 0)], 0.2);
        assert!(dcs(&a, &b).is_err());
    }

    #[test]
    fn consistency_identical_trials() {
        let t: Vec<RegionMask> = vec![square_mask(0.0, 0.0, 2.0), square_mask(5.0, 0.0, 2.0)];
        let trials = vec![t.clone(), t.clone(), t];
        let rep = consistency(&trials).unwrap();
        assert_abs_diff_eq!(rep.n_room, 2.0);
        assert_abs_diff_eq!(rep.sigma_room, 0.0);
        assert_abs_diff_eq!(rep.dcs_mean, 1.0);
    }

    #[test]
    fn consistency_sigma_arithmetic() {
        let mk = |n: usize| -> Vec<RegionMask> {
            (0..n)
                .map(|i| square_mask(i as f64 * 3.0, 0.0, 1.0))
                .collect()
        };
        let rep = consistency(&[mk(5), mk(7), mk(6)]).unwrap();
        assert_abs_diff_eq!(rep.n_room, 6.0);
        assert_abs_diff_eq!(rep.sigma_room, 0.8164965809, epsilon = 1e-6);
    }

    fn line_traj(n: usize, f: impl Fn(usize) -> Se2) -> Trajectory {
        (0..n)
            .map(|i| TimedPose {
                t: i as f64 * 0.1,
                pose: f(i),
            })
            .collect()
    }

    #[test]
    fn ate_zero_for_identical_and_rigidly_moved() {
        let truth = line_traj(20, |i| Se2::new(i as f64 * 0.5, 0.0, 0.0));
        assert_abs_diff_eq!(ate(&truth, &truth).unwrap(), 0.0, epsilon = 1e-12);
        let moved: Trajectory = truth
            .iter()
            .map(|p| TimedPose {
                t: p.t,
                pose: Se2::new(3.0, -1.0, 0.7).compose(p.pose),
            })
            .collect();
        assert_abs_diff_eq!(ate(&moved, &truth).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ate_gauge_invariance_random_transforms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let truth = line_traj(30, |i| {
            Se2::new((i as f64 * 0.4).sin() * 2.0, i as f64 * 0.3, 0.0)
        });
        let est: Trajectory = truth
            .iter()
            .enumerate()
            .map(|(i, p)| TimedPose {
                t: p.t,
                pose: Se2::new(p.pose.x + (i as f64).sin() * 0.1, p.pose.y, 0.0),
            })
            .collect();
        let base = ate(&est, &truth).unwrap();
        for _ in 0..100 {
            let g = Se2::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-3.1..3.1),
            );
            let moved: Trajectory = est
                .iter()
                .map(|p| TimedPose {
                    t: p.t,
                    pose: g.compose(p.pose),
                })
                .collect();
            assert_abs_diff_eq!(ate(&moved, &truth).unwrap(), base, epsilon = 1e-9);
        }
    }

    #[test]
    fn ate_zigzag_fixture_closed_form() {
        // Truth on a line, estimate zigzagging ±0.3 m laterally: the optimal
        // alignment is a pure −0.06 m shift (hand-derived: rotation stays
        // zero because the cross-covariance is diagonal), leaving residuals
        // (0.24, −0.36, 0.24, −0.36, 0.24) and RMSE sqrt(0.432/5).
        let truth = line_traj(5, |i| Se2::new(i as f64 - 2.0, 0.0, 0.0));
        let est = line_traj(5, |i| {
            Se2::new(i as f64 - 2.0, if i % 2 == 0 { 0.3 } else { -0.3 }, 0.0)
        });
        assert_abs_diff_eq!(
            ate(&est, &truth).unwrap(),
            0.29393876913398137,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ate_needs_two_associations() {
        let truth = line_traj(5, |i| Se2::new(i as f64, 0.0, 0.0));
        let est = vec![TimedPose {
            t: 99.0,
            pose: Se2::identity(),
        }];
        assert!(ate(&est, &truth).is_err());
    }

    #[test]
    fn wate_reference_rows() {
        let distances = [70.51, 152.25, 173.84, 269.62];
        let w = wate(&[0.16, 0.87, 0.35, 2.63], &distances).unwrap();
        assert!((w - 1.37).abs() <= 0.01, "wate {w}");
        let w2 = wate(&[0.12, 5.38, 0.41, 2.55], &distances).unwrap();
        assert!((w2 - 2.38).abs() <= 0.01, "wate {w2}");
        let c = wate(&[0.4, 0.4, 0.4, 0.4], &distances).unwrap();
        assert_abs_diff_eq!(c, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn wate_bounds_and_errors() {
        let a = [0.1, 0.5, 0.9];
        let d = [10.0, 20.0, 30.0];
        let w = wate(&a, &d).unwrap();
        assert!((0.1..=0.9).contains(&w));
        assert!(wate(&a, &d[..2]).is_err());
        assert!(wate(&a, &[1.0, -2.0, 3.0]).is_err());
    }

    #[test]
    fn loop_precision_counting() {
        let exact = vec![([0.0, 0.0], [0.2, 0.0]); 4];
        assert_abs_diff_eq!(loop_precision(&exact, 1.0).pr_loop, 1.0);
        let none = loop_precision(&[], 1.0);
        assert_abs_diff_eq!(none.pr_loop, 1.0);
        assert!(none.zero_support);
        let mixed = vec![
            ([0.0, 0.0], [0.1, 0.0]),
            ([0.0, 0.0], [5.0, 0.0]),
            ([0.0, 0.0], [0.0, 0.3]),
            ([0.0, 0.0], [0.0, 9.0]),
        ];
        assert_abs_diff_eq!(loop_precision(&mixed, 1.0).pr_loop, 0.5);
    }

    #[test]
    fn tum_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.tum");
        let traj = line_traj(7, |i| Se2::new(i as f64 * 0.3, -(i as f64) * 0.1, 0.4));
        save_tum(&path, &traj).unwrap();
        let loaded = load_tum(&path).unwrap();
        assert_eq!(loaded.len(), traj.len());
        for (a, b) in loaded.iter().zip(traj.iter()) {
            assert_abs_diff_eq!(a.pose.x, b.pose.x, epsilon = 1e-12);
            assert_abs_diff_eq!(a.pose.y, b.pose.y, epsilon = 1e-12);
            assert_abs_diff_eq!(a.pose.theta, b.pose.theta, epsilon = 1e-12);
        }
    }
}
