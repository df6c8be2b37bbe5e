//! Loop closure triggered by room re-detection.
//!
//! When a completed room matches a previously mapped one, keyframe
//! candidates are restricted to that room (and, for long rooms, to the two
//! nearest length partitions), scored by a point-to-point ICP matcher, and
//! accepted coarse-to-fine: the best per-partition match above the strict
//! threshold, else the best overall above the relaxed one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::grid;
use crate::par;
use crate::roomseg::{RoomId, RoomNode};
use crate::roommerge::overlap_ratio;
use crate::se2::Se2;

/// Loop-closure parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Candidate keyframes must lie within this estimated distance, meters.
    pub d_loop_th: f64,
    /// Partition length for long rooms, meters.
    pub l_part: f64,
    /// Strict match-score threshold.
    pub s_coarse: f64,
    /// Relaxed fallback threshold.
    pub s_fine: f64,
    /// Minimum keyframe-id separation of a loop pair.
    pub min_keyframe_gap: u32,
    /// Candidate old keyframes kept per new keyframe (nearest first).
    pub max_candidates_per_keyframe: usize,
    pub icp_iterations: usize,
    /// Post-alignment inlier radius used both for scoring and as the final
    /// correspondence gate, meters.
    pub icp_inlier_radius: f64,
    /// Information scale applied to relaxed-tier loop factors.
    pub fine_info_scale: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            d_loop_th: 5.0,
            l_part: 10.0,
            s_coarse: 0.90,
            s_fine: 0.75,
            min_keyframe_gap: 10,
            max_candidates_per_keyframe: 3,
            icp_iterations: 30,
            icp_inlier_radius: 0.2,
            fine_info_scale: 0.25,
        }
    }
}

/// One length partition of a room.
#[derive(Debug, Clone)]
pub struct Partition {
    pub center: [f64; 2],
    pub keyframes: Vec<u32>,
}

/// Cut the room's bounding box into `l_part` segments along its long axis
/// and assign member keyframes by pose. Rooms shorter than one partition
/// yield a single slab; a keyframe exactly on a boundary goes to the
/// lower-index slab.
pub fn partition_room(
    room: &RoomNode,
    kf_poses: &HashMap<u32, Se2>,
    resolution: f64,
    l_part: f64,
) -> Vec<Partition> {
    if room.keyframes.is_empty() {
        return Vec::new();
    }
    let mut min = [f64::MAX, f64::MAX];
    let mut max = [f64::MIN, f64::MIN];
    for c in &room.cells {
        let p = grid::center_of(*c, resolution);
        for i in 0..2 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    }
    if room.cells.is_empty() {
        min = room.center;
        max = room.center;
    }
    let ext = [max[0] - min[0], max[1] - min[1]];
    let long_axis = if ext[0] >= ext[1] { 0 } else { 1 };
    let len = ext[long_axis];
    let n_parts = (len / l_part).ceil().max(1.0) as usize;
    let mut parts: Vec<Partition> = (0..n_parts)
        .map(|k| {
            let lo = min[long_axis] + k as f64 * l_part;
            let hi = (lo + l_part).min(max[long_axis]);
            let mut center = [
                (min[0] + max[0]) / 2.0,
                (min[1] + max[1]) / 2.0,
            ];
            center[long_axis] = (lo + hi) / 2.0;
            Partition {
                center,
                keyframes: Vec::new(),
            }
        })
        .collect();
    for &kf in &room.keyframes {
        let Some(pose) = kf_poses.get(&kf) else {
            continue;
        };
        let coord = [pose.x, pose.y][long_axis];
        let rel = coord - min[long_axis];
        let mut idx = (rel / l_part).floor() as isize;
        // Exact boundary goes down one slab.
        if idx > 0 && (rel - idx as f64 * l_part).abs() < 1e-12 {
            idx -= 1;
        }
        let idx = idx.clamp(0, n_parts as isize - 1) as usize;
        parts[idx].keyframes.push(kf);
    }
    parts
}

/// Find a previously mapped room the new room re-detects: best traversable
/// overlap, falling back to the nearest same-type room within `d_loop_th`.
pub fn detect_redetection(
    rooms: &[RoomNode],
    new_room: &RoomNode,
    cfg: &LoopConfig,
) -> Option<RoomId> {
    let mut best_overlap: Option<(f64, RoomId)> = None;
    let mut best_center: Option<(f64, RoomId)> = None;
    for r in rooms {
        if r.retired || r.id == new_room.id {
            continue;
        }
        let ov = overlap_ratio(r, new_room);
        if ov > 0.0 && best_overlap.map_or(true, |(b, _)| ov > b) {
            best_overlap = Some((ov, r.id));
        }
        let d = ((r.center[0] - new_room.center[0]).powi(2)
            + (r.center[1] - new_room.center[1]).powi(2))
        .sqrt();
        if r.kind == new_room.kind && d <= cfg.d_loop_th && best_center.map_or(true, |(b, _)| d < b)
        {
            best_center = Some((d, r.id));
        }
    }
    best_overlap
        .map(|(_, id)| id)
        .or(best_center.map(|(_, id)| id))
}

/// Keyframe pair proposed for matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub kf_old: u32,
    pub kf_new: u32,
    /// Index of the old-room partition the old keyframe came from.
    pub partition: usize,
}

/// Candidate pairs for a re-detected room: for each new keyframe, old
/// keyframes from the two nearest partitions (centers within `l_part`),
/// subject to the keyframe gap, the estimated-distance gate, and a
/// nearest-first cap per new keyframe.
pub fn candidate_pairs(
    old_partitions: &[Partition],
    new_keyframes: &[(u32, Se2)],
    kf_poses: &HashMap<u32, Se2>,
    cfg: &LoopConfig,
) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    for &(kf_new, pose_new) in new_keyframes {
        let mut part_dist: Vec<(f64, usize)> = old_partitions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = ((p.center[0] - pose_new.x).powi(2)
                    + (p.center[1] - pose_new.y).powi(2))
                .sqrt();
                (d, i)
            })
            .filter(|(d, _)| *d < cfg.l_part)
            .collect();
        part_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        part_dist.truncate(2);
        let mut cands: Vec<(f64, CandidatePair)> = Vec::new();
        for &(_, pi) in &part_dist {
            for &kf_old in &old_partitions[pi].keyframes {
                if kf_new < kf_old + cfg.min_keyframe_gap {
                    continue;
                }
                let Some(pose_old) = kf_poses.get(&kf_old) else {
                    continue;
                };
                let d = pose_old.translation_distance(pose_new);
                if d > cfg.d_loop_th {
                    continue;
                }
                cands.push((
                    d,
                    CandidatePair {
                        kf_old,
                        kf_new,
                        partition: pi,
                    },
                ));
            }
        }
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        cands.truncate(cfg.max_candidates_per_keyframe);
        out.extend(cands.into_iter().map(|(_, c)| c));
    }
    out
}

/// Simple uniform-bin index for nearest-neighbor lookups.
struct BinIndex {
    bin: f64,
    bins: HashMap<(i32, i32), Vec<usize>>,
    points: Vec<[f64; 2]>,
}

impl BinIndex {
    fn new(points: &[[f64; 2]], bin: f64) -> Self {
        let mut bins: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = ((p[0] / bin).floor() as i32, (p[1] / bin).floor() as i32);
            bins.entry(key).or_default().push(i);
        }
        BinIndex {
            bin,
            bins,
            points: points.to_vec(),
        }
    }

    /// Nearest point within one bin ring (covers distances up to `bin`).
    fn nearest(&self, p: [f64; 2]) -> Option<(usize, f64)> {
        let key = (
            (p[0] / self.bin).floor() as i32,
            (p[1] / self.bin).floor() as i32,
        );
        let mut best: Option<(usize, f64)> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(list) = self.bins.get(&(key.0 + dx, key.1 + dy)) {
                    for &i in list {
                        let q = self.points[i];
                        let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                        if best.map_or(true, |(_, b)| d2 < b) {
                            best = Some((i, d2));
                        }
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

fn fit_rigid_2d(pairs: &[([f64; 2], [f64; 2])]) -> Se2 {
    let n = pairs.len() as f64;
    let mut ms = [0.0, 0.0];
    let mut mt = [0.0, 0.0];
    for (s, t) in pairs {
        ms[0] += s[0];
        ms[1] += s[1];
        mt[0] += t[0];
        mt[1] += t[1];
    }
    for v in ms.iter_mut().chain(mt.iter_mut()) {
        *v /= n;
    }
    let (mut sxx, mut sxy, mut syx, mut syy) = (0.0, 0.0, 0.0, 0.0);
    for (s, t) in pairs {
        let ds = [s[0] - ms[0], s[1] - ms[1]];
        let dt = [t[0] - mt[0], t[1] - mt[1]];
        sxx += dt[0] * ds[0];
        sxy += dt[0] * ds[1];
        syx += dt[1] * ds[0];
        syy += dt[1] * ds[1];
    }
    let theta = (syx - sxy).atan2(sxx + syy);
    let (s, c) = theta.sin_cos();
    Se2 {
        x: mt[0] - (c * ms[0] - s * ms[1]),
        y: mt[1] - (s * ms[0] + c * ms[1]),
        theta,
    }
}

/// Point-to-point ICP between two body-frame scans, initialized from the
/// current pose estimates. Returns the match score (fraction of new-scan
/// points within the inlier radius after alignment) and the aligned
/// relative pose mapping new-scan points into the old scan's frame.
pub fn match_keyframes(
    old_points: &[[f64; 2]],
    new_points: &[[f64; 2]],
    initial_relative: Se2,
    cfg: &LoopConfig,
) -> (f64, Se2) {
    if old_points.len() < 5 || new_points.len() < 5 {
        return (0.0, initial_relative);
    }
    let gate = (cfg.icp_inlier_radius * 2.5).max(0.5);
    let index = BinIndex::new(old_points, gate);
    let mut t = initial_relative;
    for _ in 0..cfg.icp_iterations {
        let mut pairs = Vec::with_capacity(new_points.len());
        for p in new_points {
            let q = t.transform(*p);
            if let Some((i, d)) = index.nearest(q) {
                if d <= gate {
                    pairs.push((q, old_points[i]));
                }
            }
        }
        if pairs.len() < 5 {
            return (0.0, t);
        }
        let delta = fit_rigid_2d(&pairs);
        t = delta.compose(t);
        if delta.x.abs() < 1e-9 && delta.y.abs() < 1e-9 && delta.theta.abs() < 1e-10 {
            break;
        }
    }
    // Score with the tight radius.
    let tight = BinIndex::new(old_points, cfg.icp_inlier_radius.max(0.05));
    let inliers = new_points
        .iter()
        .filter(|p| {
            let q = t.transform(**p);
            tight
                .nearest(q)
                .map_or(false, |(_, d)| d <= cfg.icp_inlier_radius)
        })
        .count();
    (inliers as f64 / new_points.len() as f64, t)
}

/// A scored candidate carrying its aligned relative pose.
#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub pair: CandidatePair,
    pub score: f64,
    pub relative: Se2,
}

/// Score candidate pairs with ICP; embarrassingly parallel over pairs.
pub fn score_candidates(
    pairs: &[CandidatePair],
    kf_points: &HashMap<u32, Vec<[f64; 2]>>,
    kf_poses: &HashMap<u32, Se2>,
    cfg: &LoopConfig,
) -> Vec<ScoredCandidate> {
    par::map_collect(pairs, |pair| score_one(pair, kf_points, kf_poses, cfg))
}

/// Sequential reference implementation of [`score_candidates`].
pub fn score_candidates_sequential(
    pairs: &[CandidatePair],
    kf_points: &HashMap<u32, Vec<[f64; 2]>>,
    kf_poses: &HashMap<u32, Se2>,
    cfg: &LoopConfig,
) -> Vec<ScoredCandidate> {
    pairs
        .iter()
        .map(|pair| score_one(pair, kf_points, kf_poses, cfg))
        .collect()
}

fn score_one(
    pair: &CandidatePair,
    kf_points: &HashMap<u32, Vec<[f64; 2]>>,
    kf_poses: &HashMap<u32, Se2>,
    cfg: &LoopConfig,
) -> ScoredCandidate {
    let empty: Vec<[f64; 2]> = Vec::new();
    let old = kf_points.get(&pair.kf_old).unwrap_or(&empty);
    let new = kf_points.get(&pair.kf_new).unwrap_or(&empty);
    let init = match (kf_poses.get(&pair.kf_old), kf_poses.get(&pair.kf_new)) {
        (Some(a), Some(b)) => a.between(*b),
        _ => Se2::identity(),
    };
    let (score, relative) = match_keyframes(old, new, init, cfg);
    ScoredCandidate {
        pair: *pair,
        score,
        relative,
    }
}

/// Acceptance tier of a loop event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Coarse,
    Fine,
}

/// Accepted loop closure between two keyframes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopEvent {
    pub kf_old: u32,
    pub kf_new: u32,
    pub score: f64,
    pub relative_pose: [f64; 3],
    pub tier: Tier,
    pub room_id: RoomId,
}

/// Coarse-to-fine selection: the best candidate of each partition wins if
/// it clears the strict threshold (at most one event per partition); when
/// no partition clears it, the single best overall above the relaxed
/// threshold is accepted as a fine-tier event.
pub fn coarse_to_fine_select(
    scored: &[ScoredCandidate],
    cfg: &LoopConfig,
    room_id: RoomId,
) -> Vec<LoopEvent> {
    let mut best_per_partition: HashMap<usize, &ScoredCandidate> = HashMap::new();
    for s in scored {
        match best_per_partition.entry(s.pair.partition) {
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(s);
            }
            std::collections::hash_map::Entry::Occupied(mut o) => {
                if s.score > o.get().score {
                    o.insert(s);
                }
            }
        }
    }
    let mut winners: Vec<&ScoredCandidate> = best_per_partition
        .into_values()
        .filter(|s| s.score >= cfg.s_coarse)
        .collect();
    winners.sort_by_key(|s| s.pair.partition);
    if !winners.is_empty() {
        return winners
            .into_iter()
            .map(|s| LoopEvent {
                kf_old: s.pair.kf_old,
                kf_new: s.pair.kf_new,
                score: s.score,
                relative_pose: s.relative.to_array(),
                tier: Tier::Coarse,
                room_id,
            })
            .collect();
    }
    scored
        .iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        .filter(|s| s.score >= cfg.s_fine)
        .map(|s| {
            vec![LoopEvent {
                kf_old: s.pair.kf_old,
                kf_new: s.pair.kf_new,
                score: s.score,
                relative_pose: s.relative.to_array(),
                tier: Tier::Fine,
                room_id,
            }]
        })
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roomseg::RoomKind;
    use crate::worldsim::{generate_world, simulate_scan, SensorModel, WorldSpec};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, HashSet};

    fn room_with_cells(id: RoomId, x0: f64, x1: f64, y0: f64, y1: f64, kfs: Vec<u32>) -> RoomNode {
        let mut cells = HashSet::new();
        let c0 = grid::cell_of([x0, y0], 0.1);
        let c1 = grid::cell_of([x1, y1], 0.1);
        for y in c0.1..c1.1 {
            for x in c0.0..c1.0 {
                cells.insert((x, y));
            }
        }
        RoomNode {
            id,
            kind: RoomKind::CorridorY,
            center: [(x0 + x1) / 2.0, (y0 + y1) / 2.0],
            walls: BTreeMap::new(),
            cells,
            keyframes: kfs,
            retired: false,
        }
    }

    #[test]
    fn short_room_single_partition() {
        let room = room_with_cells(0, 0.0, 2.0, 0.0, 4.0, vec![0, 1, 2]);
        let poses: HashMap<u32, Se2> = [(0, 1.0), (1, 2.0), (2, 3.0)]
            .into_iter()
            .map(|(k, y)| (k, Se2::new(1.0, y, 0.0)))
            .collect();
        let parts = partition_room(&room, &poses, 0.1, 10.0);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].keyframes.len(), 3);
    }

    #[test]
    fn long_corridor_partition_arithmetic() {
        // 25 m corridor with l_part 10: slabs of 10, 10, 5.
        let room = room_with_cells(0, 0.0, 2.0, 0.0, 25.0, vec![0, 1, 2]);
        let poses: HashMap<u32, Se2> = [
            (0u32, Se2::new(1.0, 4.0, 0.0)),
            (1u32, Se2::new(1.0, 14.0, 0.0)),
            (2u32, Se2::new(1.0, 24.0, 0.0)),
        ]
        .into_iter()
        .collect();
        let parts = partition_room(&room, &poses, 0.1, 10.0);
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0].keyframes, vec![0]);
        assert_eq!(parts[1].keyframes, vec![1]);
        assert_eq!(parts[2].keyframes, vec![2]);
        // Slab centers along the long axis: 5, 15, and (20+25)/2 = 22.5,
        // offset by the cell rasterization origin.
        assert!(parts[2].center[1] < 23.0 && parts[2].center[1] > 21.9);
    }

    #[test]
    fn boundary_keyframe_goes_to_lower_partition() {
        let room = room_with_cells(0, 0.0, 2.0, 0.0, 25.0, vec![7]);
        // Room cells start at y = 0.05 (first cell center); place the
        // keyframe exactly one l_part above the low edge.
        let lo = 0.05;
        let poses: HashMap<u32, Se2> =
            [(7u32, Se2::new(1.0, lo + 10.0, 0.0))].into_iter().collect();
        let parts = partition_room(&room, &poses, 0.1, 10.0);
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0].keyframes, vec![7]);
    }

    #[test]
    fn redetection_prefers_overlap_then_center() {
        let cfg = LoopConfig::default();
        let a = room_with_cells(0, 0.0, 2.0, 0.0, 10.0, vec![0]);
        let b = room_with_cells(1, 10.0, 12.0, 0.0, 10.0, vec![1]);
        // Exact revisit.
        let revisit = room_with_cells(2, 0.0, 2.0, 0.0, 10.0, vec![2]);
        assert_eq!(
            detect_redetection(&[a.clone(), b.clone()], &revisit, &cfg),
            Some(0)
        );
        // Drifted revisit: no overlap with anything, center within 5 m of b.
        let drifted = room_with_cells(3, 13.0, 15.0, 0.0, 10.0, vec![3]);
        assert_eq!(
            detect_redetection(&[a.clone(), b.clone()], &drifted, &cfg),
            Some(1)
        );
        // First visit, far away.
        let fresh = room_with_cells(4, 40.0, 42.0, 0.0, 10.0, vec![4]);
        assert_eq!(detect_redetection(&[a, b], &fresh, &cfg), None);
    }

    #[test]
    fn candidates_respect_partitions_and_gap() {
        let cfg = LoopConfig {
            min_keyframe_gap: 10,
            max_candidates_per_keyframe: 100,
            d_loop_th: 30.0,
            ..Default::default()
        };
        // Three partitions along y with old keyframes 0..6.
        let mut kf_poses: HashMap<u32, Se2> = HashMap::new();
        let parts: Vec<Partition> = (0..3)
            .map(|k| Partition {
                center: [1.0, 5.0 + 10.0 * k as f64],
                keyframes: vec![2 * k, 2 * k + 1],
            })
            .collect();
        for k in 0..3u32 {
            kf_poses.insert(2 * k, Se2::new(1.0, 3.0 + 10.0 * k as f64, 0.0));
            kf_poses.insert(2 * k + 1, Se2::new(1.0, 7.0 + 10.0 * k as f64, 0.0));
        }
        // New keyframe near partition 1: candidates only from the two
        // nearest partitions. Distance-sort oracle: centers at y 5, 15, 25
        // vs pose y 13 give order (1, 0, 2) with partition 2 beyond l_part.
        kf_poses.insert(50, Se2::new(1.0, 13.0, 0.0));
        let pairs = candidate_pairs(&parts, &[(50, kf_poses[&50])], &kf_poses, &cfg);
        assert!(!pairs.is_empty());
        let partitions: HashSet<usize> = pairs.iter().map(|p| p.partition).collect();
        assert_eq!(partitions, HashSet::from([0, 1]));
        // Gap: a new keyframe id too close to the olds yields nothing.
        kf_poses.insert(8, Se2::new(1.0, 13.0, 0.0));
        let close = candidate_pairs(&parts, &[(8, kf_poses[&8])], &kf_poses, &cfg);
        assert!(close.iter().all(|p| p.kf_old + cfg.min_keyframe_gap <= 8));
        // All partitions beyond l_part: empty.
        kf_poses.insert(60, Se2::new(1.0, 200.0, 0.0));
        assert!(candidate_pairs(&parts, &[(60, kf_poses[&60])], &kf_poses, &cfg).is_empty());
    }

    fn room_scan(pose: Se2) -> Vec<[f64; 2]> {
        let world = generate_world(
            &WorldSpec::ComplexRoom {
                resolution: 0.1,
                n_fixtures: 5,
            },
            7,
        )
        .unwrap();
        let sensor = SensorModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        simulate_scan(&world, pose, &sensor, &mut rng)
            .unwrap()
            .hit_points(&sensor)
    }

    #[test]
    fn identical_scans_match_perfectly() {
        let cfg = LoopConfig::default();
        let pts = room_scan(Se2::new(4.0, 5.0, 0.3));
        let (score, rel) = match_keyframes(&pts, &pts, Se2::identity(), &cfg);
        assert_abs_diff_eq!(score, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rel.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rel.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rel.theta, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rescanned_place_recovered_from_offset_guess() {
        // Same place scanned from two nearby poses with noise; ICP is
        // initialized 0.5 m off the true relative pose.
        let world = generate_world(
            &WorldSpec::ComplexRoom {
                resolution: 0.1,
                n_fixtures: 5,
            },
            7,
        )
        .unwrap();
        let sensor = SensorModel {
            range_noise_sigma: 0.02,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose_a = Se2::new(4.0, 5.0, 0.2);
        let pose_b = Se2::new(4.6, 5.3, -0.1);
        let scan_a = simulate_scan(&world, pose_a, &sensor, &mut rng)
            .unwrap()
            .hit_points(&sensor);
        let scan_b = simulate_scan(&world, pose_b, &sensor, &mut rng)
            .unwrap()
            .hit_points(&sensor);
        let true_rel = pose_a.between(pose_b);
        let bad_init = Se2::new(true_rel.x + 0.5, true_rel.y, true_rel.theta);
        let cfg = LoopConfig::default();
        let (score, rel) = match_keyframes(&scan_a, &scan_b, bad_init, &cfg);
        assert!(score > 0.9, "score {score}");
        assert_abs_diff_eq!(rel.x, true_rel.x, epsilon = 0.05);
        assert_abs_diff_eq!(rel.y, true_rel.y, epsilon = 0.05);
    }

    #[test]
    fn different_rooms_score_low() {
        // Statistics over 20 pose pairs drawn from two different archetypes.
        let world_a = generate_world(
            &WorldSpec::ComplexRoom {
                resolution: 0.1,
                n_fixtures: 6,
            },
            1,
        )
        .unwrap();
        let world_b = generate_world(
            &WorldSpec::MultiRoom {
                resolution: 0.1,
                n_rooms: 3,
            },
            2,
        )
        .unwrap();
        let sensor = SensorModel::default();
        let cfg = LoopConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let mut scores = Vec::new();
        for _ in 0..20 {
            let pa = Se2::new(
                rng.gen_range(3.0..11.0),
                rng.gen_range(3.0..7.0),
                rng.gen_range(-3.0..3.0),
            );
            let pb = Se2::new(
                rng.gen_range(1.0..12.0),
                rng.gen_range(0.5..1.8),
                rng.gen_range(-3.0..3.0),
            );
            let a = simulate_scan(&world_a, pa, &sensor, &mut rng)
                .unwrap()
                .hit_points(&sensor);
            let b = simulate_scan(&world_b, pb, &sensor, &mut rng)
                .unwrap()
                .hit_points(&sensor);
            let (score, _) = match_keyframes(&a, &b, Se2::identity(), &cfg);
            scores.push(score);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!(mean < 0.4, "mean cross-room score {mean} ({scores:?})");
        assert!(scores.iter().all(|s| *s < cfg.s_fine));
    }

    #[test]
    fn parallel_and_sequential_scoring_agree() {
        let pts = room_scan(Se2::new(4.0, 5.0, 0.0));
        let mut kf_points = HashMap::new();
        let mut kf_poses = HashMap::new();
        kf_points.insert(0u32, pts.clone());
        kf_points.insert(20u32, pts);
        kf_poses.insert(0u32, Se2::new(4.0, 5.0, 0.0));
        kf_poses.insert(20u32, Se2::new(4.0, 5.0, 0.0));
        let pairs = vec![CandidatePair {
            kf_old: 0,
            kf_new: 20,
            partition: 0,
        }];
        let cfg = LoopConfig::default();
        let a = score_candidates(&pairs, &kf_points, &kf_poses, &cfg);
        let b = score_candidates_sequential(&pairs, &kf_points, &kf_poses, &cfg);
        assert_eq!(a.len(), b.len());
        assert_eq!(a[0].score, b[0].score);
        assert_eq!(a[0].relative.to_array(), b[0].relative.to_array());
    }

    fn scored(partition: usize, kf_old: u32, score: f64) -> ScoredCandidate {
        ScoredCandidate {
            pair: CandidatePair {
                kf_old,
                kf_new: 100,
                partition,
            },
            score,
            relative: Se2::identity(),
        }
    }

    #[test]
    fn coarse_to_fine_examples() {
        let cfg = LoopConfig {
            s_coarse: 0.9,
            s_fine: 0.6,
            ..Default::default()
        };
        // Coarse winner.
        let events = coarse_to_fine_select(&[scored(0, 1, 0.95), scored(0, 2, 0.7)], &cfg, 3);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].tier, Tier::Coarse);
        assert_eq!(events[0].kf_old, 1);
        assert_abs_diff_eq!(events[0].score, 0.95);
        // Fine fallback.
        let events = coarse_to_fine_select(&[scored(0, 1, 0.8), scored(0, 2, 0.7)], &cfg, 3);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].tier, Tier::Fine);
        assert_abs_diff_eq!(events[0].score, 0.8);
        // Nothing clears the relaxed bar.
        let events = coarse_to_fine_select(&[scored(0, 1, 0.5)], &cfg, 3);
        assert!(events.is_empty());
        // One event per partition, plus threshold ordering: every coarse
        // acceptance would also pass the fine bar.
        let events = coarse_to_fine_select(
            &[
                scored(0, 1, 0.95),
                scored(0, 2, 0.93),
                scored(1, 3, 0.91),
                scored(2, 4, 0.2),
            ],
            &cfg,
            3,
        );
        assert_eq!(events.len(), 2);
        for e in &events {
            assert!(e.score >= cfg.s_fine);
        }
    }
}
