//! Wall plane extraction and bookkeeping.
//!
//! Walls are fitted as 2D lines (n·p = d with unit normal oriented toward
//! the observing robot) from scan obstacle points via sequential RANSAC,
//! classified into the four Manhattan categories, and tracked in a registry
//! so a re-observed physical wall maps to one graph variable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::se2::{wrap_angle, Se2};

/// Reference frame a plane is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Body,
    Map,
}

/// Oriented wall primitive: n·p = d, ‖n‖ = 1, robot on the positive side
/// (n·p_robot > d).
#[derive(Debug, Clone)]
pub struct Plane {
    pub frame: Frame,
    pub normal: [f64; 2],
    pub offset: f64,
    pub inliers: Vec<[f64; 2]>,
    pub first_seen: Option<u32>,
}

impl Plane {
    pub fn normal_angle(&self) -> f64 {
        self.normal[1].atan2(self.normal[0])
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset).abs()
    }

    /// Extent of the inliers along the wall direction (perpendicular to the
    /// normal), as an interval.
    pub fn span(&self) -> (f64, f64) {
        let dir = [-self.normal[1], self.normal[0]];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.inliers {
            let s = dir[0] * p[0] + dir[1] * p[1];
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }
}

/// Manhattan wall category. The sign is latched from the frame of first
/// observation: an `XPlus` wall faces the robot with a +x normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallCategory {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
}

impl WallCategory {
    pub const ALL: [WallCategory; 4] = [
        WallCategory::XPlus,
        WallCategory::XMinus,
        WallCategory::YPlus,
        WallCategory::YMinus,
    ];

    pub fn axis(self) -> Axis {
        match self {
            WallCategory::XPlus | WallCategory::XMinus => Axis::X,
            WallCategory::YPlus | WallCategory::YMinus => Axis::Y,
        }
    }

    pub fn positive(self) -> bool {
        matches!(self, WallCategory::XPlus | WallCategory::YPlus)
    }
}

/// Comparison axis for room geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// RANSAC and association parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WallParams {
    pub inlier_dist: f64,
    pub min_inliers: usize,
    pub min_wall_length: f64,
    pub iterations: usize,
    pub max_planes: usize,
    pub assoc_angle_tol: f64,
    pub assoc_offset_tol: f64,
}

impl Default for WallParams {
    fn default() -> Self {
        WallParams {
            inlier_dist: 0.05,
            min_inliers: 30,
            min_wall_length: 1.0,
            iterations: 200,
            max_planes: 12,
            assoc_angle_tol: 5.0_f64.to_radians(),
            assoc_offset_tol: 0.3,
        }
    }
}

fn fit_line_tls(points: &[[f64; 2]]) -> Option<([f64; 2], f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points {
        mx += p[0];
        my += p[1];
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Normal = eigenvector of the smaller eigenvalue of the 2x2 scatter.
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lambda_min = tr / 2.0 - disc;
    let (nx, ny) = if sxy.abs() > 1e-12 {
        (lambda_min - syy, sxy)
    } else if sxx <= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let norm = (nx * nx + ny * ny).sqrt();
    if norm < 1e-12 {
        return None;
    }
    let normal = [nx / norm, ny / norm];
    let offset = normal[0] * mx + normal[1] * my;
    Some((normal, offset))
}

/// Orient a plane so the observer sits on its positive side.
fn orient_toward(normal: [f64; 2], offset: f64, observer: [f64; 2]) -> ([f64; 2], f64) {
    if normal[0] * observer[0] + normal[1] * observer[1] > offset {
        (normal, offset)
    } else {
        ([-normal[0], -normal[1]], -offset)
    }
}

/// Sequential RANSAC wall extraction over obstacle points. Fits the best
/// line, refines it by total least squares over its inliers, removes them,
/// and repeats until no acceptable wall remains. Points are expected in the
/// frame of `observer` (the robot position in that frame), which fixes the
/// normal orientation.
pub fn extract_walls(
    points: &[[f64; 2]],
    observer: [f64; 2],
    params: &WallParams,
    rng: &mut impl Rng,
) -> Vec<Plane> {
    let mut remaining: Vec<[f64; 2]> = points.to_vec();
    let mut out = Vec::new();
    while remaining.len() >= params.min_inliers && out.len() < params.max_planes {
        let mut best: Option<(usize, [f64; 2], f64)> = None;
        for _ in 0..params.iterations {
            let i = rng.gen_range(0..remaining.len());
            let j = rng.gen_range(0..remaining.len());
            if i == j {
                continue;
            }
            let (a, b) = (remaining[i], remaining[j]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = (dx * dx + dy * dy).sqrt();
            if len < 1e-9 {
                continue;
            }
            let normal = [-dy / len, dx / len];
            let offset = normal[0] * a[0] + normal[1] * a[1];
            let count = remaining
                .iter()
                .filter(|p| (normal[0] * p[0] + normal[1] * p[1] - offset).abs() <= params.inlier_dist)
                .count();
            if best.map_or(true, |(c, _, _)| count > c) {
                best = Some((count, normal, offset));
            }
        }
        let Some((count, normal, offset)) = best else {
            break;
        };
        if count < params.min_inliers {
            break;
        }
        // Refine over the consensus set, then re-collect inliers once.
        let consensus: Vec<[f64; 2]> = remaining
            .iter()
            .filter(|p| (normal[0] * p[0] + normal[1] * p[1] - offset).abs() <= params.inlier_dist)
            .copied()
            .collect();
        let Some((rn, rd)) = fit_line_tls(&consensus) else {
            break;
        };
        let (rn, rd) = orient_toward(rn, rd, observer);
        let inliers: Vec<[f64; 2]> = remaining
            .iter()
            .filter(|p| (rn[0] * p[0] + rn[1] * p[1] - rd).abs() <= params.inlier_dist)
            .copied()
            .collect();
        if inliers.len() < params.min_inliers {
            break;
        }
        let plane = Plane {
            frame: Frame::Body,
            normal: rn,
            offset: rd,
            inliers,
            first_seen: None,
        };
        let (lo, hi) = plane.span();
        if hi - lo < params.min_wall_length {
            // Too short to be a wall; drop its points so RANSAC can move on.
            remaining.retain(|p| plane.distance_to(*p) > params.inlier_dist);
            continue;
        }
        remaining.retain(|p| plane.distance_to(*p) > params.inlier_dist);
        out.push(plane);
    }
    out
}

/// Express a body-frame plane in the map frame given the observing pose:
/// the normal rotates with the pose and the offset shifts by n_M · t.
pub fn transform_plane(plane: &Plane, pose: Se2) -> Plane {
    debug_assert_eq!(plane.frame, Frame::Body);
    let n_map = pose.rotate(plane.normal);
    let d_map = plane.offset + n_map[0] * pose.x + n_map[1] * pose.y;
    Plane {
        frame: Frame::Map,
        normal: n_map,
        offset: d_map,
        inliers: plane.inliers.iter().map(|p| pose.transform(*p)).collect(),
        first_seen: plane.first_seen,
    }
}

/// Classify a map-frame wall into its Manhattan category. The direction
/// (x vs y) comes from the dominant map-frame normal component with ties
/// broken toward x; the +/- sign is latched from the body-frame component
/// of that axis at first observation, falling back to the map-frame sign
/// when the body component is degenerate (robot heading near ±90° of the
/// wall axis).
pub fn classify_wall(map_normal: [f64; 2], body_normal: [f64; 2]) -> WallCategory {
    let axis_is_x = map_normal[0].abs() >= map_normal[1].abs();
    let idx = if axis_is_x { 0 } else { 1 };
    let body_component = body_normal[idx];
    let sign_source = if body_component.abs() >= 0.1 {
        body_component
    } else {
        map_normal[idx]
    };
    match (axis_is_x, sign_source >= 0.0) {
        (true, true) => WallCategory::XPlus,
        (true, false) => WallCategory::XMinus,
        (false, true) => WallCategory::YPlus,
        (false, false) => WallCategory::YMinus,
    }
}

pub type WallId = u32;

/// A tracked wall: map-frame estimate plus bookkeeping for association and
/// room selection.
#[derive(Debug, Clone)]
pub struct WallRecord {
    pub id: WallId,
    pub category: WallCategory,
    pub normal: [f64; 2],
    pub offset: f64,
    /// Map-frame inlier points, spatially deduplicated at [`POINT_BIN`] so
    /// counts reflect wall coverage rather than observation frequency.
    pub points: Vec<[f64; 2]>,
    bins: std::collections::HashSet<(i32, i32)>,
    /// Inlier extent along the wall direction.
    pub span: (f64, f64),
    pub first_seen: u32,
    pub retired: bool,
}

/// Deduplication bin for accumulated wall points, meters.
pub const POINT_BIN: f64 = 0.05;

fn point_bin(p: [f64; 2]) -> (i32, i32) {
    (
        (p[0] / POINT_BIN).floor() as i32,
        (p[1] / POINT_BIN).floor() as i32,
    )
}

impl WallRecord {
    pub fn normal_angle(&self) -> f64 {
        self.normal[1].atan2(self.normal[0])
    }
}

/// Registry of map-frame walls; the four categories partition it.
#[derive(Debug, Clone, Default)]
pub struct WallRegistry {
    pub walls: Vec<WallRecord>,
}

impl WallRegistry {
    pub fn get(&self, id: WallId) -> &WallRecord {
        &self.walls[id as usize]
    }

    pub fn get_mut(&mut self, id: WallId) -> &mut WallRecord {
        &mut self.walls[id as usize]
    }

    pub fn active(&self) -> impl Iterator<Item = &WallRecord> + '_ {
        self.walls.iter().filter(|w| !w.retired)
    }

    pub fn in_category(&self, cat: WallCategory) -> impl Iterator<Item = &WallRecord> + '_ {
        self.active().filter(move |w| w.category == cat)
    }

    /// Find the existing wall a new map-frame observation belongs to:
    /// smallest normal-angle difference within tolerance, offset within
    /// tolerance, and overlapping inlier spans.
    pub fn associate(&self, plane: &Plane, params: &WallParams) -> Option<WallId> {
        debug_assert_eq!(plane.frame, Frame::Map);
        let angle = plane.normal_angle();
        let (lo, hi) = plane.span();
        let mut best: Option<(f64, WallId)> = None;
        for w in self.active() {
            let da = wrap_angle(angle - w.normal_angle()).abs();
            if da > params.assoc_angle_tol {
                continue;
            }
            if (plane.offset - w.offset).abs() > params.assoc_offset_tol {
                continue;
            }
            if hi < w.span.0 || lo > w.span.1 {
                continue;
            }
            if best.map_or(true, |(bda, _)| da < bda) {
                best = Some((da, w.id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Register a new wall observed in the map frame.
    pub fn insert(&mut self, plane: &Plane, category: WallCategory, keyframe: u32) -> WallId {
        let id = self.walls.len() as WallId;
        let span = plane.span();
        let mut record = WallRecord {
            id,
            category,
            normal: plane.normal,
            offset: plane.offset,
            points: Vec::new(),
            bins: std::collections::HashSet::new(),
            span,
            first_seen: keyframe,
            retired: false,
        };
        for p in &plane.inliers {
            if record.bins.insert(point_bin(*p)) {
                record.points.push(*p);
            }
        }
        self.walls.push(record);
        id
    }

    /// Merge a re-observation into an existing wall: extend points and span.
    pub fn observe(&mut self, id: WallId, plane: &Plane) {
        let (lo, hi) = plane.span();
        let w = self.get_mut(id);
        w.span = (w.span.0.min(lo), w.span.1.max(hi));
        for p in &plane.inliers {
            if w.bins.insert(point_bin(*p)) {
                w.points.push(*p);
            }
        }
    }

    /// Fold `from`'s accumulated evidence into `into` and retire `from`
    /// (room-merge wall retirement).
    pub fn absorb(&mut self, into: WallId, from: WallId) {
        if into == from {
            return;
        }
        let (points, span) = {
            let f = self.get(from);
            (f.points.clone(), f.span)
        };
        let w = self.get_mut(into);
        w.span = (w.span.0.min(span.0), w.span.1.max(span.1));
        for p in points {
            if w.bins.insert(point_bin(p)) {
                w.points.push(p);
            }
        }
        self.get_mut(from).retired = true;
    }
}
