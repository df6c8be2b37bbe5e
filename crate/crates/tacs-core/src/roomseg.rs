//! Room segmentation from traversable free space.
//!
//! A safe graph keeps only traversable nodes with enough clearance from
//! obstacles, which splits free space at doorways. The connected component
//! around the robot (the inside graph) is accumulated step by step; when it
//! vanishes the robot has left through a narrow passage and the union of the
//! accumulated graphs becomes a room, bounded by the walls with the most
//! adjacent evidence and classified by how many parallel wall pairs bound it.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::grid::{self, Cell};
use crate::se2::{wrap_angle, Se2};
use crate::traversability::TraversableGraph;
use crate::walls::{Axis, WallCategory, WallId, WallRegistry};

/// Traversable graph filtered by obstacle clearance.
#[derive(Debug, Clone)]
pub struct SafeGraph {
    pub resolution: f64,
    pub nodes: HashSet<Cell>,
    /// Induced edges (both endpoints safe); every edge existed in the source
    /// traversable graph.
    pub edges: Vec<(Cell, Cell)>,
}

/// Keep exactly the traversable nodes at least `lambda` away from every
/// obstacle cell (Euclidean, cell centers), plus the induced edges. The
/// clearance test runs on an exact integer distance transform, so it matches
/// a brute-force min-distance filter bit for bit.
pub fn compute_safe_graph(
    trav: &TraversableGraph,
    obstacles: &[Cell],
    lambda: f64,
    resolution: f64,
) -> SafeGraph {
    if trav.nodes.is_empty() {
        return SafeGraph {
            resolution,
            nodes: HashSet::new(),
            edges: Vec::new(),
        };
    }
    let to_cells = |trav: &TraversableGraph| -> Vec<(Cell, Cell)> {
        trav.edges
            .iter()
            .map(|&(a, b)| (trav.nodes[a as usize].cell, trav.nodes[b as usize].cell))
            .collect()
    };
    if obstacles.is_empty() {
        return SafeGraph {
            resolution,
            nodes: trav.cells().collect(),
            edges: to_cells(trav),
        };
    }
    let mut min = trav.nodes[0].cell;
    let mut max = min;
    for c in trav.cells().chain(obstacles.iter().copied()) {
        min = (min.0.min(c.0), min.1.min(c.1));
        max = (max.0.max(c.0), max.1.max(c.1));
    }
    let w = (max.0 - min.0 + 1) as usize;
    let h = (max.1 - min.1 + 1) as usize;
    let mut seed = vec![false; w * h];
    for o in obstacles {
        let ix = (o.0 - min.0) as usize;
        let iy = (o.1 - min.1) as usize;
        seed[iy * w + ix] = true;
    }
    let dist_sq = grid::distance_sq_transform(w, h, &seed);
    let clear = |c: Cell| -> bool {
        let ix = (c.0 - min.0) as usize;
        let iy = (c.1 - min.1) as usize;
        let dq = dist_sq[iy * w + ix];
        dq as f64 * resolution * resolution >= lambda * lambda
    };
    let nodes: HashSet<Cell> = trav.cells().filter(|c| clear(*c)).collect();
    let edges = to_cells(trav)
        .into_iter()
        .filter(|(a, b)| nodes.contains(a) && nodes.contains(b))
        .collect();
    SafeGraph {
        resolution,
        nodes,
        edges,
    }
}

/// Connected component of the safe graph containing the node nearest the
/// robot; empty when no safe node sits within the robot cell's
/// 8-neighborhood (the robot is in a doorway or narrow passage).
pub fn extract_inside(safe: &SafeGraph, robot_pose: Se2) -> HashSet<Cell> {
    let robot_cell = grid::cell_of([robot_pose.x, robot_pose.y], safe.resolution);
    let mut start: Option<(f64, Cell)> = None;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let c = (robot_cell.0 + dx, robot_cell.1 + dy);
            if safe.nodes.contains(&c) {
                let p = grid::center_of(c, safe.resolution);
                let d = (p[0] - robot_pose.x).powi(2) + (p[1] - robot_pose.y).powi(2);
                if start.map_or(true, |(bd, _)| d < bd) {
                    start = Some((d, c));
                }
            }
        }
    }
    let Some((_, start)) = start else {
        return HashSet::new();
    };
    let mut adj: HashMap<Cell, Vec<Cell>> = HashMap::new();
    for (a, b) in &safe.edges {
        adj.entry(*a).or_default().push(*b);
        adj.entry(*b).or_default().push(*a);
    }
    let mut seen = HashSet::new();
    let mut queue = std::collections::VecDeque::new();
    seen.insert(start);
    queue.push_back(start);
    while let Some(c) = queue.pop_front() {
        if let Some(ns) = adj.get(&c) {
            for n in ns {
                if seen.insert(*n) {
                    queue.push_back(*n);
                }
            }
        }
    }
    seen
}

/// A finished room-level cell set.
#[derive(Debug, Clone)]
pub struct CompletedRoom {
    pub cells: HashSet<Cell>,
    pub n_graphs: usize,
    pub start_keyframe: u32,
    pub end_keyframe: u32,
}

/// Accumulates per-step inside graphs until the robot exits through a
/// narrow passage (an empty inside graph), then emits their union.
#[derive(Debug, Clone, Default)]
pub struct RoomAccumulator {
    cells: HashSet<Cell>,
    n_graphs: usize,
    start_keyframe: u32,
    end_keyframe: u32,
    active: bool,
}

impl RoomAccumulator {
    pub fn new() -> Self {
        RoomAccumulator::default()
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Fold in one inside graph. A nonempty graph extends the accumulation;
    /// an empty one closes it and returns the union of everything
    /// accumulated so far.
    pub fn accumulate(
        &mut self,
        inside: &HashSet<Cell>,
        latest_keyframe: u32,
    ) -> Option<CompletedRoom> {
        if !inside.is_empty() {
            if !self.active {
                self.active = true;
                self.start_keyframe = latest_keyframe;
                self.cells.clear();
                self.n_graphs = 0;
            }
            self.cells.extend(inside.iter().copied());
            self.n_graphs += 1;
            self.end_keyframe = latest_keyframe;
            return None;
        }
        self.flush()
    }

    /// Close an active accumulation (end of run or empty inside graph).
    pub fn flush(&mut self) -> Option<CompletedRoom> {
        if !self.active {
            return None;
        }
        let room = CompletedRoom {
            cells: std::mem::take(&mut self.cells),
            n_graphs: self.n_graphs,
            start_keyframe: self.start_keyframe,
            end_keyframe: self.end_keyframe,
        };
        self.active = false;
        self.n_graphs = 0;
        Some(room)
    }
}

/// Room classification by bounding wall pairs. A corridor is named by its
/// run direction: one running along y is bounded by the x-normal pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomKind {
    CorridorX,
    CorridorY,
    FourWall,
}

impl RoomKind {
    /// Axes along which bounding wall pairs constrain the center.
    pub fn bounded_axes(self) -> &'static [Axis] {
        match self {
            RoomKind::CorridorX => &[Axis::Y],
            RoomKind::CorridorY => &[Axis::X],
            RoomKind::FourWall => &[Axis::X, Axis::Y],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoomKind::CorridorX => "corridor_x",
            RoomKind::CorridorY => "corridor_y",
            RoomKind::FourWall => "four_wall",
        }
    }
}

pub type RoomId = u32;

/// Segmented room node.
#[derive(Debug, Clone)]
pub struct RoomNode {
    pub id: RoomId,
    pub kind: RoomKind,
    pub center: [f64; 2],
    pub walls: BTreeMap<WallCategory, WallId>,
    pub cells: HashSet<Cell>,
    pub keyframes: Vec<u32>,
    pub retired: bool,
}

/// Room-segmentation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomSegParams {
    /// Obstacle clearance for the safe graph, meters.
    pub lambda_obstacle: f64,
    /// Wall inlier points count as adjacent to the room within this range.
    pub wall_adjacency_dist: f64,
    /// Minimum adjacent-point count for a wall to bound the room.
    pub min_adjacent: usize,
    /// Minimum accumulated inside graphs for a completed room (flicker
    /// suppression).
    pub min_inside_graphs: usize,
    /// Completed cell sets overlapping an existing room at least this much
    /// go straight to merging instead of becoming a new node.
    pub overlap_route: f64,
    /// Bounding pair must be anti-parallel within this angle.
    pub pair_parallel_tol: f64,
}

impl Default for RoomSegParams {
    fn default() -> Self {
        RoomSegParams {
            lambda_obstacle: 0.45,
            wall_adjacency_dist: 0.5,
            min_adjacent: 25,
            min_inside_graphs: 3,
            overlap_route: 0.6,
            pair_parallel_tol: 10.0_f64.to_radians(),
        }
    }
}

/// For each wall category, the wall with the largest number of inlier
/// points within `wall_adjacency_dist` of any room cell, with that count.
/// Ties go to the wall closest to the room centroid.
pub fn select_bounding_walls(
    room_cells: &HashSet<Cell>,
    registry: &WallRegistry,
    resolution: f64,
    params: &RoomSegParams,
) -> BTreeMap<WallCategory, (WallId, usize)> {
    let mut out: BTreeMap<WallCategory, (WallId, usize)> = BTreeMap::new();
    if room_cells.is_empty() {
        return out;
    }
    let centroid = cell_centroid(room_cells, resolution);
    let reach = (params.wall_adjacency_dist / resolution).ceil() as i32 + 1;
    let point_adjacent = |p: [f64; 2]| -> bool {
        let pc = grid::cell_of(p, resolution);
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let c = (pc.0 + dx, pc.1 + dy);
                if room_cells.contains(&c)
                    && point_cell_distance(p, c, resolution) <= params.wall_adjacency_dist
                {
                    return true;
                }
            }
        }
        false
    };
    let mut best: BTreeMap<WallCategory, (usize, f64, WallId)> = BTreeMap::new();
    for w in registry.active() {
        let count = w.points.iter().filter(|p| point_adjacent(**p)).count();
        if count == 0 {
            continue;
        }
        let centroid_dist =
            (w.normal[0] * centroid[0] + w.normal[1] * centroid[1] - w.offset).abs();
        match best.entry(w.category) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert((count, centroid_dist, w.id));
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let (bc, bd, _) = *o.get();
                if count > bc || (count == bc && centroid_dist < bd) {
                    o.insert((count, centroid_dist, w.id));
                }
            }
        }
    }
    for (cat, (count, _, id)) in best {
        out.insert(cat, (id, count));
    }
    out
}

/// Centroid of a cell set. Integer coordinate sums keep the result
/// independent of set iteration order.
pub fn cell_centroid(cells: &HashSet<Cell>, resolution: f64) -> [f64; 2] {
    let mut sx: i64 = 0;
    let mut sy: i64 = 0;
    for c in cells {
        sx += c.0 as i64;
        sy += c.1 as i64;
    }
    let n = cells.len().max(1) as f64;
    [
        (sx as f64 / n + 0.5) * resolution,
        (sy as f64 / n + 0.5) * resolution,
    ]
}

/// Euclidean distance from a point to a cell's closed square.
pub fn point_cell_distance(p: [f64; 2], c: Cell, resolution: f64) -> f64 {
    let center = grid::center_of(c, resolution);
    let half = resolution / 2.0;
    let dx = ((p[0] - center[0]).abs() - half).max(0.0);
    let dy = ((p[1] - center[1]).abs() - half).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// Signed wall position along an axis (valid near Manhattan alignment).
pub fn wall_position(normal: [f64; 2], offset: f64, axis: Axis) -> f64 {
    match axis {
        Axis::X => offset / normal[0],
        Axis::Y => offset / normal[1],
    }
}

/// Classify a completed room from its selected bounding walls and build the
/// node. Returns `None` when no parallel pair passes the adjacency bar or a
/// selected pair is not anti-parallel within tolerance.
pub fn classify_and_make_room(
    selection: &BTreeMap<WallCategory, (WallId, usize)>,
    room_cells: &HashSet<Cell>,
    registry: &WallRegistry,
    resolution: f64,
    params: &RoomSegParams,
    id: RoomId,
) -> Option<RoomNode> {
    let pair_ok = |axis: Axis| -> Option<(WallId, WallId)> {
        let (pos_cat, neg_cat) = match axis {
            Axis::X => (WallCategory::XPlus, WallCategory::XMinus),
            Axis::Y => (WallCategory::YPlus, WallCategory::YMinus),
        };
        let (pos_id, pos_n) = *selection.get(&pos_cat)?;
        let (neg_id, neg_n) = *selection.get(&neg_cat)?;
        if pos_n < params.min_adjacent || neg_n < params.min_adjacent {
            return None;
        }
        let a = registry.get(pos_id).normal_angle();
        let b = registry.get(neg_id).normal_angle();
        let anti = wrap_angle(a - b - std::f64::consts::PI).abs();
        if anti > params.pair_parallel_tol {
            log::warn!(
                "bounding pair on {axis:?} not anti-parallel ({:.1} deg off); pair discarded",
                anti.to_degrees()
            );
            return None;
        }
        Some((pos_id, neg_id))
    };
    let x_pair = pair_ok(Axis::X);
    let y_pair = pair_ok(Axis::Y);
    let kind = match (&x_pair, &y_pair) {
        (Some(_), Some(_)) => RoomKind::FourWall,
        // Bounded across x only: the corridor runs along y.
        (Some(_), None) => RoomKind::CorridorY,
        (None, Some(_)) => RoomKind::CorridorX,
        (None, None) => return None,
    };
    let mut center = cell_centroid(room_cells, resolution);
    let mut walls = BTreeMap::new();
    if let Some((p, n)) = x_pair {
        let wp = registry.get(p);
        let wn = registry.get(n);
        center[0] = 0.5
            * (wall_position(wp.normal, wp.offset, Axis::X)
                + wall_position(wn.normal, wn.offset, Axis::X));
        walls.insert(WallCategory::XPlus, p);
        walls.insert(WallCategory::XMinus, n);
    }
    if let Some((p, n)) = y_pair {
        let wp = registry.get(p);
        let wn = registry.get(n);
        center[1] = 0.5
            * (wall_position(wp.normal, wp.offset, Axis::Y)
                + wall_position(wn.normal, wn.offset, Axis::Y));
        walls.insert(WallCategory::YPlus, p);
        walls.insert(WallCategory::YMinus, n);
    }
    Some(RoomNode {
        id,
        kind,
        center,
        walls,
        cells: room_cells.clone(),
        keyframes: Vec::new(),
        retired: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traversability::{
        build_traversable_graph, CellState, ObservedKind, RobotModel, TraversabilityField,
    };
    use crate::walls::{Frame, Plane};
    use approx::assert_abs_diff_eq;

    fn flat_graph(w: i32, h: i32) -> TraversableGraph {
        let mut f = TraversabilityField::new(0.1, RobotModel::default());
        for y in 0..h {
            for x in 0..w {
                f.set_state(
                    (x, y),
                    CellState::Observed {
                        kind: ObservedKind::Ground,
                        height: 0.0,
                    },
                );
            }
        }
        build_traversable_graph(
            &f,
            Se2::new(0.05 * w as f64 * 0.1 / 0.1, 0.05, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn no_obstacles_keeps_everything() {
        let g = flat_graph(10, 10);
        let safe = compute_safe_graph(&g, &[], 0.45, 0.1);
        assert_eq!(safe.nodes.len(), g.nodes.len());
        assert_eq!(safe.edges.len(), g.edges.len());
    }

    #[test]
    fn node_inside_clearance_excluded() {
        // Obstacle at (0,0); node (3,0) sits 0.3 m away; lambda 0.5.
        let g = flat_graph(10, 1);
        let safe = compute_safe_graph(&g, &[(0, 0)], 0.5, 0.1);
        assert!(!safe.nodes.contains(&(3, 0)));
        assert!(safe.nodes.contains(&(5, 0)));
    }

    #[test]
    fn safe_graph_matches_bruteforce() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let g = flat_graph(20, 20);
            let obstacles: Vec<Cell> = (0..rng.gen_range(1..25))
                .map(|_| (rng.gen_range(0..20), rng.gen_range(0..20)))
                .collect();
            let lambda = rng.gen_range(0.2..0.8);
            let safe = compute_safe_graph(&g, &obstacles, lambda, 0.1);
            for n in g.cells() {
                let min_sq = obstacles
                    .iter()
                    .map(|o| ((n.0 - o.0) as i64).pow(2) + ((n.1 - o.1) as i64).pow(2))
                    .min()
                    .unwrap();
                let keep = min_sq as f64 * 0.01 >= lambda * lambda;
                assert_eq!(safe.nodes.contains(&n), keep, "node {n:?} lambda {lambda}");
            }
            for (a, b) in &safe.edges {
                assert!(safe.nodes.contains(a) && safe.nodes.contains(b));
            }
        }
    }

    #[test]
    fn inside_component_of_enclosed_room() {
        let g = flat_graph(20, 20);
        let obstacles: Vec<Cell> = (0..20).map(|y| (10, y)).collect();
        let safe = compute_safe_graph(&g, &obstacles, 0.45, 0.1);
        let inside = extract_inside(&safe, Se2::new(0.3, 1.0, 0.0));
        assert!(!inside.is_empty());
        assert!(inside.iter().all(|c| c.0 < 10));
        let left: HashSet<Cell> = safe.nodes.iter().filter(|c| c.0 < 10).copied().collect();
        assert_eq!(inside, left);
    }

    #[test]
    fn robot_in_narrow_doorway_gets_empty_graph() {
        let g = flat_graph(20, 20);
        // Doorway 0.3 m wide at (10, 9..=11), far narrower than 2 * lambda.
        let mut obstacles: Vec<Cell> = Vec::new();
        for y in 0..20 {
            if !(9..=11).contains(&y) {
                obstacles.push((10, y));
            }
        }
        let safe = compute_safe_graph(&g, &obstacles, 0.45, 0.1);
        let inside = extract_inside(&safe, Se2::new(1.05, 1.05, 0.0));
        assert!(inside.is_empty(), "doorway cells are filtered by clearance");
    }

    #[test]
    fn wide_opening_joins_rooms() {
        let g = flat_graph(30, 20);
        // Divider at x=15 with a 1.5 m gap, wider than 2 * lambda = 0.9 m.
        let mut obstacles: Vec<Cell> = Vec::new();
        for y in 0..20 {
            if !(5..20).contains(&y) {
                obstacles.push((15, y));
            }
        }
        let safe = compute_safe_graph(&g, &obstacles, 0.45, 0.1);
        let inside = extract_inside(&safe, Se2::new(0.5, 1.0, 0.0));
        // Flood-fill oracle over the safe node set.
        let oracle = grid::flood8((5, 10), |c| safe.nodes.contains(&c), |_, _| true);
        assert_eq!(inside.len(), oracle.len());
        assert!(inside.iter().any(|c| c.0 > 15), "component spans the opening");
    }

    #[test]
    fn accumulate_union_and_reset() {
        let mut acc = RoomAccumulator::new();
        let g1: HashSet<Cell> = [(0, 0), (1, 0), (2, 0)].into_iter().collect();
        let g2: HashSet<Cell> = [(2, 0), (3, 0)].into_iter().collect();
        assert!(acc.accumulate(&g1, 1).is_none());
        assert!(acc.accumulate(&g2, 2).is_none());
        let done = acc.accumulate(&HashSet::new(), 3).unwrap();
        // Union identity: |G1 ∪ G2| = |G1| + |G2| − |G1 ∩ G2|.
        assert_eq!(done.cells.len(), 3 + 2 - 1);
        assert_eq!(done.n_graphs, 2);
        assert_eq!((done.start_keyframe, done.end_keyframe), (1, 2));
        assert!(!acc.is_active());
        assert!(acc.accumulate(&HashSet::new(), 4).is_none());
    }

    proptest::proptest! {
        #[test]
        fn accumulation_is_order_independent(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let room: Vec<Cell> = (0..rng.gen_range(5..60))
                .map(|_| (rng.gen_range(0..15), rng.gen_range(0..15)))
                .collect();
            let mut chunks: Vec<HashSet<Cell>> = Vec::new();
            let mut rest = room.clone();
            while !rest.is_empty() {
                let k = rng.gen_range(1..=rest.len());
                chunks.push(rest.drain(..k).collect());
            }
            let run = |order: &[HashSet<Cell>]| -> HashSet<Cell> {
                let mut acc = RoomAccumulator::new();
                for (i, c) in order.iter().enumerate() {
                    assert!(acc.accumulate(c, i as u32).is_none());
                }
                acc.accumulate(&HashSet::new(), 99).map(|r| r.cells).unwrap_or_default()
            };
            let forward = run(&chunks);
            let mut shuffled = chunks.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            let backward = run(&shuffled);
            let expected: HashSet<Cell> = room.into_iter().collect();
            proptest::prop_assert_eq!(&forward, &expected);
            proptest::prop_assert_eq!(&backward, &expected);
        }
    }

    fn wall_from_segment(
        reg: &mut WallRegistry,
        a: [f64; 2],
        b: [f64; 2],
        observer: [f64; 2],
        cat: WallCategory,
    ) -> WallId {
        let n = 60;
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
            })
            .collect();
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let mut normal = [-dy / len, dx / len];
        let mut offset = normal[0] * a[0] + normal[1] * a[1];
        if normal[0] * observer[0] + normal[1] * observer[1] < offset {
            normal = [-normal[0], -normal[1]];
            offset = -offset;
        }
        let plane = Plane {
            frame: Frame::Map,
            normal,
            offset,
            inliers: pts,
            first_seen: Some(0),
        };
        reg.insert(&plane, cat, 0)
    }

    fn room_cells_rect(x0: f64, y0: f64, x1: f64, y1: f64) -> HashSet<Cell> {
        let mut cells = HashSet::new();
        let c0 = grid::cell_of([x0, y0], 0.1);
        let c1 = grid::cell_of([x1, y1], 0.1);
        for y in c0.1..c1.1 {
            for x in c0.0..c1.0 {
                cells.insert((x, y));
            }
        }
        cells
    }

    #[test]
    fn square_room_selects_four_walls_and_classifies() {
        let mut reg = WallRegistry::default();
        let obs = [3.0, 3.0];
        let wxp = wall_from_segment(&mut reg, [0.0, 0.0], [0.0, 6.0], obs, WallCategory::XPlus);
        let wxn = wall_from_segment(&mut reg, [6.0, 0.0], [6.0, 6.0], obs, WallCategory::XMinus);
        let wyp = wall_from_segment(&mut reg, [0.0, 0.0], [6.0, 0.0], obs, WallCategory::YPlus);
        let wyn = wall_from_segment(&mut reg, [0.0, 6.0], [6.0, 6.0], obs, WallCategory::YMinus);
        // A far-away decoy in the x-plus category.
        let _decoy = wall_from_segment(
            &mut reg,
            [40.0, 0.0],
            [40.0, 6.0],
            [43.0, 3.0],
            WallCategory::XPlus,
        );
        let params = RoomSegParams::default();
        let cells = room_cells_rect(0.3, 0.3, 5.7, 5.7);
        let sel = select_bounding_walls(&cells, &reg, 0.1, &params);
        assert_eq!(sel[&WallCategory::XPlus].0, wxp);
        assert_eq!(sel[&WallCategory::XMinus].0, wxn);
        assert_eq!(sel[&WallCategory::YPlus].0, wyp);
        assert_eq!(sel[&WallCategory::YMinus].0, wyn);
        // Exhaustive oracle: recount adjacency for every wall per category
        // over all (point, cell) pairs.
        for cat in WallCategory::ALL {
            let mut best = (0usize, None::<WallId>);
            for w in reg.in_category(cat) {
                let count = w
                    .points
                    .iter()
                    .filter(|p| {
                        cells
                            .iter()
                            .any(|c| point_cell_distance(**p, *c, 0.1) <= params.wall_adjacency_dist)
                    })
                    .count();
                if count > best.0 {
                    best = (count, Some(w.id));
                }
            }
            assert_eq!(sel[&cat].0, best.1.unwrap(), "category {cat:?}");
            assert_eq!(sel[&cat].1, best.0, "category {cat:?} count");
        }

        let room = classify_and_make_room(&sel, &cells, &reg, 0.1, &params, 0).unwrap();
        assert_eq!(room.kind, RoomKind::FourWall);
        assert_abs_diff_eq!(room.center[0], 3.0, epsilon = 0.1);
        assert_abs_diff_eq!(room.center[1], 3.0, epsilon = 0.1);
    }

    #[test]
    fn corridor_along_y_classifies_corridor_y() {
        // 2 m x 12 m corridor along y: long walls at x=0 and x=2.
        let mut reg = WallRegistry::default();
        let obs = [1.0, 6.0];
        wall_from_segment(&mut reg, [0.0, 0.0], [0.0, 12.0], obs, WallCategory::XPlus);
        wall_from_segment(&mut reg, [2.0, 0.0], [2.0, 12.0], obs, WallCategory::XMinus);
        let params = RoomSegParams::default();
        let cells = room_cells_rect(0.2, 0.2, 1.8, 11.8);
        let sel = select_bounding_walls(&cells, &reg, 0.1, &params);
        assert_eq!(sel.len(), 2);
        assert!(sel.contains_key(&WallCategory::XPlus));
        assert!(sel.contains_key(&WallCategory::XMinus));
        let room = classify_and_make_room(&sel, &cells, &reg, 0.1, &params, 0).unwrap();
        assert_eq!(room.kind, RoomKind::CorridorY);
        assert_abs_diff_eq!(room.center[0], 1.0, epsilon = 0.05);
        // Free axis takes the cell centroid.
        assert_abs_diff_eq!(room.center[1], 6.0, epsilon = 0.1);
    }

    #[test]
    fn single_wall_yields_no_room() {
        let mut reg = WallRegistry::default();
        wall_from_segment(&mut reg, [0.0, 0.0], [0.0, 6.0], [3.0, 3.0], WallCategory::XPlus);
        let params = RoomSegParams::default();
        let cells = room_cells_rect(0.3, 0.3, 5.7, 5.7);
        let sel = select_bounding_walls(&cells, &reg, 0.1, &params);
        assert!(classify_and_make_room(&sel, &cells, &reg, 0.1, &params, 0).is_none());
    }

    #[test]
    fn skewed_pair_rejected() {
        let mut reg = WallRegistry::default();
        let obs = [3.0, 3.0];
        wall_from_segment(&mut reg, [0.0, 0.0], [0.0, 6.0], obs, WallCategory::XPlus);
        // 15 degrees off anti-parallel.
        wall_from_segment(&mut reg, [6.0, 0.0], [4.4, 6.0], obs, WallCategory::XMinus);
        let params = RoomSegParams::default();
        let cells = room_cells_rect(0.3, 0.3, 5.7, 5.7);
        let sel = select_bounding_walls(&cells, &reg, 0.1, &params);
        assert!(sel.len() >= 2);
        assert!(classify_and_make_room(&sel, &cells, &reg, 0.1, &params, 0).is_none());
    }
}
