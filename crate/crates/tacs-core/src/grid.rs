//! Grid primitives shared by the simulator and the mapping pipeline:
//! cell indexing, a growable dense grid, DDA ray marching, an exact
//! Euclidean distance transform, and flood fill.

use crate::par;

/// Grid cell index (may be negative; grids grow on demand).
pub type Cell = (i32, i32);

/// Cell containing a world point.
pub fn cell_of(p: [f64; 2], resolution: f64) -> Cell {
    (
        (p[0] / resolution).floor() as i32,
        (p[1] / resolution).floor() as i32,
    )
}

/// World coordinates of a cell center.
pub fn center_of(c: Cell, resolution: f64) -> [f64; 2] {
    [
        (c.0 as f64 + 0.5) * resolution,
        (c.1 as f64 + 0.5) * resolution,
    ]
}

pub const NEIGHBORS_8: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Dense 2D grid that grows to cover any cell written to it.
#[derive(Debug, Clone)]
pub struct GrowableGrid<T: Clone> {
    origin: Cell,
    width: usize,
    height: usize,
    data: Vec<T>,
    default: T,
}

impl<T: Clone> GrowableGrid<T> {
    pub fn new(default: T) -> Self {
        GrowableGrid {
            origin: (0, 0),
            width: 0,
            height: 0,
            data: Vec::new(),
            default,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Inclusive cell bounds currently allocated, `None` when empty.
    pub fn bounds(&self) -> Option<(Cell, Cell)> {
        if self.is_empty() {
            return None;
        }
        Some((
            self.origin,
            (
                self.origin.0 + self.width as i32 - 1,
                self.origin.1 + self.height as i32 - 1,
            ),
        ))
    }

    fn index(&self, c: Cell) -> Option<usize> {
        let dx = c.0 - self.origin.0;
        let dy = c.1 - self.origin.1;
        if dx < 0 || dy < 0 || dx >= self.width as i32 || dy >= self.height as i32 {
            None
        } else {
            Some(dy as usize * self.width + dx as usize)
        }
    }

    pub fn get(&self, c: Cell) -> &T {
        match self.index(c) {
            Some(i) => &self.data[i],
            None => &self.default,
        }
    }

    pub fn get_mut(&mut self, c: Cell) -> &mut T {
        self.ensure(c);
        let i = self.index(c).expect("cell covered after ensure");
        &mut self.data[i]
    }

    pub fn set(&mut self, c: Cell, value: T) {
        *self.get_mut(c) = value;
    }

    /// Grow the backing store so `c` is inside, padding by a margin to
    /// amortize reallocation.
    fn ensure(&mut self, c: Cell) {
        if self.index(c).is_some() {
            return;
        }
        const MARGIN: i32 = 16;
        if self.is_empty() {
            self.origin = (c.0 - MARGIN, c.1 - MARGIN);
            self.width = (2 * MARGIN + 1) as usize;
            self.height = (2 * MARGIN + 1) as usize;
            self.data = vec![self.default.clone(); self.width * self.height];
            return;
        }
        let (min, max) = self.bounds().expect("non-empty grid");
        let new_min = (min.0.min(c.0 - MARGIN), min.1.min(c.1 - MARGIN));
        let new_max = (max.0.max(c.0 + MARGIN), max.1.max(c.1 + MARGIN));
        let new_w = (new_max.0 - new_min.0 + 1) as usize;
        let new_h = (new_max.1 - new_min.1 + 1) as usize;
        let mut new_data = vec![self.default.clone(); new_w * new_h];
        for y in 0..self.height {
            let src = y * self.width;
            let dst_y = (self.origin.1 - new_min.1) as usize + y;
            let dst = dst_y * new_w + (self.origin.0 - new_min.0) as usize;
            new_data[dst..dst + self.width].clone_from_slice(&self.data[src..src + self.width]);
        }
        self.origin = new_min;
        self.width = new_w;
        self.height = new_h;
        self.data = new_data;
    }

    /// Iterate over all allocated cells.
    pub fn iter(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        let w = self.width;
        let origin = self.origin;
        self.data.iter().enumerate().map(move |(i, v)| {
            let x = origin.0 + (i % w) as i32;
            let y = origin.1 + (i / w) as i32;
            ((x, y), v)
        })
    }
}

/// Visit cells pierced by a ray (Amanatides–Woo traversal).
///
/// The callback receives each cell together with the entry and exit
/// distances of the ray inside it; returning `false` stops the march.
/// The starting cell is visited with entry distance 0.
pub fn ray_march(
    origin: [f64; 2],
    angle: f64,
    max_dist: f64,
    resolution: f64,
    mut visit: impl FnMut(Cell, f64, f64) -> bool,
) {
    let dir = [angle.cos(), angle.sin()];
    let mut cell = cell_of(origin, resolution);
    let step_x: i32 = if dir[0] > 0.0 { 1 } else { -1 };
    let step_y: i32 = if dir[1] > 0.0 { 1 } else { -1 };

    let next_border = |cell_idx: i32, step: i32| -> f64 {
        let b = if step > 0 { cell_idx + 1 } else { cell_idx };
        b as f64 * resolution
    };
    let mut t_max_x = if dir[0] != 0.0 {
        (next_border(cell.0, step_x) - origin[0]) / dir[0]
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dir[1] != 0.0 {
        (next_border(cell.1, step_y) - origin[1]) / dir[1]
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dir[0] != 0.0 {
        resolution / dir[0].abs()
    } else {
        f64::INFINITY
    };
    let t_delta_y = if dir[1] != 0.0 {
        resolution / dir[1].abs()
    } else {
        f64::INFINITY
    };

    let mut t_enter = 0.0;
    loop {
        let t_exit = t_max_x.min(t_max_y).min(max_dist);
        if !visit(cell, t_enter, t_exit) {
            return;
        }
        if t_exit >= max_dist {
            return;
        }
        if t_max_x < t_max_y {
            cell.0 += step_x;
            t_enter = t_max_x;
            t_max_x += t_delta_x;
        } else {
            cell.1 += step_y;
            t_enter = t_max_y;
            t_max_y += t_delta_y;
        }
    }
}

/// Sentinel for "no seed reachable"; larger than any real squared distance.
pub const DIST_SQ_INF: i64 = i64::MAX / 4;

fn column_pass(width: usize, height: usize, seed: &[bool]) -> Vec<i64> {
    let mut col_dist = vec![DIST_SQ_INF; width * height];
    for x in 0..width {
        let mut last: Option<i64> = None;
        for y in 0..height {
            if seed[y * width + x] {
                last = Some(y as i64);
            }
            if let Some(ys) = last {
                col_dist[y * width + x] = y as i64 - ys;
            }
        }
        last = None;
        for y in (0..height).rev() {
            if seed[y * width + x] {
                last = Some(y as i64);
            }
            if let Some(ys) = last {
                let d = ys - y as i64;
                let slot = &mut col_dist[y * width + x];
                *slot = (*slot).min(d);
            }
        }
    }
    col_dist
}

/// 1D squared-distance lower envelope over parabolas rooted at columns with
/// finite vertical distance `g`. Output is exact (integer arithmetic for the
/// final evaluation; floats only steer envelope boundaries, where ties are
/// value-equal).
fn envelope_row(g: &[i64], out: &mut [i64]) {
    let n = g.len();
    if n == 0 {
        return;
    }
    let f = |i: usize| -> f64 {
        if g[i] >= DIST_SQ_INF {
            f64::INFINITY
        } else {
            (g[i] * g[i]) as f64
        }
    };
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k: isize = -1;
    for q in 0..n {
        if !f(q).is_finite() {
            continue;
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        let intersect = |q: usize, p: usize| -> f64 {
            ((f(q) + (q * q) as f64) - (f(p) + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
        };
        let mut s = intersect(q, v[k as usize]);
        while k > 0 && s <= z[k as usize] {
            k -= 1;
            s = intersect(q, v[k as usize]);
        }
        k += 1;
        v[k as usize] = q;
        z[k as usize] = s;
        z[k as usize + 1] = f64::INFINITY;
    }
    if k < 0 {
        for o in out.iter_mut() {
            *o = DIST_SQ_INF;
        }
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let d = q as i64 - p as i64;
        out[q] = d * d + g[p] * g[p];
    }
}

/// Exact squared Euclidean distance transform over a `width × height` grid,
/// in units of cells². `seed[i]` marks distance-zero cells; cells with no
/// seed anywhere get [`DIST_SQ_INF`]. Row phase runs in parallel when the
/// `parallel` feature is on.
pub fn distance_sq_transform(width: usize, height: usize, seed: &[bool]) -> Vec<i64> {
    assert_eq!(seed.len(), width * height);
    let col_dist = column_pass(width, height, seed);
    let mut out = vec![DIST_SQ_INF; width * height];
    par::for_each_chunk_mut(&mut out, width.max(1), |y, row| {
        envelope_row(&col_dist[y * width..(y + 1) * width], row);
    });
    out
}

/// Sequential reference implementation of [`distance_sq_transform`].
pub fn distance_sq_transform_sequential(width: usize, height: usize, seed: &[bool]) -> Vec<i64> {
    assert_eq!(seed.len(), width * height);
    let col_dist = column_pass(width, height, seed);
    let mut out = vec![DIST_SQ_INF; width * height];
    for y in 0..height {
        envelope_row(
            &col_dist[y * width..(y + 1) * width],
            &mut out[y * width..(y + 1) * width],
        );
    }
    out
}

/// 8-connected flood fill from `start` over cells accepted by `node_ok`,
/// with an additional per-edge predicate. Returns visited cells in BFS
/// order together with each cell's BFS parent.
pub fn flood8(
    start: Cell,
    node_ok: impl Fn(Cell) -> bool,
    edge_ok: impl Fn(Cell, Cell) -> bool,
) -> Vec<(Cell, Option<Cell>)> {
    use std::collections::{HashSet, VecDeque};
    let mut seen: HashSet<Cell> = HashSet::new();
    let mut order = Vec::new();
    if !node_ok(start) {
        return order;
    }
    let mut queue = VecDeque::new();
    queue.push_back((start, None));
    seen.insert(start);
    while let Some((c, parent)) = queue.pop_front() {
        order.push((c, parent));
        for (dx, dy) in NEIGHBORS_8 {
            let n = (c.0 + dx, c.1 + dy);
            if !seen.contains(&n) && node_ok(n) && edge_ok(c, n) {
                seen.insert(n);
                queue.push_back((n, Some(c)));
            }
        }
    }
    order
}

/// Convex hull of a point set (monotone chain), counter-clockwise.
pub fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| {
        a[0].partial_cmp(&b[0])
            .unwrap()
            .then(a[1].partial_cmp(&b[1]).unwrap())
    });
    pts.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| -> f64 {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * n);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn growable_grid_roundtrip() {
        let mut g = GrowableGrid::new(0u8);
        g.set((-5, 7), 3);
        g.set((40, -12), 9);
        assert_eq!(*g.get((-5, 7)), 3);
        assert_eq!(*g.get((40, -12)), 9);
        assert_eq!(*g.get((1000, 1000)), 0);
    }

    #[test]
    fn ray_march_axis_distances() {
        // From the center of cell (0,0) heading +x, cell (3,0) is entered
        // after exactly 2.5 cells of travel at resolution 1.
        let mut entries = Vec::new();
        ray_march([0.5, 0.5], 0.0, 10.0, 1.0, |c, t_enter, _| {
            entries.push((c, t_enter));
            true
        });
        assert_eq!(entries[0].0, (0, 0));
        assert_eq!(entries[3].0, (3, 0));
        assert_abs_diff_eq!(entries[3].1, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn ray_march_respects_max_dist() {
        let mut count = 0;
        ray_march([0.5, 0.5], 0.0, 2.0, 1.0, |_, _, _| {
            count += 1;
            true
        });
        assert_eq!(count, 3); // cells 0,1,2 (cell 2 entered at t=1.5)
    }

    #[test]
    fn edt_matches_bruteforce() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
            let seed: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.07)).collect();
            let fast = distance_sq_transform(w, h, &seed);
            let slow = distance_sq_transform_sequential(w, h, &seed);
            assert_eq!(fast, slow);
            for y in 0..h {
                for x in 0..w {
                    let mut best = DIST_SQ_INF;
                    for sy in 0..h {
                        for sx in 0..w {
                            if seed[sy * w + sx] {
                                let d = (x as i64 - sx as i64).pow(2)
                                    + (y as i64 - sy as i64).pow(2);
                                best = best.min(d);
                            }
                        }
                    }
                    assert_eq!(fast[y * w + x], best, "mismatch at ({x},{y}) w={w} h={h}");
                }
            }
        }
    }

    #[test]
    fn flood8_blocked_by_wall_column() {
        let node_ok = |c: Cell| c.0 >= 0 && c.0 < 7 && c.1 >= 0 && c.1 < 7 && c.0 != 3;
        let cells = flood8((0, 0), node_ok, |_, _| true);
        assert_eq!(cells.len(), 21); // 3 columns x 7 rows
        assert!(cells.iter().all(|((x, _), _)| *x < 3));
    }

    #[test]
    fn hull_of_square() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let hull = convex_hull(pts);
        assert_eq!(hull.len(), 4);
    }
}
