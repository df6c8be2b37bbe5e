//! Synthetic 2.5D indoor worlds and range-scan simulation.
//!
//! Worlds are height-field grids: walls are tall obstacle cells, railings are
//! low obstacle cells over a floor discontinuity, drops are sunken floor
//! regions. Scans ray-march at a fixed sensor plane above the robot's floor;
//! each beam also reports how far continuous floor support extends, standing
//! in for the downward-looking channels of a 3D sensor.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Cell};
use crate::se2::Se2;

/// Height of the scan plane above the robot's floor cell.
pub const SENSOR_HEIGHT: f64 = 0.5;
/// Pose interpolation step length along trajectories, meters.
pub const STEP_LENGTH: f64 = 0.1;
/// Seconds between interpolated steps.
pub const STEP_DT: f64 = 0.1;

const WALL_HEIGHT: f64 = 2.5;
const RAILING_HEIGHT: f64 = 1.0;
const DROP_DEPTH: f64 = -3.0;
const WALL_THICKNESS: f64 = 0.2;

/// Ground-truth room annotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtRoom {
    pub polygon: Vec<[f64; 2]>,
    #[serde(rename = "type")]
    pub kind: String,
}

/// 2.5D height-field world with ground-truth annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub resolution: f64,
    /// Grid extent in cells (width, height).
    pub extent: (usize, usize),
    /// Row-major floor/obstacle top heights, index `iy * extent.0 + ix`.
    pub height: Vec<f64>,
    /// Cells the robot cannot occupy (walls, railings, furniture).
    pub obstacles: BTreeSet<(u32, u32)>,
    pub gt_rooms: Vec<GtRoom>,
    /// Wall centerline segments, for reference and debugging.
    pub walls_gt: Vec<[[f64; 2]; 2]>,
}

impl World {
    /// Flat, empty world of the given size in meters.
    pub fn open_floor(width_m: f64, height_m: f64, resolution: f64) -> World {
        let w = (width_m / resolution).round() as usize;
        let h = (height_m / resolution).round() as usize;
        World {
            resolution,
            extent: (w, h),
            height: vec![0.0; w * h],
            obstacles: BTreeSet::new(),
            gt_rooms: Vec::new(),
            walls_gt: Vec::new(),
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as usize) < self.extent.0 && (c.1 as usize) < self.extent.1
    }

    /// Floor height at a cell; outside the extent the world continues as an
    /// open flat floor.
    pub fn height_at(&self, c: Cell) -> f64 {
        if self.in_bounds(c) {
            self.height[c.1 as usize * self.extent.0 + c.0 as usize]
        } else {
            0.0
        }
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.obstacles.contains(&(c.0 as u32, c.1 as u32))
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Cell {
        grid::cell_of(p, self.resolution)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<World> {
        let file = std::fs::File::open(path)?;
        let world: World = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Schema(format!("world file {}: {e}", path.display())))?;
        if world.resolution <= 0.0 {
            return Err(Error::Schema("world resolution must be > 0".into()));
        }
        if world.height.len() != world.extent.0 * world.extent.1 {
            return Err(Error::Schema(format!(
                "height array has {} entries, extent says {}",
                world.height.len(),
                world.extent.0 * world.extent.1
            )));
        }
        Ok(world)
    }
}

/// Range sensor parameters. `ground_break_tol` and `drop_absorb` govern the
/// 2.5D floor-support channel: support ends at the first cell whose floor
/// deviates more than `ground_break_tol` from the robot's floor, and beams
/// crossing a floor more than `drop_absorb` below the robot return nothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub max_range: f64,
    pub n_beams: usize,
    pub range_noise_sigma: f64,
    pub angular_origin: f64,
    pub ground_break_tol: f64,
    pub drop_absorb: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            max_range: 10.0,
            n_beams: 360,
            range_noise_sigma: 0.0,
            angular_origin: 0.0,
            ground_break_tol: 0.15,
            drop_absorb: 1.0,
        }
    }
}

impl SensorModel {
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angular_origin + i as f64 * std::f64::consts::TAU / self.n_beams as f64
    }
}

/// Odometry error model: random walk plus systematic drift, all per meter
/// traveled.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub odom_trans_sigma: f64,
    pub odom_rot_sigma: f64,
    /// Systematic body-frame drift (dx, dy, dtheta) per meter.
    pub bias_per_meter: [f64; 3],
}

/// One simulated sweep: per-beam hit ranges and floor-support distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub ranges: Vec<f64>,
    pub ground: Vec<f64>,
}

impl Scan {
    /// Body-frame 2D points of beams that actually hit something.
    pub fn hit_points(&self, sensor: &SensorModel) -> Vec<[f64; 2]> {
        let cutoff = sensor.max_range * 0.999;
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| **r < cutoff)
            .map(|(i, r)| {
                let a = sensor.beam_angle(i);
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }
}

/// Cast one sweep from `pose`. Beams stop at the first cell rising above the
/// sensor plane; beams crossing a deep drop are absorbed and return
/// `max_range`.
pub fn simulate_scan(
    world: &World,
    pose: Se2,
    sensor: &SensorModel,
    rng: &mut impl Rng,
) -> Result<Scan> {
    let cell = world.cell_of([pose.x, pose.y]);
    if !world.in_bounds(cell) {
        return Err(Error::PoseOffGrid { x: pose.x, y: pose.y });
    }
    if world.is_obstacle(cell) {
        return Err(Error::PoseOnObstacle { x: pose.x, y: pose.y });
    }
    let robot_floor = world.height_at(cell);
    let sensor_z = robot_floor + SENSOR_HEIGHT;
    let noise = if sensor.range_noise_sigma > 0.0 {
        Some(Normal::new(0.0, sensor.range_noise_sigma).expect("valid sigma"))
    } else {
        None
    };

    let mut ranges = Vec::with_capacity(sensor.n_beams);
    let mut ground = Vec::with_capacity(sensor.n_beams);
    for i in 0..sensor.n_beams {
        let angle = pose.theta + sensor.beam_angle(i);
        let mut hit: Option<f64> = None;
        let mut absorbed = false;
        let mut support_break: Option<f64> = None;
        grid::ray_march(
            [pose.x, pose.y],
            angle,
            sensor.max_range,
            world.resolution,
            |c, t_enter, t_exit| {
                // Zero-extent visits are corner grazes, not intersections.
                if t_exit - t_enter < 1e-12 {
                    return true;
                }
                let h = world.height_at(c);
                if h > sensor_z + 1e-9 {
                    hit = Some(t_enter);
                    if support_break.is_none() {
                        support_break = Some(t_enter);
                    }
                    return false;
                }
                if support_break.is_none() && (h - robot_floor).abs() > sensor.ground_break_tol {
                    support_break = Some(t_enter);
                }
                if h < robot_floor - sensor.drop_absorb {
                    absorbed = true;
                    return false;
                }
                true
            },
        );
        let true_range = if absorbed {
            sensor.max_range
        } else {
            hit.unwrap_or(sensor.max_range)
        };
        let reported = match (&noise, hit.is_some() && !absorbed) {
            (Some(n), true) => (true_range + n.sample(rng)).clamp(0.0, sensor.max_range),
            _ => true_range,
        };
        ranges.push(reported);
        ground.push(support_break.unwrap_or(true_range).min(true_range));
    }
    Ok(Scan { ranges, ground })
}

/// One entry of a simulated run.
#[derive(Debug, Clone)]
pub struct RunStep {
    pub t: f64,
    pub true_pose: Se2,
    pub odom_pose: Se2,
    pub scan: Scan,
}

/// Full simulated run: true trajectory, drifting odometry, scans.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub steps: Vec<RunStep>,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    t: f64,
    true_pose: [f64; 3],
    odom_pose: [f64; 3],
    ranges: Vec<f64>,
    ground: Vec<f64>,
}

impl RunLog {
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        for s in &self.steps {
            let rec = StepRecord {
                t: s.t,
                true_pose: s.true_pose.to_array(),
                odom_pose: s.odom_pose.to_array(),
                ranges: s.scan.ranges.clone(),
                ground: s.scan.ground.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<RunLog> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut steps = Vec::new();
        let mut n_beams: Option<usize> = None;
        let mut last_t = f64::NEG_INFINITY;
        for (ln, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("run log line {}: {e}", ln + 1)))?;
            if rec.t <= last_t {
                return Err(Error::Schema(format!(
                    "run log line {}: timestamps must be strictly increasing",
                    ln + 1
                )));
            }
            last_t = rec.t;
            match n_beams {
                None => n_beams = Some(rec.ranges.len()),
                Some(n) if n != rec.ranges.len() => {
                    return Err(Error::Schema(format!(
                        "run log line {}: scan length {} differs from {}",
                        ln + 1,
                        rec.ranges.len(),
                        n
                    )))
                }
                _ => {}
            }
            if rec.ground.len() != rec.ranges.len() {
                return Err(Error::Schema(format!(
                    "run log line {}: ground channel length mismatch",
                    ln + 1
                )));
            }
            steps.push(RunStep {
                t: rec.t,
                true_pose: Se2::from_array(rec.true_pose),
                odom_pose: Se2::from_array(rec.odom_pose),
                scan: Scan {
                    ranges: rec.ranges,
                    ground: rec.ground,
                },
            });
        }
        if steps.is_empty() {
            return Err(Error::Schema("run log has no steps".into()));
        }
        Ok(RunLog { steps })
    }
}

fn validate_waypoint_segment(world: &World, a: [f64; 2], b: [f64; 2]) -> Result<()> {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let n = (len / (world.resolution * 0.5)).ceil() as usize;
    let floor = world.height_at(world.cell_of(a));
    for i in 0..=n.max(1) {
        let s = i as f64 / n.max(1) as f64;
        let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        let c = world.cell_of(p);
        if world.is_obstacle(c) {
            return Err(Error::Pipeline(format!(
                "trajectory segment ({:.1},{:.1})-({:.1},{:.1}) crosses an obstacle at ({:.1},{:.1})",
                a[0], a[1], b[0], b[1], p[0], p[1]
            )));
        }
        if (world.height_at(c) - floor).abs() > 0.2 {
            return Err(Error::Pipeline(format!(
                "trajectory segment ({:.1},{:.1})-({:.1},{:.1}) crosses a floor discontinuity",
                a[0], a[1], b[0], b[1]
            )));
        }
    }
    Ok(())
}

/// Simulate a run along straight waypoint segments: poses interpolated every
/// [`STEP_LENGTH`], scans at every step, odometry integrating noise and bias
/// so drift grows with distance. Deterministic for a fixed seed.
pub fn simulate_run(
    world: &World,
    waypoints: &[[f64; 2]],
    sensor: &SensorModel,
    noise: &NoiseModel,
    seed: u64,
) -> Result<RunLog> {
    if waypoints.len() < 2 {
        return Err(Error::Schema("trajectory needs at least two waypoints".into()));
    }
    for wp in waypoints {
        let c = world.cell_of(*wp);
        if !world.in_bounds(c) {
            return Err(Error::PoseOffGrid { x: wp[0], y: wp[1] });
        }
        if world.is_obstacle(c) {
            return Err(Error::PoseOnObstacle { x: wp[0], y: wp[1] });
        }
    }
    for pair in waypoints.windows(2) {
        validate_waypoint_segment(world, pair[0], pair[1])?;
    }

    // Interpolate true poses; heading follows the direction of travel.
    let mut true_poses = Vec::new();
    let first_heading = {
        let d = [
            waypoints[1][0] - waypoints[0][0],
            waypoints[1][1] - waypoints[0][1],
        ];
        d[1].atan2(d[0])
    };
    true_poses.push(Se2::new(waypoints[0][0], waypoints[0][1], first_heading));
    for pair in waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if len < 1e-9 {
            continue;
        }
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        let mut travelled = STEP_LENGTH;
        while travelled < len - 1e-9 {
            let s = travelled / len;
            true_poses.push(Se2::new(
                a[0] + s * (b[0] - a[0]),
                a[1] + s * (b[1] - a[1]),
                heading,
            ));
            travelled += STEP_LENGTH;
        }
        true_poses.push(Se2::new(b[0], b[1], heading));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trans_noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut steps: Vec<RunStep> = Vec::with_capacity(true_poses.len());
    let mut odom = true_poses[0];
    for (k, pose) in true_poses.iter().enumerate() {
        if k > 0 {
            let rel = true_poses[k - 1].between(*pose);
            let d = (rel.x * rel.x + rel.y * rel.y).sqrt();
            let sd = d.sqrt();
            let nx = noise.odom_trans_sigma * sd * trans_noise.sample(&mut rng);
            let ny = noise.odom_trans_sigma * sd * trans_noise.sample(&mut rng);
            let nth = noise.odom_rot_sigma * sd * trans_noise.sample(&mut rng);
            let noisy = Se2::new(
                rel.x + noise.bias_per_meter[0] * d + nx,
                rel.y + noise.bias_per_meter[1] * d + ny,
                rel.theta + noise.bias_per_meter[2] * d + nth,
            );
            odom = odom.compose(noisy);
        }
        let scan = simulate_scan(world, *pose, sensor, &mut rng)?;
        steps.push(RunStep {
            t: k as f64 * STEP_DT,
            true_pose: *pose,
            odom_pose: odom,
            scan,
        });
    }
    Ok(RunLog { steps })
}

fn default_resolution() -> f64 {
    0.1
}

/// World layout request. Each archetype builds a closed environment with
/// ground-truth rooms; `generate` is deterministic for a fixed (spec, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "archetype", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSpec {
    SingleRoom {
        #[serde(default = "default_resolution")]
        resolution: f64,
        #[serde(default = "WorldSpec::default_room_side")]
        width: f64,
        #[serde(default = "WorldSpec::default_room_side")]
        height: f64,
        /// Optional explicit extent; rejected if the room cannot fit.
        #[serde(default)]
        extent_m: Option<[f64; 2]>,
    },
    /// Straight corridor with a small turnaround alcove at the far end.
    Corridor {
        #[serde(default = "default_resolution")]
        resolution: f64,
        #[serde(default = "WorldSpec::default_corridor_length")]
        length: f64,
        #[serde(default = "WorldSpec::default_corridor_width")]
        width: f64,
    },
    /// Square ring corridor with narrow chokepoints separating the legs.
    CorridorLoop {
        #[serde(default = "default_resolution")]
        resolution: f64,
        #[serde(default = "WorldSpec::default_loop_side")]
        side: f64,
    },
    /// Row of rooms attached to a corridor by doorways.
    MultiRoom {
        #[serde(default = "default_resolution")]
        resolution: f64,
        #[serde(default = "WorldSpec::default_n_rooms")]
        n_rooms: usize,
    },
    /// Walkable platform separated by a railing from a sunken atrium.
    Mezzanine {
        #[serde(default = "default_resolution")]
        resolution: f64,
    },
    /// One large room with wall-mounted fixtures.
    ComplexRoom {
        #[serde(default = "default_resolution")]
        resolution: f64,
        #[serde(default = "WorldSpec::default_n_fixtures")]
        n_fixtures: usize,
    },
}

impl WorldSpec {
    fn default_room_side() -> f64 {
        6.0
    }
    fn default_corridor_length() -> f64 {
        30.0
    }
    fn default_corridor_width() -> f64 {
        3.0
    }
    fn default_loop_side() -> f64 {
        12.0
    }
    fn default_n_rooms() -> usize {
        3
    }
    fn default_n_fixtures() -> usize {
        6
    }

    pub fn resolution(&self) -> f64 {
        match self {
            WorldSpec::SingleRoom { resolution, .. }
            | WorldSpec::Corridor { resolution, .. }
            | WorldSpec::CorridorLoop { resolution, .. }
            | WorldSpec::MultiRoom { resolution, .. }
            | WorldSpec::Mezzanine { resolution }
            | WorldSpec::ComplexRoom { resolution, .. } => *resolution,
        }
    }

    pub fn load_json(path: &Path) -> Result<WorldSpec> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("world spec {}: {e}", path.display())))
    }
}

struct Builder {
    resolution: f64,
    w: usize,
    h: usize,
    height: Vec<f64>,
    obstacles: BTreeSet<(u32, u32)>,
    walls_gt: Vec<[[f64; 2]; 2]>,
    gt_rooms: Vec<GtRoom>,
}

impl Builder {
    fn new(width_m: f64, height_m: f64, resolution: f64) -> Builder {
        let w = (width_m / resolution).round() as usize;
        let h = (height_m / resolution).round() as usize;
        Builder {
            resolution,
            w,
            h,
            height: vec![0.0; w * h],
            obstacles: BTreeSet::new(),
            walls_gt: Vec::new(),
            gt_rooms: Vec::new(),
        }
    }

    fn stamp(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, height: f64, obstacle: bool) {
        let res = self.resolution;
        let ix0 = (x0 / res).round().max(0.0) as usize;
        let iy0 = (y0 / res).round().max(0.0) as usize;
        let ix1 = ((x1 / res).round() as usize).min(self.w);
        let iy1 = ((y1 / res).round() as usize).min(self.h);
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                self.height[iy * self.w + ix] = height;
                if obstacle {
                    self.obstacles.insert((ix as u32, iy as u32));
                }
            }
        }
    }

    /// Wall slab covering [x0,x1) × [y0,y1); records the centerline segment.
    fn wall(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        self.stamp(x0, y0, x1, y1, WALL_HEIGHT, true);
        let seg = if (x1 - x0) >= (y1 - y0) {
            [[x0, (y0 + y1) / 2.0], [x1, (y0 + y1) / 2.0]]
        } else {
            [[(x0 + x1) / 2.0, y0], [(x0 + x1) / 2.0, y1]]
        };
        self.walls_gt.push(seg);
    }

    fn room(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, kind: &str) {
        self.gt_rooms.push(GtRoom {
            polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            kind: kind.to_string(),
        });
    }

    /// Rectangular room border with optional door gaps. Gaps are given as
    /// (side, center, width) with side ∈ {n, s, e, w}.
    fn border(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, t: f64, gaps: &[(char, f64, f64)]) {
        let gap_on = |side: char| -> Vec<(f64, f64)> {
            gaps.iter()
                .filter(|(s, _, _)| *s == side)
                .map(|(_, c, w)| (c - w / 2.0, c + w / 2.0))
                .collect()
        };
        let mut run = |fixed0: f64, fixed1: f64, lo: f64, hi: f64, horizontal: bool, side: char| {
            let mut cut = gap_on(side);
            cut.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut start = lo;
            for (g0, g1) in cut.into_iter().chain(std::iter::once((hi, hi))) {
                if g0 > start + 1e-9 {
                    if horizontal {
                        self.wall(start, fixed0, g0, fixed1);
                    } else {
                        self.wall(fixed0, start, fixed1, g0);
                    }
                }
                start = start.max(g1);
            }
        };
        run(y0, y0 + t, x0, x1, true, 's');
        run(y1 - t, y1, x0, x1, true, 'n');
        run(x0, x0 + t, y0 + t, y1 - t, false, 'w');
        run(x1 - t, x1, y0 + t, y1 - t, false, 'e');
    }

    fn build(self) -> World {
        World {
            resolution: self.resolution,
            extent: (self.w, self.h),
            height: self.height,
            obstacles: self.obstacles,
            gt_rooms: self.gt_rooms,
            walls_gt: self.walls_gt,
        }
    }
}

/// Generate a world from a layout spec; deterministic per (spec, seed).
pub fn generate_world(spec: &WorldSpec, seed: u64) -> Result<World> {
    if spec.resolution() <= 0.0 {
        return Err(Error::Schema("resolution must be > 0".into()));
    }
    let res = spec.resolution();
    let t = WALL_THICKNESS;
    match spec {
        WorldSpec::SingleRoom {
            width,
            height,
            extent_m,
            ..
        } => {
            if *width <= 2.0 * res || *height <= 2.0 * res {
                return Err(Error::Schema("room dimensions too small".into()));
            }
            let (wm, hm) = (width + 2.0 * t, height + 2.0 * t);
            if let Some(ext) = extent_m {
                if ext[0] < wm || ext[1] < hm {
                    return Err(Error::Schema(format!(
                        "room {width}x{height} m cannot fit extent {}x{} m",
                        ext[0], ext[1]
                    )));
                }
            }
            let mut b = Builder::new(wm, hm, res);
            b.border(0.0, 0.0, wm, hm, t, &[]);
            b.room(t, t, t + width, t + height, "four_wall");
            Ok(b.build())
        }
        WorldSpec::Corridor { length, width, .. } => {
            if *length < 2.0 || *width < 1.5 {
                return Err(Error::Schema("corridor must be at least 2 m x 1.5 m".into()));
            }
            // Corridor runs along y; alcove past the far end provides a
            // room-completion event at the turnaround.
            let wm = width + 2.0 * t;
            let alcove_w = 0.8;
            let alcove_d = 0.8;
            let door_w = 0.6;
            let hm = length + 2.0 * t + alcove_d + t;
            let cx = wm / 2.0;
            let mut b = Builder::new(wm.max(alcove_w + 2.0 * t), hm, res);
            let end_y = t + length;
            b.border(0.0, 0.0, wm, end_y + t, t, &[('n', cx, door_w)]);
            // Alcove box behind the end wall.
            let ax0 = cx - alcove_w / 2.0 - t;
            let ax1 = cx + alcove_w / 2.0 + t;
            b.border(ax0, end_y, ax1, end_y + t + alcove_d + t, t, &[('s', cx, door_w)]);
            b.room(t, t, t + width, end_y, "corridor_y");
            Ok(b.build())
        }
        WorldSpec::CorridorLoop { side, .. } => {
            if *side < 8.0 {
                return Err(Error::Schema("loop side must be >= 8 m".into()));
            }
            let s = *side;
            let ring = 2.9; // corridor width
            let inner0 = t + ring;
            let inner1 = s - t - ring;
            if inner1 - inner0 < 2.0 {
                return Err(Error::Schema("loop too small for inner block".into()));
            }
            let mut b = Builder::new(s, s, res);
            b.border(0.0, 0.0, s, s, t, &[]);
            // Solid inner block.
            b.wall(inner0, inner0, inner1, inner1);
            // Chokepoints where legs meet the corner pockets: stubs leave a
            // 0.9 m gap centered in the corridor.
            let gap = 0.9;
            let stub = (ring - gap) / 2.0;
            for &c in &[inner0, inner1] {
                // Vertical stubs on south and north legs.
                for &(y0, y1) in &[(t, t + stub), (inner0 - stub, inner0)] {
                    b.wall(c - t / 2.0, y0, c + t / 2.0, y1);
                    b.wall(c - t / 2.0, s - y1, c + t / 2.0, s - y0);
                }
                // Horizontal stubs on west and east legs.
                for &(x0, x1) in &[(t, t + stub), (inner0 - stub, inner0)] {
                    b.wall(x0, c - t / 2.0, x1, c + t / 2.0);
                    b.wall(s - x1, c - t / 2.0, s - x0, c + t / 2.0);
                }
            }
            // Ground truth: four legs and four corner pockets.
            b.room(inner0, t, inner1, inner0, "corridor_x"); // south
            b.room(inner0, inner1, inner1, s - t, "corridor_x"); // north
            b.room(t, inner0, inner0, inner1, "corridor_y"); // west
            b.room(inner1, inner0, s - t, inner1, "corridor_y"); // east
            b.room(t, t, inner0, inner0, "four_wall");
            b.room(inner1, t, s - t, inner0, "four_wall");
            b.room(t, inner1, inner0, s - t, "four_wall");
            b.room(inner1, inner1, s - t, s - t, "four_wall");
            Ok(b.build())
        }
        WorldSpec::MultiRoom { n_rooms, .. } => {
            if *n_rooms < 1 {
                return Err(Error::Schema("multi_room needs at least one room".into()));
            }
            let room_w = 4.1;
            let room_h = 4.2;
            let corr_h = 2.0;
            let wm = t + *n_rooms as f64 * room_w + (*n_rooms as f64 - 1.0) * t + t;
            let hm = t + corr_h + t + room_h + t;
            let mut b = Builder::new(wm, hm, res);
            let corr_top = t + corr_h;
            // Doors from corridor into each room.
            let mut doors = Vec::new();
            for k in 0..*n_rooms {
                let x0 = t + k as f64 * (room_w + t);
                doors.push((x0 + x0 + room_w) / 2.0);
            }
            b.border(0.0, 0.0, wm, hm, t, &[]);
            // Wall between corridor and rooms, with door gaps.
            let gaps: Vec<(char, f64, f64)> = doors.iter().map(|&c| ('s', c, 0.8)).collect();
            {
                // Reuse border's gap logic by emitting a single run manually.
                let mut cut: Vec<(f64, f64)> =
                    gaps.iter().map(|(_, c, w)| (c - w / 2.0, c + w / 2.0)).collect();
                cut.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut start = t;
                for (g0, g1) in cut.into_iter().chain(std::iter::once((wm - t, wm - t))) {
                    if g0 > start + 1e-9 {
                        b.wall(start, corr_top, g0, corr_top + t);
                    }
                    start = start.max(g1);
                }
            }
            // Dividers between rooms.
            for k in 1..*n_rooms {
                let x = t + k as f64 * room_w + (k as f64 - 1.0) * t;
                b.wall(x, corr_top + t, x + t, hm - t);
            }
            b.room(t, t, wm - t, corr_top, "corridor_x");
            for k in 0..*n_rooms {
                let x0 = t + k as f64 * (room_w + t);
                b.room(x0, corr_top + t, x0 + room_w, hm - t, "four_wall");
            }
            Ok(b.build())
        }
        WorldSpec::Mezzanine { .. } => {
            let (wm, hm) = (12.0, 8.0);
            let rail_x = 6.0;
            let mut b = Builder::new(wm, hm, res);
            // Sunken atrium east of the railing.
            b.stamp(rail_x + res, t, wm - t, hm - t, DROP_DEPTH, false);
            b.border(0.0, 0.0, wm, hm, t, &[]);
            // One-cell railing row; low enough for a person to see over but
            // tall enough to block the scan plane, impassable for the robot.
            b.stamp(rail_x, t, rail_x + res, hm - t, RAILING_HEIGHT, true);
            b.walls_gt.push([[rail_x + res / 2.0, t], [rail_x + res / 2.0, hm - t]]);
            b.room(t, t, rail_x, hm - t, "four_wall");
            b.room(rail_x + res, t, wm - t, hm - t, "drop");
            Ok(b.build())
        }
        WorldSpec::ComplexRoom { n_fixtures, .. } => {
            let (wm, hm) = (14.4, 10.4);
            let mut b = Builder::new(wm, hm, res);
            b.border(0.0, 0.0, wm, hm, t, &[]);
            b.room(t, t, wm - t, hm - t, "four_wall");
            // Wall-mounted fixtures, kept within 1.2 m of the walls so the
            // default trajectory stays clear.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..*n_fixtures {
                let along_x = rng.gen_bool(0.5);
                let north = rng.gen_bool(0.5);
                let (fw, fd) = (1.0, 0.6);
                if along_x {
                    let x0 = rng.gen_range(1.0..wm - 1.0 - fw);
                    let y0 = if north { hm - t - fd } else { t };
                    b.stamp(x0, y0, x0 + fw, y0 + fd, WALL_HEIGHT, true);
                } else {
                    let y0 = rng.gen_range(1.0..hm - 1.0 - fw);
                    let x0 = if north { wm - t - fd } else { t };
                    b.stamp(x0, y0, x0 + fd, y0 + fw, WALL_HEIGHT, true);
                }
            }
            Ok(b.build())
        }
    }
}

/// Default loop trajectory for an archetype, used by tests and the CLI's
/// `--trajectory-out` convenience flag.
pub fn default_trajectory(spec: &WorldSpec) -> Vec<[f64; 2]> {
    let t = WALL_THICKNESS;
    match spec {
        WorldSpec::SingleRoom { width, height, .. } => {
            let m = 1.3;
            let (x1, y1) = (t + width - m, t + height - m);
            vec![[m, m], [x1, m], [x1, y1], [m, y1], [m, m]]
        }
        WorldSpec::Corridor { length, width, .. } => {
            let cx = (width + 2.0 * t) / 2.0;
            let end_y = t + length;
            vec![
                [cx, 1.0],
                [cx, end_y - 0.5],
                [cx, end_y + t + 0.4],
                [cx, end_y - 0.5],
                [cx, 1.0],
            ]
        }
        WorldSpec::CorridorLoop { side, .. } => {
            let c = t + 2.9 / 2.0; // ring centerline offset
            let f = side - c;
            vec![[c, c], [f, c], [f, f], [c, f], [c, c], [f, c], [f, f]]
        }
        WorldSpec::MultiRoom { n_rooms, .. } => {
            let corr_y = t + 1.0;
            let room_y = t + 2.0 + t + 2.1;
            let mut wps = vec![[1.2, corr_y]];
            for k in 0..*n_rooms {
                let door_x = t + k as f64 * (4.1 + t) + 4.1 / 2.0;
                wps.push([door_x, corr_y]);
                wps.push([door_x, room_y]);
                wps.push([door_x - 1.2, room_y]);
                wps.push([door_x + 1.2, room_y]);
                wps.push([door_x, room_y]);
                wps.push([door_x, corr_y]);
            }
            wps.push([1.2, corr_y]);
            wps
        }
        WorldSpec::Mezzanine { .. } => {
            vec![
                [1.2, 1.2],
                [4.8, 1.2],
                [4.8, 6.8],
                [1.2, 6.8],
                [1.2, 1.2],
                [4.8, 1.2],
            ]
        }
        WorldSpec::ComplexRoom { .. } => {
            vec![
                [2.0, 2.0],
                [12.4, 2.0],
                [12.4, 8.4],
                [2.0, 8.4],
                [2.0, 2.0],
                [12.4, 2.0],
            ]
        }
    }
}

/// Load a trajectory file: JSON `{"waypoints": [[x, y], ...]}`.
pub fn load_trajectory(path: &Path) -> Result<Vec<[f64; 2]>> {
    #[derive(Deserialize)]
    struct TrajFile {
        waypoints: Vec<[f64; 2]>,
    }
    let text = std::fs::read_to_string(path)?;
    let f: TrajFile = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("trajectory {}: {e}", path.display())))?;
    if f.waypoints.len() < 2 {
        return Err(Error::Schema("trajectory needs at least two waypoints".into()));
    }
    Ok(f.waypoints)
}

pub fn save_trajectory(path: &Path, waypoints: &[[f64; 2]]) -> Result<()> {
    let v = serde_json::json!({ "waypoints": waypoints });
    std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
    Ok(())
}
