//! End-to-end pipeline: scans → traversability → walls → rooms → merging →
//! loop closure → factor-graph optimization, plus the evaluation driver.
//!
//! Baseline behaviors used by the comparison suites live behind config
//! toggles: free-space clustering instead of traversability segmentation,
//! plain center-distance room merging, and distance-threshold loop search.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorgraph::{self, FactorGraph, FactorKind, OptimizeConfig, VarId, VarValue};
use crate::grid::{self, Cell};
use crate::loopclosure::{self, LoopConfig, LoopEvent, Tier};
use crate::metrics::{self, RegionMask, Trajectory};
use crate::par;
use crate::roommerge::{self, MergeParams, MergeRule};
use crate::roomseg::{self, RoomAccumulator, RoomId, RoomNode, RoomSegParams};
use crate::se2::{wrap_angle, Se2};
use crate::traversability::{
    build_traversable_graph, infer_occluded_incremental, update_field, CellState, ObservedKind,
    RobotModel, TraversabilityField,
};
use crate::walls::{classify_wall, extract_walls, transform_plane, WallId, WallParams, WallRegistry};
use crate::worldsim::{NoiseModel, RunLog, SensorModel, World};

/// Which segmentation fills the room layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomRule {
    /// Traversability-aware accumulation (the proposed behavior).
    Traversability,
    /// Windowed free-space clustering around the robot (baseline).
    EuclideanClustering,
}

/// How loop-closure candidates are found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopRule {
    /// Room re-detection with partitioned coarse-to-fine search.
    Cosg,
    /// Per-keyframe translational threshold search (baseline).
    DistanceThreshold,
}

/// Parameters of the free-space clustering baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterBaselineParams {
    /// Local window radius around the robot, meters.
    pub window_radius: f64,
    /// Single-linkage distance, meters.
    pub epsilon: f64,
    /// New clusters within this center distance update an existing room.
    pub center_dedup: f64,
}

impl Default for ClusterBaselineParams {
    fn default() -> Self {
        ClusterBaselineParams {
            window_radius: 4.0,
            epsilon: 0.25,
            center_dedup: 1.0,
        }
    }
}

/// Full pipeline configuration. Every field has a default; unknown keys in
/// a config file are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Grid resolution, meters per cell.
    pub resolution: f64,
    pub sensor: SensorModel,
    pub robot: RobotModel,
    pub walls: WallParams,
    pub roomseg: RoomSegParams,
    pub merge: MergeParams,
    pub loop_closure: LoopConfig,
    pub optimizer: OptimizeConfig,
    /// New keyframe after this much travel, meters.
    pub keyframe_linear: f64,
    /// ... or this much rotation, radians.
    pub keyframe_angular: f64,
    pub odom_info: [f64; 3],
    pub plane_info: [f64; 2],
    pub loop_info: [f64; 3],
    pub room_wall_weight: f64,
    pub room_rule: RoomRule,
    pub loop_rule: LoopRule,
    pub cluster_baseline: ClusterBaselineParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            resolution: 0.1,
            sensor: SensorModel::default(),
            robot: RobotModel::default(),
            walls: WallParams::default(),
            roomseg: RoomSegParams::default(),
            merge: MergeParams::default(),
            loop_closure: LoopConfig::default(),
            optimizer: OptimizeConfig::default(),
            keyframe_linear: 1.0,
            keyframe_angular: 30.0_f64.to_radians(),
            odom_info: [2500.0, 2500.0, 10000.0],
            plane_info: [10000.0, 1111.0],
            loop_info: [400.0, 400.0, 1111.0],
            room_wall_weight: 400.0,
            room_rule: RoomRule::Traversability,
            loop_rule: LoopRule::Cosg,
            cluster_baseline: ClusterBaselineParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load_json(path: &std::path::Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("config {}: {e}", path.display())))
    }
}

/// Loop event with the emission timestamp, as logged in reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopEventRecord {
    pub t: f64,
    #[serde(flatten)]
    pub event: LoopEvent,
}

/// Merge attempt record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeEventRecord {
    pub t: f64,
    pub existing_id: RoomId,
    pub incoming_id: RoomId,
    pub residual_before: f64,
    pub residual_after: f64,
    pub applied: bool,
}

/// Run-level bookkeeping emitted next to the scene graph.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub loops: Vec<LoopEventRecord>,
    pub merges: Vec<MergeEventRecord>,
    /// Total factor-graph optimization time, seconds.
    pub t_fgo: f64,
    /// Total loop detection + matching time, seconds.
    pub t_ld: f64,
    pub n_loop: usize,
    pub n_epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyframeExport {
    pub id: u32,
    pub t: f64,
    pub pose: [f64; 3],
    pub room_id: Option<RoomId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WallExport {
    pub id: WallId,
    pub category: crate::walls::WallCategory,
    pub normal: [f64; 2],
    pub offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomExport {
    pub id: RoomId,
    #[serde(rename = "type")]
    pub kind: String,
    pub center: [f64; 2],
    pub walls: BTreeMap<String, WallId>,
    /// Convex hull of the cell set (reference outline).
    pub polygon: Vec<[f64; 2]>,
    /// Sorted cell set; the exact region used for evaluation.
    pub cells: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExportLayers {
    pub keyframes: Vec<KeyframeExport>,
    pub walls: Vec<WallExport>,
    pub rooms: Vec<RoomExport>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExportEdges {
    pub keyframe_room: Vec<(u32, RoomId)>,
    pub room_wall: Vec<(RoomId, WallId)>,
    pub loops: Vec<LoopEventRecord>,
    pub merges: Vec<MergeEventRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExportStats {
    pub t_fgo: f64,
    pub t_ld: f64,
    pub n_loop: usize,
    pub n_epochs: usize,
}

/// Hierarchical scene-graph export: keyframe, wall, and room layers with
/// their relations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SceneGraphExport {
    pub resolution: f64,
    pub layers: ExportLayers,
    pub edges: ExportEdges,
    pub stats: ExportStats,
}

impl SceneGraphExport {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<SceneGraphExport> {
        let text = std::fs::read(path)?;
        serde_json::from_slice(&text)
            .map_err(|e| Error::Schema(format!("scene graph {}: {e}", path.display())))
    }

    /// Serialized bytes with wall-clock stats zeroed; replayability is
    /// judged on these.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut c = self.clone();
        c.stats.t_fgo = 0.0;
        c.stats.t_ld = 0.0;
        serde_json::to_vec(&c).expect("export serializes")
    }

    /// Estimated keyframe trajectory.
    pub fn trajectory(&self) -> Trajectory {
        self.layers
            .keyframes
            .iter()
            .map(|k| metrics::TimedPose {
                t: k.t,
                pose: Se2::from_array(k.pose),
            })
            .collect()
    }
}

struct Keyframe {
    id: u32,
    t: f64,
    var: VarId,
    odom: Se2,
    points: Vec<[f64; 2]>,
    room: Option<RoomId>,
}

/// Baseline cluster room (no wall bindings).
struct ClusterRoom {
    id: RoomId,
    center: [f64; 2],
    cells: HashSet<Cell>,
    keyframes: Vec<u32>,
}

struct Pipeline<'c> {
    cfg: &'c PipelineConfig,
    sensor: SensorModel,
    field: TraversabilityField,
    graph: FactorGraph,
    registry: WallRegistry,
    keyframes: Vec<Keyframe>,
    rooms: Vec<RoomNode>,
    clusters: Vec<ClusterRoom>,
    room_vars: HashMap<RoomId, VarId>,
    wall_vars: HashMap<WallId, VarId>,
    accumulator: RoomAccumulator,
    next_room_id: RoomId,
    report: RunReport,
    /// Estimate of the latest keyframe pose and its odometry reading, used
    /// to propagate the current pose between optimizations.
    anchor_est: Se2,
    anchor_odom: Se2,
}

impl<'c> Pipeline<'c> {
    fn new(cfg: &'c PipelineConfig, n_beams: usize, start_odom: Se2) -> Self {
        let sensor = SensorModel {
            n_beams,
            ..cfg.sensor.clone()
        };
        Pipeline {
            cfg,
            sensor,
            field: TraversabilityField::new(cfg.resolution, cfg.robot),
            graph: FactorGraph::new(),
            registry: WallRegistry::default(),
            keyframes: Vec::new(),
            rooms: Vec::new(),
            clusters: Vec::new(),
            room_vars: HashMap::new(),
            wall_vars: HashMap::new(),
            accumulator: RoomAccumulator::new(),
            next_room_id: 0,
            report: RunReport::default(),
            anchor_est: start_odom,
            anchor_odom: start_odom,
        }
    }

    fn estimate(&self, odom: Se2) -> Se2 {
        self.anchor_est.compose(self.anchor_odom.between(odom))
    }

    fn kf_pose(&self, id: u32) -> Se2 {
        self.graph.value(self.keyframes[id as usize].var).as_pose()
    }

    fn kf_pose_map(&self) -> HashMap<u32, Se2> {
        self.keyframes
            .iter()
            .map(|k| (k.id, self.graph.value(k.var).as_pose()))
            .collect()
    }

    fn kf_points_map(&self) -> HashMap<u32, Vec<[f64; 2]>> {
        self.keyframes
            .iter()
            .map(|k| (k.id, k.points.clone()))
            .collect()
    }

    fn optimize_epoch(&mut self) -> Result<()> {
        let stats = factorgraph::optimize(&mut self.graph, &self.cfg.optimizer)?;
        self.report.t_fgo += stats.wall_time;
        self.report.n_epochs += 1;
        if let Some(last) = self.keyframes.last() {
            self.anchor_est = self.graph.value(last.var).as_pose();
            self.anchor_odom = last.odom;
        }
        Ok(())
    }

    fn add_keyframe(&mut self, t: f64, est: Se2, odom: Se2, points: Vec<[f64; 2]>) -> Result<u32> {
        let id = self.keyframes.len() as u32;
        let var = self.graph.add_variable(VarValue::Pose(est), id == 0);
        if let Some(prev) = self.keyframes.last() {
            let measured = prev.odom.between(odom);
            self.graph.add_factor(
                FactorKind::Odometry {
                    from: prev.var,
                    to: var,
                    measured,
                    info: self.cfg.odom_info,
                },
                None,
            )?;
        }
        self.keyframes.push(Keyframe {
            id,
            t,
            var,
            odom,
            points,
            room: None,
        });
        self.observe_walls(id, est)?;
        Ok(id)
    }

    /// Extract wall planes from the keyframe scan, associate them with the
    /// registry, and emit pose-plane factors.
    fn observe_walls(&mut self, kf: u32, est: Se2) -> Result<()> {
        let points = self.keyframes[kf as usize].points.clone();
        if points.len() < self.cfg.walls.min_inliers {
            return Ok(());
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (kf as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let body_planes = extract_walls(&points, [0.0, 0.0], &self.cfg.walls, &mut rng);
        let pose_var = self.keyframes[kf as usize].var;
        for body in body_planes {
            let map_plane = transform_plane(&body, est);
            let wall_id = match self.registry.associate(&map_plane, &self.cfg.walls) {
                Some(id) => {
                    self.registry.observe(id, &map_plane);
                    id
                }
                None => {
                    let category = classify_wall(map_plane.normal, body.normal);
                    let id = self.registry.insert(&map_plane, category, kf);
                    let var = self.graph.add_variable(
                        VarValue::Wall {
                            angle: map_plane.normal_angle(),
                            offset: map_plane.offset,
                        },
                        false,
                    );
                    self.wall_vars.insert(id, var);
                    id
                }
            };
            self.graph.add_factor(
                FactorKind::PosePlane {
                    pose: pose_var,
                    wall: self.wall_vars[&wall_id],
                    measured_angle: body.normal_angle(),
                    measured_offset: body.offset,
                    info: self.cfg.plane_info,
                },
                None,
            )?;
        }
        Ok(())
    }

    /// Keyframes in the accumulation span not yet owned by a room.
    fn claim_keyframes(&mut self, start: u32, end: u32, room: RoomId) -> Vec<u32> {
        let mut claimed = Vec::new();
        for kf in self.keyframes.iter_mut() {
            if kf.id >= start && kf.id <= end && kf.room.is_none() {
                kf.room = Some(room);
                claimed.push(kf.id);
            }
        }
        claimed
    }

    /// Register a classified room: center variable plus one room-wall factor
    /// per bounded axis.
    fn register_room(&mut self, room: RoomNode) -> Result<()> {
        let var = self
            .graph
            .add_variable(VarValue::Point(room.center), false);
        self.room_vars.insert(room.id, var);
        for axis in room.kind.bounded_axes() {
            let (pos_cat, neg_cat) = match axis {
                crate::walls::Axis::X => (
                    crate::walls::WallCategory::XPlus,
                    crate::walls::WallCategory::XMinus,
                ),
                crate::walls::Axis::Y => (
                    crate::walls::WallCategory::YPlus,
                    crate::walls::WallCategory::YMinus,
                ),
            };
            self.graph.add_factor(
                FactorKind::RoomWall {
                    room: var,
                    wall_pos: self.wall_vars[&room.walls[&pos_cat]],
                    wall_neg: self.wall_vars[&room.walls[&neg_cat]],
                    axis: *axis,
                    weight: self.cfg.room_wall_weight,
                },
                None,
            )?;
        }
        self.rooms.push(room);
        Ok(())
    }

    /// Loop closure on room re-detection: partition the old room, score
    /// candidate pairs coarse-to-fine, add loop factors.
    fn cosg_loop_closure(&mut self, t: f64, new_room_id: RoomId) -> Result<bool> {
        let started = Instant::now();
        let new_room = self
            .rooms
            .iter()
            .find(|r| r.id == new_room_id)
            .expect("room registered")
            .clone();
        let others: Vec<RoomNode> = self
            .rooms
            .iter()
            .filter(|r| r.id != new_room_id)
            .cloned()
            .collect();
        let Some(old_id) = loopclosure::detect_redetection(&others, &new_room, &self.cfg.loop_closure)
        else {
            self.report.t_ld += started.elapsed().as_secs_f64();
            return Ok(false);
        };
        let old_room = self
            .rooms
            .iter()
            .find(|r| r.id == old_id)
            .expect("matched room exists")
            .clone();
        let kf_poses = self.kf_pose_map();
        let partitions = loopclosure::partition_room(
            &old_room,
            &kf_poses,
            self.cfg.resolution,
            self.cfg.loop_closure.l_part,
        );
        let new_kfs: Vec<(u32, Se2)> = new_room
            .keyframes
            .iter()
            .map(|&id| (id, kf_poses[&id]))
            .collect();
        let pairs =
            loopclosure::candidate_pairs(&partitions, &new_kfs, &kf_poses, &self.cfg.loop_closure);
        let kf_points = self.kf_points_map();
        let scored =
            loopclosure::score_candidates(&pairs, &kf_points, &kf_poses, &self.cfg.loop_closure);
        let events = loopclosure::coarse_to_fine_select(&scored, &self.cfg.loop_closure, old_id);
        self.report.t_ld += started.elapsed().as_secs_f64();
        let any = !events.is_empty();
        for e in events {
            self.add_loop_factor(t, e)?;
        }
        Ok(any)
    }

    fn add_loop_factor(&mut self, t: f64, event: LoopEvent) -> Result<()> {
        let scale = match event.tier {
            Tier::Coarse => 1.0,
            Tier::Fine => self.cfg.loop_closure.fine_info_scale,
        };
        let info = [
            self.cfg.loop_info[0] * scale,
            self.cfg.loop_info[1] * scale,
            self.cfg.loop_info[2] * scale,
        ];
        self.graph.add_factor(
            FactorKind::LoopClosure {
                from: self.keyframes[event.kf_old as usize].var,
                to: self.keyframes[event.kf_new as usize].var,
                measured: Se2::from_array(event.relative_pose),
                info,
            },
            Some(1.0),
        )?;
        self.report.n_loop += 1;
        self.report.loops.push(LoopEventRecord { t, event });
        Ok(())
    }

    /// Distance-threshold loop search (baseline): nearest older keyframes
    /// within the loop radius, best ICP match accepted against the relaxed
    /// threshold.
    fn distance_threshold_loops(&mut self, t: f64, new_kf: u32) -> Result<()> {
        let started = Instant::now();
        let cfg = &self.cfg.loop_closure;
        let new_pose = self.kf_pose(new_kf);
        let mut cands: Vec<(f64, u32)> = self
            .keyframes
            .iter()
            .filter(|k| k.id + cfg.min_keyframe_gap <= new_kf)
            .map(|k| (self.kf_pose(k.id).translation_distance(new_pose), k.id))
            .filter(|(d, _)| *d <= cfg.d_loop_th)
            .collect();
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        cands.truncate(cfg.max_candidates_per_keyframe);
        if cands.is_empty() {
            self.report.t_ld += started.elapsed().as_secs_f64();
            return Ok(());
        }
        let pairs: Vec<loopclosure::CandidatePair> = cands
            .iter()
            .map(|&(_, kf_old)| loopclosure::CandidatePair {
                kf_old,
                kf_new: new_kf,
                partition: 0,
            })
            .collect();
        let kf_points = self.kf_points_map();
        let kf_poses = self.kf_pose_map();
        let scored = loopclosure::score_candidates(&pairs, &kf_points, &kf_poses, cfg);
        let best = scored
            .into_iter()
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap());
        self.report.t_ld += started.elapsed().as_secs_f64();
        if let Some(best) = best {
            if best.score >= cfg.s_fine {
                let tier = if best.score >= cfg.s_coarse {
                    Tier::Coarse
                } else {
                    Tier::Fine
                };
                let room_id = self.keyframes[best.pair.kf_old as usize]
                    .room
                    .unwrap_or(u32::MAX);
                self.add_loop_factor(
                    t,
                    LoopEvent {
                        kf_old: best.pair.kf_old,
                        kf_new: best.pair.kf_new,
                        score: best.score,
                        relative_pose: best.relative.to_array(),
                        tier,
                        room_id,
                    },
                )?;
                self.optimize_epoch()?;
            }
        }
        Ok(())
    }

    /// Try to merge the freshly registered room into the best candidate:
    /// optimize with the wall-to-wall factor, apply below tolerance, roll
    /// back otherwise.
    fn try_merge(&mut self, t: f64, new_room_id: RoomId) -> Result<()> {
        let new_room = self
            .rooms
            .iter()
            .find(|r| r.id == new_room_id)
            .expect("room registered")
            .clone();
        let others: Vec<RoomNode> = self
            .rooms
            .iter()
            .filter(|r| r.id != new_room_id)
            .cloned()
            .collect();
        let candidates = roommerge::find_merge_candidates(&others, &new_room, &self.cfg.merge);
        let Some(best) = candidates.first() else {
            return Ok(());
        };
        let existing = self
            .rooms
            .iter()
            .find(|r| r.id == best.existing)
            .expect("candidate exists")
            .clone();
        let spec = match roommerge::build_merge_factor(
            &existing,
            &new_room,
            &self.registry,
            &self.cfg.merge,
        ) {
            Ok(s) => s,
            Err(e) => {
                log::debug!("merge refused: {e}");
                return Ok(());
            }
        };
        if self.cfg.merge.rule == MergeRule::CenterDistance1m {
            // Baseline: merge directly on the distance criterion.
            self.report.merges.push(MergeEventRecord {
                t,
                existing_id: best.existing,
                incoming_id: new_room_id,
                residual_before: 0.0,
                residual_after: 0.0,
                applied: true,
            });
            return self.apply_merge_spec(&spec);
        }
        let pairs = roommerge::merge_axis_pairs(&spec, &self.wall_vars);
        let snapshot = self.graph.snapshot();
        let factor_id = self.graph.add_factor(
            FactorKind::Merge {
                existing_room: self.room_vars[&best.existing],
                incoming_room: self.room_vars[&new_room_id],
                pairs,
                weight: self.cfg.merge.weight,
            },
            Some(1.0),
        )?;
        let factor = self.graph.factor(factor_id).expect("just added").clone();
        let residual_before = self.graph.residual(&factor).norm();
        self.optimize_epoch()?;
        let residual_after = self.graph.residual(&factor).norm();
        let applied = residual_after <= self.cfg.merge.residual_tol;
        self.report.merges.push(MergeEventRecord {
            t,
            existing_id: best.existing,
            incoming_id: new_room_id,
            residual_before,
            residual_after,
            applied,
        });
        self.graph.remove_factor(factor_id);
        if applied {
            self.apply_merge_spec(&spec)?;
            self.optimize_epoch()?;
        } else {
            // Deferred: keep both rooms, restore pre-merge values.
            self.graph.restore(&snapshot);
        }
        Ok(())
    }

    fn apply_merge_spec(&mut self, spec: &roommerge::MergeFactorSpec) -> Result<()> {
        roommerge::apply_merge(
            &mut self.rooms,
            spec,
            &mut self.registry,
            &mut self.graph,
            &mut self.room_vars,
            &mut self.wall_vars,
        )?;
        // Keyframes of the retired room follow into the survivor.
        for kf in self.keyframes.iter_mut() {
            if kf.room == Some(spec.incoming) {
                kf.room = Some(spec.existing);
            }
        }
        Ok(())
    }

    /// Handle a completed traversable cell set: classify, register, run loop
    /// closure and merging.
    fn complete_room(&mut self, t: f64, done: roomseg::CompletedRoom) -> Result<()> {
        if done.n_graphs < self.cfg.roomseg.min_inside_graphs {
            log::debug!(
                "t={t:.1}: dropping accumulation of {} cells ({} graphs < {})",
                done.cells.len(),
                done.n_graphs,
                self.cfg.roomseg.min_inside_graphs
            );
            return Ok(());
        }
        let selection = roomseg::select_bounding_walls(
            &done.cells,
            &self.registry,
            self.cfg.resolution,
            &self.cfg.roomseg,
        );
        log::debug!(
            "t={t:.1}: completed {} cells over {} graphs; wall selection {:?}",
            done.cells.len(),
            done.n_graphs,
            selection
        );
        if log::log_enabled!(log::Level::Trace) {
            let res = self.cfg.resolution;
            let ys: Vec<i32> = {
                let mut v: Vec<i32> = done.cells.iter().map(|c| c.1).collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            let xs_at_min_y: Vec<i32> = {
                let mut v: Vec<i32> = done
                    .cells
                    .iter()
                    .filter(|c| c.1 == ys[0])
                    .map(|c| c.0)
                    .collect();
                v.sort_unstable();
                v
            };
            log::trace!("    room rows y={:?}..{:?} bottom row xs {:?}", ys.first(), ys.last(), xs_at_min_y);
            let mut obst_rows: std::collections::BTreeMap<(i32, bool), usize> =
                std::collections::BTreeMap::new();
            for c in self.field.obstacle_cells() {
                if (7..=38).contains(&c.0) && (20..=30).contains(&c.1) {
                    let brk = matches!(
                        self.field.state(c),
                        crate::traversability::CellState::Observed {
                            kind: crate::traversability::ObservedKind::GroundBreak,
                            ..
                        }
                    );
                    *obst_rows.entry((c.1, brk)).or_default() += 1;
                }
            }
            log::trace!("    obstacle rows near divider (row, is_break): {:?}", obst_rows);
            for w in self.registry.active() {
                let mut min_d = f64::INFINITY;
                for p in &w.points {
                    for c in &done.cells {
                        let cc = grid::center_of(*c, res);
                        let d = ((cc[0] - p[0]).powi(2) + (cc[1] - p[1]).powi(2)).sqrt();
                        min_d = min_d.min(d);
                    }
                }
                log::trace!(
                    "    wall {} {:?} d={:.2} points={} span=({:.1},{:.1}) min_dist={:.3}",
                    w.id,
                    w.category,
                    w.offset,
                    w.points.len(),
                    w.span.0,
                    w.span.1,
                    min_d
                );
            }
        }
        let Some(mut room) = roomseg::classify_and_make_room(
            &selection,
            &done.cells,
            &self.registry,
            self.cfg.resolution,
            &self.cfg.roomseg,
            self.next_room_id,
        ) else {
            log::debug!("t={t:.1}: completed cell set did not classify as a room");
            return Ok(());
        };
        log::debug!(
            "t={t:.1}: room {} ({:?}) center ({:.2},{:.2})",
            room.id,
            room.kind,
            room.center[0],
            room.center[1]
        );
        self.next_room_id += 1;
        room.keyframes = self.claim_keyframes(done.start_keyframe, done.end_keyframe, room.id);
        let room_id = room.id;
        self.register_room(room)?;
        self.optimize_epoch()?;
        if self.cfg.loop_rule == LoopRule::Cosg {
            let looped = self.cosg_loop_closure(t, room_id)?;
            if looped {
                self.optimize_epoch()?;
            }
        }
        self.try_merge(t, room_id)?;
        Ok(())
    }

    /// Baseline segmentation: single-linkage cluster of the non-obstacle
    /// cells around the robot, deduplicated by plain center distance.
    fn cluster_baseline_step(&mut self, kf: u32, est: Se2) {
        let p = &self.cfg.cluster_baseline;
        let res = self.cfg.resolution;
        let radius_cells = (p.window_radius / res).ceil() as i32;
        let robot_cell = grid::cell_of([est.x, est.y], res);
        let in_window = |c: Cell| -> bool {
            let dx = (c.0 - robot_cell.0) as f64;
            let dy = (c.1 - robot_cell.1) as f64;
            (dx * dx + dy * dy).sqrt() * res <= p.window_radius
        };
        let free = |c: Cell| -> bool {
            !matches!(
                self.field.state(c),
                CellState::Observed { kind: ObservedKind::Obstacle, .. }
            )
        };
        if !free(robot_cell) || !in_window(robot_cell) {
            return;
        }
        // Single-linkage flood: any free cell within epsilon joins.
        let link = (p.epsilon / res).floor() as i32;
        let link_sq = (p.epsilon / res) * (p.epsilon / res);
        let mut cluster: HashSet<Cell> = HashSet::new();
        let mut queue = std::collections::VecDeque::new();
        cluster.insert(robot_cell);
        queue.push_back(robot_cell);
        let mut guard = 0usize;
        let cap = ((radius_cells as usize * 2 + 1) * (radius_cells as usize * 2 + 1)) * 2;
        while let Some(c) = queue.pop_front() {
            guard += 1;
            if guard > cap {
                break;
            }
            for dy in -link..=link {
                for dx in -link..=link {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if (dx * dx + dy * dy) as f64 > link_sq {
                        continue;
                    }
                    let n = (c.0 + dx, c.1 + dy);
                    if !cluster.contains(&n) && in_window(n) && free(n) {
                        cluster.insert(n);
                        queue.push_back(n);
                    }
                }
            }
        }
        if cluster.len() < 50 {
            return;
        }
        let center = roomseg::cell_centroid(&cluster, res);
        let existing = self.clusters.iter_mut().find(|r| {
            let d = ((r.center[0] - center[0]).powi(2) + (r.center[1] - center[1]).powi(2)).sqrt();
            d <= p.center_dedup
        });
        match existing {
            Some(room) => {
                room.cells.extend(cluster);
                room.keyframes.push(kf);
            }
            None => {
                let id = self.next_room_id;
                self.next_room_id += 1;
                self.clusters.push(ClusterRoom {
                    id,
                    center,
                    cells: cluster,
                    keyframes: vec![kf],
                });
                if let Some(k) = self.keyframes.iter_mut().find(|k| k.id == kf) {
                    k.room = Some(id);
                }
            }
        }
    }

    fn export(&self) -> SceneGraphExport {
        let mut layers = ExportLayers::default();
        for k in &self.keyframes {
            layers.keyframes.push(KeyframeExport {
                id: k.id,
                t: k.t,
                pose: self.graph.value(k.var).as_pose().to_array(),
                room_id: k.room,
            });
        }
        for w in self.registry.active() {
            let (angle, offset) = match self.wall_vars.get(&w.id) {
                Some(var) => self.graph.value(*var).as_wall(),
                None => (w.normal_angle(), w.offset),
            };
            layers.walls.push(WallExport {
                id: w.id,
                category: w.category,
                normal: [angle.cos(), angle.sin()],
                offset,
            });
        }
        let mut edges = ExportEdges {
            loops: self.report.loops.clone(),
            merges: self.report.merges.clone(),
            ..Default::default()
        };
        let mut push_room = |room: RoomExport, keyframes: &[u32], edges: &mut ExportEdges| {
            for kf in keyframes {
                edges.keyframe_room.push((*kf, room.id));
            }
            for wall in room.walls.values() {
                edges.room_wall.push((room.id, *wall));
            }
            layers.rooms.push(room);
        };
        for r in &self.rooms {
            if r.retired {
                continue;
            }
            let center = match self.room_vars.get(&r.id) {
                Some(var) => self.graph.value(*var).as_point(),
                None => r.center,
            };
            let mut cells: Vec<(i32, i32)> = r.cells.iter().copied().collect();
            cells.sort_unstable();
            let hull = grid::convex_hull(
                cells
                    .iter()
                    .map(|c| grid::center_of(*c, self.cfg.resolution))
                    .collect(),
            );
            push_room(
                RoomExport {
                    id: r.id,
                    kind: r.kind.as_str().to_string(),
                    center,
                    walls: r
                        .walls
                        .iter()
                        .map(|(cat, id)| (format!("{cat:?}").to_lowercase(), *id))
                        .collect(),
                    polygon: hull,
                    cells,
                },
                &r.keyframes,
                &mut edges,
            );
        }
        for r in &self.clusters {
            let mut cells: Vec<(i32, i32)> = r.cells.iter().copied().collect();
            cells.sort_unstable();
            let hull = grid::convex_hull(
                cells
                    .iter()
                    .map(|c| grid::center_of(*c, self.cfg.resolution))
                    .collect(),
            );
            push_room(
                RoomExport {
                    id: r.id,
                    kind: "cluster".to_string(),
                    center: r.center,
                    walls: BTreeMap::new(),
                    polygon: hull,
                    cells,
                },
                &r.keyframes,
                &mut edges,
            );
        }
        layers.rooms.sort_by_key(|r| r.id);
        edges.keyframe_room.sort_unstable();
        edges.room_wall.sort_unstable();
        SceneGraphExport {
            resolution: self.cfg.resolution,
            layers,
            edges,
            stats: ExportStats {
                t_fgo: self.report.t_fgo,
                t_ld: self.report.t_ld,
                n_loop: self.report.n_loop,
                n_epochs: self.report.n_epochs,
            },
        }
    }
}

/// Optional debug artifacts of a pipeline run.
#[derive(Debug, Clone, Default)]
pub struct DebugDumps {
    /// Write the final traversability field as a PGM here.
    pub field_pgm: Option<std::path::PathBuf>,
    /// Write the final traversable graph as JSON here.
    pub graph_json: Option<std::path::PathBuf>,
    /// Write the factor graph in g2o-style text here.
    pub g2o: Option<std::path::PathBuf>,
}

/// Run the full pipeline over a recorded log.
pub fn build_graph(runlog: &RunLog, cfg: &PipelineConfig) -> Result<(SceneGraphExport, RunReport)> {
    build_graph_with_dumps(runlog, cfg, &DebugDumps::default())
}

pub fn build_graph_with_dumps(
    runlog: &RunLog,
    cfg: &PipelineConfig,
    dumps: &DebugDumps,
) -> Result<(SceneGraphExport, RunReport)> {
    if runlog.steps.is_empty() {
        return Err(Error::Schema("run log has no steps".into()));
    }
    let n_beams = runlog.steps[0].scan.ranges.len();
    let mut p = Pipeline::new(cfg, n_beams, runlog.steps[0].odom_pose);
    let mut last_kf_odom: Option<Se2> = None;
    let mut last_graph: Option<crate::traversability::TraversableGraph> = None;
    for step in &runlog.steps {
        let est = p.estimate(step.odom_pose);
        let changed = update_field(&mut p.field, &step.scan, est, &p.sensor);
        infer_occluded_incremental(&mut p.field, &changed);

        // Keyframe policy: travel or turn, measured on raw odometry.
        let due = match last_kf_odom {
            None => true,
            Some(prev) => {
                let rel = prev.between(step.odom_pose);
                (rel.x * rel.x + rel.y * rel.y).sqrt() >= cfg.keyframe_linear
                    || wrap_angle(rel.theta).abs() >= cfg.keyframe_angular
            }
        };
        if due {
            let points = step.scan.hit_points(&p.sensor);
            let kf = p.add_keyframe(step.t, est, step.odom_pose, points)?;
            last_kf_odom = Some(step.odom_pose);
            p.optimize_epoch()?;
            match cfg.room_rule {
                RoomRule::EuclideanClustering => {
                    let est2 = p.estimate(step.odom_pose);
                    p.cluster_baseline_step(kf, est2);
                }
                RoomRule::Traversability => {}
            }
            if cfg.loop_rule == LoopRule::DistanceThreshold {
                p.distance_threshold_loops(step.t, kf)?;
            }
        }

        if cfg.room_rule == RoomRule::Traversability {
            let est = p.estimate(step.odom_pose);
            let trav = match build_traversable_graph(&p.field, est) {
                Ok(g) => g,
                Err(Error::RobotCellNotTraversable { .. }) => continue,
                Err(e) => return Err(e),
            };
            let obstacles = p.field.obstacle_cells();
            let safe = roomseg::compute_safe_graph(
                &trav,
                &obstacles,
                cfg.roomseg.lambda_obstacle,
                cfg.resolution,
            );
            let inside = roomseg::extract_inside(&safe, est);
            let latest_kf = p.keyframes.len().saturating_sub(1) as u32;
            if let Some(done) = p.accumulator.accumulate(&inside, latest_kf) {
                p.complete_room(step.t, done)?;
            }
            last_graph = Some(trav);
        }
    }
    // End of run: flush any active accumulation through the same path.
    if cfg.room_rule == RoomRule::Traversability {
        let t_end = runlog.steps.last().map(|s| s.t).unwrap_or(0.0);
        if let Some(done) = p.accumulator.flush() {
            p.complete_room(t_end, done)?;
        }
    }
    p.optimize_epoch()?;

    if let Some(path) = &dumps.field_pgm {
        p.field.write_pgm(path)?;
    }
    if let (Some(path), Some(g)) = (&dumps.graph_json, &last_graph) {
        g.dump_json(path)?;
    }
    if let Some(path) = &dumps.g2o {
        std::fs::write(path, factorgraph::to_g2o(&p.graph))?;
    }
    Ok((p.export(), p.report))
}

/// Per-trial loop and trajectory summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialLoopReport {
    pub ate_m: f64,
    pub pre_ate_m: f64,
    pub n_loop: usize,
    pub pr_loop: f64,
    pub pr_zero_support: bool,
    pub t_ld: f64,
    pub travel_distance: f64,
}

/// Aggregated evaluation over trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub consistency: metrics::ConsistencyReport,
    pub trials: Vec<TrialLoopReport>,
    pub ate_mean: f64,
    pub n_loop_mean: f64,
    pub pr_loop_pooled: f64,
    pub t_ld_mean: f64,
    /// Room cells intersecting ground-truth drop regions, when the world
    /// has any.
    pub drop_intersection_cells: Option<usize>,
}

fn truth_trajectory(runlog: &RunLog) -> Trajectory {
    runlog
        .steps
        .iter()
        .map(|s| metrics::TimedPose {
            t: s.t,
            pose: s.true_pose,
        })
        .collect()
}

fn odom_trajectory(runlog: &RunLog) -> Trajectory {
    runlog
        .steps
        .iter()
        .map(|s| metrics::TimedPose {
            t: s.t,
            pose: s.odom_pose,
        })
        .collect()
}

fn travel_distance(runlog: &RunLog) -> f64 {
    runlog
        .steps
        .windows(2)
        .map(|w| w[0].true_pose.translation_distance(w[1].true_pose))
        .sum()
}

fn true_pose_at(truth: &Trajectory, t: f64) -> Option<[f64; 2]> {
    truth
        .iter()
        .min_by(|a, b| {
            (a.t - t)
                .abs()
                .partial_cmp(&(b.t - t).abs())
                .expect("comparable")
        })
        .filter(|p| (p.t - t).abs() <= 0.05)
        .map(|p| [p.pose.x, p.pose.y])
}

/// Evaluate exported scene graphs against their run logs (truth source) and
/// the world (drop regions): room consistency across trials plus loop and
/// trajectory statistics.
pub fn evaluate(
    exports: &[SceneGraphExport],
    runlogs: &[RunLog],
    world: Option<&World>,
    pr_tol: f64,
) -> Result<EvaluationReport> {
    if exports.is_empty() || exports.len() != runlogs.len() {
        return Err(Error::Schema(format!(
            "evaluate needs matching scene graphs and run logs ({} vs {})",
            exports.len(),
            runlogs.len()
        )));
    }
    let resolution = exports[0].resolution;
    let trial_masks: Vec<Vec<RegionMask>> = exports
        .iter()
        .map(|e| {
            e.layers
                .rooms
                .iter()
                .map(|r| RegionMask::from_cells(r.cells.iter().copied(), resolution))
                .collect()
        })
        .collect();
    let mut consistency = if exports.len() >= 2 {
        metrics::consistency(&trial_masks)?
    } else {
        metrics::ConsistencyReport {
            n_room: trial_masks[0].len() as f64,
            sigma_room: 0.0,
            dcs_mean: 1.0,
            t_fgo: 0.0,
        }
    };
    consistency.t_fgo =
        exports.iter().map(|e| e.stats.t_fgo).sum::<f64>() / exports.len() as f64;

    let mut trials = Vec::new();
    let mut pooled_pairs: Vec<([f64; 2], [f64; 2])> = Vec::new();
    for (e, log) in exports.iter().zip(runlogs.iter()) {
        let truth = truth_trajectory(log);
        let est = e.trajectory();
        let ate_m = metrics::ate(&est, &truth)?;
        let pre_ate_m = metrics::ate(&odom_trajectory(log), &truth)?;
        let kf_t: HashMap<u32, f64> = e.layers.keyframes.iter().map(|k| (k.id, k.t)).collect();
        let mut pairs = Vec::new();
        for l in &e.edges.loops {
            let (Some(&ta), Some(&tb)) = (kf_t.get(&l.event.kf_old), kf_t.get(&l.event.kf_new))
            else {
                continue;
            };
            if let (Some(a), Some(b)) = (true_pose_at(&truth, ta), true_pose_at(&truth, tb)) {
                pairs.push((a, b));
            }
        }
        let pr = metrics::loop_precision(&pairs, pr_tol);
        pooled_pairs.extend(pairs);
        trials.push(TrialLoopReport {
            ate_m,
            pre_ate_m,
            n_loop: e.stats.n_loop,
            pr_loop: pr.pr_loop,
            pr_zero_support: pr.zero_support,
            t_ld: e.stats.t_ld,
            travel_distance: travel_distance(log),
        });
    }
    let n = trials.len() as f64;
    let pooled = metrics::loop_precision(&pooled_pairs, pr_tol);
    let drop_intersection_cells = world.and_then(|w| {
        let drop_masks: Vec<RegionMask> = w
            .gt_rooms
            .iter()
            .filter(|r| r.kind == "drop")
            .map(|r| RegionMask::from_polygon(&r.polygon, resolution))
            .collect();
        if drop_masks.is_empty() {
            return None;
        }
        let mut count = 0;
        for masks in &trial_masks {
            for room in masks {
                for d in &drop_masks {
                    count += room.intersection_count(d);
                }
            }
        }
        Some(count)
    });
    Ok(EvaluationReport {
        consistency,
        ate_mean: trials.iter().map(|t| t.ate_m).sum::<f64>() / n,
        n_loop_mean: trials.iter().map(|t| t.n_loop as f64).sum::<f64>() / n,
        pr_loop_pooled: pooled.pr_loop,
        t_ld_mean: trials.iter().map(|t| t.t_ld).sum::<f64>() / n,
        trials,
        drop_intersection_cells,
    })
}

impl EvaluationReport {
    /// Aligned-column text rendering of the consistency and loop tables.
    pub fn tables(&self) -> String {
        let c = &self.consistency;
        let consistency_table = metrics::aligned_table(
            &["n_room", "sigma_room", "dcs", "t_fgo_s"],
            &[vec![
                format!("{:.2}", c.n_room),
                format!("{:.3}", c.sigma_room),
                format!("{:.3}", c.dcs_mean),
                format!("{:.3}", c.t_fgo),
            ]],
        );
        let rows: Vec<Vec<String>> = self
            .trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                vec![
                    format!("{i}"),
                    format!("{:.3}", t.ate_m),
                    format!("{:.3}", t.pre_ate_m),
                    format!("{}", t.n_loop),
                    if t.pr_zero_support {
                        "n/a".to_string()
                    } else {
                        format!("{:.2}", t.pr_loop)
                    },
                    format!("{:.3}", t.t_ld),
                    format!("{:.1}", t.travel_distance),
                ]
            })
            .collect();
        let loop_table = metrics::aligned_table(
            &["trial", "ate_m", "odom_ate_m", "n_loop", "pr_loop", "t_ld_s", "dist_m"],
            &rows,
        );
        format!("scene graph consistency\n{consistency_table}\nloop closure\n{loop_table}")
    }
}

/// One trial of `run_trials`.
#[derive(Debug)]
pub struct TrialOutput {
    pub seed: u64,
    pub runlog: RunLog,
    pub export: SceneGraphExport,
    pub report: RunReport,
}

/// Simulate and build a scene graph for each seed; seeds are independent
/// and run in parallel under the `parallel` feature.
pub fn run_trials(
    world: &World,
    waypoints: &[[f64; 2]],
    sensor: &SensorModel,
    noise: &NoiseModel,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<TrialOutput>> {
    let outputs = par::map_collect(seeds, |&seed| run_one_trial(world, waypoints, sensor, noise, cfg, seed));
    outputs.into_iter().collect()
}

/// Sequential reference implementation of [`run_trials`].
pub fn run_trials_sequential(
    world: &World,
    waypoints: &[[f64; 2]],
    sensor: &SensorModel,
    noise: &NoiseModel,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<TrialOutput>> {
    seeds
        .iter()
        .map(|&seed| run_one_trial(world, waypoints, sensor, noise, cfg, seed))
        .collect()
}

fn run_one_trial(
    world: &World,
    waypoints: &[[f64; 2]],
    sensor: &SensorModel,
    noise: &NoiseModel,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<TrialOutput> {
    let runlog = crate::worldsim::simulate_run(world, waypoints, sensor, noise, seed)?;
    let mut trial_cfg = cfg.clone();
    trial_cfg.seed = seed;
    let (export, report) = build_graph(&runlog, &trial_cfg)?;
    Ok(TrialOutput {
        seed,
        runlog,
        export,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_roundtrip() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.room_rule, RoomRule::Traversability);
        assert_eq!(back.loop_rule, LoopRule::Cosg);
        assert!((back.loop_closure.d_loop_th - 5.0).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let bad = r#"{"seed": 1, "no_such_option": true}"#;
        assert!(serde_json::from_str::<PipelineConfig>(bad).is_err());
        let nested = r#"{"walls": {"min_inliers": 10, "bogus": 3}}"#;
        assert!(serde_json::from_str::<PipelineConfig>(nested).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let partial = r#"{"seed": 7, "roomseg": {"lambda_obstacle": 0.5}}"#;
        let cfg: PipelineConfig = serde_json::from_str(partial).unwrap();
        assert_eq!(cfg.seed, 7);
        assert!((cfg.roomseg.lambda_obstacle - 0.5).abs() < 1e-12);
        assert_eq!(cfg.roomseg.min_adjacent, 25);
    }
}
