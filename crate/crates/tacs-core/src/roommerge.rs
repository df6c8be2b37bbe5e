//! Room merging: re-detected rooms with overlapping traversable free space
//! are fused through a wall-to-wall factor, removing over-segmentation.
//! An S-Graphs+-style center-distance rule is available as a baseline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorgraph::{FactorGraph, MergeAxisPair, VarId};
use crate::roomseg::{RoomId, RoomKind, RoomNode};
use crate::se2::wrap_angle;
use crate::walls::{Axis, WallCategory, WallId, WallRegistry};

/// Which rooms qualify for merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Overlapping traversable free space (the proposed behavior).
    Overlap,
    /// Plain center distance ≤ 1 m (baseline).
    CenterDistance1m,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    pub rule: MergeRule,
    /// Minimum overlap ratio |A∩B| / min(|A|,|B|) for a candidate.
    pub overlap_min: f64,
    /// Residual norm below which an optimized merge is applied, meters.
    pub residual_tol: f64,
    /// Information weight of the merge factor.
    pub weight: f64,
    /// Matched walls must be parallel within this angle.
    pub parallel_tol: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            rule: MergeRule::Overlap,
            overlap_min: 0.3,
            residual_tol: 0.05,
            weight: 400.0,
            parallel_tol: 10.0_f64.to_radians(),
        }
    }
}

///|A∩B| / min(|A|, |B|); zero when either set is empty.
pub fn overlap_ratio(a: &RoomNode, b: &RoomNode) -> f64 {
    let min = a.cells.len().min(b.cells.len());
    if min == 0 {
        return 0.0;
    }
    let (small, large) = if a.cells.len() <= b.cells.len() {
        (&a.cells, &b.cells)
    } else {
        (&b.cells, &a.cells)
    };
    let inter = small.iter().filter(|c| large.contains(c)).count();
    inter as f64 / min as f64
}

/// Axes on which two room types can be compared: the shared bounded axes.
/// Empty means the types are incompatible (e.g. perpendicular corridors).
pub fn comparison_axes(a: RoomKind, b: RoomKind) -> Vec<Axis> {
    a.bounded_axes()
        .iter()
        .filter(|ax| b.bounded_axes().contains(ax))
        .copied()
        .collect()
}

/// A possible merge of `incoming` into `existing`.
#[derive(Debug, Clone)]
pub struct MergeCandidate {
    pub existing: RoomId,
    pub incoming: RoomId,
    pub overlap_ratio: f64,
    /// Axes compared, with the absolute center gap along each.
    pub center_gaps: Vec<(Axis, f64)>,
}

/// Existing rooms the new room could merge into, best first. Under the
/// overlap rule candidates need `overlap_min` shared traversable cells and
/// a compatible type; the baseline rule uses plain center distance.
pub fn find_merge_candidates(
    rooms: &[RoomNode],
    new_room: &RoomNode,
    params: &MergeParams,
) -> Vec<MergeCandidate> {
    let mut out: Vec<MergeCandidate> = Vec::new();
    if new_room.retired {
        return out;
    }
    for r in rooms {
        if r.retired || r.id == new_room.id {
            continue;
        }
        let axes = comparison_axes(r.kind, new_room.kind);
        if axes.is_empty() {
            continue;
        }
        let overlap = overlap_ratio(r, new_room);
        let center_dist = ((r.center[0] - new_room.center[0]).powi(2)
            + (r.center[1] - new_room.center[1]).powi(2))
        .sqrt();
        let admit = match params.rule {
            MergeRule::Overlap => overlap >= params.overlap_min,
            MergeRule::CenterDistance1m => center_dist <= 1.0,
        };
        if !admit {
            continue;
        }
        let center_gaps = axes
            .iter()
            .map(|&ax| {
                let i = match ax {
                    Axis::X => 0,
                    Axis::Y => 1,
                };
                (ax, (r.center[i] - new_room.center[i]).abs())
            })
            .collect();
        out.push(MergeCandidate {
            existing: r.id,
            incoming: new_room.id,
            overlap_ratio: overlap,
            center_gaps,
        });
    }
    out.sort_by(|a, b| b.overlap_ratio.partial_cmp(&a.overlap_ratio).unwrap());
    out
}

/// Wall pairing of a merge along the comparison axes.
#[derive(Debug, Clone)]
pub struct MergeFactorSpec {
    pub existing: RoomId,
    pub incoming: RoomId,
    pub pairs: Vec<(Axis, [WallId; 2], [WallId; 2])>,
}

fn axis_categories(axis: Axis) -> (WallCategory, WallCategory) {
    match axis {
        Axis::X => (WallCategory::XPlus, WallCategory::XMinus),
        Axis::Y => (WallCategory::YPlus, WallCategory::YMinus),
    }
}

/// Pair up the two rooms' bounding walls along each comparison axis,
/// refusing when matched walls are not parallel within tolerance.
pub fn build_merge_factor(
    existing: &RoomNode,
    incoming: &RoomNode,
    registry: &WallRegistry,
    params: &MergeParams,
) -> Result<MergeFactorSpec> {
    let axes = comparison_axes(existing.kind, incoming.kind);
    if axes.is_empty() {
        return Err(Error::Pipeline(format!(
            "rooms {} and {} have no shared comparison axis",
            existing.id, incoming.id
        )));
    }
    let mut pairs = Vec::new();
    for axis in axes {
        let (pos, neg) = axis_categories(axis);
        let get = |room: &RoomNode, cat: WallCategory| -> Result<WallId> {
            room.walls.get(&cat).copied().ok_or_else(|| {
                Error::Pipeline(format!("room {} lacks a {cat:?} wall", room.id))
            })
        };
        let e = [get(existing, pos)?, get(existing, neg)?];
        let i = [get(incoming, pos)?, get(incoming, neg)?];
        for (we, wi) in e.iter().zip(i.iter()) {
            let da = wrap_angle(
                registry.get(*we).normal_angle() - registry.get(*wi).normal_angle(),
            )
            .abs();
            if da > params.parallel_tol {
                return Err(Error::Pipeline(format!(
                    "walls {we} and {wi} diverge by {:.1} deg; merge refused",
                    da.to_degrees()
                )));
            }
        }
        pairs.push((axis, e, i));
    }
    Ok(MergeFactorSpec {
        existing: existing.id,
        incoming: incoming.id,
        pairs,
    })
}

/// Convert a pairing into graph factor form, dropping identification rows
/// for walls that already share one variable.
pub fn merge_axis_pairs(
    spec: &MergeFactorSpec,
    wall_vars: &HashMap<WallId, VarId>,
) -> Vec<MergeAxisPair> {
    spec.pairs
        .iter()
        .map(|(axis, e, i)| {
            let existing_pos = (e[0] != i[0]).then(|| wall_vars[&e[0]]);
            let existing_neg = (e[1] != i[1]).then(|| wall_vars[&e[1]]);
            MergeAxisPair {
                axis: *axis,
                incoming_pos: wall_vars[&i[0]],
                incoming_neg: wall_vars[&i[1]],
                existing_pos,
                existing_neg,
            }
        })
        .collect()
}

/// Fold the incoming room into the existing one: transfer keyframes and
/// cells, re-associate duplicate walls onto the surviving variables, retire
/// the incoming node and its orphaned wall variables. Room count drops by
/// one.
pub fn apply_merge(
    rooms: &mut [RoomNode],
    spec: &MergeFactorSpec,
    registry: &mut WallRegistry,
    graph: &mut FactorGraph,
    room_vars: &mut HashMap<RoomId, VarId>,
    wall_vars: &mut HashMap<WallId, VarId>,
) -> Result<()> {
    let incoming_idx = rooms
        .iter()
        .position(|r| r.id == spec.incoming)
        .ok_or_else(|| Error::Pipeline(format!("unknown room {}", spec.incoming)))?;
    let existing_idx = rooms
        .iter()
        .position(|r| r.id == spec.existing)
        .ok_or_else(|| Error::Pipeline(format!("unknown room {}", spec.existing)))?;

    // Transfer membership.
    let (cells, keyframes) = {
        let inc = &rooms[incoming_idx];
        (inc.cells.clone(), inc.keyframes.clone())
    };
    {
        let ex = &mut rooms[existing_idx];
        ex.cells.extend(cells);
        ex.keyframes.extend(keyframes);
        ex.keyframes.sort_unstable();
        ex.keyframes.dedup();
    }

    // Re-associate duplicate walls, then retire them.
    for (_, e, i) in &spec.pairs {
        for (we, wi) in e.iter().zip(i.iter()) {
            if we == wi {
                continue;
            }
            if let (Some(&keep), Some(&drop)) = (wall_vars.get(we), wall_vars.get(wi)) {
                graph.rewire_variable(drop, keep)?;
                graph.remove_variable(drop)?;
            }
            wall_vars.remove(wi);
            registry.absorb(*we, *wi);
            // Any other room still naming the duplicate follows the survivor.
            for r in rooms.iter_mut() {
                for v in r.walls.values_mut() {
                    if v == wi {
                        *v = *we;
                    }
                }
            }
        }
    }

    // Retire the incoming node and its center variable.
    if let Some(var) = room_vars.remove(&spec.incoming) {
        for f in graph.factors_referencing(var) {
            graph.remove_factor(f);
        }
        graph.remove_variable(var)?;
    }
    rooms[incoming_idx].retired = true;
    rooms[incoming_idx].keyframes.clear();
    Ok(())
}
