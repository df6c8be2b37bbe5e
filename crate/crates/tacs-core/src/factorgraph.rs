//! Hierarchical factor graph over keyframe poses, wall planes, and room
//! centers, optimized by Levenberg–Marquardt with analytic Jacobians.
//!
//! Wall planes are parameterized as (normal angle, offset) so no unit-norm
//! constraint enters the optimization. The first pose is fixed as the gauge.
//! Loop-closure and merge factors carry a Huber kernel; odometry and plane
//! factors run unrobustified.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::{wrap_angle, Se2};
use crate::walls::Axis;

pub type VarId = u32;
pub type FactorId = u32;

/// Variable payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarValue {
    /// SE(2) keyframe pose.
    Pose(Se2),
    /// Wall plane as (normal angle, offset): n = (cos a, sin a), n·p = d.
    Wall { angle: f64, offset: f64 },
    /// Room center.
    Point([f64; 2]),
}

impl VarValue {
    pub fn dim(&self) -> usize {
        match self {
            VarValue::Pose(_) => 3,
            VarValue::Wall { .. } => 2,
            VarValue::Point(_) => 2,
        }
    }

    pub fn component(&self, i: usize) -> f64 {
        match self {
            VarValue::Pose(p) => [p.x, p.y, p.theta][i],
            VarValue::Wall { angle, offset } => [*angle, *offset][i],
            VarValue::Point(p) => p[i],
        }
    }

    pub fn add_component(&mut self, i: usize, delta: f64) {
        match self {
            VarValue::Pose(p) => match i {
                0 => p.x += delta,
                1 => p.y += delta,
                _ => p.theta = wrap_angle(p.theta + delta),
            },
            VarValue::Wall { angle, offset } => match i {
                0 => *angle = wrap_angle(*angle + delta),
                _ => *offset += delta,
            },
            VarValue::Point(p) => p[i] += delta,
        }
    }

    pub fn as_pose(&self) -> Se2 {
        match self {
            VarValue::Pose(p) => *p,
            _ => panic!("variable is not a pose"),
        }
    }

    pub fn as_wall(&self) -> (f64, f64) {
        match self {
            VarValue::Wall { angle, offset } => (*angle, *offset),
            _ => panic!("variable is not a wall"),
        }
    }

    pub fn as_point(&self) -> [f64; 2] {
        match self {
            VarValue::Point(p) => *p,
            _ => panic!("variable is not a point"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub id: VarId,
    pub value: VarValue,
    pub fixed: bool,
}

/// Per-axis wall pairing inside a merge factor. `existing_*` is `None` when
/// the incoming wall was already associated to the same registry wall, in
/// which case there is no identification row for that side.
#[derive(Debug, Clone)]
pub struct MergeAxisPair {
    pub axis: Axis,
    pub incoming_pos: VarId,
    pub incoming_neg: VarId,
    pub existing_pos: Option<VarId>,
    pub existing_neg: Option<VarId>,
}

/// Factor payloads. Information matrices are symmetric positive definite.
#[derive(Debug, Clone)]
pub enum FactorKind {
    /// Relative SE(2) measurement between consecutive keyframes.
    Odometry {
        from: VarId,
        to: VarId,
        measured: Se2,
        info: [f64; 3],
    },
    /// Relative SE(2) measurement from scan matching (Huber-robustified).
    LoopClosure {
        from: VarId,
        to: VarId,
        measured: Se2,
        info: [f64; 3],
    },
    /// Body-frame wall observation (angle, offset) from a keyframe.
    PosePlane {
        pose: VarId,
        wall: VarId,
        measured_angle: f64,
        measured_offset: f64,
        info: [f64; 2],
    },
    /// Room center sits at the midpoint of its bounding wall pair along one
    /// axis.
    RoomWall {
        room: VarId,
        wall_pos: VarId,
        wall_neg: VarId,
        axis: Axis,
        weight: f64,
    },
    /// Wall-to-wall room merge: drives both room centers onto the midpoint
    /// implied by the incoming wall pair and equates matched wall offsets
    /// (Huber-robustified).
    Merge {
        existing_room: VarId,
        incoming_room: VarId,
        pairs: Vec<MergeAxisPair>,
        weight: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Factor {
    pub id: FactorId,
    pub kind: FactorKind,
    /// Huber delta; `None` = pure quadratic.
    pub robust: Option<f64>,
}

impl Factor {
    /// Referenced variable ids, in Jacobian order.
    pub fn variables(&self) -> Vec<VarId> {
        match &self.kind {
            FactorKind::Odometry { from, to, .. } | FactorKind::LoopClosure { from, to, .. } => {
                vec![*from, *to]
            }
            FactorKind::PosePlane { pose, wall, .. } => vec![*pose, *wall],
            FactorKind::RoomWall {
                room,
                wall_pos,
                wall_neg,
                ..
            } => vec![*room, *wall_pos, *wall_neg],
            FactorKind::Merge {
                existing_room,
                incoming_room,
                pairs,
                ..
            } => {
                let mut v = vec![*existing_room, *incoming_room];
                for p in pairs {
                    v.push(p.incoming_pos);
                    v.push(p.incoming_neg);
                    if let Some(w) = p.existing_pos {
                        v.push(w);
                    }
                    if let Some(w) = p.existing_neg {
                        v.push(w);
                    }
                }
                v
            }
        }
    }

    pub fn residual_dim(&self) -> usize {
        match &self.kind {
            FactorKind::Odometry { .. } | FactorKind::LoopClosure { .. } => 3,
            FactorKind::PosePlane { .. } => 2,
            FactorKind::RoomWall { .. } => 1,
            FactorKind::Merge { pairs, .. } => pairs
                .iter()
                .map(|p| {
                    2 + p.existing_pos.is_some() as usize + p.existing_neg.is_some() as usize
                })
                .sum(),
        }
    }
}

/// Signed wall position along an axis and its derivative w.r.t. (angle,
/// offset). Valid while the wall's normal stays within ~60° of the axis.
fn wall_axis_pos(angle: f64, offset: f64, axis: Axis) -> (f64, [f64; 2]) {
    match axis {
        Axis::X => {
            let c = angle.cos();
            (offset / c, [offset * angle.sin() / (c * c), 1.0 / c])
        }
        Axis::Y => {
            let s = angle.sin();
            (offset / s, [-offset * angle.cos() / (s * s), 1.0 / s])
        }
    }
}

fn axis_index(axis: Axis) -> usize {
    match axis {
        Axis::X => 0,
        Axis::Y => 1,
    }
}

/// Residual of a relative SE(2) measurement: local coordinates of
/// measured⁻¹ ∘ (from⁻¹ ∘ to).
fn relative_residual(from: Se2, to: Se2, measured: Se2) -> DVector<f64> {
    let pred = from.between(to);
    let err = measured.between(pred);
    DVector::from_vec(vec![err.x, err.y, wrap_angle(err.theta)])
}

fn relative_jacobians(from: Se2, to: Se2, measured: Se2) -> (DMatrix<f64>, DMatrix<f64>) {
    let (si, ci) = from.theta.sin_cos();
    let (sz, cz) = measured.theta.sin_cos();
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    // Rz^T * Ri^T and Rz^T * d(Ri^T)/dθ · Δ.
    let rzt = [[cz, sz], [-sz, cz]];
    let rit = [[ci, si], [-si, ci]];
    let dri = [[-si, ci], [-ci, -si]];
    let mat2 = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| -> [[f64; 2]; 2] {
        [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ]
    };
    let rz_ri = mat2(rzt, rit);
    let rz_dri = mat2(rzt, dri);
    let dtheta_col = [
        rz_dri[0][0] * dx + rz_dri[0][1] * dy,
        rz_dri[1][0] * dx + rz_dri[1][1] * dy,
    ];
    let mut ja = DMatrix::zeros(3, 3);
    let mut jb = DMatrix::zeros(3, 3);
    for r in 0..2 {
        for c in 0..2 {
            ja[(r, c)] = -rz_ri[r][c];
            jb[(r, c)] = rz_ri[r][c];
        }
        ja[(r, 2)] = dtheta_col[r];
    }
    ja[(2, 2)] = -1.0;
    jb[(2, 2)] = 1.0;
    (ja, jb)
}

/// The factor graph: variable and factor registries with optimization.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    variables: Vec<Option<Variable>>,
    factors: Vec<Option<Factor>>,
}

impl FactorGraph {
    pub fn new() -> Self {
        FactorGraph::default()
    }

    pub fn add_variable(&mut self, value: VarValue, fixed: bool) -> VarId {
        let id = self.variables.len() as VarId;
        self.variables.push(Some(Variable { id, value, fixed }));
        id
    }

    pub fn variable(&self, id: VarId) -> Result<&Variable> {
        self.variables
            .get(id as usize)
            .and_then(|v| v.as_ref())
            .ok_or(Error::UnknownVariable(id))
    }

    pub fn value(&self, id: VarId) -> VarValue {
        self.variables[id as usize]
            .as_ref()
            .expect("variable exists")
            .value
    }

    pub fn set_value(&mut self, id: VarId, value: VarValue) {
        if let Some(Some(v)) = self.variables.get_mut(id as usize) {
            v.value = value;
        }
    }

    pub fn set_fixed(&mut self, id: VarId, fixed: bool) {
        if let Some(Some(v)) = self.variables.get_mut(id as usize) {
            v.fixed = fixed;
        }
    }

    pub fn add_factor(&mut self, kind: FactorKind, robust: Option<f64>) -> Result<FactorId> {
        let id = self.factors.len() as FactorId;
        let factor = Factor { id, kind, robust };
        for v in factor.variables() {
            self.variable(v)?;
        }
        self.factors.push(Some(factor));
        Ok(id)
    }

    pub fn factor(&self, id: FactorId) -> Option<&Factor> {
        self.factors.get(id as usize).and_then(|f| f.as_ref())
    }

    pub fn remove_factor(&mut self, id: FactorId) {
        if let Some(slot) = self.factors.get_mut(id as usize) {
            *slot = None;
        }
    }

    /// Factors currently referencing a variable.
    pub fn factors_referencing(&self, id: VarId) -> Vec<FactorId> {
        self.active_factors()
            .filter(|f| f.variables().contains(&id))
            .map(|f| f.id)
            .collect()
    }

    /// Remove a variable; fails while any factor still references it.
    pub fn remove_variable(&mut self, id: VarId) -> Result<()> {
        self.variable(id)?;
        let blocking = self.factors_referencing(id);
        if !blocking.is_empty() {
            return Err(Error::VariableInUse {
                var: id,
                factors: blocking,
            });
        }
        self.variables[id as usize] = None;
        Ok(())
    }

    /// Rewire every reference of `from` to `to` (wall retirement after a
    /// merge; measurements stay valid because both describe one physical
    /// wall).
    pub fn rewire_variable(&mut self, from: VarId, to: VarId) -> Result<()> {
        self.variable(to)?;
        for f in self.factors.iter_mut().flatten() {
            let k = &mut f.kind;
            let sub = |v: &mut VarId| {
                if *v == from {
                    *v = to;
                }
            };
            match k {
                FactorKind::Odometry { from: a, to: b, .. }
                | FactorKind::LoopClosure { from: a, to: b, .. } => {
                    sub(a);
                    sub(b);
                }
                FactorKind::PosePlane { pose, wall, .. } => {
                    sub(pose);
                    sub(wall);
                }
                FactorKind::RoomWall {
                    room,
                    wall_pos,
                    wall_neg,
                    ..
                } => {
                    sub(room);
                    sub(wall_pos);
                    sub(wall_neg);
                }
                FactorKind::Merge {
                    existing_room,
                    incoming_room,
                    pairs,
                    ..
                } => {
                    sub(existing_room);
                    sub(incoming_room);
                    for p in pairs {
                        sub(&mut p.incoming_pos);
                        sub(&mut p.incoming_neg);
                        if let Some(w) = &mut p.existing_pos {
                            sub(w);
                        }
                        if let Some(w) = &mut p.existing_neg {
                            sub(w);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn variable_count(&self) -> usize {
        self.variables.iter().flatten().count()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.iter().flatten().count()
    }

    pub fn active_factors(&self) -> impl Iterator<Item = &Factor> + '_ {
        self.factors.iter().flatten()
    }

    pub fn active_variables(&self) -> impl Iterator<Item = &Variable> + '_ {
        self.variables.iter().flatten()
    }

    /// Snapshot of all variable values (merge rollback).
    pub fn snapshot(&self) -> Vec<(VarId, VarValue)> {
        self.active_variables().map(|v| (v.id, v.value)).collect()
    }

    pub fn restore(&mut self, snapshot: &[(VarId, VarValue)]) {
        for (id, value) in snapshot {
            self.set_value(*id, *value);
        }
    }

    /// Raw (unwhitened) residual of a factor at current values.
    pub fn residual(&self, factor: &Factor) -> DVector<f64> {
        match &factor.kind {
            FactorKind::Odometry {
                from, to, measured, ..
            }
            | FactorKind::LoopClosure {
                from, to, measured, ..
            } => relative_residual(
                self.value(*from).as_pose(),
                self.value(*to).as_pose(),
                *measured,
            ),
            FactorKind::PosePlane {
                pose,
                wall,
                measured_angle,
                measured_offset,
                ..
            } => {
                let p = self.value(*pose).as_pose();
                let (angle, offset) = self.value(*wall).as_wall();
                let pred_angle = wrap_angle(angle - p.theta);
                let pred_offset = offset - (angle.cos() * p.x + angle.sin() * p.y);
                DVector::from_vec(vec![
                    wrap_angle(pred_angle - measured_angle),
                    pred_offset - measured_offset,
                ])
            }
            FactorKind::RoomWall {
                room,
                wall_pos,
                wall_neg,
                axis,
                ..
            } => {
                let c = self.value(*room).as_point();
                let (ap, dp) = self.value(*wall_pos).as_wall();
                let (an, dn) = self.value(*wall_neg).as_wall();
                let (pp, _) = wall_axis_pos(ap, dp, *axis);
                let (pn, _) = wall_axis_pos(an, dn, *axis);
                DVector::from_vec(vec![c[axis_index(*axis)] - 0.5 * (pp + pn)])
            }
            FactorKind::Merge {
                existing_room,
                incoming_room,
                pairs,
                ..
            } => {
                let ce = self.value(*existing_room).as_point();
                let ci = self.value(*incoming_room).as_point();
                let mut rows = Vec::new();
                for p in pairs {
                    let ai = axis_index(p.axis);
                    let (wa, wd) = self.value(p.incoming_pos).as_wall();
                    let (pos_ip, _) = wall_axis_pos(wa, wd, p.axis);
                    let (wa, wd) = self.value(p.incoming_neg).as_wall();
                    let (pos_in, _) = wall_axis_pos(wa, wd, p.axis);
                    let mid = 0.5 * (pos_ip + pos_in);
                    rows.push(ce[ai] - mid);
                    rows.push(ci[ai] - mid);
                    if let Some(w) = p.existing_pos {
                        let (ea, ed) = self.value(w).as_wall();
                        let (pos_ep, _) = wall_axis_pos(ea, ed, p.axis);
                        rows.push(pos_ip - pos_ep);
                    }
                    if let Some(w) = p.existing_neg {
                        let (ea, ed) = self.value(w).as_wall();
                        let (pos_en, _) = wall_axis_pos(ea, ed, p.axis);
                        rows.push(pos_in - pos_en);
                    }
                }
                DVector::from_vec(rows)
            }
        }
    }

    /// Analytic Jacobian blocks, aligned with [`Factor::variables`].
    pub fn jacobians(&self, factor: &Factor) -> Vec<DMatrix<f64>> {
        match &factor.kind {
            FactorKind::Odometry {
                from, to, measured, ..
            }
            | FactorKind::LoopClosure {
                from, to, measured, ..
            } => {
                let (ja, jb) = relative_jacobians(
                    self.value(*from).as_pose(),
                    self.value(*to).as_pose(),
                    *measured,
                );
                vec![ja, jb]
            }
            FactorKind::PosePlane { pose, wall, .. } => {
                let p = self.value(*pose).as_pose();
                let (angle, _) = self.value(*wall).as_wall();
                let (s, c) = angle.sin_cos();
                let mut jp = DMatrix::zeros(2, 3);
                jp[(0, 2)] = -1.0;
                jp[(1, 0)] = -c;
                jp[(1, 1)] = -s;
                let mut jw = DMatrix::zeros(2, 2);
                jw[(0, 0)] = 1.0;
                jw[(1, 0)] = s * p.x - c * p.y;
                jw[(1, 1)] = 1.0;
                vec![jp, jw]
            }
            FactorKind::RoomWall {
                wall_pos,
                wall_neg,
                axis,
                ..
            } => {
                let (ap, dp) = self.value(*wall_pos).as_wall();
                let (an, dn) = self.value(*wall_neg).as_wall();
                let (_, gp) = wall_axis_pos(ap, dp, *axis);
                let (_, gn) = wall_axis_pos(an, dn, *axis);
                let mut jr = DMatrix::zeros(1, 2);
                jr[(0, axis_index(*axis))] = 1.0;
                let jp = DMatrix::from_row_slice(1, 2, &[-0.5 * gp[0], -0.5 * gp[1]]);
                let jn = DMatrix::from_row_slice(1, 2, &[-0.5 * gn[0], -0.5 * gn[1]]);
                vec![jr, jp, jn]
            }
            FactorKind::Merge { pairs, .. } => {
                let dim = factor.residual_dim();
                let vars = factor.variables();
                let mut index: BTreeMap<VarId, usize> = BTreeMap::new();
                for (k, v) in vars.iter().enumerate() {
                    index.insert(*v, k);
                }
                let mut jacs: Vec<DMatrix<f64>> = vars
                    .iter()
                    .map(|v| DMatrix::zeros(dim, self.value(*v).dim()))
                    .collect();
                let mut row = 0;
                for p in pairs {
                    let ai = axis_index(p.axis);
                    let (ipa, ipd) = self.value(p.incoming_pos).as_wall();
                    let (ina, ind) = self.value(p.incoming_neg).as_wall();
                    let (_, gip) = wall_axis_pos(ipa, ipd, p.axis);
                    let (_, gin) = wall_axis_pos(ina, ind, p.axis);
                    let k_ip = index[&p.incoming_pos];
                    let k_in = index[&p.incoming_neg];
                    // Row: existing center minus incoming wall midpoint.
                    jacs[0][(row, ai)] = 1.0;
                    for c in 0..2 {
                        jacs[k_ip][(row, c)] = -0.5 * gip[c];
                        jacs[k_in][(row, c)] = -0.5 * gin[c];
                    }
                    row += 1;
                    // Row: incoming center minus incoming wall midpoint.
                    jacs[1][(row, ai)] = 1.0;
                    for c in 0..2 {
                        jacs[k_ip][(row, c)] = -0.5 * gip[c];
                        jacs[k_in][(row, c)] = -0.5 * gin[c];
                    }
                    row += 1;
                    if let Some(w) = p.existing_pos {
                        let (ea, ed) = self.value(w).as_wall();
                        let (_, gep) = wall_axis_pos(ea, ed, p.axis);
                        let k_e = index[&w];
                        for c in 0..2 {
                            jacs[k_ip][(row, c)] = gip[c];
                            jacs[k_e][(row, c)] = -gep[c];
                        }
                        row += 1;
                    }
                    if let Some(w) = p.existing_neg {
                        let (ea, ed) = self.value(w).as_wall();
                        let (_, gen) = wall_axis_pos(ea, ed, p.axis);
                        let k_e = index[&w];
                        for c in 0..2 {
                            jacs[k_in][(row, c)] = gin[c];
                            jacs[k_e][(row, c)] = -gen[c];
                        }
                        row += 1;
                    }
                }
                jacs
            }
        }
    }

    /// Square root of the information matrix (whitener).
    fn whitener(&self, factor: &Factor) -> DMatrix<f64> {
        match &factor.kind {
            FactorKind::Odometry { info, .. } | FactorKind::LoopClosure { info, .. } => {
                DMatrix::from_diagonal(&DVector::from_vec(
                    info.iter().map(|v| v.sqrt()).collect(),
                ))
            }
            FactorKind::PosePlane { info, .. } => DMatrix::from_diagonal(&DVector::from_vec(
                info.iter().map(|v| v.sqrt()).collect(),
            )),
            FactorKind::RoomWall { weight, .. } => {
                DMatrix::from_element(1, 1, weight.sqrt())
            }
            FactorKind::Merge { weight, .. } => {
                let dim = factor.residual_dim();
                DMatrix::from_diagonal(&DVector::from_element(dim, weight.sqrt()))
            }
        }
    }

    /// Robustified total cost at current values.
    pub fn cost(&self) -> f64 {
        self.active_factors()
            .map(|f| {
                let e = self.whitener(f) * self.residual(f);
                let s = e.norm_squared();
                match f.robust {
                    Some(delta) => huber_rho(s, delta),
                    None => s,
                }
            })
            .sum()
    }
}

fn huber_rho(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        s
    } else {
        2.0 * delta * s.sqrt() - delta * delta
    }
}

fn huber_weight(s: f64, delta: f64) -> f64 {
    let n = s.sqrt();
    if n <= delta {
        1.0
    } else {
        delta / n
    }
}

/// Levenberg–Marquardt settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub rel_tol: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            max_iters: 50,
            lambda_init: 1e-6,
            rel_tol: 1e-9,
        }
    }
}

/// Optimization outcome; `cost_trace` holds the cost after every accepted
/// step.
#[derive(Debug, Clone)]
pub struct OptimizeStats {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub wall_time: f64,
    pub cost_trace: Vec<f64>,
}

struct Layout {
    offsets: BTreeMap<VarId, usize>,
    dim: usize,
}

fn layout(graph: &FactorGraph) -> Layout {
    let mut offsets = BTreeMap::new();
    let mut dim = 0;
    for v in graph.active_variables() {
        if !v.fixed {
            offsets.insert(v.id, dim);
            dim += v.value.dim();
        }
    }
    Layout { offsets, dim }
}

fn build_normal_equations(graph: &FactorGraph, lay: &Layout) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = DMatrix::zeros(lay.dim, lay.dim);
    let mut g = DVector::zeros(lay.dim);
    for f in graph.active_factors() {
        let w = graph.whitener(f);
        let e = &w * graph.residual(f);
        let irls = match f.robust {
            Some(delta) => huber_weight(e.norm_squared(), delta),
            None => 1.0,
        };
        let vars = f.variables();
        let jacs = graph.jacobians(f);
        let whitened: Vec<DMatrix<f64>> = jacs.iter().map(|j| &w * j).collect();
        for (a, va) in vars.iter().enumerate() {
            let Some(&oa) = lay.offsets.get(va) else {
                continue;
            };
            let ja = &whitened[a];
            let ga = irls * ja.transpose() * &e;
            for (r, val) in ga.iter().enumerate() {
                g[oa + r] += val;
            }
            for (b, vb) in vars.iter().enumerate() {
                let Some(&ob) = lay.offsets.get(vb) else {
                    continue;
                };
                let hab = irls * ja.transpose() * &whitened[b];
                for r in 0..hab.nrows() {
                    for c in 0..hab.ncols() {
                        h[(oa + r, ob + c)] += hab[(r, c)];
                    }
                }
            }
        }
    }
    (h, g)
}

fn apply_step(graph: &mut FactorGraph, lay: &Layout, dx: &DVector<f64>) {
    for (&id, &off) in &lay.offsets {
        let mut value = graph.value(id);
        for i in 0..value.dim() {
            value.add_component(i, dx[off + i]);
        }
        graph.set_value(id, value);
    }
}

/// Minimize the robustified squared residual sum by Levenberg–Marquardt.
/// Writes the solution into the graph; never leaves it at a higher cost
/// than it started with.
pub fn optimize(graph: &mut FactorGraph, config: &OptimizeConfig) -> Result<OptimizeStats> {
    let start = Instant::now();
    let lay = layout(graph);
    let initial_cost = graph.cost();
    let mut stats = OptimizeStats {
        iterations: 0,
        initial_cost,
        final_cost: initial_cost,
        wall_time: 0.0,
        cost_trace: vec![initial_cost],
    };
    if lay.dim == 0 || initial_cost < 1e-18 {
        stats.wall_time = start.elapsed().as_secs_f64();
        return Ok(stats);
    }
    let mut lambda = config.lambda_init;
    let mut cost = initial_cost;
    while stats.iterations < config.max_iters {
        let (h, g) = build_normal_equations(graph, &lay);
        if g.amax() < 1e-12 {
            break;
        }
        let mut stepped = false;
        while stats.iterations < config.max_iters {
            stats.iterations += 1;
            let mut damped = h.clone();
            for i in 0..lay.dim {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e10 {
                    return Err(under_constrained(graph, &lay, &h));
                }
                continue;
            };
            let dx = chol.solve(&(-&g));
            let snapshot = graph.snapshot();
            apply_step(graph, &lay, &dx);
            let trial = graph.cost();
            if trial < cost {
                let rel = (cost - trial) / cost.max(1e-300);
                cost = trial;
                stats.cost_trace.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                stepped = rel >= config.rel_tol;
                break;
            }
            graph.restore(&snapshot);
            lambda *= 10.0;
            if lambda > 1e10 {
                stepped = false;
                break;
            }
        }
        if !stepped {
            break;
        }
    }
    stats.final_cost = cost;
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok(stats)
}

fn under_constrained(graph: &FactorGraph, lay: &Layout, h: &DMatrix<f64>) -> Error {
    let mut ids = Vec::new();
    for (&id, &off) in &lay.offsets {
        let dim = graph.value(id).dim();
        if (0..dim).any(|i| h[(off + i, off + i)] < 1e-9) {
            ids.push(id);
        }
    }
    Error::UnderConstrained { ids }
}

/// Text dump in a g2o-style line format (VERTEX/EDGE records).
pub fn to_g2o(graph: &FactorGraph) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for v in graph.active_variables() {
        match v.value {
            VarValue::Pose(p) => {
                writeln!(out, "VERTEX_SE2 {} {} {} {}", v.id, p.x, p.y, p.theta).ok();
            }
            VarValue::Wall { angle, offset } => {
                writeln!(out, "VERTEX_WALL {} {} {}", v.id, angle, offset).ok();
            }
            VarValue::Point(p) => {
                writeln!(out, "VERTEX_ROOM {} {} {}", v.id, p[0], p[1]).ok();
            }
        }
        if v.fixed {
            writeln!(out, "FIX {}", v.id).ok();
        }
    }
    for f in graph.active_factors() {
        match &f.kind {
            FactorKind::Odometry {
                from, to, measured, info,
            } => {
                writeln!(
                    out,
                    "EDGE_SE2 {} {} {} {} {} {} {} {}",
                    from, to, measured.x, measured.y, measured.theta, info[0], info[1], info[2]
                )
                .ok();
            }
            FactorKind::LoopClosure {
                from, to, measured, info,
            } => {
                writeln!(
                    out,
                    "EDGE_SE2_LOOP {} {} {} {} {} {} {} {}",
                    from, to, measured.x, measured.y, measured.theta, info[0], info[1], info[2]
                )
                .ok();
            }
            FactorKind::PosePlane {
                pose,
                wall,
                measured_angle,
                measured_offset,
                info,
            } => {
                writeln!(
                    out,
                    "EDGE_POSE_WALL {} {} {} {} {} {}",
                    pose, wall, measured_angle, measured_offset, info[0], info[1]
                )
                .ok();
            }
            FactorKind::RoomWall {
                room,
                wall_pos,
                wall_neg,
                axis,
                weight,
            } => {
                writeln!(
                    out,
                    "EDGE_ROOM_WALL {} {} {} {:?} {}",
                    room, wall_pos, wall_neg, axis, weight
                )
                .ok();
            }
            FactorKind::Merge {
                existing_room,
                incoming_room,
                weight,
                ..
            } => {
                writeln!(out, "EDGE_MERGE {} {} {}", existing_room, incoming_room, weight).ok();
            }
        }
    }
    out
}
