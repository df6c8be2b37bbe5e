use tacs_core::traversability::{update_field, CellState, ObservedKind, RobotModel, TraversabilityField};
use tacs_core::worldsim::{default_trajectory, generate_world, simulate_run, NoiseModel, SensorModel, WorldSpec};

fn main() {
    let spec = WorldSpec::MultiRoom { resolution: 0.1, n_rooms: 3 };
    let world = generate_world(&spec, 1).unwrap();
    let runlog = simulate_run(&world, &default_trajectory(&spec), &SensorModel::default(), &NoiseModel::default(), 1).unwrap();
    let sensor = SensorModel::default();
    let mut field = TraversabilityField::new(0.1, RobotModel::default());
    let watch: Vec<(i32,i32)> = (7..=38).map(|x| (x, 24)).collect();
    let is_obst = |f: &TraversabilityField, c: (i32,i32)| matches!(f.state(c), CellState::Observed{kind: ObservedKind::Obstacle, ..});
    let mut found = 0;
    for (si, step) in runlog.steps.iter().enumerate() {
        let before: Vec<bool> = watch.iter().map(|c| is_obst(&field, *c)).collect();
        update_field(&mut field, &step.scan, step.odom_pose, &sensor);
        for (k, c) in watch.iter().enumerate() {
            if !before[k] && is_obst(&field, *c) {
                let pose = step.odom_pose;
                for (i, &r) in step.scan.ranges.iter().enumerate() {
                    if r >= sensor.max_range * 0.999 { continue; }
                    let a = pose.theta + sensor.beam_angle(i);
                    let depth = r + 0.001;
                    let hc = (((pose.x + depth*a.cos())/0.1).floor() as i32, ((pose.y + depth*a.sin())/0.1).floor() as i32);
                    if hc == *c {
                        println!("step {si} pose=({:.4},{:.4},{:.4}) beam {i} angle_w={:.6} range={:.9} end=({:.6},{:.6})",
                            pose.x, pose.y, pose.theta, a, r, pose.x + r*a.cos(), pose.y + r*a.sin());
                        found += 1;
                    }
                }
            }
        }
        if found >= 4 { break; }
    }
}
