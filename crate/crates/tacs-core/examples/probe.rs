//! Scratch diagnostics runner (RUST_LOG=debug cargo run --example probe -- <archetype>).

use tacs_core::pipeline::{self, PipelineConfig};
use tacs_core::worldsim::{default_trajectory, generate_world, simulate_run, NoiseModel, SensorModel, WorldSpec};

fn main() {
    env_logger::init();
    let arch = std::env::args().nth(1).unwrap_or_else(|| "multi_room".into());
    let spec = match arch.as_str() {
        "multi_room" => WorldSpec::MultiRoom { resolution: 0.1, n_rooms: 3 },
        "corridor" => WorldSpec::Corridor { resolution: 0.1, length: 30.0, width: 3.0 },
        "loop" => WorldSpec::CorridorLoop { resolution: 0.1, side: 12.0 },
        "mezzanine" => WorldSpec::Mezzanine { resolution: 0.1 },
        _ => WorldSpec::SingleRoom { resolution: 0.1, width: 6.0, height: 6.0, extent_m: None },
    };
    let world = generate_world(&spec, 1).unwrap();
    let runlog = simulate_run(&world, &default_trajectory(&spec), &SensorModel::default(), &NoiseModel::default(), 1).unwrap();
    let cfg = PipelineConfig::default();
    let (export, report) = pipeline::build_graph(&runlog, &cfg).unwrap();
    println!("rooms={} walls={} kf={} loops={} merges={} epochs={}",
        export.layers.rooms.len(), export.layers.walls.len(), export.layers.keyframes.len(),
        report.n_loop, report.merges.len(), report.n_epochs);
    for r in &export.layers.rooms {
        println!("  room {} kind={} center=({:.2},{:.2}) cells={}", r.id, r.kind, r.center[0], r.center[1], r.cells.len());
    }
    for w in &export.layers.walls {
        println!("  wall {} {:?} n=({:.2},{:.2}) d={:.2} ", w.id, w.category, w.normal[0], w.normal[1], w.offset);
    }
    for m in &report.merges {
        println!("  merge t={:.1} {}<-{} rb={:.3} ra={:.3} applied={}", m.t, m.existing_id, m.incoming_id, m.residual_before, m.residual_after, m.applied);
    }
}
