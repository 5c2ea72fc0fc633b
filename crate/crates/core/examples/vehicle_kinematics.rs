//! Arc-length kinematics, emergency stops and footprint overlap of a
//! tractor-trailer on a left-turn path.
//!
//! cargo run --example vehicle_kinematics

use rbrhc::scenario::builtin;
use rbrhc::sim::ego_rects;
use rbrhc::vehicle::{advance_on_path, emergency_stop_controls, EgoKinematicState};

fn main() -> rbrhc::Result<()> {
    let scenario = builtin("exp2_three_vehicle").expect("builtin").build()?;
    let path = &scenario.path;
    let stop = scenario.planner.stop;
    println!("path length {:.2} m, t_stop {} steps", path.length(), stop.t_stop());

    let mut x = EgoKinematicState::new(95.0, 6.0);
    for u in emergency_stop_controls(x.v, &stop) {
        x = advance_on_path(x, u, stop.dt, path);
        let p = path.pose_at_clamped(x.s);
        println!("u {u:>4}: s {:.2} v {:.1} at ({:.2}, {:.2}) heading {:.3}", x.s, x.v, p.x, p.y, p.heading);
    }

    // the trailer lags the tractor around the turn
    for s in [100.0, 110.0, 120.0] {
        let parts = ego_rects(&scenario, s);
        let tractor = &parts[0];
        let trailer = &parts[1];
        println!(
            "s {s}: tractor at ({:.2}, {:.2}), trailer at ({:.2}, {:.2}), parts overlap {}",
            tractor.center[0],
            tractor.center[1],
            trailer.center[0],
            trailer.center[1],
            tractor.overlaps(trailer)
        );
    }
    Ok(())
}
