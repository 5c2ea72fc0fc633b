//! Disk covers of rectangular footprints and the analytic two-disk overlap
//! bound against sampling.
//!
//! cargo run --release --example disk_bound

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbrhc::risk::{cover_footprint, disk_collision_bound};
use rbrhc::vehicle::FootprintSpec;
use rbrhc::verify::{monte_carlo_overlap, DiskInstance};

fn main() -> rbrhc::Result<()> {
    let bus = FootprintSpec::new(12.6, 2.4, 0.0)?;
    for n in 1..=4 {
        let cover = cover_footprint(&bus, n);
        println!(
            "bus with {n} disks: radius {:.3}, centers at {}",
            cover.disks[0].radius,
            cover
                .disks
                .iter()
                .map(|d| format!("{:.3}", d.center[0]))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("gap    analytic  sampled (1e6)");
    for gap in [-1.0, 0.0, 0.5, 1.0, 2.0, 3.0] {
        let inst = DiskInstance {
            mu1: [0.0, 0.0],
            sigma1: Matrix2::new(0.5, 0.1, 0.1, 0.3),
            r1: 1.2,
            mu2: [2.4 + gap, 0.0],
            sigma2: Matrix2::new(0.4, 0.0, 0.0, 0.4),
            r2: 1.2,
        };
        let bound = disk_collision_bound(inst.mu1, &inst.sigma1, inst.r1, inst.mu2, &inst.sigma2, inst.r2);
        let (p, se) = monte_carlo_overlap(&inst, 1_000_000, &mut rng);
        println!("{gap:<5}  {bound:.5}   {p:.5} +- {:.5}", 3.0 * se);
    }
    Ok(())
}
