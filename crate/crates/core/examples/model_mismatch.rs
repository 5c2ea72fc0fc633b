//! Robustness exploration: the true agent deviations are inflated beyond
//! the planner's model, which voids the guarantee.
//!
//! cargo run --release --example model_mismatch -- [trials]

use rbrhc::controller::Algorithm;
use rbrhc::scenario::builtin;
use rbrhc::sim::{run_monte_carlo, SimMode};

fn main() -> rbrhc::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let scenario = builtin("exp1_tjunction").expect("builtin").build()?;
    for scale in [1.0, 2.0, 4.0, 8.0] {
        let mode = if scale == 1.0 { SimMode::Guarantee } else { SimMode::ModelMismatch { scale } };
        let run = run_monte_carlo(&scenario, &[Algorithm::RbRhc, Algorithm::PclRhc], &scenario.irb, trials, 0, mode)?;
        for s in &run.summary.algorithms {
            println!(
                "scale {scale:<3} {:<8} collisions {:>4}/{trials}  wilson95 [{:.4}, {:.4}]",
                s.algorithm, s.collisions, s.wilson_low, s.wilson_high
            );
        }
    }
    Ok(())
}
