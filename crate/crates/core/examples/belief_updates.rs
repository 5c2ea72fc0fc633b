//! How the open-loop, Bayes and partially closed-loop updates treat an agent
//! with two motion patterns.
//!
//! cargo run --example belief_updates

use rbrhc::belief::{apply_rule, bayes_update, Observation, UpdateRule};
use rbrhc::scenario::builtin;
use rbrhc::sim::{sample_ground_truth, SimMode};

fn main() -> rbrhc::Result<()> {
    let scenario = builtin("exp2_three_vehicle").expect("builtin").build()?;
    let dynamics = &scenario.planner.dynamics;
    let start = scenario.nominal_start();

    for (label, pattern) in [("turns off", 0), ("goes straight", 1)] {
        // a realized world in which vehicle2 follows `pattern`
        let truth = (0..)
            .map(|seed| sample_ground_truth(&scenario, seed, SimMode::Guarantee))
            .find(|t| t.patterns[1] == pattern)
            .expect("both patterns occur");
        let mut bayes = scenario.initial_belief(start);
        let mut open_loop = bayes.clone();
        let mut pcl = bayes.clone();
        println!("vehicle2 {label}: weights [turn off, straight]");
        for k in 0..12 {
            let y = Observation {
                ego: start,
                agent_positions: truth
                    .agents
                    .iter()
                    .zip(&truth.observation_noise[k + 1])
                    .map(|(traj, n)| [traj[k + 1].x + n[0], traj[k + 1].y + n[1]])
                    .collect(),
            };
            bayes = bayes_update(&bayes, 0.0, &y, dynamics)?;
            open_loop = apply_rule(UpdateRule::OpenLoop, &open_loop, 0.0, dynamics)?;
            pcl = apply_rule(UpdateRule::Pcl, &pcl, 0.0, dynamics)?;
            let w = |b: &rbrhc::belief::WorldBelief| {
                let w = b.agents[1].weights();
                format!("[{:.3}, {:.3}]", w[0], w[1])
            };
            println!("  step {:>2}  bayes {}  open-loop {}  pcl {}", k + 1, w(&bayes), w(&open_loop), w(&pcl));
        }
    }
    Ok(())
}
