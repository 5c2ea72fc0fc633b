//! One closed-loop RB-RHC episode with its risk-budget ledger, next to the
//! JCC-RHC baseline on the same realized world.
//!
//! cargo run --release --example budget_episode -- [scenario] [seed]

use rbrhc::controller::{Algorithm, ControllerKind};
use rbrhc::scenario::builtin;
use rbrhc::sim::{run_episode, sample_ground_truth, SimMode, SimPlanner};

fn main() -> rbrhc::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "exp2_three_vehicle".into());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let scenario = builtin(&name).expect("unknown scenario").build()?;
    let planner = SimPlanner::new(&scenario.planner);
    let truth = sample_ground_truth(&scenario, seed, SimMode::Guarantee);
    println!("{name}, seed {seed}, realized patterns {:?}", truth.patterns);

    for alg in [Algorithm::RbRhc, Algorithm::JccRhc] {
        let kind = ControllerKind::from_irb(alg, &scenario.irb, scenario.plan_horizon());
        let trace = run_episode(&scenario, &planner, kind, &scenario.irb, &truth)?;
        println!(
            "{alg}: cost {:.3}, collided {}, goal {}",
            trace.total_cost, trace.collided, trace.reached_goal
        );
        println!("  step  u     s       v    budget     booked     planned    gap");
        for s in &trace.steps {
            println!(
                "  {:>4} {:>4} {:>7.2} {:>4.1}  {:.3e}  {:.3e}  {:>9}  {:.1}",
                s.step,
                s.control,
                s.state.s,
                s.state.v,
                s.rho,
                s.booked_risk,
                s.planned_risk.map(|r| format!("{r:.2e}")).unwrap_or("-".into()),
                s.min_agent_distance
            );
        }
    }
    Ok(())
}
