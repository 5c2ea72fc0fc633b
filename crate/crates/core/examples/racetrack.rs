//! The racetrack counterexample: receding-horizon JCC exceeds the interval
//! bound, the risk budget does not.
//!
//! cargo run --example racetrack

use rbrhc::controller::{Algorithm, ControllerKind, Irb};
use rbrhc::discrete::{exact_policy_risk, racetrack_model, ControllerPolicy, SequencePolicy};
use rbrhc::discrete::racetrack::{MPH100, MPH70, MPH90};

fn main() -> rbrhc::Result<()> {
    let model = racetrack_model();
    let irb = Irb::new(0.1, 0.0, 2)?;

    println!("open-loop sequences");
    for (a, b) in [(MPH70, MPH70), (MPH70, MPH90), (MPH100, MPH70), (MPH100, MPH90)] {
        let r = exact_policy_risk(&model, SequencePolicy(vec![a, b]))?;
        println!(
            "  {:>6} then {:<6} risk {:<5} expected time {:.3}",
            model.control_names[a], model.control_names[b], r.exact, r.expected_cost
        );
    }

    println!("closed-loop controllers, bound {}", irb.total());
    for alg in Algorithm::ALL {
        let kind = ControllerKind::from_irb(alg, &irb, 2);
        let r = exact_policy_risk(&model, ControllerPolicy::new(kind, &irb, 2, 2))?;
        let verdict = if r.exact <= irb.total() + 1e-12 { "within" } else { "VIOLATES" };
        println!("  {:<8} exact risk {:<5} ({verdict} bound), histories {}", alg, r.exact, r.nodes);
    }
    Ok(())
}
