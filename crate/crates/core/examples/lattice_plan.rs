//! One chance-constrained solve on the T-junction: the multiplier search,
//! then the cheapest plan for a range of risk budgets.
//!
//! cargo run --release --example lattice_plan

use rbrhc::planner::{solve_chance_constrained, Propagation, DEFAULT_TOL};
use rbrhc::scenario::builtin;

fn main() -> rbrhc::Result<()> {
    let scenario = builtin("exp1_tjunction").expect("builtin").build()?;
    let b0 = scenario.initial_belief(scenario.nominal_start());
    let planner = &scenario.planner;
    let graph = planner.expand_graph(&b0, scenario.plan_horizon(), Propagation::OPEN_LOOP_THEN_PCL, true)?;
    println!("lattice: {} nodes, {} edges", graph.node_count(), graph.edge_count());

    for rho in [1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-6] {
        let out = solve_chance_constrained(&graph, rho, DEFAULT_TOL)?;
        match out.plan {
            Some(p) => println!(
                "rho {rho:<7} cost {:>7.3} risk {:.3e} lambda {:.3e} probes {:>3} gap <= {:.2e}  controls {:?}",
                p.total_cost,
                p.total_risk,
                p.lambda,
                out.trace.len(),
                out.duality_gap_bound,
                &p.controls[..8]
            ),
            None => println!("rho {rho:<7} infeasible"),
        }
    }
    Ok(())
}
