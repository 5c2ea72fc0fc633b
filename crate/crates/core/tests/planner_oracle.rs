mod common;

use common::{compare_with_enumeration, enumerate_paths, random_toy_lattice};
use rbrhc::planner::{search_min_risk, search_with_lambda};

#[test]
fn solver_agrees_with_enumeration() {
    for seed in 0..40 {
        let c = compare_with_enumeration(seed);
        assert!(c.sequences <= 10_000, "lattice {seed} too large: {}", c.sequences);
        assert!(c.ok(), "lattice {seed}: {c:?}");
        if let Some(gap) = c.cost_gap {
            assert!(gap >= -1e-9, "lattice {seed} beat the enumerated optimum: {c:?}");
        }
    }
}

#[test]
fn lambda_zero_is_the_unconstrained_optimum() {
    for seed in 100..120 {
        let graph = random_toy_lattice(seed).graph();
        let paths = enumerate_paths(&graph);
        let best = paths.iter().map(|p| p.cost).fold(f64::INFINITY, f64::min);
        let plan = search_with_lambda(&graph, 0.0).unwrap();
        assert!((plan.total_cost - best).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn min_risk_search_finds_the_safest_sequence() {
    for seed in 200..220 {
        let graph = random_toy_lattice(seed).graph();
        let paths = enumerate_paths(&graph);
        let safest = paths.iter().map(|p| p.risk).fold(f64::INFINITY, f64::min);
        let plan = search_min_risk(&graph).unwrap();
        assert!(plan.total_risk <= safest + 1e-15, "seed {seed}: {} vs {safest}", plan.total_risk);
    }
}
