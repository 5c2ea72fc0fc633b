//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbrhc::belief::{AgentMixture, AgentPattern, BeliefDynamics, EgoBelief, PredictedPose, WorldBelief};
use rbrhc::planner::{LatticeGraph, LatticePlanner, LatticeSpec, Propagation};
use rbrhc::risk::CollisionModel;
use rbrhc::vehicle::{EgoKinematicState, FootprintSpec, ReferencePath, StopParams};

/// One root-to-leaf control sequence of a lattice.
#[derive(Debug, Clone)]
pub struct EnumeratedPath {
    pub controls: Vec<f64>,
    pub cost: f64,
    pub risk: f64,
}

/// Every control sequence of `graph`, with cost and risk accumulated in
/// step order exactly as the planner does.
pub fn enumerate_paths(graph: &LatticeGraph) -> Vec<EnumeratedPath> {
    fn walk(
        graph: &LatticeGraph,
        layer: usize,
        index: usize,
        acc: EnumeratedPath,
        out: &mut Vec<EnumeratedPath>,
    ) {
        let node = &graph.layers[layer][index];
        if node.terminal || layer == graph.horizon() || node.edges.is_empty() {
            let final_cost = if node.terminal {
                0.0
            } else {
                (graph.goal - node.state.s).max(0.0) / graph.v_max
            };
            out.push(EnumeratedPath {
                cost: acc.cost + final_cost,
                ..acc
            });
            return;
        }
        for e in &node.edges {
            let mut next = acc.clone();
            next.controls.push(e.control);
            next.cost += e.cost;
            next.risk += e.risk;
            walk(graph, layer + 1, e.target, next, out);
        }
    }
    let mut out = Vec::new();
    let start = EnumeratedPath {
        controls: Vec::new(),
        cost: 0.0,
        risk: 0.0,
    };
    walk(graph, 0, 0, start, &mut out);
    out
}

/// A small random lattice problem: straight road, one or two agents with
/// one or two patterns each standing near the road, and a random subset of
/// accelerations.
pub struct ToyLattice {
    pub planner: LatticePlanner,
    pub root: WorldBelief,
    pub horizon: usize,
    pub stop_risk: bool,
    pub propagation: Propagation,
}

pub fn random_toy_lattice(seed: u64) -> ToyLattice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = Arc::new(ReferencePath::straight([0.0, 0.0], [200.0, 0.0]).expect("path"));
    let fp = FootprintSpec::new(4.0, 2.0, 0.0).expect("footprint");
    let n_agents = rng.random_range(1..=2usize);
    let model = CollisionModel::new(path.clone(), &[fp], &vec![vec![fp]; n_agents], 2);
    let mut accels = vec![-2.0, 0.0];
    for a in [-1.0, 1.0, 2.0] {
        if rng.random_bool(0.6) {
            accels.push(a);
        }
    }
    let horizon = rng.random_range(2..=5usize);
    let spec = LatticeSpec {
        s_res: 0.5,
        v_res: 1.0,
        horizon,
        dt: 1.0,
        v_max: 4.0,
        accels,
    };
    let stop = StopParams::new(2.0, 1.0, 4.0).expect("stop");
    let v0 = rng.random_range(0..=4) as f64;
    let goal = rng.random_range(8.0..25.0);
    let planner = LatticePlanner::new(spec, model, BeliefDynamics::new(path, 1.0), stop, goal).expect("planner");

    let steps = horizon + stop.t_stop() + 2;
    let agents = (0..n_agents)
        .map(|_| {
            let n_patterns = rng.random_range(1..=2usize);
            let w0 = if n_patterns == 1 { 1.0 } else { rng.random_range(0.2..0.8) };
            let patterns = (0..n_patterns)
                .map(|p| {
                    let x = rng.random_range(4.0..20.0);
                    let y = rng.random_range(-4.0..4.0);
                    let vy = rng.random_range(-1.5..1.5);
                    let std = rng.random_range(0.3..1.5);
                    let traj = (0..steps)
                        .map(|k| PredictedPose::with_track_std([x, y + vy * k as f64], 0.0, std, std))
                        .collect();
                    AgentPattern::new(if p == 0 { w0 } else { 1.0 - w0 }, traj)
                })
                .collect();
            AgentMixture { patterns }
        })
        .collect();
    let root = WorldBelief {
        ego: EgoBelief::exact(EgoKinematicState::new(0.0, v0)),
        agents,
        step: 0,
    };
    let propagation = match rng.random_range(0..3) {
        0 => Propagation::OPEN_LOOP,
        1 => Propagation::PCL,
        _ => Propagation::OPEN_LOOP_THEN_PCL,
    };
    ToyLattice {
        planner,
        root,
        horizon,
        stop_risk: rng.random_bool(0.5),
        propagation,
    }
}

impl ToyLattice {
    pub fn graph(&self) -> LatticeGraph {
        self.planner
            .expand_graph(&self.root, self.horizon, self.propagation, self.stop_risk)
            .expect("graph")
    }
}

/// Outcome of comparing the solver against enumeration on one lattice.
#[derive(Debug, Clone)]
pub struct OracleComparison {
    pub sequences: usize,
    pub rho: f64,
    pub feasible: bool,
    pub solved: bool,
    /// Returned plan risk, when solved.
    pub plan_risk: Option<f64>,
    /// Returned plan cost minus the enumerated constrained optimum.
    pub cost_gap: Option<f64>,
    pub duality_gap_bound: f64,
    /// The returned controls are one of the enumerated sequences with
    /// matching risk.
    pub plan_matches_sequence: bool,
}

impl OracleComparison {
    pub fn ok(&self) -> bool {
        let feasible_ok = !self.feasible || self.solved;
        let risk_ok = self.plan_risk.is_none_or(|r| r <= self.rho);
        let infeasible_ok = self.feasible || !self.solved;
        feasible_ok && risk_ok && infeasible_ok && (!self.solved || self.plan_matches_sequence)
    }
}

/// Solves lattice `seed` with a random budget and checks it against
/// exhaustive enumeration.
pub fn compare_with_enumeration(seed: u64) -> OracleComparison {
    let toy = random_toy_lattice(seed);
    let graph = toy.graph();
    let paths = enumerate_paths(&graph);
    let min_risk = paths.iter().map(|p| p.risk).fold(f64::INFINITY, f64::min);
    let max_risk = paths.iter().map(|p| p.risk).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0d6e7);
    // budgets from just below the minimum risk to above the maximum
    let rho = match rng.random_range(0..4) {
        0 => min_risk,
        1 => (min_risk * 0.9).max(0.0),
        _ => min_risk + rng.random_range(0.0..1.1) * (max_risk - min_risk),
    };
    let feasible = paths.iter().any(|p| p.risk <= rho);
    let outcome = rbrhc::planner::solve_chance_constrained(&graph, rho, rbrhc::planner::DEFAULT_TOL).expect("solve");
    let best = paths
        .iter()
        .filter(|p| p.risk <= rho)
        .map(|p| p.cost)
        .fold(f64::INFINITY, f64::min);
    let plan_matches_sequence = outcome.plan.as_ref().is_some_and(|plan| {
        paths
            .iter()
            .any(|p| p.controls == plan.controls && p.risk == plan.total_risk && (p.cost - plan.total_cost).abs() < 1e-9)
    });
    OracleComparison {
        sequences: paths.len(),
        rho,
        feasible,
        solved: outcome.plan.is_some(),
        plan_risk: outcome.plan.as_ref().map(|p| p.total_risk),
        cost_gap: outcome.plan.as_ref().map(|p| p.total_cost - best),
        duality_gap_bound: outcome.duality_gap_bound,
        plan_matches_sequence,
    }
}
