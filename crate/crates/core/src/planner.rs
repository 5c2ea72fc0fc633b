//! Speed planning over a `{s, v, step}` lattice.
//!
//! The graph is layered by step. Layer 0 holds the current belief, layer 1
//! holds the exact successors of every acceleration (so the risk the
//! controller books for the executed step is exactly the planned one), and
//! deeper layers are snapped to the `(s, v)` grid. Each node carries the
//! collision bound of its belief; the joint chance constraint is handled by
//! Lagrangian relaxation with bisection on the multiplier.

use std::collections::HashMap;

use log::debug;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::belief::{apply_rule, AgentMixture, BeliefDynamics, EgoBelief, UpdateRule, WorldBelief};
use crate::error::{Error, Result};
use crate::risk::{self, CollisionModel};
use crate::vehicle::{advance_on_path, EgoKinematicState, StopParams};

/// Upper end of the multiplier search.
pub const LAMBDA_CAP: f64 = 1_152_921_504_606_846_976.0; // 2^60

/// Maximum number of bisection iterations.
pub const MAX_BISECTIONS: usize = 100;

/// Relative width of the multiplier bracket at which bisection stops.
pub const BRACKET_TOLERANCE: f64 = 1e-6;

/// Default feasibility slack of the bisection (see [`solve_chance_constrained`]).
pub const DEFAULT_TOL: f64 = 1e-9;

/// Discretization of the planning lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// Arc-length resolution, meters.
    pub s_res: f64,
    /// Speed resolution, m/s.
    pub v_res: f64,
    /// Planning horizon N, steps.
    pub horizon: usize,
    pub dt: f64,
    pub v_max: f64,
    /// Candidate accelerations, m/s².
    pub accels: Vec<f64>,
}

impl LatticeSpec {
    /// Checks the invariants, including that `accels` contains the stop
    /// deceleration.
    pub fn validate(&self, stop: &StopParams) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidLattice(m.to_string()));
        if !(self.s_res > 0.0 && self.v_res > 0.0) {
            return bad("resolutions must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step");
        }
        if !(self.dt > 0.0 && self.v_max > 0.0) {
            return bad("dt and v_max must be positive");
        }
        if self.accels.iter().any(|a| !a.is_finite()) {
            return bad("accelerations must be finite");
        }
        if !self.accels.contains(&0.0) {
            return bad("acceleration set must contain 0");
        }
        if !self.accels.contains(&stop.control()) {
            return bad("acceleration set must contain the stop deceleration");
        }
        Ok(())
    }
}

/// Belief update rules used along a plan: one for the first transition and
/// one for every later transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Propagation {
    pub first_step: UpdateRule,
    pub later_steps: UpdateRule,
}

impl Propagation {
    pub const OPEN_LOOP: Self = Self {
        first_step: UpdateRule::OpenLoop,
        later_steps: UpdateRule::OpenLoop,
    };
    pub const PCL: Self = Self {
        first_step: UpdateRule::Pcl,
        later_steps: UpdateRule::Pcl,
    };
    /// Exact open-loop first step followed by the PCL heuristic.
    pub const OPEN_LOOP_THEN_PCL: Self = Self {
        first_step: UpdateRule::OpenLoop,
        later_steps: UpdateRule::Pcl,
    };

    fn rule(&self, layer: usize) -> UpdateRule {
        if layer <= 1 {
            self.first_step
        } else {
            self.later_steps
        }
    }
}

/// An outgoing edge of a lattice node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAnnotation {
    pub control: f64,
    pub cost: f64,
    /// Risk of the successor node.
    pub risk: f64,
    /// Index of the successor in the next layer.
    pub target: usize,
}

/// A node of the planning lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeNode {
    /// Arc-length index relative to the root (exact first-layer nodes carry
    /// the index of their nearest grid cell).
    pub s_index: i64,
    pub v_index: i64,
    pub step: usize,
    pub state: EgoKinematicState,
    /// `g_b`, plus `g_stop_b` when stop risk is enabled; 0 for the root.
    pub risk: f64,
    /// True once the goal arc length is reached; terminal nodes have no
    /// successors and no further cost.
    pub terminal: bool,
    pub edges: Vec<EdgeAnnotation>,
}

/// Layered planning DAG rooted at one belief.
#[derive(Debug, Clone)]
pub struct LatticeGraph {
    pub layers: Vec<Vec<LatticeNode>>,
    pub goal: f64,
    pub v_max: f64,
    /// Per layer: the agent mixtures and ego covariance of that layer's beliefs.
    layer_agents: Vec<Vec<AgentMixture>>,
    layer_cov: Vec<Matrix2<f64>>,
    root_step: usize,
}

impl LatticeGraph {
    pub fn horizon(&self) -> usize {
        self.layers.len() - 1
    }

    /// The belief represented by a node.
    pub fn node_belief(&self, layer: usize, index: usize) -> WorldBelief {
        let node = &self.layers[layer][index];
        belief_at(node.state, &self.layer_cov[layer], &self.layer_agents[layer], self.root_step + layer)
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.layers.iter().flatten().map(|n| n.edges.len()).sum()
    }

    fn final_cost(&self, node: &LatticeNode) -> f64 {
        if node.terminal {
            0.0
        } else {
            (self.goal - node.state.s).max(0.0) / self.v_max
        }
    }
}

fn belief_at(state: EgoKinematicState, cov: &Matrix2<f64>, agents: &[AgentMixture], step: usize) -> WorldBelief {
    let mut covariance = *cov;
    if state.v == 0.0 {
        covariance[(0, 1)] = 0.0;
        covariance[(1, 0)] = 0.0;
        covariance[(1, 1)] = 0.0;
    }
    WorldBelief {
        ego: EgoBelief { mean: state, covariance },
        agents: agents.to_vec(),
        step,
    }
}

/// A solved speed plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedPlan {
    pub controls: Vec<f64>,
    /// Predicted ego states after each control.
    pub states: Vec<EgoKinematicState>,
    /// Risk term of each predicted belief.
    pub risks: Vec<f64>,
    pub total_cost: f64,
    /// Sum of `risks`, accumulated in step order.
    pub total_risk: f64,
    /// Multiplier the plan was found with (infinite for the min-risk search).
    pub lambda: f64,
}

/// Everything the lattice planner needs besides the belief.
#[derive(Debug, Clone)]
pub struct LatticePlanner {
    pub spec: LatticeSpec,
    pub model: CollisionModel,
    pub dynamics: BeliefDynamics,
    pub stop: StopParams,
    /// Goal arc length, meters.
    pub goal: f64,
}

/// One multiplier probe of the bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaProbe {
    pub lambda: f64,
    pub cost: f64,
    pub risk: f64,
}

/// Result of a chance-constrained solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// `None` when even the minimum-risk plan violates the budget.
    pub plan: Option<SpeedPlan>,
    pub trace: Vec<LambdaProbe>,
    /// `lambda * (rho - risk)` of the returned plan: bounds how far the
    /// Lagrangian value may sit above the constrained optimum.
    pub duality_gap_bound: f64,
}

struct RiskCache<'a> {
    model: &'a CollisionModel,
    map: HashMap<(u64, u64, usize, usize), f64>,
}

impl RiskCache<'_> {
    /// [`risk::g_b`] memoized by everything it depends on within one graph.
    fn g_b(&mut self, b: &WorldBelief, layer: usize) -> Result<f64> {
        if self.model.passive_safety && b.ego.is_stopped() {
            return Ok(0.0);
        }
        let key = (
            b.ego.mean.s.to_bits(),
            b.ego.position_variance().to_bits(),
            b.step,
            layer,
        );
        if let Some(r) = self.map.get(&key) {
            return Ok(*r);
        }
        let r = risk::g_b(b, self.model)?;
        self.map.insert(key, r);
        Ok(r)
    }

    /// [`risk::g_stop_b`] built on the memoized `g_b`.
    fn g_stop(&mut self, b: &WorldBelief, layer: usize, dynamics: &BeliefDynamics, stop: &StopParams) -> Result<f64> {
        let mut cur = b.clone();
        let mut sum = 0.0;
        for _ in 0..stop.t_stop() {
            cur = crate::belief::open_loop_update(&cur, stop.control(), dynamics);
            sum += self.g_b(&cur, layer)?;
        }
        Ok(sum.clamp(0.0, 1.0))
    }
}

impl LatticePlanner {
    pub fn new(
        spec: LatticeSpec,
        model: CollisionModel,
        dynamics: BeliefDynamics,
        stop: StopParams,
        goal: f64,
    ) -> Result<Self> {
        spec.validate(&stop)?;
        if (spec.dt - dynamics.dt).abs() > 1e-12 || (spec.dt - stop.dt).abs() > 1e-12 {
            return Err(Error::InvalidLattice("lattice, dynamics and stop dt differ".into()));
        }
        Ok(Self {
            spec,
            model,
            dynamics,
            stop,
            goal,
        })
    }

    /// Risk of one belief as booked by the planner.
    pub fn belief_risk(&self, b: &WorldBelief, stop_risk: bool) -> Result<f64> {
        let mut r = risk::g_b(b, &self.model)?;
        if stop_risk {
            r += risk::g_stop_b(b, &self.model, &self.dynamics, &self.stop)?;
        }
        Ok(r)
    }

    /// Builds the annotated DAG over `horizon` steps from `b`.
    pub fn expand_graph(
        &self,
        b: &WorldBelief,
        horizon: usize,
        propagation: Propagation,
        stop_risk: bool,
    ) -> Result<LatticeGraph> {
        let horizon = horizon.max(1);
        let spec = &self.spec;
        let dt = spec.dt;
        let s0 = b.ego.mean.s;
        let snap_s = |s: f64| ((s - s0) / spec.s_res).round() as i64;
        let snap_v = |v: f64| (v / spec.v_res).round() as i64;
        let is_goal = |s: f64| s >= self.goal - 1e-9;

        // agents and ego covariance are shared by all nodes of a layer
        let mut layer_agents = vec![b.agents.clone()];
        let mut layer_cov = vec![b.ego.covariance];
        let mut spine = b.clone();
        for layer in 1..=horizon {
            spine = apply_rule(propagation.rule(layer), &spine, 0.0, &self.dynamics)?;
            layer_agents.push(spine.agents.clone());
            layer_cov.push(spine.ego.covariance);
        }

        let mut cache = RiskCache {
            model: &self.model,
            map: HashMap::new(),
        };
        let mut node_risk = |state: EgoKinematicState, layer: usize, exact: Option<&WorldBelief>| -> Result<f64> {
            let owned;
            let belief = match exact {
                Some(e) => e,
                None => {
                    owned = belief_at(state, &layer_cov[layer], &layer_agents[layer], b.step + layer);
                    &owned
                }
            };
            let mut r = cache.g_b(belief, layer)?;
            if stop_risk {
                r += cache.g_stop(belief, layer, &self.dynamics, &self.stop)?;
            }
            Ok(r)
        };

        let root = LatticeNode {
            s_index: 0,
            v_index: snap_v(b.ego.mean.v),
            step: b.step,
            state: b.ego.mean,
            risk: 0.0,
            terminal: is_goal(s0),
            edges: Vec::new(),
        };
        let mut layers: Vec<Vec<LatticeNode>> = vec![vec![root]];
        if layers[0][0].terminal {
            return Ok(LatticeGraph {
                layers,
                goal: self.goal,
                v_max: spec.v_max,
                layer_agents,
                layer_cov,
                root_step: b.step,
            });
        }

        // sorted by |u| so that duplicates keep the smallest magnitude
        let mut accels = spec.accels.clone();
        accels.sort_by(|a, c| a.abs().total_cmp(&c.abs()).then(a.total_cmp(c)));
        accels.dedup();

        for layer in 1..=horizon {
            let mut next: Vec<LatticeNode> = Vec::new();
            let mut index: HashMap<(u64, u64), usize> = HashMap::new();
            let mut grid_index: HashMap<(i64, i64), usize> = HashMap::new();
            let prev = &mut layers[layer - 1];
            for node in prev.iter_mut() {
                if node.terminal {
                    continue;
                }
                for &a in &accels {
                    if node.state.v + a * dt > spec.v_max + 1e-9 {
                        continue;
                    }
                    let exact = advance_on_path(node.state, a, dt, &self.dynamics.path);
                    let target = if layer == 1 {
                        let key = (exact.s.to_bits(), exact.v.to_bits());
                        match index.get(&key) {
                            Some(&t) => t,
                            None => {
                                let nb = apply_rule(propagation.first_step, b, a, &self.dynamics)?;
                                let risk = node_risk(exact, 1, Some(&nb))?;
                                next.push(LatticeNode {
                                    s_index: snap_s(exact.s),
                                    v_index: snap_v(exact.v),
                                    step: b.step + 1,
                                    state: exact,
                                    risk,
                                    terminal: is_goal(exact.s),
                                    edges: Vec::new(),
                                });
                                index.insert(key, next.len() - 1);
                                next.len() - 1
                            }
                        }
                    } else {
                        let si = snap_s(exact.s);
                        let vi = snap_v(exact.v);
                        match grid_index.get(&(si, vi)) {
                            Some(&t) => t,
                            None => {
                                let state = EgoKinematicState::new(
                                    (s0 + si as f64 * spec.s_res).min(self.dynamics.path.length()),
                                    (vi as f64 * spec.v_res).clamp(0.0, spec.v_max),
                                );
                                let risk = node_risk(state, layer, None)?;
                                next.push(LatticeNode {
                                    s_index: si,
                                    v_index: vi,
                                    step: b.step + layer,
                                    state,
                                    risk,
                                    terminal: is_goal(state.s),
                                    edges: Vec::new(),
                                });
                                grid_index.insert((si, vi), next.len() - 1);
                                next.len() - 1
                            }
                        }
                    };
                    if node.edges.iter().any(|e| e.target == target) {
                        continue;
                    }
                    node.edges.push(EdgeAnnotation {
                        control: a,
                        cost: dt,
                        risk: next[target].risk,
                        target,
                    });
                }
            }
            layers.push(next);
        }
        Ok(LatticeGraph {
            layers,
            goal: self.goal,
            v_max: spec.v_max,
            layer_agents,
            layer_cov,
            root_step: b.step,
        })
    }

    /// Builds the graph and solves the chance-constrained problem with budget `rho`.
    pub fn solve(
        &self,
        b: &WorldBelief,
        rho: f64,
        horizon: usize,
        propagation: Propagation,
        stop_risk: bool,
    ) -> Result<SolveOutcome> {
        let graph = self.expand_graph(b, horizon, propagation, stop_risk)?;
        solve_chance_constrained(&graph, rho, DEFAULT_TOL)
    }
}

#[derive(Clone, Copy)]
enum Objective {
    Lagrangian(f64),
    /// Lexicographic (risk, cost).
    MinRisk,
}

#[derive(Clone, Copy)]
struct Value {
    primary: f64,
    secondary: f64,
}

impl Value {
    const INFEASIBLE: Value = Value {
        primary: f64::INFINITY,
        secondary: f64::INFINITY,
    };
}

fn dp(graph: &LatticeGraph, objective: Objective) -> Result<SpeedPlan> {
    let n_layers = graph.layers.len();
    let mut values: Vec<Vec<Value>> = Vec::with_capacity(n_layers);
    let mut choice: Vec<Vec<Option<usize>>> = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        values.push(Vec::new());
        choice.push(Vec::new());
    }
    let last = n_layers - 1;
    values[last] = graph.layers[last]
        .iter()
        .map(|n| Value {
            primary: match objective {
                Objective::Lagrangian(_) => graph.final_cost(n),
                Objective::MinRisk => 0.0,
            },
            secondary: match objective {
                Objective::Lagrangian(_) => 0.0,
                Objective::MinRisk => graph.final_cost(n),
            },
        })
        .collect();
    choice[last] = vec![None; graph.layers[last].len()];

    for layer in (0..last).rev() {
        let (head, tail) = values.split_at_mut(layer + 1);
        let next_values = &tail[0];
        let next_nodes = &graph.layers[layer + 1];
        let mut layer_values = Vec::with_capacity(graph.layers[layer].len());
        let mut layer_choice = Vec::with_capacity(graph.layers[layer].len());
        for node in &graph.layers[layer] {
            if node.terminal {
                layer_values.push(Value {
                    primary: 0.0,
                    secondary: 0.0,
                });
                layer_choice.push(None);
                continue;
            }
            let mut best = Value::INFEASIBLE;
            let mut best_edge: Option<usize> = None;
            for (ei, e) in node.edges.iter().enumerate() {
                let nv = next_values[e.target];
                let cand = match objective {
                    Objective::Lagrangian(l) => Value {
                        primary: e.cost + l * e.risk + nv.primary,
                        secondary: 0.0,
                    },
                    Objective::MinRisk => Value {
                        primary: e.risk + nv.primary,
                        secondary: e.cost + nv.secondary,
                    },
                };
                if !cand.primary.is_finite() {
                    continue;
                }
                let better = match best_edge {
                    None => true,
                    Some(bi) => {
                        let be = &node.edges[bi];
                        cand.primary
                            .total_cmp(&best.primary)
                            .then(cand.secondary.total_cmp(&best.secondary))
                            .then(e.control.abs().total_cmp(&be.control.abs()))
                            .then(next_nodes[e.target].v_index.cmp(&next_nodes[be.target].v_index))
                            .is_lt()
                    }
                };
                if better {
                    best = cand;
                    best_edge = Some(ei);
                }
            }
            layer_values.push(best);
            layer_choice.push(best_edge);
        }
        head[layer] = layer_values;
        choice[layer] = layer_choice;
    }

    if !values[0][0].primary.is_finite() {
        return Err(Error::InfeasibleGraph);
    }
    let mut plan = SpeedPlan {
        controls: Vec::new(),
        states: Vec::new(),
        risks: Vec::new(),
        total_cost: 0.0,
        total_risk: 0.0,
        lambda: match objective {
            Objective::Lagrangian(l) => l,
            Objective::MinRisk => f64::INFINITY,
        },
    };
    let mut layer = 0;
    let mut idx = 0;
    loop {
        let node = &graph.layers[layer][idx];
        match choice[layer][idx] {
            Some(ei) => {
                let e = &node.edges[ei];
                plan.controls.push(e.control);
                plan.risks.push(e.risk);
                plan.total_cost += e.cost;
                plan.total_risk += e.risk;
                layer += 1;
                idx = e.target;
                plan.states.push(graph.layers[layer][idx].state);
            }
            None => {
                if layer == last || node.terminal {
                    plan.total_cost += graph.final_cost(node);
                    break;
                }
                return Err(Error::InfeasibleGraph);
            }
        }
    }
    Ok(plan)
}

/// Minimizes `cost + lambda * risk` by backward dynamic programming. Ties go
/// to the smaller control magnitude, then the lower successor speed index.
pub fn search_with_lambda(graph: &LatticeGraph, lambda: f64) -> Result<SpeedPlan> {
    dp(graph, Objective::Lagrangian(lambda))
}

/// Minimizes total risk, breaking ties by cost.
pub fn search_min_risk(graph: &LatticeGraph) -> Result<SpeedPlan> {
    dp(graph, Objective::MinRisk)
}

/// Lowest-cost plan found by multiplier bisection whose total risk is at
/// most `rho`; `plan` is `None` when even the minimum-risk plan exceeds it.
///
/// Bisection also stops once the best feasible plan uses the budget to
/// within `tol`.
pub fn solve_chance_constrained(graph: &LatticeGraph, rho: f64, tol: f64) -> Result<SolveOutcome> {
    let mut trace = Vec::new();
    let probe = |lambda: f64, trace: &mut Vec<LambdaProbe>| -> Result<SpeedPlan> {
        let p = search_with_lambda(graph, lambda)?;
        trace.push(LambdaProbe {
            lambda,
            cost: p.total_cost,
            risk: p.total_risk,
        });
        Ok(p)
    };

    let p0 = probe(0.0, &mut trace)?;
    if p0.total_risk <= rho {
        return Ok(SolveOutcome {
            plan: Some(p0),
            trace,
            duality_gap_bound: 0.0,
        });
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best;
    loop {
        let p = probe(hi, &mut trace)?;
        if p.total_risk <= rho {
            best = p;
            break;
        }
        lo = hi;
        if hi >= LAMBDA_CAP {
            let p = search_min_risk(graph)?;
            trace.push(LambdaProbe {
                lambda: f64::INFINITY,
                cost: p.total_cost,
                risk: p.total_risk,
            });
            if p.total_risk <= rho {
                debug!("min-risk fallback plan used (risk {:.3e} <= rho {:.3e})", p.total_risk, rho);
                let gap = 0.0;
                return Ok(SolveOutcome {
                    plan: Some(p),
                    trace,
                    duality_gap_bound: gap,
                });
            }
            return Ok(SolveOutcome {
                plan: None,
                trace,
                duality_gap_bound: f64::NAN,
            });
        }
        hi *= 2.0;
    }

    let mut best_lambda = hi;
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= BRACKET_TOLERANCE * hi || rho - best.total_risk <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let p = probe(mid, &mut trace)?;
        if p.total_risk <= rho {
            hi = mid;
            if p.total_cost < best.total_cost {
                best = p;
                best_lambda = mid;
            }
        } else {
            lo = mid;
        }
    }
    let gap = best_lambda * (rho - best.total_risk);
    debug!(
        "lambda bisection: {} probes, lambda {:.4e}, cost {:.4}, risk {:.3e}, gap bound {:.3e}",
        trace.len(),
        best_lambda,
        best.total_cost,
        best.total_risk,
        gap
    );
    assert!(best.total_risk <= rho, "returned plan violates its risk budget");
    Ok(SolveOutcome {
        plan: Some(best),
        trace,
        duality_gap_bound: gap,
    })
}
