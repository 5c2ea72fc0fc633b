//! Finite chance-constrained POMDPs with exact policy-risk enumeration.
//!
//! Used to check the risk guarantees exactly: the racetrack counterexample,
//! Boole dominance of summed per-step collision mass, and RB-RHC's interval
//! bound on randomized small models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::UpdateRule;
use crate::controller::{Controller, ControllerKind, Irb, PlanOutcome, RiskPlanner};
use crate::error::{Error, Result};
use crate::planner::Propagation;

/// Maximum number of history nodes an enumeration may visit.
pub const ENUMERATION_CAP: usize = 1_000_000;

const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// A finite CC-POMDP.
///
/// `transition[x][u][x']` is `p(x' | x, u)`; inadmissible `(x, u)` pairs
/// carry an all-zero row. `observation[x][y]` is `p(y | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteModel {
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub observation_names: Vec<String>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub admissible: Vec<Vec<bool>>,
    pub observation: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    /// Collision states.
    pub collision: Vec<bool>,
    /// Stopped states (never in collision).
    pub passive: Vec<bool>,
    pub initial: Vec<f64>,
    pub horizon: usize,
    pub stop_control: usize,
    pub noop_control: usize,
    /// Stop steps needed from any state to reach the passive set.
    pub t_stop: usize,
}

impl DiscreteModel {
    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_controls(&self) -> usize {
        self.control_names.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observation_names.len()
    }

    /// Checks shapes, stochasticity, and that collision states only lead to
    /// collision states or to absorbing passive sinks.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        let (ns, nu, ny) = (self.n_states(), self.n_controls(), self.n_observations());
        if ns == 0 || nu == 0 || ny == 0 {
            return bad("empty state, control or observation set".into());
        }
        let shapes_ok = self.transition.len() == ns
            && self.transition.iter().all(|r| r.len() == nu && r.iter().all(|p| p.len() == ns))
            && self.admissible.len() == ns
            && self.admissible.iter().all(|r| r.len() == nu)
            && self.cost.len() == ns
            && self.cost.iter().all(|r| r.len() == nu)
            && self.observation.len() == ns
            && self.observation.iter().all(|r| r.len() == ny)
            && self.collision.len() == ns
            && self.passive.len() == ns
            && self.initial.len() == ns;
        if !shapes_ok {
            return bad("inconsistent array shapes".into());
        }
        if self.stop_control >= nu || self.noop_control >= nu {
            return bad("stop or no-op control out of range".into());
        }
        let stochastic = |row: &[f64]| {
            row.iter().all(|p| *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOLERANCE
        };
        for x in 0..ns {
            for u in 0..nu {
                if self.admissible[x][u] && !stochastic(&self.transition[x][u]) {
                    return bad(format!("transition row ({x}, {u}) is not stochastic"));
                }
            }
            if !self.admissible[x][self.stop_control] {
                return bad(format!("stop control inadmissible in state {x}"));
            }
            if !stochastic(&self.observation[x]) {
                return bad(format!("observation row {x} is not stochastic"));
            }
            if self.collision[x] && self.passive[x] {
                return bad(format!("state {x} is both passive and in collision"));
            }
            if self.passive[x] && !self.admissible[x][self.noop_control] {
                return bad(format!("no-op inadmissible in passive state {x}"));
            }
            if self.passive[x] {
                let row = &self.transition[x][self.noop_control];
                if (0..ns).any(|x2| row[x2] > 0.0 && !self.passive[x2]) {
                    return bad(format!("no-op leaves the passive set from state {x}"));
                }
            }
        }
        for x in (0..ns).filter(|&x| self.collision[x]) {
            for u in (0..nu).filter(|&u| self.admissible[x][u]) {
                for x2 in 0..ns {
                    if self.transition[x][u][x2] > 0.0 && !self.collision[x2] && !self.is_sink(x2) {
                        return bad(format!("collision state {x} leads to non-absorbing state {x2}"));
                    }
                }
            }
        }
        if !stochastic(&self.initial) {
            return bad("initial belief is not a distribution".into());
        }
        Ok(())
    }

    /// A passive state that every admissible control keeps in place.
    fn is_sink(&self, x: usize) -> bool {
        self.passive[x]
            && (0..self.n_controls())
                .filter(|&u| self.admissible[x][u])
                .all(|u| self.transition[x][u][x] == 1.0)
    }

    /// True when `u` is admissible in every state `b` puts mass on.
    pub fn admissible_for(&self, b: &[f64], u: usize) -> bool {
        b.iter().zip(&self.admissible).all(|(p, row)| *p == 0.0 || row[u])
    }

    /// Collision mass `g_b` of a belief.
    pub fn collision_mass(&self, b: &[f64]) -> f64 {
        b.iter().zip(&self.collision).filter(|(_, c)| **c).map(|(p, _)| p).sum()
    }

    /// Open-loop update `sum_x p(x'|x,u) b(x)`.
    pub fn predict(&self, b: &[f64], u: usize) -> Vec<f64> {
        let mut out = vec![0.0; b.len()];
        for (x, p) in b.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(&self.transition[x][u]) {
                *o += p * t;
            }
        }
        out
    }

    /// Unnormalized observation-conditioned mass `p(y|x') b'(x')`.
    pub fn condition(&self, b: &[f64], y: usize) -> Vec<f64> {
        b.iter().enumerate().map(|(x, p)| p * self.observation[x][y]).collect()
    }

    /// Most likely next observation from `b` (lowest index on ties).
    pub fn most_likely_observation(&self, b: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for y in 0..self.n_observations() {
            let p: f64 = self.condition(b, y).iter().sum();
            if p > best.1 {
                best = (y, p);
            }
        }
        best.0
    }

    /// Applies an update rule: open loop, or conditioning on the most likely
    /// observation.
    pub fn update(&self, b: &[f64], u: usize, rule: UpdateRule) -> Vec<f64> {
        let pred = self.predict(b, u);
        match rule {
            UpdateRule::OpenLoop => pred,
            UpdateRule::Pcl => {
                let y = self.most_likely_observation(&pred);
                normalize(self.condition(&pred, y)).unwrap_or(pred)
            }
        }
    }

    /// `g_stop`: summed collision mass along `t_stop` open-loop stop steps.
    pub fn stop_risk(&self, b: &[f64]) -> f64 {
        let mut cur = b.to_vec();
        let mut sum = 0.0;
        for _ in 0..self.t_stop {
            cur = self.predict(&cur, self.stop_control);
            sum += self.collision_mass(&cur);
        }
        sum.min(1.0)
    }

    /// Expected stage cost.
    pub fn expected_cost(&self, b: &[f64], u: usize) -> f64 {
        b.iter().enumerate().map(|(x, p)| p * self.cost[x][u]).sum()
    }

    pub fn is_stopped(&self, b: &[f64]) -> bool {
        b.iter().zip(&self.passive).all(|(p, s)| *p == 0.0 || *s)
    }
}

fn normalize(v: Vec<f64>) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    (total > 0.0).then(|| v.into_iter().map(|p| p / total).collect())
}

/// Racetrack states.
pub mod racetrack {
    pub const CURVE1: usize = 0;
    pub const CURVE2: usize = 1;
    pub const FINISHED: usize = 2;
    pub const CRASH: usize = 3;
    pub const WRECKED: usize = 4;
    /// Controls, mph.
    pub const MPH70: usize = 0;
    pub const MPH90: usize = 1;
    pub const MPH100: usize = 2;
    pub const SAFE: usize = 0;
    pub const CRASHED: usize = 1;
}

/// Two consecutive sharp curves. At curve 1 the car may take 100 mph (10%
/// crash) or 70 mph; at curve 2, 90 mph (10% crash) or 70 mph. Whether the
/// car crashed is observed after each curve. A crash is the collision event;
/// the wreck it leaves behind is an absorbing non-collision state.
pub fn racetrack_model() -> DiscreteModel {
    use racetrack::*;
    let ns = 5;
    let nu = 3;
    let mut transition = vec![vec![vec![0.0; ns]; nu]; ns];
    let mut admissible = vec![vec![true; nu]; ns];
    transition[CURVE1][MPH100][CURVE2] = 0.9;
    transition[CURVE1][MPH100][CRASH] = 0.1;
    transition[CURVE1][MPH70][CURVE2] = 1.0;
    admissible[CURVE1][MPH90] = false;
    transition[CURVE2][MPH90][FINISHED] = 0.9;
    transition[CURVE2][MPH90][CRASH] = 0.1;
    transition[CURVE2][MPH70][FINISHED] = 1.0;
    admissible[CURVE2][MPH100] = false;
    for (from, to) in [(FINISHED, FINISHED), (CRASH, WRECKED), (WRECKED, WRECKED)] {
        for row in transition[from].iter_mut() {
            row[to] = 1.0;
        }
    }
    let mut cost = vec![vec![0.0; nu]; ns];
    for x in [CURVE1, CURVE2] {
        for (u, mph) in [(MPH70, 70.0), (MPH90, 90.0), (MPH100, 100.0)] {
            cost[x][u] = 100.0 / mph;
        }
    }
    let crashed = |x: usize| x == CRASH || x == WRECKED;
    DiscreteModel {
        state_names: ["curve1", "curve2", "finished", "crash", "wrecked"].map(String::from).to_vec(),
        control_names: ["70mph", "90mph", "100mph"].map(String::from).to_vec(),
        observation_names: ["safe", "crash"].map(String::from).to_vec(),
        transition,
        admissible,
        observation: (0..ns)
            .map(|x| if crashed(x) { vec![0.0, 1.0] } else { vec![1.0, 0.0] })
            .collect(),
        cost,
        collision: (0..ns).map(|x| x == CRASH).collect(),
        passive: (0..ns).map(|x| x == FINISHED || x == WRECKED).collect(),
        initial: vec![1.0, 0.0, 0.0, 0.0, 0.0],
        horizon: 2,
        stop_control: MPH70,
        noop_control: MPH70,
        t_stop: 1,
    }
}

/// A policy evaluated by enumeration. The enumerator clones the policy at
/// every observation branch, so stateful policies (budget ledgers) follow
/// each history separately.
pub trait DiscretePolicy: Clone {
    /// Control at `step` given the current belief.
    fn act(&mut self, model: &DiscreteModel, step: usize, belief: &[f64]) -> Result<usize>;
}

/// Open-loop control sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePolicy(pub Vec<usize>);

impl DiscretePolicy for SequencePolicy {
    fn act(&mut self, _: &DiscreteModel, step: usize, _: &[f64]) -> Result<usize> {
        Ok(self.0[step])
    }
}

/// Exact risk figures of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyRisk {
    /// Probability of ever entering a collision state within the horizon.
    pub exact: f64,
    /// Sum over steps of the marginal collision mass (Boole's bound).
    pub boole: f64,
    pub expected_cost: f64,
    pub nodes: usize,
}

struct Enumerator<'a> {
    model: &'a DiscreteModel,
    nodes: usize,
    exact: f64,
    boole: f64,
    cost: f64,
}

impl Enumerator<'_> {
    /// `full`: joint mass of state and history; `alive`: the same restricted
    /// to histories that have not yet hit a collision state.
    fn visit<P: DiscretePolicy>(&mut self, mut policy: P, step: usize, full: Vec<f64>, mut alive: Vec<f64>) -> Result<()> {
        self.nodes += 1;
        if self.nodes > ENUMERATION_CAP {
            return Err(Error::InstanceTooLarge { cap: ENUMERATION_CAP });
        }
        let m = self.model;
        for (x, a) in alive.iter_mut().enumerate() {
            if m.collision[x] {
                self.exact += *a;
                *a = 0.0;
            }
        }
        self.boole += m.collision_mass(&full);
        if step == m.horizon {
            return Ok(());
        }
        let total: f64 = full.iter().sum();
        let belief: Vec<f64> = full.iter().map(|p| p / total).collect();
        let u = policy.act(m, step, &belief)?;
        if !m.admissible_for(&belief, u) {
            return Err(Error::InadmissibleControl { control: u, step });
        }
        self.cost += m.expected_cost(&full, u);
        let full_pred = m.predict(&full, u);
        let alive_pred = m.predict(&alive, u);
        for y in 0..m.n_observations() {
            let f = m.condition(&full_pred, y);
            if f.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let a = m.condition(&alive_pred, y);
            self.visit(policy.clone(), step + 1, f, a)?;
        }
        Ok(())
    }
}

/// Exact probability that the policy enters a collision state at some step
/// `0..=T`, by enumerating every observation history.
pub fn exact_policy_risk<P: DiscretePolicy>(model: &DiscreteModel, policy: P) -> Result<PolicyRisk> {
    model.validate()?;
    let mut e = Enumerator {
        model,
        nodes: 0,
        exact: 0.0,
        boole: 0.0,
        cost: 0.0,
    };
    e.visit(policy, 0, model.initial.clone(), model.initial.clone())?;
    Ok(PolicyRisk {
        exact: e.exact.clamp(0.0, 1.0),
        boole: e.boole,
        expected_cost: e.cost,
        nodes: e.nodes,
    })
}

/// Open-loop risk bound `sum_{i=0}^{T} g_b(b_i)` of a control sequence next
/// to its exact risk. The bound always dominates.
pub fn umdp_transform_check(model: &DiscreteModel, controls: &[usize]) -> Result<(f64, f64)> {
    if controls.len() != model.horizon {
        return Err(Error::InvalidModel(format!(
            "sequence of length {} for horizon {}",
            controls.len(),
            model.horizon
        )));
    }
    let mut b = model.initial.clone();
    let mut bound = model.collision_mass(&b);
    for &u in controls {
        b = model.predict(&b, u);
        bound += model.collision_mass(&b);
    }
    let exact = exact_policy_risk(model, SequencePolicy(controls.to_vec()))?.exact;
    Ok((bound, exact))
}

/// Exhaustive chance-constrained planner over control sequences.
#[derive(Debug, Clone, Copy)]
pub struct DiscretePlanner<'a> {
    pub model: &'a DiscreteModel,
}

struct SequenceSearch<'a> {
    model: &'a DiscreteModel,
    budget: f64,
    horizon: usize,
    propagation: Propagation,
    stop_risk: bool,
    controls: Vec<usize>,
    first_risk: f64,
    best: Option<PlanOutcome<usize>>,
}

impl SequenceSearch<'_> {
    fn dfs(&mut self, b: &[f64], depth: usize, cost: f64, risk: f64) {
        if risk > self.budget {
            return;
        }
        if depth == self.horizon {
            if self.best.as_ref().is_none_or(|p| cost < p.cost) {
                self.best = Some(PlanOutcome {
                    controls: self.controls.clone(),
                    first_step_risk: self.first_risk,
                    total_risk: risk,
                    cost,
                });
            }
            return;
        }
        let m = self.model;
        for u in 0..m.n_controls() {
            if !m.admissible_for(b, u) {
                continue;
            }
            let rule = if depth == 0 {
                self.propagation.first_step
            } else {
                self.propagation.later_steps
            };
            let next = m.update(b, u, rule);
            let mut r = m.collision_mass(&next);
            if self.stop_risk {
                r += m.stop_risk(&next);
            }
            if depth == 0 {
                self.first_risk = r;
            }
            self.controls.push(u);
            self.dfs(&next, depth + 1, cost + m.expected_cost(b, u), risk + r);
            self.controls.pop();
        }
    }
}

impl RiskPlanner for DiscretePlanner<'_> {
    type Belief = Vec<f64>;
    type Control = usize;

    fn plan(
        &self,
        b: &Vec<f64>,
        budget: f64,
        horizon: usize,
        propagation: Propagation,
        stop_risk: bool,
    ) -> Result<Option<PlanOutcome<usize>>> {
        let mut s = SequenceSearch {
            model: self.model,
            budget,
            horizon,
            propagation,
            stop_risk,
            controls: Vec::with_capacity(horizon),
            first_risk: 0.0,
            best: None,
        };
        s.dfs(b, 0, 0.0, 0.0);
        Ok(s.best)
    }

    fn belief_risk(&self, b: &Vec<f64>) -> Result<f64> {
        Ok(self.model.collision_mass(b))
    }

    fn booked_risk(&self, b: &Vec<f64>, u: usize) -> Result<f64> {
        let next = self.model.predict(b, u);
        Ok(self.model.collision_mass(&next) + self.model.stop_risk(&next))
    }

    fn is_stopped(&self, b: &Vec<f64>) -> bool {
        self.model.is_stopped(b)
    }

    fn stop_control(&self) -> usize {
        self.model.stop_control
    }

    fn noop_control(&self) -> usize {
        self.model.noop_control
    }
}

/// Runs a receding-horizon controller inside the enumeration: each history
/// carries its own copy of the controller (and its budget ledger).
#[derive(Debug, Clone)]
pub struct ControllerPolicy {
    pub controller: Controller<usize>,
}

impl ControllerPolicy {
    pub fn new(kind: ControllerKind, irb: &Irb, n: usize, t: usize) -> Self {
        Self {
            controller: Controller::new(kind, irb, n, t),
        }
    }
}

impl DiscretePolicy for ControllerPolicy {
    fn act(&mut self, model: &DiscreteModel, step: usize, belief: &[f64]) -> Result<usize> {
        let planner = DiscretePlanner { model };
        let decision = self.controller.step(&planner, &belief.to_vec(), step)?;
        if self.controller.ledger.identity_error() > crate::controller::LEDGER_TOLERANCE {
            return Err(Error::InvalidModel("ledger identity violated".into()));
        }
        Ok(decision.control)
    }
}

/// JCC-RHC on the racetrack as derived by hand: 100 mph at curve 1, then
/// 90 mph at curve 2 once curve 1 was survived.
#[derive(Debug, Clone, Copy)]
pub struct HandDerivedRacetrackPolicy;

impl DiscretePolicy for HandDerivedRacetrackPolicy {
    fn act(&mut self, _: &DiscreteModel, step: usize, belief: &[f64]) -> Result<usize> {
        use racetrack::*;
        Ok(match step {
            0 => MPH100,
            _ if belief[CURVE2] > 0.0 => MPH90,
            _ => MPH70,
        })
    }
}

/// Parameters of one randomized model of the regression corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusInstance {
    pub seed: u64,
    pub model: DiscreteModel,
    pub irb: Irb,
    /// Planning horizon N.
    pub n: usize,
}

/// Random small model with speed levels: level-0 states are stopped; the
/// stop control strictly lowers the level; collision states sit at level 1
/// and end in a stopped wreck.
pub fn random_model(rng: &mut impl Rng) -> DiscreteModel {
    let n_moving = rng.random_range(2..=4usize);
    let n_coll = rng.random_range(1..=2usize);
    let n_stopped = 1;
    let ns = n_moving + n_coll + n_stopped + 1; // + wreck, at most 8
    let nu = rng.random_range(2..=3usize);
    let ny = rng.random_range(2..=3usize);
    let horizon = rng.random_range(2..=6usize);
    let wreck = ns - 1;
    let stopped = n_moving + n_coll;
    // levels: moving states 1 or 2, collisions 1, stopped and wreck 0
    let level: Vec<u8> = (0..ns)
        .map(|x| {
            if x < n_moving {
                rng.random_range(1..=2u8)
            } else if x < stopped {
                1
            } else {
                0
            }
        })
        .collect();
    let collision: Vec<bool> = (0..ns).map(|x| x >= n_moving && x < stopped).collect();
    let passive: Vec<bool> = (0..ns).map(|x| level[x] == 0).collect();

    let random_row = |rng: &mut dyn rand::RngCore, support: &[usize]| -> Vec<f64> {
        let mut row = vec![0.0; ns];
        for &x in support {
            row[x] = if rng.random_bool(0.6) { rng.random_range(0.05..1.0) } else { 0.0 };
        }
        if row.iter().all(|p| *p == 0.0) {
            row[support[rng.random_range(0..support.len())]] = 1.0;
        }
        let total: f64 = row.iter().sum();
        row.iter().map(|p| p / total).collect()
    };

    let mut transition = vec![vec![vec![0.0; ns]; nu]; ns];
    let admissible = vec![vec![true; nu]; ns];
    let mut cost = vec![vec![0.0; nu]; ns];
    let moving_or_stopped: Vec<usize> = (0..ns).filter(|&x| x != wreck).collect();
    for x in 0..ns {
        for u in 0..nu {
            transition[x][u] = if collision[x] || x == wreck {
                let mut r = vec![0.0; ns];
                r[wreck] = 1.0;
                r
            } else if u == 0 {
                // stop control: strictly lower level
                let lower: Vec<usize> = (0..ns)
                    .filter(|&x2| x2 != wreck && level[x2] < level[x].max(1) && (level[x] > 0 || x2 == x))
                    .collect();
                if level[x] == 0 {
                    let mut r = vec![0.0; ns];
                    r[x] = 1.0;
                    r
                } else {
                    random_row(rng, &lower)
                }
            } else {
                random_row(rng, &moving_or_stopped)
            };
            if !passive[x] && !collision[x] {
                cost[x][u] = if u == 0 { rng.random_range(1.0..2.0) } else { rng.random_range(0.0..1.0) };
            }
        }
    }
    let observation = (0..ns)
        .map(|_| {
            let mut row: Vec<f64> = (0..ny).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            row
        })
        .collect();
    let mut initial = vec![0.0; ns];
    for p in initial.iter_mut().take(n_moving) {
        *p = rng.random_range(0.1..1.0);
    }
    let total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= total);

    DiscreteModel {
        state_names: (0..ns).map(|x| format!("x{x}")).collect(),
        control_names: (0..nu).map(|u| format!("u{u}")).collect(),
        observation_names: (0..ny).map(|y| format!("y{y}")).collect(),
        transition,
        admissible,
        observation,
        cost,
        collision,
        passive,
        initial,
        horizon,
        stop_control: 0,
        noop_control: 0,
        t_stop: 2,
    }
}

/// Randomized corpus: `count` models with random budgets, each regenerated
/// until RB-RHC's first problem is feasible.
pub fn random_corpus(count: usize, base_seed: u64) -> Vec<CorpusInstance> {
    let mut out = Vec::with_capacity(count);
    let mut seed = base_seed;
    while out.len() < count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let rho0 = rng.random_range(0.0..0.3);
        let delta = rng.random_range(0.0..0.05);
        let n = rng.random_range(1..=model.horizon);
        let irb = Irb::new(rho0, delta, model.horizon).expect("nonnegative budget");
        let planner = DiscretePlanner { model: &model };
        let feasible = model.validate().is_ok()
            && planner
                .plan(&model.initial, rho0, n, Propagation::OPEN_LOOP_THEN_PCL, true)
                .ok()
                .flatten()
                .is_some();
        if feasible {
            out.push(CorpusInstance { seed, model, irb, n });
        }
        seed += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::racetrack::*;
    use super::*;
    use crate::controller::Algorithm;

    fn rt() -> DiscreteModel {
        racetrack_model()
    }

    #[test]
    fn racetrack_is_valid() {
        rt().validate().unwrap();
    }

    #[test]
    fn racetrack_sequences() {
        let m = rt();
        let r = |s: Vec<usize>| exact_policy_risk(&m, SequencePolicy(s)).unwrap().exact;
        assert!((r(vec![MPH100, MPH90]) - 0.19).abs() < 1e-12);
        // curve 1 is certainly survived at 70 mph, so curve 2 carries its full 10%
        assert!((r(vec![MPH70, MPH90]) - 0.1).abs() < 1e-12);
        assert!((r(vec![MPH100, MPH70]) - 0.1).abs() < 1e-12);
        assert_eq!(r(vec![MPH70, MPH70]), 0.0);
    }

    #[test]
    fn racetrack_hand_policy() {
        let r = exact_policy_risk(&rt(), HandDerivedRacetrackPolicy).unwrap();
        assert!((r.exact - 0.19).abs() < 1e-12);
    }

    #[test]
    fn jcc_rhc_adapter_matches_hand_policy() {
        let m = rt();
        let irb = Irb::new(0.1, 0.0, 2).unwrap();
        let kind = ControllerKind::from_irb(Algorithm::JccRhc, &irb, 2);
        let mut p = ControllerPolicy::new(kind, &irb, 2, 2);
        assert_eq!(p.act(&m, 0, &m.initial).unwrap(), MPH100);
        let curve2 = vec![0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(p.act(&m, 1, &curve2).unwrap(), MPH90);
        let r = exact_policy_risk(&m, ControllerPolicy::new(kind, &irb, 2, 2)).unwrap();
        assert!((r.exact - 0.19).abs() < 1e-12);
    }

    #[test]
    fn rbrhc_adapter_spends_budget_once() {
        let m = rt();
        let irb = Irb::new(0.1, 0.0, 2).unwrap();
        let kind = ControllerKind::from_irb(Algorithm::RbRhc, &irb, 2);
        let mut p = ControllerPolicy::new(kind, &irb, 2, 2);
        assert_eq!(p.act(&m, 0, &m.initial).unwrap(), MPH100);
        assert!(p.controller.ledger.rho.abs() < 1e-15);
        let curve2 = vec![0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(p.act(&m, 1, &curve2).unwrap(), MPH70);
        let r = exact_policy_risk(&m, ControllerPolicy::new(kind, &irb, 2, 2)).unwrap();
        assert!(r.exact <= 0.1 + 1e-12);
        assert!((r.exact - 0.1).abs() < 1e-12);
    }

    #[test]
    fn umdp_bounds() {
        let m = rt();
        assert_eq!(umdp_transform_check(&m, &[MPH70, MPH70]).unwrap(), (0.0, 0.0));
        let (bound, exact) = umdp_transform_check(&m, &[MPH100, MPH70]).unwrap();
        assert!((bound - 0.1).abs() < 1e-15 && (exact - 0.1).abs() < 1e-15);
    }

    /// A -> collision with 0.2 per step; collision absorbing (self loop).
    fn chain() -> DiscreteModel {
        let mut t = vec![vec![vec![0.0; 2]; 1]; 2];
        t[0][0] = vec![0.8, 0.2];
        t[1][0] = vec![0.0, 1.0];
        DiscreteModel {
            state_names: vec!["a".into(), "hit".into()],
            control_names: vec!["go".into()],
            observation_names: vec!["none".into()],
            transition: t,
            admissible: vec![vec![true]; 2],
            observation: vec![vec![1.0]; 2],
            cost: vec![vec![1.0], vec![0.0]],
            collision: vec![false, true],
            passive: vec![false, false],
            initial: vec![1.0, 0.0],
            horizon: 3,
            stop_control: 0,
            noop_control: 0,
            t_stop: 1,
        }
    }

    #[test]
    fn overlapping_events_make_bound_strict() {
        let m = chain();
        let (bound, exact) = umdp_transform_check(&m, &[0, 0, 0]).unwrap();
        // exact = 1 - 0.8^3; marginals 0.2, 0.36, 0.488
        assert!((exact - (1.0 - 0.8f64.powi(3))).abs() < 1e-12);
        assert!((bound - (0.2 + 0.36 + 0.488)).abs() < 1e-12);
        assert!(bound > exact);
    }

    #[test]
    fn single_step_mass() {
        let mut m = chain();
        m.horizon = 1;
        let r = exact_policy_risk(&m, SequencePolicy(vec![0])).unwrap();
        assert!((r.exact - 0.2).abs() < 1e-15);
    }

    #[test]
    fn enumeration_cap() {
        let mut m = chain();
        m.observation_names = (0..4).map(|y| y.to_string()).collect();
        m.observation = vec![vec![0.25; 4]; 2];
        m.horizon = 12; // 4^12 histories
        let err = exact_policy_risk(&m, SequencePolicy(vec![0; 12])).unwrap_err();
        assert_eq!(err, Error::InstanceTooLarge { cap: ENUMERATION_CAP });
    }

    #[test]
    fn inadmissible_control_is_reported() {
        let m = rt();
        let err = exact_policy_risk(&m, SequencePolicy(vec![MPH90, MPH70])).unwrap_err();
        assert_eq!(err, Error::InadmissibleControl { control: MPH90, step: 0 });
    }

    #[test]
    fn random_models_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m = random_model(&mut rng);
            m.validate().unwrap();
            assert!(m.n_states() <= 8 && m.horizon <= 6);
        }
    }

    #[test]
    fn pcl_conditions_on_likely_observation() {
        let m = rt();
        let b = m.update(&m.initial, MPH100, UpdateRule::Pcl);
        assert_eq!(b, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = m.update(&m.initial, MPH100, UpdateRule::OpenLoop);
        assert!((b[CRASH] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rbrhc_respects_interval_bound_on_corpus() {
        for inst in random_corpus(50, 1000) {
            let kind = ControllerKind::from_irb(Algorithm::RbRhc, &inst.irb, inst.n);
            let policy = ControllerPolicy::new(kind, &inst.irb, inst.n, inst.model.horizon);
            let r = exact_policy_risk(&inst.model, policy).unwrap();
            assert!(r.exact <= inst.irb.total() + 1e-12, "seed {}: {} > {}", inst.seed, r.exact, inst.irb.total());
            assert!(r.boole >= r.exact - 1e-12);
        }
    }
}
