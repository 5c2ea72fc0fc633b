//! Ground-truth sampling, closed-loop episodes and the seeded Monte Carlo
//! harness.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::belief::{bayes_update, open_loop_update, Observation, WorldBelief};
use crate::controller::{ActionKind, Algorithm, Controller, ControllerKind, Irb, PlanOutcome, RiskPlanner};
use crate::error::{Error, Result};
use crate::planner::{LatticePlanner, Propagation, DEFAULT_TOL};
use crate::scenario::Scenario;
use crate::vehicle::{advance_on_path, EgoKinematicState, OrientedRect, Pose};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Fraction of failed trials above which a run fails.
pub const MAX_TRIAL_ERROR_RATE: f64 = 0.01;

/// Whether the truth is drawn from the planner's own model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Truth sampled from exactly the distributions the planner uses.
    #[default]
    Guarantee,
    /// Agent deviations inflated by `scale` (robustness exploration only).
    ModelMismatch { scale: f64 },
}

/// Realized world of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub seed: u64,
    pub ego_start: EgoKinematicState,
    /// Chosen pattern per agent.
    pub patterns: Vec<usize>,
    /// `[agent][step]` realized poses.
    pub agents: Vec<Vec<Pose>>,
    /// `[step][agent]` observation noise.
    pub observation_noise: Vec<Vec<[f64; 2]>>,
    /// `[step]` ego tracking noise on `(s, v)`.
    pub ego_noise: Vec<[f64; 2]>,
}

fn normal2(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Draws the realized world for `seed`: a pattern per agent by its weight,
/// then one standard-normal factor per agent scaled by every step's
/// covariance factor (smooth, temporally correlated deviations).
pub fn sample_ground_truth(scenario: &Scenario, seed: u64, mode: SimMode) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = match mode {
        SimMode::Guarantee => 1.0,
        SimMode::ModelMismatch { scale } => scale,
    };
    let spec = &scenario.spec;
    let res = spec.planning.s_res;
    let offset = if spec.ego.s0_spread > 0.0 {
        let d: f64 = rng.sample::<f64, _>(StandardNormal) * spec.ego.s0_spread;
        (d / res).round() * res
    } else {
        0.0
    };
    let ego_start = EgoKinematicState::new(
        (spec.ego.s0 + offset).clamp(0.0, scenario.path.length()),
        spec.ego.v0,
    );
    let mut patterns = Vec::with_capacity(scenario.agents.len());
    let mut agents = Vec::with_capacity(scenario.agents.len());
    for (_, mixture) in &scenario.agents {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = mixture.patterns.len() - 1;
        for (i, p) in mixture.patterns.iter().enumerate() {
            acc += p.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let z = normal2(&mut rng);
        let poses = mixture.patterns[chosen]
            .trajectory
            .iter()
            .map(|pp| {
                let l = pp.cholesky_factor();
                let dx = l[(0, 0)] * z[0] + l[(0, 1)] * z[1];
                let dy = l[(1, 0)] * z[0] + l[(1, 1)] * z[1];
                Pose::new(pp.mean[0] + scale * dx, pp.mean[1] + scale * dy, pp.heading)
            })
            .collect();
        patterns.push(chosen);
        agents.push(poses);
    }
    let r = spec.noise.observation_std;
    let observation_noise = (0..=spec.horizon)
        .map(|_| {
            (0..scenario.agents.len())
                .map(|_| {
                    let n = normal2(&mut rng);
                    [r * n[0], r * n[1]]
                })
                .collect()
        })
        .collect();
    let [qs, qv] = spec.noise.ego_process_std;
    let ego_noise = (0..=spec.horizon)
        .map(|_| {
            let n = normal2(&mut rng);
            [qs * n[0], qv * n[1]]
        })
        .collect();
    GroundTruth {
        seed,
        ego_start,
        patterns,
        agents,
        observation_noise,
        ego_noise,
    }
}

/// Rectangles of the ego at arc length `s`.
pub fn ego_rects(scenario: &Scenario, s: f64) -> Vec<OrientedRect> {
    scenario
        .spec
        .ego
        .footprint
        .iter()
        .map(|fp| fp.rect_at(scenario.path.pose_at_clamped(s + fp.offset)))
        .collect()
}

/// Rectangles of agent `a` at `pose`.
pub fn agent_rects(scenario: &Scenario, a: usize, pose: Pose) -> Vec<OrientedRect> {
    scenario.agents[a]
        .0
        .iter()
        .map(|fp| {
            let c = pose.transform([fp.offset, 0.0]);
            fp.rect_at(Pose::new(c[0], c[1], pose.heading))
        })
        .collect()
}

/// True footprint overlap between the ego and any agent at `step`.
pub fn footprints_overlap(scenario: &Scenario, truth: &GroundTruth, s: f64, step: usize) -> bool {
    let ego = ego_rects(scenario, s);
    truth.agents.iter().enumerate().any(|(a, traj)| {
        let pose = traj[step.min(traj.len() - 1)];
        agent_rects(scenario, a, pose)
            .iter()
            .any(|r| ego.iter().any(|e| e.overlaps(r)))
    })
}

fn min_agent_distance(scenario: &Scenario, truth: &GroundTruth, s: f64, step: usize) -> f64 {
    let ego = scenario.path.pose_at_clamped(s).position();
    truth
        .agents
        .iter()
        .map(|traj| {
            let p = traj[step.min(traj.len() - 1)];
            (p.x - ego[0]).hypot(p.y - ego[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// One step of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub control: f64,
    pub action: ActionKind,
    /// Ego state after the step.
    pub state: EgoKinematicState,
    /// Budget after the step (a shadow ledger for the baselines).
    pub rho: f64,
    /// Total risk of the plan solved at this step, if one was solved.
    pub planned_risk: Option<f64>,
    /// Risk subtracted from the (shadow) budget at this step.
    pub booked_risk: f64,
    pub collided: bool,
    pub cost: f64,
    pub min_agent_distance: f64,
}

/// Full record of one closed-loop episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub total_cost: f64,
    pub collided: bool,
    pub reached_goal: bool,
    /// Largest deviation from the ledger identity over the episode.
    pub ledger_identity_error: f64,
    /// Cumulative booked risk stayed within `rho0 + delta k` at every step.
    pub ledger_within_bound: bool,
    /// The first solve was infeasible (the start is not recoverable).
    pub infeasible_start: bool,
}

/// Lattice planner behind the generic controller interface. Plans are
/// memoized by belief fingerprint; planning is a pure function of the
/// fingerprinted inputs, so memoization never changes a result.
pub struct SimPlanner<'a> {
    pub planner: &'a LatticePlanner,
    cache: Mutex<HashMap<PlanKey, Option<PlanOutcome<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PlanKey {
    belief: Vec<u64>,
    budget: u64,
    horizon: usize,
    propagation: Propagation,
    stop_risk: bool,
}

fn fingerprint(b: &WorldBelief) -> Vec<u64> {
    let mut v = vec![
        b.step as u64,
        b.ego.mean.s.to_bits(),
        b.ego.mean.v.to_bits(),
    ];
    v.extend(b.ego.covariance.iter().map(|x| x.to_bits()));
    for a in &b.agents {
        v.push(a.patterns.len() as u64);
        v.extend(a.patterns.iter().map(|p| p.weight.to_bits()));
    }
    v
}

impl<'a> SimPlanner<'a> {
    pub fn new(planner: &'a LatticePlanner) -> Self {
        Self {
            planner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl RiskPlanner for SimPlanner<'_> {
    type Belief = WorldBelief;
    type Control = f64;

    fn plan(
        &self,
        b: &WorldBelief,
        budget: f64,
        horizon: usize,
        propagation: Propagation,
        stop_risk: bool,
    ) -> Result<Option<PlanOutcome<f64>>> {
        let key = PlanKey {
            belief: fingerprint(b),
            budget: budget.to_bits(),
            horizon,
            propagation,
            stop_risk,
        };
        if let Some(hit) = self.cache.lock().expect("plan cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let graph = self.planner.expand_graph(b, horizon, propagation, stop_risk)?;
        let solved = crate::planner::solve_chance_constrained(&graph, budget, DEFAULT_TOL)?;
        let outcome = solved.plan.map(|p| PlanOutcome {
            first_step_risk: p.risks[0],
            controls: p.controls,
            total_risk: p.total_risk,
            cost: p.total_cost,
        });
        self.cache
            .lock()
            .expect("plan cache poisoned")
            .insert(key, outcome.clone());
        Ok(outcome)
    }

    fn belief_risk(&self, b: &WorldBelief) -> Result<f64> {
        crate::risk::g_b(b, &self.planner.model)
    }

    fn booked_risk(&self, b: &WorldBelief, u: f64) -> Result<f64> {
        let next = open_loop_update(b, u, &self.planner.dynamics);
        self.planner.belief_risk(&next, true)
    }

    fn is_stopped(&self, b: &WorldBelief) -> bool {
        b.ego.is_stopped()
    }

    fn stop_control(&self) -> f64 {
        self.planner.stop.control()
    }

    fn noop_control(&self) -> f64 {
        0.0
    }
}

/// Runs one closed-loop episode against a sampled ground truth. The episode
/// ends at `T`, at the goal, or at the first collision (true rectangle
/// overlap while the ego moves).
pub fn run_episode(
    scenario: &Scenario,
    planner: &SimPlanner<'_>,
    kind: ControllerKind,
    irb: &Irb,
    truth: &GroundTruth,
) -> Result<EpisodeTrace> {
    let spec = &scenario.spec;
    let t_max = spec.horizon;
    let dt = spec.dt;
    let goal = spec.ego.goal;
    let dynamics = &scenario.planner.dynamics;
    let mut controller: Controller<f64> = Controller::new(kind, irb, spec.plan_horizon, t_max);
    let mut b = scenario.initial_belief(truth.ego_start);
    let mut ego = truth.ego_start;
    let mut steps = Vec::new();
    let mut collided = false;
    let mut cost = 0.0;
    let mut identity = 0.0f64;
    let mut infeasible_start = false;
    for k in 0..t_max {
        if ego.s >= goal - 1e-9 {
            break;
        }
        let decision = controller.step(planner, &b, k)?;
        if k == 0 && decision.action != ActionKind::Planned {
            infeasible_start = true;
            log::warn!(
                "{} seed {}: first solve infeasible (start not recoverable)",
                kind.algorithm(),
                truth.seed
            );
        }
        identity = identity.max(controller.ledger.identity_error());
        let u = decision.control;
        let mut next = advance_on_path(ego, u, dt, &scenario.path);
        if next.v > 0.0 {
            let [ns, nv] = truth.ego_noise[k];
            next.s = (next.s + ns).clamp(0.0, scenario.path.length());
            next.v = (next.v + nv).clamp(0.0, spec.planning.v_max);
        }
        ego = next;
        cost += dt;
        let hit = ego.v > 0.0 && footprints_overlap(scenario, truth, ego.s, k + 1);
        steps.push(StepRecord {
            step: k,
            control: u,
            action: decision.action,
            state: ego,
            rho: controller.ledger.rho,
            planned_risk: decision.planned_risk,
            booked_risk: controller.ledger.history.last().map_or(0.0, |r| r.subtracted),
            collided: hit,
            cost: dt,
            min_agent_distance: min_agent_distance(scenario, truth, ego.s, k + 1),
        });
        if hit {
            collided = true;
            break;
        }
        let y = Observation {
            ego,
            agent_positions: truth
                .agents
                .iter()
                .zip(&truth.observation_noise[k + 1])
                .map(|(traj, n)| {
                    let p = traj[(k + 1).min(traj.len() - 1)];
                    [p.x + n[0], p.y + n[1]]
                })
                .collect(),
        };
        b = bayes_update(&b, u, &y, dynamics)?;
    }
    let reached_goal = ego.s >= goal - 1e-9;
    if !reached_goal && !collided {
        cost += (goal - ego.s) / spec.planning.v_max;
    }
    Ok(EpisodeTrace {
        algorithm: kind.algorithm(),
        seed: truth.seed,
        steps,
        total_cost: cost,
        collided,
        reached_goal,
        ledger_identity_error: identity,
        ledger_within_bound: controller.ledger.within_bound(),
        infeasible_start,
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let low = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if k == n { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Two-sided 95% paired t-interval for `mean(a - b)`.
pub fn paired_t_interval(a: &[f64], b: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = mean_se(&diffs);
    if diffs.len() < 2 || se == 0.0 {
        return (mean, mean);
    }
    let t = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean - t * se, mean + t * se)
}

/// Per-algorithm aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub collisions: usize,
    pub collision_rate: f64,
    pub collision_se: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub mean_cost: f64,
    pub cost_se: f64,
    pub goal_rate: f64,
    pub infeasible_starts: usize,
    pub max_ledger_identity_error: f64,
    pub ledger_within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub scenario: String,
    pub trials: usize,
    pub base_seed: u64,
    pub rho0: f64,
    pub delta: f64,
    pub interval_bound: f64,
    pub failed_trials: usize,
    pub algorithms: Vec<AlgorithmSummary>,
}

/// One (seed, algorithm) trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub collided: bool,
    pub cost: f64,
    pub steps: usize,
    pub trace: EpisodeTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    /// Seed-major, then in the order of the requested algorithms.
    pub trials: Vec<TrialResult>,
    /// `(seed, message)` of failed trials.
    pub errors: Vec<(u64, String)>,
}

impl MonteCarloRun {
    /// Costs of one algorithm in seed order.
    pub fn costs(&self, algorithm: Algorithm) -> Vec<f64> {
        self.trials.iter().filter(|t| t.algorithm == algorithm).map(|t| t.cost).collect()
    }

    pub fn summary_of(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.summary.algorithms.iter().find(|s| s.algorithm == algorithm)
    }
}

/// Runs `trials` seeded trials (seeds `base_seed..base_seed + trials`) of
/// every algorithm. Every algorithm sees the same ground truth per seed.
pub fn run_monte_carlo(
    scenario: &Scenario,
    algorithms: &[Algorithm],
    irb: &Irb,
    trials: usize,
    base_seed: u64,
    mode: SimMode,
) -> Result<MonteCarloRun> {
    if trials == 0 {
        return Err(Error::InvalidScenario("at least one trial is required".into()));
    }
    let planner = SimPlanner::new(&scenario.planner);
    let n = scenario.plan_horizon();
    let kinds: Vec<ControllerKind> = algorithms
        .iter()
        .map(|a| ControllerKind::from_irb(*a, irb, n))
        .collect();
    let per_seed: Vec<std::result::Result<Vec<TrialResult>, (u64, String)>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            let truth = sample_ground_truth(scenario, seed, mode);
            kinds
                .iter()
                .map(|kind| {
                    run_episode(scenario, &planner, *kind, irb, &truth)
                        .map(|trace| TrialResult {
                            seed,
                            algorithm: kind.algorithm(),
                            collided: trace.collided,
                            cost: trace.total_cost,
                            steps: trace.steps.len(),
                            trace,
                        })
                        .map_err(|e| (seed, e.to_string()))
                })
                .collect()
        })
        .collect();

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for r in per_seed {
        match r {
            Ok(v) => results.extend(v),
            Err(e) => errors.push(e),
        }
    }
    if errors.len() as f64 > MAX_TRIAL_ERROR_RATE * trials as f64 {
        return Err(Error::TrialFailures {
            failed: errors.len(),
            total: trials,
        });
    }

    let algorithms_summary = algorithms
        .iter()
        .map(|a| {
            let mine: Vec<&TrialResult> = results.iter().filter(|t| t.algorithm == *a).collect();
            let m = mine.len();
            let collisions = mine.iter().filter(|t| t.collided).count();
            let rate = if m == 0 { 0.0 } else { collisions as f64 / m as f64 };
            let (wl, wh) = wilson_interval(collisions, m, Z95);
            let costs: Vec<f64> = mine.iter().map(|t| t.cost).collect();
            let (mean_cost, cost_se) = mean_se(&costs);
            AlgorithmSummary {
                algorithm: *a,
                trials: m,
                collisions,
                collision_rate: rate,
                collision_se: if m == 0 { 0.0 } else { (rate * (1.0 - rate) / m as f64).sqrt() },
                wilson_low: wl,
                wilson_high: wh,
                mean_cost,
                cost_se,
                goal_rate: if m == 0 {
                    0.0
                } else {
                    mine.iter().filter(|t| t.trace.reached_goal).count() as f64 / m as f64
                },
                infeasible_starts: mine.iter().filter(|t| t.trace.infeasible_start).count(),
                max_ledger_identity_error: mine.iter().map(|t| t.trace.ledger_identity_error).fold(0.0, f64::max),
                ledger_within_bound: mine.iter().all(|t| t.trace.ledger_within_bound),
            }
        })
        .collect();

    Ok(MonteCarloRun {
        summary: MonteCarloSummary {
            scenario: scenario.name().to_string(),
            trials,
            base_seed,
            rho0: irb.rho0,
            delta: irb.delta,
            interval_bound: irb.total(),
            failed_trials: errors.len(),
            algorithms: algorithms_summary,
        },
        trials: results,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{builtin, clear_road};

    #[test]
    fn wilson_examples() {
        let (l, h) = wilson_interval(0, 100, Z95);
        assert_eq!(l, 0.0);
        assert!((h - 0.037).abs() < 1e-3);
        let (l, h) = wilson_interval(50, 100, Z95);
        assert!((l - 0.4038).abs() < 1e-3 && (h - 0.5962).abs() < 1e-3);
    }

    #[test]
    fn paired_interval_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(paired_t_interval(&a, &b), (1.0, 1.0));
        let a = [1.0, 3.0, 2.0, 4.0];
        let b = [0.0, 1.0, 2.0, 3.0];
        let (l, h) = paired_t_interval(&a, &b);
        // mean 1, sd 0.8165, se 0.4082, t(3) = 3.1824
        assert!((l - (1.0 - 3.182446 * 0.408248)).abs() < 1e-5);
        assert!((h - (1.0 + 3.182446 * 0.408248)).abs() < 1e-5);
    }

    #[test]
    fn zero_spread_single_pattern_truth_is_the_mean() {
        let mut spec = builtin("exp1_tjunction").unwrap();
        spec.ego.s0_spread = 0.0;
        for p in &mut spec.agents[0].patterns {
            p.along_std = [0.0, 0.0];
            p.across_std = [0.0, 0.0];
        }
        let sc = spec.build().unwrap();
        let truth = sample_ground_truth(&sc, 9, SimMode::Guarantee);
        for (pose, pred) in truth.agents[0].iter().zip(sc.agents[0].1.patterns[0].trajectory.iter()) {
            assert_eq!([pose.x, pose.y], pred.mean);
        }
        assert_eq!(truth.ego_start, sc.nominal_start());
    }

    #[test]
    fn pattern_frequencies_follow_weights() {
        let sc = builtin("exp2_three_vehicle").unwrap().build().unwrap();
        let n = 10_000;
        let first = (0..n)
            .filter(|s| sample_ground_truth(&sc, *s, SimMode::Guarantee).patterns[1] == 0)
            .count();
        let se = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((first as f64 / n as f64 - 0.7).abs() < 3.0 * se);
    }

    #[test]
    fn truth_is_seed_deterministic() {
        let sc = builtin("exp2_three_vehicle").unwrap().build().unwrap();
        assert_eq!(
            sample_ground_truth(&sc, 42, SimMode::Guarantee),
            sample_ground_truth(&sc, 42, SimMode::Guarantee)
        );
    }

    #[test]
    fn clear_road_has_no_collisions() {
        let sc = clear_road().build().unwrap();
        let run = run_monte_carlo(&sc, &Algorithm::ALL, &sc.irb, 1, 0, SimMode::Guarantee).unwrap();
        for s in &run.summary.algorithms {
            assert_eq!(s.collision_rate, 0.0);
            assert_eq!(s.goal_rate, 1.0);
        }
        // accelerate from rest to v_max then cruise: cost is the traversal time
        let t = &run.trials[0];
        assert_eq!(t.cost, t.steps as f64);
    }
}
