//! World beliefs and the three belief update rules.
//!
//! The ego is observed exactly at every replan, so the only latent variable
//! carried across steps is each agent's motion pattern. Agent predictions are
//! per-pattern Gaussian marginals indexed by absolute step; updates only move
//! the step index and reweight the patterns.
//!
//! * [`open_loop_update`] propagates without any observation (weights fixed).
//! * [`bayes_update`] propagates and then conditions on a real observation.
//! * [`pcl_update`] conditions on the most likely observation, i.e. the
//!   predicted position under the currently dominant pattern.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::vehicle::{advance_on_path, EgoKinematicState, ReferencePath};

/// Smallest total observation likelihood accepted by [`bayes_update`].
pub const MIN_TOTAL_LIKELIHOOD: f64 = 1e-300;

/// Gaussian belief over the ego `(s, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoBelief {
    pub mean: EgoKinematicState,
    /// Covariance over `(s, v)`.
    pub covariance: Matrix2<f64>,
}

impl EgoBelief {
    pub fn exact(state: EgoKinematicState) -> Self {
        Self {
            mean: state,
            covariance: Matrix2::zeros(),
        }
    }

    pub fn position_variance(&self) -> f64 {
        self.covariance[(0, 0)]
    }

    /// Deterministically at rest: zero mean speed and zero speed variance.
    pub fn is_stopped(&self) -> bool {
        self.mean.v == 0.0 && self.covariance[(1, 1)] == 0.0
    }
}

/// Predicted agent pose at one step under one motion pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedPose {
    pub mean: [f64; 2],
    pub covariance: Matrix2<f64>,
    pub heading: f64,
}

impl PredictedPose {
    /// Pose with covariance `R(heading) diag(along^2, across^2) R(heading)^T`.
    pub fn with_track_std(mean: [f64; 2], heading: f64, along: f64, across: f64) -> Self {
        let (s, c) = heading.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        let d = Matrix2::new(along * along, 0.0, 0.0, across * across);
        let cov = rot * d * rot.transpose();
        Self {
            mean,
            covariance: symmetrize(cov),
            heading,
        }
    }

    /// Lower-triangular factor `L` with `L L^T = covariance`.
    pub fn cholesky_factor(&self) -> Matrix2<f64> {
        psd_factor(&self.covariance)
    }
}

/// One motion pattern: its mixture weight and predicted trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPattern {
    pub weight: f64,
    pub trajectory: Arc<[PredictedPose]>,
}

impl AgentPattern {
    pub fn new(weight: f64, trajectory: Vec<PredictedPose>) -> Self {
        Self {
            weight,
            trajectory: trajectory.into(),
        }
    }

    pub fn at(&self, agent: usize, step: usize) -> Result<&PredictedPose> {
        self.trajectory.get(step).ok_or(Error::HorizonExhausted {
            agent,
            requested: step,
            available: self.trajectory.len(),
        })
    }
}

/// Mixture over motion patterns for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMixture {
    pub patterns: Vec<AgentPattern>,
}

impl AgentMixture {
    pub fn weights(&self) -> Vec<f64> {
        self.patterns.iter().map(|p| p.weight).collect()
    }

    /// Index of the highest-weight pattern; ties go to the lowest index.
    pub fn dominant_pattern(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.patterns.iter().enumerate() {
            if p.weight > self.patterns[best].weight {
                best = i;
            }
        }
        best
    }

    fn set_weights(&mut self, w: &[f64]) {
        for (p, w) in self.patterns.iter_mut().zip(w) {
            p.weight = *w;
        }
    }
}

/// Belief over the world state at absolute step `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldBelief {
    pub ego: EgoBelief,
    pub agents: Vec<AgentMixture>,
    pub step: usize,
}

/// The set of beliefs with deterministically zero ego speed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StoppedBeliefSet;

impl StoppedBeliefSet {
    /// Speeds must be exactly zero; there is no tolerance band.
    pub const VELOCITY_THRESHOLD: f64 = 0.0;

    pub fn contains(&self, b: &WorldBelief) -> bool {
        b.ego.is_stopped()
    }
}

/// Belief-update selector used by the planner for predicted steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    OpenLoop,
    Pcl,
}

/// Parameters shared by all belief updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefDynamics {
    pub path: Arc<ReferencePath>,
    pub dt: f64,
    /// Ego tracking-error covariance over `(s, v)` per second.
    pub process_noise: Matrix2<f64>,
    /// Agent position measurement covariance.
    pub observation_noise: Matrix2<f64>,
    /// Ego measurement covariance after an observation (zero: exact).
    pub ego_measurement_noise: Matrix2<f64>,
}

impl BeliefDynamics {
    pub fn new(path: Arc<ReferencePath>, dt: f64) -> Self {
        Self {
            path,
            dt,
            process_noise: Matrix2::new(0.05 * 0.05, 0.0, 0.0, 0.05 * 0.05),
            observation_noise: Matrix2::new(0.25, 0.0, 0.0, 0.25),
            ego_measurement_noise: Matrix2::zeros(),
        }
    }
}

/// What the ego senses after a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ego: EgoKinematicState,
    pub agent_positions: Vec<[f64; 2]>,
}

/// Ego part of the open-loop propagation.
pub fn propagate_ego(ego: &EgoBelief, u: f64, dynamics: &BeliefDynamics) -> EgoBelief {
    let mean = advance_on_path(ego.mean, u, dynamics.dt, &dynamics.path);
    let mut covariance = ego.covariance + dynamics.process_noise * dynamics.dt;
    if mean.v == 0.0 {
        // a vehicle braked to rest stays at rest: speed is known exactly
        covariance[(0, 1)] = 0.0;
        covariance[(1, 0)] = 0.0;
        covariance[(1, 1)] = 0.0;
    }
    EgoBelief { mean, covariance }
}

/// Open-loop (unobservable) propagation by one step.
pub fn open_loop_update(b: &WorldBelief, u: f64, dynamics: &BeliefDynamics) -> WorldBelief {
    WorldBelief {
        ego: propagate_ego(&b.ego, u, dynamics),
        agents: b.agents.clone(),
        step: b.step + 1,
    }
}

/// Propagates by one step and conditions on `y`.
pub fn bayes_update(
    b: &WorldBelief,
    u: f64,
    y: &Observation,
    dynamics: &BeliefDynamics,
) -> Result<WorldBelief> {
    if y.agent_positions.len() != b.agents.len() {
        return Err(Error::ObservationMismatch {
            expected: b.agents.len(),
            got: y.agent_positions.len(),
        });
    }
    let mut next = open_loop_update(b, u, dynamics);
    next.ego = EgoBelief {
        mean: y.ego,
        covariance: dynamics.ego_measurement_noise,
    };
    if next.ego.mean.v == 0.0 {
        next.ego.covariance[(1, 1)] = 0.0;
        next.ego.covariance[(0, 1)] = 0.0;
        next.ego.covariance[(1, 0)] = 0.0;
    }
    for (a, (agent, pos)) in next.agents.iter_mut().zip(&y.agent_positions).enumerate() {
        condition_agent(agent, a, *pos, next.step, &dynamics.observation_noise)?;
    }
    Ok(next)
}

/// Partially closed-loop propagation: conditions every agent on the
/// observation it would most likely produce, the mean of its dominant pattern.
pub fn pcl_update(b: &WorldBelief, u: f64, dynamics: &BeliefDynamics) -> Result<WorldBelief> {
    let mut next = open_loop_update(b, u, dynamics);
    let step = next.step;
    for (a, agent) in next.agents.iter_mut().enumerate() {
        if agent.patterns.len() < 2 {
            continue;
        }
        let dominant = agent.dominant_pattern();
        let y = agent.patterns[dominant].at(a, step)?.mean;
        condition_agent(agent, a, y, step, &dynamics.observation_noise)?;
    }
    Ok(next)
}

/// Applies `rule` for one step.
pub fn apply_rule(
    rule: UpdateRule,
    b: &WorldBelief,
    u: f64,
    dynamics: &BeliefDynamics,
) -> Result<WorldBelief> {
    match rule {
        UpdateRule::OpenLoop => Ok(open_loop_update(b, u, dynamics)),
        UpdateRule::Pcl => pcl_update(b, u, dynamics),
    }
}

fn condition_agent(
    agent: &mut AgentMixture,
    index: usize,
    y: [f64; 2],
    step: usize,
    noise: &Matrix2<f64>,
) -> Result<()> {
    let mut log_lik = Vec::with_capacity(agent.patterns.len());
    for p in &agent.patterns {
        let pred = p.at(index, step)?;
        log_lik.push(gaussian_log_density(y, pred.mean, &(pred.covariance + noise)));
    }
    let weights = reweight_log(&agent.weights(), &log_lik)
        .ok_or(Error::DegenerateObservation { agent: index })?;
    agent.set_weights(&weights);
    Ok(())
}

/// Bayes rule over mixture weights with explicit likelihoods.
pub fn reweight_patterns(weights: &[f64], likelihoods: &[f64]) -> Result<Vec<f64>> {
    let logs: Vec<f64> = likelihoods.iter().map(|l| l.ln()).collect();
    reweight_log(weights, &logs).ok_or(Error::DegenerateObservation { agent: 0 })
}

fn reweight_log(weights: &[f64], log_lik: &[f64]) -> Option<Vec<f64>> {
    let logs: Vec<f64> = weights
        .iter()
        .zip(log_lik)
        .map(|(w, l)| if *w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    if max + total.ln() < MIN_TOTAL_LIKELIHOOD.ln() {
        return None;
    }
    Some(scaled.into_iter().map(|s| s / total).collect())
}

/// Log density of a bivariate Gaussian. A singular covariance is treated as a
/// point mass: log-density 0 on the mean, `-inf` elsewhere.
pub fn gaussian_log_density(y: [f64; 2], mean: [f64; 2], cov: &Matrix2<f64>) -> f64 {
    let d = Vector2::new(y[0] - mean[0], y[1] - mean[1]);
    let det = cov.determinant();
    if det <= 1e-300 {
        return if d.norm() < 1e-9 { 0.0 } else { f64::NEG_INFINITY };
    }
    let inv = cov.try_inverse().expect("positive determinant");
    let q = d.dot(&(inv * d));
    -0.5 * q - 0.5 * (4.0 * PI * PI * det).ln()
}

pub(crate) fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Factor of a 2x2 PSD matrix, tolerant of singular inputs.
pub(crate) fn psd_factor(m: &Matrix2<f64>) -> Matrix2<f64> {
    let a = m[(0, 0)].max(0.0);
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)].max(0.0);
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// Smallest eigenvalue of a symmetric 2x2 matrix.
pub fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let a = m[(0, 0)];
    let c = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mid - rad
}

/// Largest eigenvalue of a symmetric 2x2 matrix.
pub fn max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let a = m[(0, 0)];
    let c = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dynamics(q: f64) -> BeliefDynamics {
        let path = Arc::new(ReferencePath::straight([0.0, 0.0], [200.0, 0.0]).unwrap());
        let mut d = BeliefDynamics::new(path, 1.0);
        d.process_noise = Matrix2::new(q, 0.0, 0.0, q);
        d
    }

    fn straight_pattern(weight: f64, y: f64, vx: f64, sigma: f64, steps: usize) -> AgentPattern {
        AgentPattern::new(
            weight,
            (0..steps)
                .map(|t| PredictedPose::with_track_std([vx * t as f64, y], 0.0, sigma, sigma))
                .collect(),
        )
    }

    fn belief(agents: Vec<AgentMixture>) -> WorldBelief {
        WorldBelief {
            ego: EgoBelief::exact(EgoKinematicState::new(10.0, 2.0)),
            agents,
            step: 0,
        }
    }

    #[test]
    fn open_loop_noop_at_rest() {
        let d = dynamics(0.0);
        let mut b = belief(vec![]);
        b.ego = EgoBelief::exact(EgoKinematicState::new(3.0, 0.0));
        let n = open_loop_update(&b, 0.0, &d);
        assert_eq!(n.ego, b.ego);
        assert_eq!(n.step, 1);
    }

    #[test]
    fn open_loop_adds_process_noise() {
        let d = dynamics(0.01);
        let mut b = belief(vec![]);
        b.ego.covariance = Matrix2::new(0.5, 0.1, 0.1, 0.2);
        let n = open_loop_update(&b, 0.0, &d);
        assert!((n.ego.covariance - Matrix2::new(0.51, 0.1, 0.1, 0.21)).abs().max() < 1e-15);
        assert_eq!(n.ego.mean, EgoKinematicState::new(12.0, 2.0));
    }

    #[test]
    fn braking_to_rest_enters_stop_set() {
        let d = dynamics(0.01);
        let b = belief(vec![]);
        let n = open_loop_update(&b, -3.0, &d);
        assert!(StoppedBeliefSet.contains(&n));
        assert!(n.ego.position_variance() > 0.0);
    }

    #[test]
    fn reweight_examples() {
        let w = reweight_patterns(&[0.5, 0.5], &[0.2, 0.2]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = reweight_patterns(&[0.7, 0.3], &[0.4, 0.0]).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        let w = reweight_patterns(&[0.7, 0.3], &[0.1, 0.3]).unwrap();
        assert_abs_diff_eq!(w[0], 0.07 / 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.09 / 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 0.4375, epsilon = 1e-15);
        assert!(reweight_patterns(&[0.5, 0.5], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn bayes_rejects_impossible_observation() {
        let d = dynamics(0.0);
        let b = belief(vec![AgentMixture {
            patterns: vec![straight_pattern(1.0, 10.0, 1.0, 0.1, 5)],
        }]);
        let y = Observation {
            ego: EgoKinematicState::new(12.0, 2.0),
            agent_positions: vec![[1.0e6, 0.0]],
        };
        assert_eq!(
            bayes_update(&b, 0.0, &y, &d),
            Err(Error::DegenerateObservation { agent: 0 })
        );
    }

    #[test]
    fn bayes_collapses_ego_and_reweights() {
        let d = dynamics(0.01);
        let b = belief(vec![AgentMixture {
            patterns: vec![
                straight_pattern(0.5, 10.0, 1.0, 0.5, 5),
                straight_pattern(0.5, 20.0, 1.0, 0.5, 5),
            ],
        }]);
        let y = Observation {
            ego: EgoKinematicState::new(11.9, 1.9),
            agent_positions: vec![[1.0, 10.2]],
        };
        let n = bayes_update(&b, 0.0, &y, &d).unwrap();
        assert_eq!(n.ego, EgoBelief::exact(y.ego));
        assert!(n.agents[0].patterns[0].weight > 0.999);
        assert_abs_diff_eq!(n.agents[0].weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pcl_single_pattern_matches_open_loop() {
        let d = dynamics(0.01);
        let b = belief(vec![AgentMixture {
            patterns: vec![straight_pattern(1.0, 10.0, 1.0, 0.5, 5)],
        }]);
        assert_eq!(pcl_update(&b, 1.0, &d).unwrap(), open_loop_update(&b, 1.0, &d));
    }

    #[test]
    fn pcl_concentrates_on_dominant_pattern() {
        // Independent check: with separated means, the ML observation sits at
        // pattern 0's mean. Hand Bayes: w0' = 0.6 L0 / (0.6 L0 + 0.4 L1).
        let d = dynamics(0.0);
        let b = belief(vec![AgentMixture {
            patterns: vec![
                straight_pattern(0.6, 0.0, 1.0, 1.0, 5),
                straight_pattern(0.4, 8.0, 1.0, 1.0, 5),
            ],
        }]);
        let n = pcl_update(&b, 0.0, &d).unwrap();
        let var = 1.0 + 0.25;
        let l0 = 1.0 / (2.0 * PI * var);
        let l1 = (-0.5 * 64.0 / var).exp() / (2.0 * PI * var);
        let expected = 0.6 * l0 / (0.6 * l0 + 0.4 * l1);
        assert_abs_diff_eq!(n.agents[0].patterns[0].weight, expected, epsilon = 1e-12);
        assert!(n.agents[0].patterns[0].weight > 0.6);
    }

    #[test]
    fn pcl_equals_bayes_with_ml_observation() {
        let mut d = dynamics(0.0);
        d.observation_noise = Matrix2::zeros();
        let b = belief(vec![AgentMixture {
            patterns: vec![
                straight_pattern(0.7, 0.0, 1.0, 0.0, 5),
                straight_pattern(0.3, 4.0, 1.0, 0.0, 5),
            ],
        }]);
        let p = pcl_update(&b, 0.0, &d).unwrap();
        let y = Observation {
            ego: p.ego.mean,
            agent_positions: vec![[1.0, 0.0]],
        };
        let q = bayes_update(&b, 0.0, &y, &d).unwrap();
        assert_eq!(p.agents, q.agents);
        assert_eq!(p.agents[0].weights(), vec![1.0, 0.0]);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let m = Matrix2::new(2.0, 0.6, 0.6, 1.0);
        let l = psd_factor(&m);
        let r = l * l.transpose();
        assert_abs_diff_eq!((r - m).norm(), 0.0, epsilon = 1e-12);
        assert_eq!(psd_factor(&Matrix2::zeros()), Matrix2::zeros());
    }

    proptest! {
        #[test]
        fn updates_preserve_invariants(
            w0 in 0.01f64..0.99,
            y0 in -5.0f64..5.0,
            sig in 0.1f64..3.0,
            u in -3.0f64..1.0,
            v in 0.0f64..6.0,
            q in 0.0f64..0.1,
        ) {
            let d = dynamics(q);
            let mut b = belief(vec![AgentMixture {
                patterns: vec![
                    straight_pattern(w0, 0.0, 1.0, sig, 5),
                    straight_pattern(1.0 - w0, 3.0, 1.5, sig, 5),
                ],
            }]);
            b.ego.mean.v = v;
            let ol = open_loop_update(&b, u, &d);
            prop_assert!(ol.ego.covariance.trace() >= b.ego.covariance.trace() - 1e-15
                || ol.ego.mean.v == 0.0);
            let pcl = pcl_update(&b, u, &d).unwrap();
            let y = Observation { ego: ol.ego.mean, agent_positions: vec![[1.0, y0]] };
            let by = bayes_update(&b, u, &y, &d).unwrap();
            for n in [&ol, &pcl, &by] {
                let s: f64 = n.agents[0].weights().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(min_eigenvalue(&n.ego.covariance) >= -1e-9);
            }
            // determinism
            prop_assert_eq!(pcl_update(&b, u, &d).unwrap(), pcl);
        }
    }
}
