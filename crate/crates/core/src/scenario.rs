//! Scenario descriptions: structured-text specs and the built scenarios the
//! simulator runs.

use std::sync::Arc;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::belief::{AgentMixture, AgentPattern, BeliefDynamics, EgoBelief, PredictedPose, WorldBelief};
use crate::controller::Irb;
use crate::error::{Error, Result};
use crate::planner::{LatticePlanner, LatticeSpec};
use crate::risk::{CollisionModel, DEFAULT_DISKS};
use crate::vehicle::{EgoKinematicState, FootprintSpec, ReferencePath, StopParams};

fn default_disks() -> usize {
    DEFAULT_DISKS
}

fn default_observation_std() -> f64 {
    0.5
}

/// One motion pattern: a path followed with a piecewise-constant speed and
/// Gaussian position uncertainty growing linearly with the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub weight: f64,
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub start_s: f64,
    /// Initial speed, m/s.
    pub speed: f64,
    /// `(step, speed)` pairs: from `step` on the pattern moves at `speed`.
    #[serde(default)]
    pub speed_changes: Vec<(usize, f64)>,
    /// The pattern never passes this arc length (a stop line).
    #[serde(default)]
    pub stop_at_s: Option<f64>,
    /// Along-track standard deviation `[initial, growth per step]`, meters.
    pub along_std: [f64; 2],
    /// Cross-track standard deviation `[initial, growth per step]`, meters.
    pub across_std: [f64; 2],
}

impl PatternSpec {
    /// Predicted poses for steps `0..len`.
    pub fn trajectory(&self, dt: f64, len: usize) -> Result<Vec<PredictedPose>> {
        let path = ReferencePath::from_points(&self.waypoints)?;
        let cap = self.stop_at_s.unwrap_or(f64::INFINITY).min(path.length());
        let mut s = self.start_s.clamp(0.0, path.length());
        let mut speed = self.speed;
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            if let Some(&(_, v)) = self.speed_changes.iter().rev().find(|(step, _)| *step == t) {
                speed = v;
            }
            let pose = path.pose_at_clamped(s);
            let along = self.along_std[0] + self.along_std[1] * t as f64;
            let across = self.across_std[0] + self.across_std[1] * t as f64;
            out.push(PredictedPose::with_track_std(pose.position(), pose.heading, along, across));
            s = (s + speed * dt).min(cap.max(s));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub footprint: Vec<FootprintSpec>,
    pub patterns: Vec<PatternSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub waypoints: Vec<[f64; 2]>,
    pub footprint: Vec<FootprintSpec>,
    pub s0: f64,
    pub v0: f64,
    /// Standard deviation of the initial arc length, meters; draws are
    /// snapped to the lattice arc-length resolution.
    #[serde(default)]
    pub s0_spread: f64,
    /// Goal arc length, meters.
    pub goal: f64,
}

/// Noise levels of the belief model (and, in guarantee mode, of the truth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-step ego tracking noise `[s, v]` standard deviations.
    #[serde(default)]
    pub ego_process_std: [f64; 2],
    /// Agent position observation noise standard deviation, meters.
    #[serde(default = "default_observation_std")]
    pub observation_std: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            ego_process_std: [0.0, 0.0],
            observation_std: default_observation_std(),
        }
    }
}

/// Planner lattice and ego limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningSpec {
    pub s_res: f64,
    pub v_res: f64,
    pub v_max: f64,
    pub u_stop: f64,
    pub accels: Vec<f64>,
    #[serde(default = "default_disks")]
    pub disks: usize,
}

/// A scenario in structured text form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub dt: f64,
    /// Episode length T, steps.
    pub horizon: usize,
    /// Planning horizon N, steps.
    pub plan_horizon: usize,
    /// Default interval risk bound.
    pub rho0: f64,
    pub delta: f64,
    pub planning: PlanningSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub ego: EgoSpec,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
}

/// A validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub path: Arc<ReferencePath>,
    /// Agent footprints and prediction mixtures.
    pub agents: Vec<(Vec<FootprintSpec>, AgentMixture)>,
    pub planner: LatticePlanner,
    pub irb: Irb,
}

impl ScenarioSpec {
    /// Validates the description and builds everything the simulator needs.
    pub fn build(&self) -> Result<Scenario> {
        let bad = |m: String| Err(Error::InvalidScenario(format!("{}: {m}", self.name)));
        if self.dt.is_nan() || self.dt <= 0.0 {
            return bad("dt must be positive".into());
        }
        if self.horizon == 0 || self.plan_horizon == 0 {
            return bad("horizons must be at least one step".into());
        }
        if self.plan_horizon > self.horizon {
            return bad(format!(
                "plan_horizon {} exceeds horizon {}",
                self.plan_horizon, self.horizon
            ));
        }
        if self.ego.footprint.is_empty() {
            return bad("ego needs at least one footprint part".into());
        }
        for fp in self.ego.footprint.iter().chain(self.agents.iter().flat_map(|a| a.footprint.iter())) {
            FootprintSpec::new(fp.length, fp.width, fp.offset)?;
        }
        let p = &self.planning;
        let stop = StopParams::new(p.u_stop, self.dt, p.v_max)?;
        let lattice = LatticeSpec {
            s_res: p.s_res,
            v_res: p.v_res,
            horizon: self.plan_horizon,
            dt: self.dt,
            v_max: p.v_max,
            accels: p.accels.clone(),
        };
        lattice.validate(&stop)?;
        let path = Arc::new(ReferencePath::from_points(&self.ego.waypoints)?);
        if !(0.0..=path.length()).contains(&self.ego.s0) || !(self.ego.v0 >= 0.0 && self.ego.v0 <= p.v_max) {
            return bad("ego initial state outside the path or speed limits".into());
        }
        if !(self.ego.goal > self.ego.s0 && self.ego.goal <= path.length()) {
            return bad("goal must lie ahead of the start and on the path".into());
        }
        if self.ego.s0_spread < 0.0 {
            return bad("s0_spread must be nonnegative".into());
        }
        let irb = Irb::new(self.rho0, self.delta, self.horizon)?;
        if self.rho0 > 1.0 || self.delta > 1.0 {
            return bad("rho0 and delta must be probabilities".into());
        }

        // predictions must cover the episode plus a full stop
        let len = self.horizon + stop.t_stop() + 1;
        let mut agents = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            if a.footprint.is_empty() || a.patterns.is_empty() {
                return bad(format!("agent {} needs footprints and patterns", a.name));
            }
            let total: f64 = a.patterns.iter().map(|p| p.weight).sum();
            if a.patterns.iter().any(|p| !(0.0..=1.0).contains(&p.weight)) || (total - 1.0).abs() > 1e-9 {
                return bad(format!("pattern weights of agent {} must be probabilities summing to 1", a.name));
            }
            let mut patterns = Vec::with_capacity(a.patterns.len());
            for pat in &a.patterns {
                if pat.along_std.iter().chain(&pat.across_std).any(|s| *s < 0.0) {
                    return bad(format!("negative standard deviation in agent {}", a.name));
                }
                patterns.push(AgentPattern::new(pat.weight, pat.trajectory(self.dt, len)?));
            }
            agents.push((a.footprint.clone(), AgentMixture { patterns }));
        }

        let mut dynamics = BeliefDynamics::new(path.clone(), self.dt);
        let [qs, qv] = self.noise.ego_process_std;
        dynamics.process_noise = Matrix2::new(qs * qs, 0.0, 0.0, qv * qv) / self.dt;
        let r = self.noise.observation_std;
        dynamics.observation_noise = Matrix2::new(r * r, 0.0, 0.0, r * r);
        dynamics.ego_measurement_noise = Matrix2::zeros();

        let agent_parts: Vec<Vec<FootprintSpec>> = agents.iter().map(|(f, _)| f.clone()).collect();
        let model = CollisionModel::new(path.clone(), &self.ego.footprint, &agent_parts, p.disks.max(1));
        let planner = LatticePlanner::new(lattice, model, dynamics, stop, self.ego.goal)?;
        Ok(Scenario {
            spec: self.clone(),
            path,
            agents,
            planner,
            irb,
        })
    }
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn plan_horizon(&self) -> usize {
        self.spec.plan_horizon
    }

    /// Belief at step 0 for a given initial ego state.
    pub fn initial_belief(&self, ego: EgoKinematicState) -> WorldBelief {
        WorldBelief {
            ego: EgoBelief::exact(ego),
            agents: self.agents.iter().map(|(_, m)| m.clone()).collect(),
            step: 0,
        }
    }

    /// Nominal initial ego state.
    pub fn nominal_start(&self) -> EgoKinematicState {
        EgoKinematicState::new(self.spec.ego.s0, self.spec.ego.v0)
    }
}

fn bus() -> FootprintSpec {
    FootprintSpec {
        length: 12.6,
        width: 2.4,
        offset: 0.0,
    }
}

fn tractor_trailer() -> Vec<FootprintSpec> {
    vec![
        FootprintSpec {
            length: 5.0,
            width: 2.5,
            offset: 0.0,
        },
        // trailer center behind the hitch: half tractor + gap + half trailer
        FootprintSpec {
            length: 12.5,
            width: 2.4,
            offset: -9.0,
        },
    ]
}

fn default_planning() -> PlanningSpec {
    PlanningSpec {
        s_res: 0.5,
        v_res: 1.0,
        v_max: 6.0,
        u_stop: 3.0,
        accels: vec![-3.0, -2.0, -1.0, 0.0, 1.0],
        disks: DEFAULT_DISKS,
    }
}

/// Quarter circle from `start` heading `h0` turning by `sign * 90°` with
/// `radius`, sampled every 15 degrees (start excluded).
fn arc(start: [f64; 2], h0: f64, radius: f64, sign: f64) -> Vec<[f64; 2]> {
    let center = [
        start[0] - sign * radius * h0.sin(),
        start[1] + sign * radius * h0.cos(),
    ];
    (1..=6)
        .map(|i| {
            let h = h0 + sign * std::f64::consts::FRAC_PI_2 * i as f64 / 6.0;
            [center[0] + sign * radius * h.sin(), center[1] - sign * radius * h.cos()]
        })
        .collect()
}

/// T-junction: the ego drives east while a bus from the south turns left
/// across its lane into the westbound lane.
pub fn exp1_tjunction() -> ScenarioSpec {
    let mut agent_path = vec![[50.0, -60.0], [50.0, -6.0]];
    agent_path.extend(arc([50.0, -6.0], std::f64::consts::FRAC_PI_2, 10.0, 1.0));
    agent_path.push([-60.0, 4.0]);
    ScenarioSpec {
        name: "exp1_tjunction".into(),
        description: "ego bus eastbound meets a bus turning left across its lane at a T-junction".into(),
        dt: 1.0,
        horizon: 25,
        plan_horizon: 25,
        rho0: 0.01,
        delta: 0.0,
        planning: default_planning(),
        noise: NoiseSpec::default(),
        ego: EgoSpec {
            waypoints: vec![[0.0, 0.0], [160.0, 0.0]],
            footprint: vec![bus()],
            s0: 0.0,
            v0: 4.0,
            s0_spread: 1.0,
            goal: 110.0,
        },
        agents: vec![AgentSpec {
            name: "bus".into(),
            footprint: vec![bus()],
            patterns: vec![PatternSpec {
                weight: 1.0,
                waypoints: agent_path,
                start_s: 10.0,
                speed: 4.0,
                speed_changes: vec![],
                stop_at_s: None,
                along_std: [0.5, 0.12],
                across_std: [0.3, 0.03],
            }],
        }],
    }
}

/// Left turn behind a lead vehicle across the lane of an oncoming vehicle
/// that usually turns off before the junction but may go straight through.
pub fn exp2_three_vehicle() -> ScenarioSpec {
    let pi2 = std::f64::consts::FRAC_PI_2;
    let mut ego_path = vec![[0.0, -100.0], [0.0, 0.0]];
    ego_path.extend(arc([0.0, 0.0], pi2, 12.0, 1.0));
    ego_path.push([-160.0, 12.0]);

    let v2_start = [-5.0, 82.0];
    let mut turn_off = vec![v2_start, [-5.0, 42.0]];
    turn_off.extend(arc([-5.0, 42.0], -pi2, 12.0, -1.0));
    turn_off.push([-160.0, 30.0]);
    let straight = vec![v2_start, [-5.0, -120.0]];
    let v2 = |weight: f64, waypoints: Vec<[f64; 2]>| PatternSpec {
        weight,
        waypoints,
        start_s: 0.0,
        speed: 5.0,
        speed_changes: vec![],
        stop_at_s: None,
        along_std: [0.5, 0.3],
        across_std: [0.3, 0.03],
    };
    ScenarioSpec {
        name: "exp2_three_vehicle".into(),
        description: "tractor-trailer left turn behind a lead vehicle; the oncoming vehicle may go straight".into(),
        dt: 1.0,
        horizon: 30,
        plan_horizon: 5,
        rho0: 0.01,
        delta: 0.0,
        planning: default_planning(),
        noise: NoiseSpec::default(),
        ego: EgoSpec {
            waypoints: ego_path.clone(),
            footprint: tractor_trailer(),
            s0: 40.0,
            v0: 4.0,
            s0_spread: 1.0,
            goal: 150.0,
        },
        agents: vec![
            AgentSpec {
                name: "vehicle1".into(),
                footprint: tractor_trailer(),
                patterns: vec![PatternSpec {
                    weight: 1.0,
                    waypoints: ego_path,
                    start_s: 85.0,
                    speed: 5.0,
                    speed_changes: vec![],
                    stop_at_s: None,
                    along_std: [0.5, 0.1],
                    across_std: [0.3, 0.02],
                }],
            },
            AgentSpec {
                name: "vehicle2".into(),
                footprint: tractor_trailer(),
                patterns: vec![v2(0.7, turn_off), v2(0.3, straight)],
            },
        ],
    }
}

/// No agents: the ego drives to the goal.
pub fn clear_road() -> ScenarioSpec {
    ScenarioSpec {
        name: "clear_road".into(),
        description: "empty straight road".into(),
        dt: 1.0,
        horizon: 25,
        plan_horizon: 10,
        rho0: 0.01,
        delta: 0.0,
        planning: default_planning(),
        noise: NoiseSpec::default(),
        ego: EgoSpec {
            waypoints: vec![[0.0, 0.0], [200.0, 0.0]],
            footprint: vec![bus()],
            s0: 0.0,
            v0: 0.0,
            s0_spread: 0.0,
            goal: 100.0,
        },
        agents: vec![],
    }
}

/// A crossing bus yields at its stop line with 80% probability; otherwise it
/// goes. The two patterns coincide until the stop line, so the intention is
/// revealed late.
pub fn pcl_adversarial() -> ScenarioSpec {
    let waypoints = vec![[60.0, -80.0], [60.0, 80.0]];
    let pattern = |weight: f64, stop: Option<f64>, changes: Vec<(usize, f64)>| PatternSpec {
        weight,
        waypoints: waypoints.clone(),
        start_s: 30.0,
        speed: 4.0,
        speed_changes: changes,
        stop_at_s: stop,
        along_std: [0.4, 0.08],
        across_std: [0.3, 0.02],
    };
    ScenarioSpec {
        name: "pcl_adversarial".into(),
        description: "crossing bus that usually yields late; the minority pattern goes".into(),
        dt: 1.0,
        horizon: 25,
        plan_horizon: 25,
        rho0: 0.01,
        delta: 0.0,
        planning: default_planning(),
        noise: NoiseSpec::default(),
        ego: EgoSpec {
            waypoints: vec![[0.0, 0.0], [160.0, 0.0]],
            footprint: vec![bus()],
            s0: 0.0,
            v0: 6.0,
            s0_spread: 0.0,
            goal: 100.0,
        },
        agents: vec![AgentSpec {
            name: "bus".into(),
            footprint: vec![bus()],
            patterns: vec![
                pattern(0.8, Some(64.0), vec![]),
                pattern(0.2, None, vec![(8, 6.0)]),
            ],
        }],
    }
}

/// The shipped scenarios, by name.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    vec![exp1_tjunction(), exp2_three_vehicle(), clear_road(), pcl_adversarial()]
}

pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_build() {
        for s in builtin_scenarios() {
            s.build().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn builtin_parameters() {
        let e1 = exp1_tjunction();
        assert_eq!((e1.horizon, e1.plan_horizon, e1.dt), (25, 25, 1.0));
        assert_eq!((e1.rho0, e1.delta), (0.01, 0.0));
        assert_eq!((e1.ego.footprint[0].length, e1.ego.footprint[0].width), (12.6, 2.4));
        let e2 = exp2_three_vehicle();
        let w: Vec<f64> = e2.agents[1].patterns.iter().map(|p| p.weight).collect();
        assert_eq!(w, vec![0.7, 0.3]);
        let dims: Vec<(f64, f64)> = e2.ego.footprint.iter().map(|f| (f.length, f.width)).collect();
        assert_eq!(dims, vec![(5.0, 2.5), (12.5, 2.4)]);
    }

    #[test]
    fn pattern_stops_at_line() {
        let p = &pcl_adversarial().agents[0].patterns[0];
        let traj = p.trajectory(1.0, 20).unwrap();
        let ys: Vec<f64> = traj.iter().map(|t| t.mean[1]).collect();
        assert_eq!(ys[0], -50.0);
        assert!(ys.iter().all(|y| *y <= -16.0 + 1e-9));
        assert_eq!(ys[19], -16.0);
    }

    #[test]
    fn arcs_turn_by_a_quarter() {
        let a = arc([0.0, 0.0], std::f64::consts::FRAC_PI_2, 12.0, 1.0);
        let end = a.last().unwrap();
        assert!((end[0] + 12.0).abs() < 1e-9 && (end[1] - 12.0).abs() < 1e-9);
        let b = arc([-5.0, 42.0], -std::f64::consts::FRAC_PI_2, 12.0, -1.0);
        let end = b.last().unwrap();
        assert!((end[0] + 17.0).abs() < 1e-9 && (end[1] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = exp1_tjunction();
        s.plan_horizon = 30;
        assert!(matches!(s.build(), Err(Error::InvalidScenario(_))));
        let mut s = exp1_tjunction();
        s.agents[0].patterns[0].weight = 0.5;
        assert!(matches!(s.build(), Err(Error::InvalidScenario(_))));
        let mut s = exp1_tjunction();
        s.rho0 = -0.1;
        assert!(s.build().is_err());
    }
}
